"""Element-local HDG assembly, static condensation and the trace system.

Discrete unknowns per element are the flux w (vector in 3D, scalar in 2D)
and the field u, both degree-k; the globally coupled unknown is the facet
trace lam.  Vector dofs are component-major: dof c*ns + i is scalar basis
function i times the Cartesian unit vector e_c.  Trace dofs follow the
same layout per facet, with global index facet*ntf + c*nts + i.

Local row blocks:
  R1 (tests r in W):  (eps^-1 w, r) - (u, curl r) + <lam, n x r>
  R2 (tests v in V):  (w, curl v) + <n x w, v> + (u, dual-advection(v) + gamma v)
                      + <tau_t Pt(u - lam), v> + <tau_n (u - lam).n, v.n>
                      + <(beta.n) lam, v>  =  (f, v)
Facet rows (tests mu on one facet):
  interior:  sum over both sides of
             <n x w + tau_t Pt(u - lam) + (beta.n) lam + tau_n ((u-lam).n) n, mu> = 0
  boundary:  <n x lam + chi-(lam.n) n - chi+ tau_n ((u-lam).n) n, mu> = <g, mu>
In 2D "n x w" stands for w * t with the tangent t = R n, and the boundary
tangential slot pairs (t.lam) t against mu.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse

from .basis import ScalarBasis, quadrature_rule, reference_measure
from .linsolve import SolveOptions, SparseMatrix, sparse_solve
from .mesh import BOUNDARY, Mesh
from .problems import (
    ProblemSpec,
    SlitSpec,
    StabilizationParams,
    build_stabilization,
    facet_quad_points,
)

__all__ = [
    "AssemblyError",
    "HDGSpace",
    "LocalBlocks",
    "CondensedElements",
    "TraceSystem",
    "FieldSolution",
    "assemble_local_blocks",
    "assemble_local",
    "condense",
    "assemble_global",
    "recover_fields",
    "assemble_monolithic",
    "slit_constraints",
    "solve_problem",
]

logger = logging.getLogger(__name__)

_LC = np.zeros((3, 3, 3))
_LC[0, 1, 2] = _LC[1, 2, 0] = _LC[2, 0, 1] = 1.0
_LC[0, 2, 1] = _LC[2, 1, 0] = _LC[1, 0, 2] = -1.0

CHUNK = 2048


class AssemblyError(Exception):
    """Assembly failed (singular interior block, dangling dofs, ...)."""


def element_tables(mesh: Mesh, basis_degree: int, quad_degree: int):
    """Physical element quadrature tables for one basis degree.

    Returns (basis, X, wdet, V, GP): points (ne, nq, d), weights including
    the Jacobian (ne, nq), reference values (ns, nq) and physical gradients
    (ne, ns, nq, d).
    """
    sb = ScalarBasis(basis_degree, mesh.dim)
    rule = quadrature_rule(mesh.dim, quad_degree)
    v0, jac, inv, det = mesh.transforms()
    X = v0[:, None, :] + np.einsum("qj,eij->eqi", rule.points, jac)
    wdet = rule.weights[None, :] * det[:, None]
    V, G = sb.eval_with_grad(rule.points)
    GP = np.einsum("eba,iqb->eiqa", inv, G)  # grad_x = J^-T grad_xi
    return sb, X, wdet, V, GP


def facet_side_tables(mesh: Mesh, basis_degree: int, quad_degree: int):
    """Element-basis values on facet quadrature points, per element side.

    Returns (Xf, Wf, VF): shared physical facet points (nf, nqf, d),
    physical weights (nf, nqf) and element-basis traces (ne, d+1, ns, nqf).
    Both sides of a facet integrate against the same points and weights.
    """
    sb = ScalarBasis(basis_degree, mesh.dim)
    Xf, Wf = facet_quad_points(mesh, quad_degree)
    v0, _, inv, _ = mesh.transforms()
    ef = mesh.element_facets
    rel = Xf[ef] - v0[:, None, None, :]  # (ne, d+1, nqf, d)
    xi = np.einsum("eab,elqb->elqa", inv, rel)
    ne, nl, nqf, d = xi.shape
    vals = sb.eval(xi.reshape(-1, d))  # (ns, ne*nl*nqf)
    VF = vals.reshape(sb.count, ne, nl, nqf).transpose(1, 2, 0, 3)
    return Xf, Wf, VF


class HDGSpace:
    """Mesh + degree + quadrature context shared across the pipeline."""

    def __init__(self, mesh: Mesh, k: int, quad_el_degree: Optional[int] = None,
                 quad_fc_degree: Optional[int] = None):
        if k < 0:
            raise ValueError("polynomial degree must be nonnegative")
        self.mesh = mesh
        self.k = k
        self.dim = mesh.dim
        d = mesh.dim
        self.quad_el_degree = quad_el_degree if quad_el_degree is not None else 2 * k + 4
        self.quad_fc_degree = quad_fc_degree if quad_fc_degree is not None else 2 * k + 3

        self.scalar, self.X, self.wdet, self.V, self.GP = element_tables(
            mesh, k, self.quad_el_degree)
        self.ns = self.scalar.count
        self.nw = self.ns * (3 if d == 3 else 1)
        self.nu = self.ns * d
        self.ni = self.nw + self.nu

        self.trace_scalar = ScalarBasis(k, d - 1)
        self.nts = self.trace_scalar.count
        self.ntf = d * self.nts
        self.nlam = (d + 1) * self.ntf

        self.facet_rule = quadrature_rule(d - 1, self.quad_fc_degree)
        self.psi = self.trace_scalar.eval(self.facet_rule.points)  # (nts, nqf)
        self.Xf, self.Wf, self.VF = facet_side_tables(mesh, k, self.quad_fc_degree)

        self.EF = mesh.element_facets
        sign = mesh.element_facet_sign.astype(float)
        self.NOUT = mesh.facet_normal[self.EF] * sign[..., None]
        self.is_bnd_side = mesh.facet_right[self.EF] == BOUNDARY

        self.ndof_trace = mesh.num_facets * self.ntf
        # global trace dofs per (element, local trace dof)
        base = self.EF[:, :, None] * self.ntf + np.arange(self.ntf)[None, None, :]
        self.gmap = base.reshape(mesh.num_elements, self.nlam)


@dataclass
class LocalBlocks:
    """Dense per-element blocks, batched over elements.

    ``interior`` couples (w, u) tests/trials, ``trace_cols`` the trace
    trial functions; ``facet_rows``/`facet_diag`` are the facet-test rows
    (transmission on interior facets, boundary condition rows otherwise).
    """

    space: HDGSpace
    interior: np.ndarray      # (ne, ni, ni)
    trace_cols: np.ndarray    # (ne, ni, nlam)
    facet_rows: np.ndarray    # (ne, nlam, ni)
    facet_diag: np.ndarray    # (ne, nlam, nlam)
    rhs_interior: np.ndarray  # (ne, ni)
    rhs_facet: np.ndarray     # (ne, nlam)

    @property
    def a_ww(self):
        nw = self.space.nw
        return self.interior[:, :nw, :nw]

    @property
    def a_wu(self):
        nw = self.space.nw
        return self.interior[:, :nw, nw:]

    @property
    def a_uw(self):
        nw = self.space.nw
        return self.interior[:, nw:, :nw]

    @property
    def a_uu(self):
        nw = self.space.nw
        return self.interior[:, nw:, nw:]


@dataclass
class CondensedElements:
    """Schur data of the interior elimination, batched over elements."""

    space: HDGSpace
    schur: np.ndarray       # (ne, nlam, nlam)
    rhs: np.ndarray         # (ne, nlam)
    a_inv_b: np.ndarray     # (ne, ni, nlam)
    a_inv_f: np.ndarray     # (ne, ni)


@dataclass
class TraceSystem:
    """Global sparse system in the facet trace unknown."""

    matrix: SparseMatrix
    rhs: np.ndarray
    ndof: int
    ntf: int
    constrained: np.ndarray  # constrained dof indices (may be empty)
    constrained_values: np.ndarray


@dataclass
class FieldSolution:
    """Recovered discrete fields with the context that produced them."""

    space: HDGSpace
    problem: ProblemSpec
    stab: StabilizationParams
    w: np.ndarray    # (ne, nw)
    u: np.ndarray    # (ne, nu)
    lam: np.ndarray  # (nf, ntf)


def _coeff_tables(space: HDGSpace, problem: ProblemSpec):
    ne, nq, d = space.X.shape
    flat = space.X.reshape(-1, d)
    beta = np.asarray(problem.beta(flat), float).reshape(ne, nq, d)
    gb = np.asarray(problem.grad_beta(flat), float).reshape(ne, nq, d, d)
    gamma = np.asarray(problem.gamma(flat), float).reshape(ne, nq)
    f = np.asarray(problem.source(flat), float).reshape(ne, nq, d)
    nf, nqf, _ = space.Xf.shape
    beta_f = np.asarray(problem.beta(space.Xf.reshape(-1, d)), float).reshape(nf, nqf, d)
    g_f = np.zeros((nf, nqf, d))
    bnd = space.mesh.boundary_facets
    for fid in bnd:
        g_f[fid] = problem.boundary_data(space.Xf[fid], space.mesh.facet_normal[fid])
    return beta, gb, gamma, f, beta_f, g_f


def assemble_local_blocks(space: HDGSpace, problem: ProblemSpec,
                          stab: StabilizationParams) -> LocalBlocks:
    """All per-element blocks of the HDG system, batched over elements."""
    mesh = space.mesh
    if problem.dim != mesh.dim:
        raise ValueError("problem and mesh dimensions differ")
    ne = mesh.num_elements
    ni, nlam = space.ni, space.nlam
    A = np.zeros((ne, ni, ni))
    B = np.zeros((ne, ni, nlam))
    C = np.zeros((ne, nlam, ni))
    D = np.zeros((ne, nlam, nlam))
    F = np.zeros((ne, ni))
    G = np.zeros((ne, nlam))
    beta, gb, gamma, f, beta_f, g_f = _coeff_tables(space, problem)
    for start in range(0, ne, CHUNK):
        sl = slice(start, min(start + CHUNK, ne))
        _assemble_chunk(space, problem, stab, sl,
                        beta, gb, gamma, f, beta_f, g_f,
                        A[sl], B[sl], C[sl], D[sl], F[sl], G[sl])
    return LocalBlocks(space=space, interior=A, trace_cols=B, facet_rows=C,
                       facet_diag=D, rhs_interior=F, rhs_facet=G)


def _assemble_chunk(space, problem, stab, sl, beta, gb, gamma, f, beta_f, g_f,
                    A, B, C, D, F, G):
    d = space.dim
    ns, nts, ntf = space.ns, space.nts, space.ntf
    nw, nu = space.nw, space.nu
    V = space.V
    GP = space.GP[sl]
    wdet = space.wdet[sl]
    eps = problem.eps

    bq, gbq, gq, fq = beta[sl], gb[sl], gamma[sl], f[sl]

    mass = np.einsum("iq,jq,eq->eij", V, V, wdet)

    # R1: (eps^-1 w, r)
    if d == 2:
        A[:, :ns, :ns] = mass / eps
    else:
        for c in range(3):
            A[:, c * ns:(c + 1) * ns, c * ns:(c + 1) * ns] = mass / eps

    # R1: -(u, curl r) and R2: (w, curl v)
    if d == 2:
        # R grad phi = (d2 phi, -d1 phi)
        rg = np.stack([GP[..., 1], -GP[..., 0]], axis=-1)  # (e, i, q, 2)
        blk = np.einsum("eiqc,jq,eq->eicj", rg, V, wdet).reshape(-1, ns, nu)
        A[:, :ns, nw:] -= blk
        # curl2(phi e_0) = -d2 phi ; curl2(phi e_1) = d1 phi
        curl2 = np.stack([-GP[..., 1], GP[..., 0]], axis=1)  # (e, c, i, q)
        A[:, nw:, :nw] += np.einsum("eciq,jq,eq->ecij", curl2, V, wdet).reshape(-1, nu, nw)
    else:
        blk = np.einsum("uar,eiqa,jq,eq->eriuj", _LC, GP, V, wdet).reshape(-1, nw, nu)
        A[:, :nw, nw:] -= blk
        blk = np.einsum("wav,eiqa,jq,eq->eviwj", _LC, GP, V, wdet).reshape(-1, nu, nw)
        A[:, nw:, :nw] += blk

    # R2 volume: (u, dual-advection(v) + gamma v)
    div_beta = np.einsum("eqaa->eq", gbq)
    gp_dot_beta = np.einsum("eiqa,eqa->eiq", GP, bq)
    base = np.einsum("eq,iq,jq->eij", wdet * (gq - div_beta), V, V)
    base -= np.einsum("eq,eiq,jq->eij", wdet, gp_dot_beta, V)
    for c in range(d):
        A[:, nw + c * ns:nw + (c + 1) * ns, nw + c * ns:nw + (c + 1) * ns] += base
    A[:, nw:, nw:] += np.einsum("eq,equv,iq,jq->eviuj", wdet, gbq, V, V).reshape(-1, nu, nu)

    # rhs (f, v)
    F[:, nw:] = np.einsum("eq,eqc,iq->eci", wdet, fq, V).reshape(-1, nu)

    psi = space.psi
    eye = np.eye(d)
    for lf in range(d + 1):
        fid = space.EF[sl, lf]
        wf = space.Wf[fid]
        Vf = space.VF[sl, lf]
        n = space.NOUT[sl, lf]
        bn = np.einsum("eqa,ea->eq", beta_f[fid], n)
        tt = stab.tau_t[sl, lf]
        tn = stab.tau_n[sl, lf]
        pt = eye[None] - np.einsum("ea,eb->eab", n, n)
        nn = np.einsum("ea,eb->eab", n, n)

        svv = np.einsum("eq,eiq,ejq->eij", wf, Vf, Vf)
        svp = np.einsum("eq,eiq,jq->eij", wf, Vf, psi)
        spp = np.einsum("eq,iq,jq->eij", wf, psi, psi)
        svp_b = np.einsum("eq,eq,eiq,jq->eij", wf, bn, Vf, psi)
        spp_b = np.einsum("eq,eq,iq,jq->eij", wf, bn, psi, psi)

        cols = slice(lf * ntf, (lf + 1) * ntf)

        if d == 3:
            skew = np.einsum("mac,ea->emc", _LC, n)  # (e, m, c): (n x e_c)_m
            # R1: <lam, n x r>
            B[:, :nw, cols] += np.einsum("elr,eij->erilj", skew, svp).reshape(-1, nw, ntf)
            # R2: <n x w, v>
            A[:, nw:, :nw] += np.einsum("evw,eim->eviwm", skew, svv).reshape(-1, nu, nw)
        else:
            t = np.column_stack([n[:, 1], -n[:, 0]])  # R n
            B[:, :ns, cols] += np.einsum("el,eij->eilj", t, svp).reshape(-1, ns, ntf)
            A[:, nw:, :nw] += np.einsum("ev,eim->evim", t, svv).reshape(-1, nu, nw)

        # R2 penalties on u and lam
        A[:, nw:, nw:] += np.einsum("e,evu,eij->eviuj", tt, pt, svv).reshape(-1, nu, nu)
        A[:, nw:, nw:] += np.einsum("e,evu,eij->eviuj", tn, nn, svv).reshape(-1, nu, nu)
        B[:, nw:, cols] -= np.einsum("e,evu,eij->eviuj", tt, pt, svp).reshape(-1, nu, ntf)
        B[:, nw:, cols] -= np.einsum("e,evu,eij->eviuj", tn, nn, svp).reshape(-1, nu, ntf)
        for c in range(d):
            B[:, nw + c * ns:nw + (c + 1) * ns, lf * ntf + c * nts:lf * ntf + (c + 1) * nts] += svp_b

        # facet-test rows
        rows = cols
        spv = svp.transpose(0, 2, 1)
        is_b = space.is_bnd_side[sl, lf].astype(float)[:, None, None]

        # interior (transmission) version
        if d == 3:
            cw_i = np.einsum("emw,eij->emiwj", skew, spv).reshape(-1, ntf, nw)
        else:
            cw_i = np.einsum("em,eij->emij", t, spv).reshape(-1, ntf, nw)
        cu_i = np.einsum("e,emu,eij->emiuj", tt, pt, spv).reshape(-1, ntf, nu)
        cu_i += np.einsum("e,emu,eij->emiuj", tn, nn, spv).reshape(-1, ntf, nu)
        dd_i = -np.einsum("e,eml,eij->emilj", tt, pt, spp).reshape(-1, ntf, ntf)
        dd_i -= np.einsum("e,eml,eij->emilj", tn, nn, spp).reshape(-1, ntf, ntf)
        for c in range(d):
            dd_i[:, c * nts:(c + 1) * nts, c * nts:(c + 1) * nts] += spp_b

        # boundary (weak data) version
        chi_in = (bn < 0.0).astype(float)
        chi_out = 1.0 - chi_in
        spp_in = np.einsum("eq,eq,iq,jq->eij", wf, chi_in, psi, psi)
        spp_out = np.einsum("eq,eq,iq,jq->eij", wf, chi_out, psi, psi)
        spv_out = np.einsum("eq,eq,iq,ejq->eij", wf, chi_out, psi, Vf)
        if d == 3:
            # mu.(n x lam) = psi_i psi_j skew[c_mu, c_lam]
            dd_b = np.einsum("eml,eij->emilj", skew, spp)
        else:
            dd_b = np.einsum("em,el,eij->emilj", t, t, spp)
        dd_b = dd_b.reshape(-1, ntf, ntf)
        dd_b += np.einsum("eml,eij->emilj", nn, spp_in).reshape(-1, ntf, ntf)
        dd_b += np.einsum("e,eml,eij->emilj", tn, nn, spp_out).reshape(-1, ntf, ntf)
        cu_b = -np.einsum("e,emu,eij->emiuj", tn, nn, spv_out).reshape(-1, ntf, nu)
        gf = g_f[fid]
        g_b = np.einsum("eq,iq,eqc->eci", wf, psi, gf).reshape(-1, ntf)

        C[:, rows, :nw] = (1.0 - is_b) * cw_i
        C[:, rows, nw:] = (1.0 - is_b) * cu_i + is_b * cu_b
        D[:, rows, cols] = (1.0 - is_b) * dd_i + is_b * dd_b
        G[:, lf * ntf:(lf + 1) * ntf] = is_b[:, :, 0] * g_b


def assemble_local(space: HDGSpace, problem: ProblemSpec, stab: StabilizationParams,
                   element: int) -> LocalBlocks:
    """Blocks of a single element (view into a batched assembly)."""
    blocks = assemble_local_blocks(space, problem, stab)
    pick = slice(element, element + 1)
    return LocalBlocks(
        space=space,
        interior=blocks.interior[pick],
        trace_cols=blocks.trace_cols[pick],
        facet_rows=blocks.facet_rows[pick],
        facet_diag=blocks.facet_diag[pick],
        rhs_interior=blocks.rhs_interior[pick],
        rhs_facet=blocks.rhs_facet[pick],
    )


def condense(blocks: LocalBlocks) -> CondensedElements:
    """Eliminate the interior (w, u) unknowns element by element."""
    space = blocks.space
    A, B, C, D = blocks.interior, blocks.trace_cols, blocks.facet_rows, blocks.facet_diag
    F, G = blocks.rhs_interior, blocks.rhs_facet
    rhs_all = np.concatenate([B, F[:, :, None]], axis=2)
    try:
        sol = np.linalg.solve(A, rhs_all)
    except np.linalg.LinAlgError:
        for e in range(A.shape[0]):
            try:
                np.linalg.solve(A[e], rhs_all[e])
            except np.linalg.LinAlgError:
                raise AssemblyError(
                    f"interior block of element {e} is singular to pivot tolerance"
                ) from None
        raise
    sing = np.linalg.svd(A, compute_uv=False)
    cond = sing[:, 0] / np.maximum(sing[:, -1], np.finfo(float).tiny)
    bad = np.nonzero(cond > 1e12)[0]
    if bad.size:
        logger.warning(
            "interior blocks of %d elements have condition estimate > 1e12 (max %.2e)",
            bad.size, cond[bad].max(),
        )
    a_inv_b = sol[:, :, :-1]
    a_inv_f = sol[:, :, -1]
    schur = D - C @ a_inv_b
    rhs = G - np.einsum("eri,ei->er", C, a_inv_f)
    return CondensedElements(space=space, schur=schur, rhs=rhs,
                             a_inv_b=a_inv_b, a_inv_f=a_inv_f)


def slit_constraints(space: HDGSpace, slit: SlitSpec):
    """Strong trace constraints: facet-wise L2 projection of the slit data."""
    mesh = space.mesh
    fids = slit.facets(mesh)
    if fids.size == 0:
        raise AssemblyError("no mesh facets lie on the requested slit")
    d = mesh.dim
    nts, ntf = space.nts, space.ntf
    ref_meas = reference_measure(d - 1)
    idx = []
    vals = []
    for fid in fids:
        data = np.asarray(slit.value(space.Xf[fid]), float)  # (nqf, d)
        wf = space.Wf[fid]
        # reference-orthonormal psi: Gram on F is |F|/|Fref| * I
        coeff = np.einsum("q,iq,qc->ci", wf, space.psi, data)
        coeff *= ref_meas / mesh.facet_measure[fid]
        idx.append(fid * ntf + np.arange(ntf))
        vals.append(coeff.reshape(ntf))
    return np.concatenate(idx), np.concatenate(vals)


def assemble_global(space: HDGSpace, cond: CondensedElements,
                    constraints: Optional[tuple] = None) -> TraceSystem:
    """Scatter the per-element Schur blocks into the facet trace system."""
    ne = space.mesh.num_elements
    nlam = space.nlam
    ndof = space.ndof_trace
    gmap = space.gmap
    rows = np.repeat(gmap, nlam, axis=1).ravel()
    cols = np.tile(gmap, (1, nlam)).ravel()
    data = cond.schur.ravel()
    rhs = np.zeros(ndof)
    np.add.at(rhs, gmap.ravel(), cond.rhs.ravel())

    matrix = SparseMatrix.from_coo(rows, cols, data, (ndof, ndof))
    counts = np.diff(matrix.csr.indptr)
    if (counts == 0).any():
        raise AssemblyError(
            f"{int((counts == 0).sum())} trace dofs have structurally empty rows"
        )

    if constraints is not None:
        cidx, cvals = constraints
        keep = np.ones(ndof)
        keep[cidx] = 0.0
        rhs = rhs - matrix.csr[:, cidx] @ cvals
        d_keep = scipy.sparse.diags(keep)
        fixed = scipy.sparse.coo_matrix(
            (np.ones(len(cidx)), (cidx, cidx)), shape=(ndof, ndof))
        reduced = (d_keep @ matrix.csr @ d_keep + fixed).tocsr()
        reduced.sum_duplicates()
        reduced.eliminate_zeros()
        reduced.sort_indices()
        matrix = SparseMatrix(csr=reduced)
        rhs[cidx] = cvals
        constrained = np.asarray(cidx)
        constrained_values = np.asarray(cvals)
    else:
        constrained = np.empty(0, dtype=np.int64)
        constrained_values = np.empty(0)

    return TraceSystem(matrix=matrix, rhs=rhs, ndof=ndof, ntf=space.ntf,
                       constrained=constrained, constrained_values=constrained_values)


def recover_fields(trace_solution: np.ndarray, cond: CondensedElements,
                   problem: ProblemSpec, stab: StabilizationParams) -> FieldSolution:
    """Back-substitute the trace solution into the interior unknowns."""
    space = cond.space
    lam_t = trace_solution[space.gmap]  # (ne, nlam)
    x = cond.a_inv_f - np.einsum("eil,el->ei", cond.a_inv_b, lam_t)
    if not np.isfinite(x).all():
        raise AssemblyError("recovered interior fields contain non-finite values")
    nw = space.nw
    lam = trace_solution.reshape(space.mesh.num_facets, space.ntf)
    return FieldSolution(space=space, problem=problem, stab=stab,
                         w=x[:, :nw], u=x[:, nw:], lam=lam)


def assemble_monolithic(space: HDGSpace, problem: ProblemSpec,
                        stab: StabilizationParams):
    """Dense full (w, u, lam) system; the oracle for condensation tests.

    Unknown layout: all element interiors first (ni per element), then the
    trace dofs.  Intended for meshes with a handful of elements.
    """
    blocks = assemble_local_blocks(space, problem, stab)
    ne = space.mesh.num_elements
    ni, nlam = space.ni, space.nlam
    ndof = ne * ni + space.ndof_trace
    mat = np.zeros((ndof, ndof))
    rhs = np.zeros(ndof)
    off = ne * ni
    for e in range(ne):
        isl = slice(e * ni, (e + 1) * ni)
        gdofs = off + space.gmap[e]
        mat[isl, isl] += blocks.interior[e]
        mat[isl, gdofs] += blocks.trace_cols[e]
        mat[np.ix_(gdofs, range(e * ni, (e + 1) * ni))] += blocks.facet_rows[e]
        mat[np.ix_(gdofs, gdofs)] += blocks.facet_diag[e]
        rhs[isl] += blocks.rhs_interior[e]
        rhs[gdofs] += blocks.rhs_facet[e]
    return mat, rhs, off


def solve_problem(mesh: Mesh, problem: ProblemSpec, k: int, *,
                  stab: Optional[StabilizationParams] = None,
                  quad_el_degree: Optional[int] = None,
                  quad_fc_degree: Optional[int] = None,
                  slit: Optional[SlitSpec] = None,
                  solver: Optional[SolveOptions] = None):
    """End-to-end solve: condense, solve the trace system, recover fields."""
    space = HDGSpace(mesh, k, quad_el_degree, quad_fc_degree)
    if stab is None:
        stab = build_stabilization(problem, mesh, space.quad_fc_degree)
    blocks = assemble_local_blocks(space, problem, stab)
    cond = condense(blocks)
    constraints = slit_constraints(space, slit) if slit is not None else None
    tsys = assemble_global(space, cond, constraints)
    lam, report = sparse_solve(tsys.matrix, tsys.rhs, solver)
    field = recover_fields(lam, cond, problem, stab)
    return field, report
