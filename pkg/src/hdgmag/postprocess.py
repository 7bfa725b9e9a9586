"""Elementwise postprocessing to degree k+1.

Two schemes: the 2D divergence/edge-moment reconstruction and the
curl-fit reconstruction that works in 2D and 3D.  Both are local square
solves per element; in 2D the curls of either reconstruction reproduce
eps^-1 w_h exactly, coefficient by coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import FieldSolution, element_tables, facet_side_tables
from .basis import ScalarBasis, build_curl_range_basis, quadrature_rule

__all__ = [
    "PostprocessError",
    "PostField",
    "postprocess_star_2d",
    "postprocess_curlfit",
    "curl_projection_coeffs",
]

RESIDUAL_TOL = 1e-10


class PostprocessError(Exception):
    """A local postprocessing system failed to solve."""


@dataclass
class PostField:
    """Elementwise degree-(k+1) reconstruction, component-major coefficients."""

    tag: str            # "star2d" or "curlfit"
    degree: int         # k + 1
    coeffs: np.ndarray  # (ne, dim * ns1)


def _facet_trace_values(field: FieldSolution):
    """u_h and u_hat values on every facet side at the facet quadrature."""
    space = field.space
    d, ns, nts = space.dim, space.ns, space.nts
    uh = np.stack(
        [
            np.stack(
                [np.einsum("ei,eiq->eq", field.u[:, c * ns:(c + 1) * ns], space.VF[:, lf])
                 for c in range(d)], axis=-1)
            for lf in range(d + 1)
        ],
        axis=1,
    )  # (ne, d+1, nqf, d)
    lam = field.lam[space.EF]  # (ne, d+1, ntf)
    lh = np.stack(
        [np.einsum("elj,jq->elq", lam[:, :, c * nts:(c + 1) * nts], space.psi)
         for c in range(d)],
        axis=-1,
    )
    return uh, lh


def _batched_solve(mat, rhs, tag):
    try:
        sol = np.linalg.solve(mat, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        bad = []
        for e in range(mat.shape[0]):
            try:
                np.linalg.solve(mat[e], rhs[e])
            except np.linalg.LinAlgError:
                bad.append(e)
        raise PostprocessError(
            f"{tag}: singular local systems on elements {bad[:10]}"
        ) from None
    resid = np.linalg.norm(np.einsum("eij,ej->ei", mat, sol) - rhs, axis=1)
    scale = np.linalg.norm(rhs, axis=1) + np.linalg.norm(mat, axis=(1, 2)) * (
        np.linalg.norm(sol, axis=1) + 1e-300)
    worst = (resid / scale).max()
    if worst > RESIDUAL_TOL:
        bad = np.nonzero(resid / scale > RESIDUAL_TOL)[0]
        raise PostprocessError(
            f"{tag}: local solve residual {worst:.2e} above {RESIDUAL_TOL:.0e} "
            f"on elements {bad[:10].tolist()}"
        )
    return sol


def postprocess_star_2d(field: FieldSolution) -> PostField:
    """2D reconstruction from edge moments, rotated-gradient moments and
    divergence moments.

    Constraint count per element: 3(k+2) edge moments, dim P_k - 1
    rotated-gradient moments and dim P_{k-1} divergence moments, totalling
    (k+2)(k+3) = dim of the degree-(k+1) vector space.
    """
    space = field.space
    if space.dim != 2:
        raise ValueError("this reconstruction is defined for 2D problems only")
    mesh = space.mesh
    k = space.k
    k1 = k + 1
    ne = mesh.num_elements
    ns = space.ns

    _, _, wdet, V1, GP1 = element_tables(mesh, k1, space.quad_el_degree)
    ns1 = V1.shape[0]
    nun = 2 * ns1
    _, _, V1F = facet_side_tables(mesh, k1, space.quad_fc_degree)
    edge_basis = ScalarBasis(k1, 1)
    eta = edge_basis.eval(space.facet_rule.points)  # (k+2, nqf)
    n_eta = edge_basis.count

    _, lh_f = _facet_trace_values(field)
    GPk = space.GP
    Vk = space.V

    n_grad = space.scalar.count - 1
    n_div = ScalarBasis(k - 1, 2).count if k >= 1 else 0
    rows = 3 * n_eta + n_grad + n_div
    if rows != nun:
        raise PostprocessError(f"constraint count {rows} != unknowns {nun}")

    mat = np.zeros((ne, nun, nun))
    rhs = np.zeros((ne, nun))

    # edge moments: <t.(u* - u_hat), eta>_F = 0 with t = R n (outward side)
    for lf in range(3):
        n = space.NOUT[:, lf]
        t = np.column_stack([n[:, 1], -n[:, 0]])
        wf = space.Wf[space.EF[:, lf]]
        blk = np.einsum("mq,ejq,eq->emj", eta, V1F[:, lf], wf)  # (ne, n_eta, ns1)
        r0 = lf * n_eta
        for c in range(2):
            mat[:, r0:r0 + n_eta, c * ns1:(c + 1) * ns1] = t[:, c, None, None] * blk
        lt = np.einsum("eqa,ea->eq", lh_f[:, lf], t)
        rhs[:, r0:r0 + n_eta] = np.einsum("mq,eq,eq->em", eta, lt, wf)

    # rotated-gradient moments: (u* - u_h, R grad v) = 0, v nonconstant
    r0 = 3 * n_eta
    uh_e = np.stack(
        [np.einsum("ei,iq->eq", field.u[:, c * ns:(c + 1) * ns], Vk) for c in range(2)],
        axis=-1,
    )
    if n_grad:
        rgk = np.stack([GPk[..., 1], -GPk[..., 0]], axis=-1)[:, 1:]  # (ne, n_grad, nq, 2)
        mat[:, r0:r0 + n_grad, :] = np.einsum(
            "emqc,jq,eq->emcj", rgk, V1, wdet).reshape(ne, n_grad, nun)
        rhs[:, r0:r0 + n_grad] = np.einsum("emqc,eqc,eq->em", rgk, uh_e, wdet)
        r0 += n_grad

    # divergence moments: (div(u* - u_h), s) = 0
    if n_div:
        sdiv = ScalarBasis(k - 1, 2)
        rule = quadrature_rule(2, space.quad_el_degree)
        Vs = sdiv.eval(rule.points)
        div1 = np.stack([GP1[..., 0], GP1[..., 1]], axis=1)  # (ne, c, ns1, nq)
        mat[:, r0:r0 + n_div, :] = np.einsum(
            "mq,ecjq,eq->emcj", Vs, div1, wdet).reshape(ne, n_div, nun)
        divk = np.stack([GPk[..., 0], GPk[..., 1]], axis=1)
        div_uh = np.einsum("ecjq,ecj->eq", divk, field.u.reshape(ne, 2, ns))
        rhs[:, r0:r0 + n_div] = np.einsum("mq,eq,eq->em", Vs, div_uh, wdet)

    sol = _batched_solve(mat, rhs, "star2d")
    return PostField(tag="star2d", degree=k1, coeffs=sol)


def postprocess_curlfit(field: FieldSolution) -> PostField:
    """Curl-range reconstruction, valid in 2D and 3D.

    Tests the curl moments of the reconstruction against those of
    (u_h, u_hat) over the curl range of degree-(k+1) vectors, and pins the
    complementary gradient moments of degree-(k+2) scalars; the split is a
    direct sum because the curl kernel is exactly the gradient space.
    """
    space = field.space
    mesh = space.mesh
    d = space.dim
    k = space.k
    k1 = k + 1
    ne = mesh.num_elements
    ns = space.ns

    _, _, wdet, V1, _ = element_tables(mesh, k1, space.quad_el_degree)
    ns1 = V1.shape[0]
    nun = d * ns1
    _, _, V1F = facet_side_tables(mesh, k1, space.quad_fc_degree)

    _, _, inv, _ = mesh.transforms()
    fam = build_curl_range_basis(k1, d, inv.transpose(0, 2, 1))
    n_curl, n_grad = fam.n_curl, fam.n_grad
    if n_curl + n_grad != nun:
        raise PostprocessError("curl/gradient family sizes do not sum to the space dimension")

    _, lh_f = _facet_trace_values(field)
    Vk = space.V
    GPk = space.GP
    uh_e = np.stack(
        [np.einsum("ei,iq->eq", field.u[:, c * ns:(c + 1) * ns], Vk) for c in range(d)],
        axis=-1,
    )

    mat = np.zeros((ne, nun, nun))
    rhs = np.zeros((ne, nun))

    if d == 2:
        # curl family: scalars r in P_k; the volume term pairs against R grad r.
        rgk = np.stack([GPk[..., 1], -GPk[..., 0]], axis=-1)  # (ne, ns, nq, 2)
        rg_r = np.einsum("emj,ejqc->emqc", fam.curl_coeffs, rgk)
        blk = np.einsum("emqc,jq,eq->emcj", rg_r, V1, wdet).reshape(ne, n_curl, nun)
        rhs[:, :n_curl] = np.einsum("emqc,eqc,eq->em", rg_r, uh_e, wdet)
        # boundary: n x (V1 e_c) = -t_c V1 and n x u_hat = -t.u_hat
        for lf in range(3):
            n = space.NOUT[:, lf]
            t = np.column_stack([n[:, 1], -n[:, 0]])
            wf = space.Wf[space.EF[:, lf]]
            r_f = np.einsum("emj,ejq->emq", fam.curl_coeffs, space.VF[:, lf])
            base = np.einsum("emq,ejq,eq->emj", r_f, V1F[:, lf], wf)
            for c in range(2):
                blk[:, :, c * ns1:(c + 1) * ns1] -= t[:, c, None, None] * base
            lt = np.einsum("eqa,ea->eq", lh_f[:, lf], t)
            rhs[:, :n_curl] -= np.einsum("emq,eq,eq->em", r_f, lt, wf)
        mat[:, :n_curl, :] = blk
    else:
        curl_k = _vector_basis_curls(GPk)  # (ne, 3*ns, nq, 3)
        curl_r = np.einsum("emf,efqa->emqa", fam.curl_coeffs, curl_k)
        blk = np.zeros((ne, n_curl, nun))
        for c in range(3):
            blk[:, :, c * ns1:(c + 1) * ns1] = np.einsum(
                "emq,jq,eq->emj", curl_r[..., c], V1, wdet)
        rhs[:, :n_curl] = np.einsum("emqa,eqa,eq->em", curl_r, uh_e, wdet)
        eye = np.eye(3)
        for lf in range(4):
            n = space.NOUT[:, lf]
            wf = space.Wf[space.EF[:, lf]]
            r_vals = np.stack(
                [np.einsum("emj,ejq->emq",
                           fam.curl_coeffs[:, :, c * ns:(c + 1) * ns], space.VF[:, lf])
                 for c in range(3)],
                axis=-1,
            )  # (ne, n_curl, nqf, 3)
            n_cross = np.stack([np.cross(n, eye[c]) for c in range(3)], axis=1)  # (ne, 3, 3)
            blk += np.einsum("emqa,eca,ejq,eq->emcj", r_vals, n_cross, V1F[:, lf], wf
                             ).reshape(ne, n_curl, nun)
            nxl = np.cross(np.broadcast_to(n[:, None, :], lh_f[:, lf].shape), lh_f[:, lf])
            rhs[:, :n_curl] += np.einsum("emqa,eqa,eq->em", r_vals, nxl, wf)
        mat[:, :n_curl, :] = blk

    # gradient moments: (u* - u_h, g_m) = 0 for the gradient family.
    g_vals = np.stack(
        [np.einsum("emj,jq->emq", fam.grad_coeffs[:, :, c * ns1:(c + 1) * ns1], V1)
         for c in range(d)],
        axis=-1,
    )
    mat[:, n_curl:, :] = np.einsum("emqc,jq,eq->emcj", g_vals, V1, wdet).reshape(ne, n_grad, nun)
    rhs[:, n_curl:] = np.einsum("emqc,eqc,eq->em", g_vals, uh_e, wdet)

    sol = _batched_solve(mat, rhs, "curlfit")
    return PostField(tag="curlfit", degree=k1, coeffs=sol)


def _vector_basis_curls(GP):
    """Physical curls of the component-major vector basis from scalar
    gradient tables, shape (ne, 3*ns, nq, 3)."""
    ne, ns, nq, _ = GP.shape
    out = np.zeros((ne, 3 * ns, nq, 3))
    eye = np.eye(3)
    for c in range(3):
        out[:, c * ns:(c + 1) * ns] = np.cross(GP, eye[c])
    return out


def curl_projection_coeffs(field: FieldSolution, post: PostField) -> np.ndarray:
    """Coefficients of curl(u_post) in the degree-k flux basis.

    In 2D the curl of a degree-(k+1) field lies in P_k, so this is an
    exact representation, directly comparable with eps^-1 w_h.
    """
    space = field.space
    mesh = space.mesh
    d = space.dim
    _, _, wdet, _, GP1 = element_tables(mesh, post.degree, space.quad_el_degree)
    _, _, _, det = mesh.transforms()
    ns1 = GP1.shape[1]
    Vk = space.V
    if d == 2:
        curl = (
            np.einsum("ei,eiq->eq", post.coeffs[:, ns1:], GP1[..., 0])
            - np.einsum("ei,eiq->eq", post.coeffs[:, :ns1], GP1[..., 1])
        )
        return np.einsum("eq,iq,eq->ei", wdet, Vk, curl) / det[:, None]
    curls = _vector_basis_curls(GP1)
    vals = np.einsum("ef,efqa->eqa", post.coeffs, curls)
    out = np.concatenate(
        [np.einsum("eq,iq,eq->ei", wdet, Vk, vals[..., a]) for a in range(3)],
        axis=1,
    )
    return out / det[:, None]
