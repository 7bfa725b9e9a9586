"""Error norms against exact solutions, the discrete energy norm, the
energy-identity residual, and experimental orders of convergence."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .assembly import FieldSolution, HDGSpace, element_tables
from .basis import ScalarBasis
from .mesh import Mesh

__all__ = [
    "ErrorReport",
    "eoc",
    "l2_error",
    "hcurl_seminorm_error",
    "w_scaled_l2_error",
    "energy_error",
    "energy_norm_discrete",
    "energy_identity_residual",
]


def eoc(errors, hs):
    """Orders log(e_i/e_{i+1}) / log(h_i/h_{i+1}); nan marks nonpositive errors."""
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    if errors.shape != hs.shape:
        raise ValueError("errors and mesh sizes must have equal length")
    if (np.diff(hs) >= 0).any():
        raise ValueError("mesh sizes must be strictly decreasing")
    orders = []
    for i in range(len(errors) - 1):
        if errors[i] <= 0.0 or errors[i + 1] <= 0.0:
            orders.append(float("nan"))
        else:
            orders.append(float(np.log(errors[i] / errors[i + 1]) / np.log(hs[i] / hs[i + 1])))
    return orders


def _vector_values(coeffs: np.ndarray, V: np.ndarray, dim: int) -> np.ndarray:
    """(ne, nq, dim) values of a component-major coefficient field."""
    ns = V.shape[0]
    return np.stack(
        [np.einsum("ei,iq->eq", coeffs[:, c * ns:(c + 1) * ns], V) for c in range(dim)],
        axis=-1,
    )


def _curl_values(coeffs: np.ndarray, GP: np.ndarray, dim: int):
    """Physical curl of a component-major field from gradient tables."""
    ns = GP.shape[1]
    if dim == 2:
        return (
            np.einsum("ei,eiq->eq", coeffs[:, ns:], GP[..., 0])
            - np.einsum("ei,eiq->eq", coeffs[:, :ns], GP[..., 1])
        )
    out = np.zeros(GP.shape[:1] + GP.shape[2:3] + (3,))
    eye = np.eye(3)
    for c in range(3):
        grad_c = np.einsum("ei,eiqa->eqa", coeffs[:, c * ns:(c + 1) * ns], GP)
        out += np.cross(grad_c, eye[c])
    return out


def l2_error(mesh: Mesh, coeffs: np.ndarray, basis_degree: int,
             exact: Callable, quad_degree: int) -> float:
    """Broken L2 error of a component-major vector field."""
    if exact is None:
        raise ValueError("exact solution required for error computation")
    _, X, wdet, V, _ = element_tables(mesh, basis_degree, quad_degree)
    vals = _vector_values(coeffs, V, mesh.dim)
    ue = np.asarray(exact(X.reshape(-1, mesh.dim)), float).reshape(X.shape)
    return float(np.sqrt((wdet[..., None] * (vals - ue) ** 2).sum()))


def hcurl_seminorm_error(mesh: Mesh, coeffs: np.ndarray, basis_degree: int,
                         exact_curl: Callable, quad_degree: int) -> float:
    """Broken H(curl) semi-norm error: elementwise L2 norm of the curl error."""
    if exact_curl is None:
        raise ValueError("exact curl required for error computation")
    _, X, wdet, _, GP = element_tables(mesh, basis_degree, quad_degree)
    ch = _curl_values(coeffs, GP, mesh.dim)
    ce = np.asarray(exact_curl(X.reshape(-1, mesh.dim)), float)
    if mesh.dim == 3:
        ce = ce.reshape(X.shape)
        return float(np.sqrt((wdet[..., None] * (ch - ce) ** 2).sum()))
    ce = ce.reshape(X.shape[:2])
    return float(np.sqrt((wdet * (ch - ce) ** 2).sum()))


def w_scaled_l2_error(field: FieldSolution, quad_degree: Optional[int] = None) -> float:
    """eps^-1 L2 error of the flux: || curl u - eps^-1 w_h ||."""
    space = field.space
    problem = field.problem
    if problem.exact_curl_u is None:
        raise ValueError("exact curl required for error computation")
    qd = quad_degree if quad_degree is not None else 2 * space.k + 6
    _, X, wdet, V, _ = element_tables(space.mesh, space.k, qd)
    ce = np.asarray(problem.exact_curl_u(X.reshape(-1, space.dim)), float)
    if space.dim == 3:
        wh = _vector_values(field.w, V, 3)
        ce = ce.reshape(X.shape)
        diff = wh / problem.eps - ce
        return float(np.sqrt((wdet[..., None] * diff ** 2).sum()))
    wh = np.einsum("ei,iq->eq", field.w, V)
    ce = ce.reshape(X.shape[:2])
    diff = wh / problem.eps - ce
    return float(np.sqrt((wdet * diff ** 2).sum()))


def _facet_jump_energy(field_or_space, stab, problem, u_coeffs, lam) -> float:
    """Sum over element boundaries of the tau-weighted trace jump terms of
    the energy norm, with v - mu = u_h - lam."""
    space = field_or_space
    mesh = space.mesh
    d = space.dim
    ns, nts = space.ns, space.nts
    psi = space.psi
    total = 0.0
    for lf in range(d + 1):
        fid = space.EF[:, lf]
        wf = space.Wf[fid]
        Vf = space.VF[:, lf]
        n = space.NOUT[:, lf]
        pts = space.Xf[fid]
        bn = np.einsum("eqa,ea->eq",
                       np.asarray(problem.beta(pts.reshape(-1, d)), float).reshape(pts.shape),
                       n)
        uh = np.stack(
            [np.einsum("ei,eiq->eq", u_coeffs[:, c * ns:(c + 1) * ns], Vf) for c in range(d)],
            axis=-1,
        )
        lam_c = lam[fid]
        lh = np.stack(
            [np.einsum("ei,iq->eq", lam_c[:, c * nts:(c + 1) * nts], psi) for c in range(d)],
            axis=-1,
        )
        jump = uh - lh
        jn = np.einsum("eqa,ea->eq", jump, n)
        tang2 = (jump ** 2).sum(axis=-1) - jn ** 2
        wt_t = np.abs(stab.tau_t[:, lf][:, None] - 0.5 * bn)
        wt_n = np.abs(stab.tau_n[:, lf][:, None] - 0.5 * bn)
        total += (wf * (wt_t * tang2 + wt_n * jn ** 2)).sum()
    return float(total)


def energy_error(field: FieldSolution, quad_degree: Optional[int] = None) -> float:
    """Energy norm of (w - w_h, u - u_h, u - u_hat).

    Volume terms use the exact solution at elevated quadrature; the facet
    jump terms reduce to discrete quantities because the exact trace
    cancels in (u - u_h) - (u - u_hat).
    """
    space = field.space
    problem = field.problem
    if problem.exact_u is None or problem.exact_curl_u is None:
        raise ValueError("exact solution required for the energy error")
    qd = quad_degree if quad_degree is not None else 2 * space.k + 6
    w_part = problem.eps * w_scaled_l2_error(field, qd) ** 2
    u_part = l2_error(space.mesh, field.u, space.k, problem.exact_u, qd) ** 2
    facet = _facet_jump_energy(space, field.stab, problem, field.u, field.lam)
    return float(np.sqrt(w_part + u_part + facet))


def energy_norm_discrete(space: HDGSpace, problem, stab, w_coeffs, u_coeffs, lam) -> float:
    """Energy norm of a discrete triple (r, v, mu)."""
    _, _, det = space.mesh.transforms()[1:]
    # reference-orthonormal basis: ||field||^2_T = det * sum of coefficients^2
    w_part = (det[:, None] * w_coeffs ** 2).sum() / problem.eps
    u_part = (det[:, None] * u_coeffs ** 2).sum()
    facet = _facet_jump_energy(space, stab, problem, u_coeffs, lam)
    return float(np.sqrt(w_part + u_part + facet))


def energy_identity_residual(field: FieldSolution) -> float:
    """Relative residual of the discrete energy identity (g = 0 problems).

    The identity balances the eps^-1 flux norm, the tau-weighted jumps,
    the outflow boundary term and the effective-reaction quadratic form
    against (f, u_h).
    """
    space = field.space
    problem = field.problem
    stab = field.stab
    mesh = space.mesh
    d = space.dim
    ns, nts = space.ns, space.nts

    _, _, _, det = mesh.transforms()
    lhs = (det[:, None] * field.w ** 2).sum() / problem.eps

    # volume: effective reaction quadratic form and the source pairing
    X = space.X
    wdet = space.wdet
    V = space.V
    flat = X.reshape(-1, d)
    gb = np.asarray(problem.grad_beta(flat), float).reshape(X.shape[:2] + (d, d))
    gam = np.asarray(problem.gamma(flat), float).reshape(X.shape[:2])
    f = np.asarray(problem.source(flat), float).reshape(X.shape)
    div_beta = np.einsum("eqaa->eq", gb)
    uh = _vector_values(field.u, V, d)
    react = (gam - 0.5 * div_beta)[..., None] * uh + 0.5 * np.einsum(
        "eqab,eqb->eqa", gb + gb.transpose(0, 1, 3, 2), uh)
    lhs += (wdet * np.einsum("eqa,eqa->eq", react, uh)).sum()
    rhs = (wdet * np.einsum("eqa,eqa->eq", f, uh)).sum()

    psi = space.psi
    for lf in range(d + 1):
        fid = space.EF[:, lf]
        wf = space.Wf[fid]
        Vf = space.VF[:, lf]
        n = space.NOUT[:, lf]
        pts = space.Xf[fid]
        bn = np.einsum("eqa,ea->eq",
                       np.asarray(problem.beta(pts.reshape(-1, d)), float).reshape(pts.shape),
                       n)
        uh_f = np.stack(
            [np.einsum("ei,eiq->eq", field.u[:, c * ns:(c + 1) * ns], Vf) for c in range(d)],
            axis=-1,
        )
        lam_c = field.lam[fid]
        lh = np.stack(
            [np.einsum("ei,iq->eq", lam_c[:, c * nts:(c + 1) * nts], psi) for c in range(d)],
            axis=-1,
        )
        jump = uh_f - lh
        jn = np.einsum("eqa,ea->eq", jump, n)
        tang2 = (jump ** 2).sum(axis=-1) - jn ** 2
        lhs += (wf * ((stab.tau_t[:, lf][:, None] - 0.5 * bn) * tang2
                      + (stab.tau_n[:, lf][:, None] - 0.5 * bn) * jn ** 2)).sum()
        bnd = space.is_bnd_side[:, lf]
        if bnd.any():
            ln = np.einsum("eqa,ea->eq", lh, n)
            chi_out = (bn >= 0.0).astype(float)
            lhs += 0.5 * (wf[bnd] * chi_out[bnd] * bn[bnd] * ln[bnd] ** 2).sum()

    scale = max(abs(lhs), abs(rhs), 1e-300)
    return float(abs(lhs - rhs) / scale)


@dataclass
class ErrorReport:
    """Per-level errors and experimental orders of one convergence run."""

    levels: list = field(default_factory=list)  # subdivisions n
    hs: list = field(default_factory=list)
    dofs: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)  # column name -> list of values

    def add_level(self, n: int, h: float, dofs: int, **cols):
        self.levels.append(n)
        self.hs.append(h)
        self.dofs.append(dofs)
        for key, val in cols.items():
            self.errors.setdefault(key, []).append(val)
        for key, vals in self.errors.items():
            if len(vals) != len(self.levels):
                raise ValueError(f"column {key} missing a value for level {n}")

    def orders(self, column: str):
        return eoc(self.errors[column], self.hs)
