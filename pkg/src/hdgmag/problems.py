"""Problem specifications, advection operators, stabilization parameters and
the catalog of benchmark experiments.

Coefficient callbacks are vectorized: they take point arrays of shape
(n, d) and return arrays with a leading axis n.  They must be pure; the
assembly evaluates them concurrently from many element batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .basis import quadrature_rule
from .mesh import BOUNDARY, FacetSide, Mesh

__all__ = [
    "ProblemSpec",
    "StabilizationParams",
    "Experiment",
    "SlitSpec",
    "default_stabilization",
    "build_stabilization",
    "dual_advection_apply",
    "lie_advection_apply",
    "friedrichs_min_eig",
    "experiment_catalog",
    "facet_quad_points",
]

TAU_N_FLOOR = 0.1


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficients and data of one advection-diffusion problem.

    ``boundary_data`` receives points together with the outward unit
    normal, because the mixed tangential/inflow-normal data depends on it.
    ``exact_curl_u`` returns the 3-vector curl in 3D and the scalar curl
    in 2D.
    """

    dim: int
    eps: float
    beta: Callable[[np.ndarray], np.ndarray]
    grad_beta: Callable[[np.ndarray], np.ndarray]
    gamma: Callable[[np.ndarray], np.ndarray]
    source: Callable[[np.ndarray], np.ndarray]
    boundary_data: Callable[[np.ndarray, np.ndarray], np.ndarray]
    exact_u: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_curl_u: Optional[Callable[[np.ndarray], np.ndarray]] = None
    description: str = ""

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"unsupported dimension {self.dim}")
        if not self.eps > 0.0:
            raise ValueError("diffusion coefficient must be positive")


@dataclass(frozen=True)
class StabilizationParams:
    """Per facet-side stabilization values, indexed (element, local facet).

    The two sides of an interior facet may carry different values; for the
    default formulas they differ whenever beta.n changes sign across the
    facet.
    """

    tau_t: np.ndarray  # (ne, d+1)
    tau_n: np.ndarray  # (ne, d+1)
    floor: float = TAU_N_FLOOR

    def __post_init__(self):
        if (self.tau_t < 0).any() or (self.tau_n < 0).any():
            raise ValueError("stabilization parameters must be nonnegative")


def facet_quad_points(mesh: Mesh, degree: int):
    """Physical quadrature points and weights on every facet.

    Returns (points (nf, nq, d), weights (nf, nq)); weights sum to the
    facet measure.  Both sides of a facet share these points, which keeps
    trace integrals single-valued.
    """
    rule = quadrature_rule(mesh.dim - 1, degree)
    fverts = mesh.vertices[mesh.facets]  # (nf, d, d)
    v0 = fverts[:, 0]
    span = fverts[:, 1:] - v0[:, None, :]  # (nf, d-1, d)
    pts = v0[:, None, :] + np.einsum("qm,fmd->fqd", rule.points, span)
    ref_measure = rule.weights.sum()
    weights = rule.weights[None, :] * (mesh.facet_measure / ref_measure)[:, None]
    return pts, weights


def default_stabilization(facet_side: FacetSide, problem: ProblemSpec, mesh: Mesh,
                          quad_degree: int = 6) -> tuple[float, float]:
    """Stabilization pair (tau_t, tau_n) for one facet side.

    tau_t = max(sup_F beta.n, 0) + min(eps/h_F, 1) and
    tau_n = max(max(sup_F beta.n, 0), 0.1), with the sup realized as the
    max over the facet quadrature points and n the side's outward normal.
    """
    fid = int(mesh.element_facets[facet_side.element, facet_side.local_facet])
    sign = float(mesh.element_facet_sign[facet_side.element, facet_side.local_facet])
    pts, _ = facet_quad_points(mesh, quad_degree)
    normal = sign * mesh.facet_normal[fid]
    bn = np.asarray(problem.beta(pts[fid])) @ normal
    sup_pos = max(float(bn.max()), 0.0)
    h_f = float(mesh.facet_diameter[fid])
    tau_t = sup_pos + min(problem.eps / h_f, 1.0)
    tau_n = max(sup_pos, TAU_N_FLOOR)
    return tau_t, tau_n


def build_stabilization(problem: ProblemSpec, mesh: Mesh, quad_degree: int = 6) -> StabilizationParams:
    """Default stabilization for all facet sides at once."""
    pts, _ = facet_quad_points(mesh, quad_degree)
    nf, nq, d = pts.shape
    bn_facet = np.einsum("fqd,fd->fq", problem.beta(pts.reshape(-1, d)).reshape(nf, nq, d),
                         mesh.facet_normal)
    sup_left = np.maximum(bn_facet.max(axis=1), 0.0)
    sup_right = np.maximum((-bn_facet).max(axis=1), 0.0)
    ef = mesh.element_facets
    sup = np.where(mesh.element_facet_sign > 0, sup_left[ef], sup_right[ef])
    h_f = mesh.facet_diameter[ef]
    tau_t = sup + np.minimum(problem.eps / h_f, 1.0)
    tau_n = np.maximum(sup, TAU_N_FLOOR)
    return StabilizationParams(tau_t=tau_t, tau_n=tau_n)


def dual_advection_apply(beta, grad_beta, v, grad_v, dim: int) -> np.ndarray:
    """Formal dual of the magnetic advection operator applied to values.

    Computes curl(beta x v) - beta div(v) through the product-rule
    expansion -(div beta) v + (grad beta) v - (grad v) beta, which is the
    same algebra in 2D and 3D.  All inputs are values at points:
    beta (n,d), grad_beta (n,d,d), v (n,d), grad_v (n,d,d).
    """
    beta = np.asarray(beta, dtype=float)
    grad_beta = np.asarray(grad_beta, dtype=float)
    v = np.asarray(v, dtype=float)
    grad_v = np.asarray(grad_v, dtype=float)
    div_beta = np.trace(grad_beta, axis1=-2, axis2=-1)
    return (
        -div_beta[..., None] * v
        + np.einsum("...ij,...j->...i", grad_beta, v)
        - np.einsum("...ij,...j->...i", grad_v, beta)
    )


def lie_advection_apply(beta, grad_beta, u, grad_u, dim: int) -> np.ndarray:
    """Magnetic advection -beta x curl(u) + grad(beta.u) from values,
    expanded as (grad u) beta + (grad beta)^T u."""
    beta = np.asarray(beta, dtype=float)
    grad_beta = np.asarray(grad_beta, dtype=float)
    u = np.asarray(u, dtype=float)
    grad_u = np.asarray(grad_u, dtype=float)
    return (
        np.einsum("...ij,...j->...i", grad_u, beta)
        + np.einsum("...ji,...j->...i", grad_beta, u)
    )


def friedrichs_min_eig(beta, grad_beta, gamma, points: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of the effective reaction matrix
    (gamma - div(beta)/2) I + (grad beta + grad beta^T)/2 at ``points``.

    Nonnegativity of this field is the degeneracy assumption the scheme
    relies on; the value is diagnostic only.
    """
    points = np.atleast_2d(points)
    n, d = points.shape
    gb = np.asarray(grad_beta(points), dtype=float)
    g = np.asarray(gamma(points), dtype=float)
    div_beta = np.trace(gb, axis1=-2, axis2=-1)
    sym = 0.5 * (gb + gb.transpose(0, 2, 1))
    mat = sym + (g - 0.5 * div_beta)[:, None, None] * np.eye(d)[None]
    return np.linalg.eigvalsh(mat)[:, 0]


# ----------------------------------------------------------------------
# Experiment catalog
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class SlitSpec:
    """An internal facet set carrying strongly prescribed trace values."""

    on_slit: Callable[[np.ndarray], np.ndarray]  # vertex coords (n,d) -> bool mask
    value: Callable[[np.ndarray], np.ndarray]    # points (n,d) -> (n,d)

    def facets(self, mesh: Mesh) -> np.ndarray:
        verts_on = self.on_slit(mesh.vertices)
        return np.nonzero(verts_on[mesh.facets].all(axis=1))[0]


@dataclass(frozen=True)
class Experiment:
    id: int
    dim: int
    make_problem: Callable[[float], ProblemSpec]
    default_eps: tuple
    default_ks: tuple
    default_levels: tuple
    slit: Optional[SlitSpec] = None
    description: str = ""

    def problem(self, eps: float) -> ProblemSpec:
        return self.make_problem(eps)


def _const_vector(vec):
    vec = np.asarray(vec, dtype=float)

    def call(x):
        x = np.atleast_2d(x)
        return np.broadcast_to(vec, (x.shape[0], vec.shape[0])).copy()

    return call


def _zero_matrix(d):
    def call(x):
        x = np.atleast_2d(x)
        return np.zeros((x.shape[0], d, d))

    return call


def _zero_scalar(x):
    x = np.atleast_2d(x)
    return np.zeros(x.shape[0])


def _mixed_boundary_data_3d(exact_u, beta):
    def g(x, n):
        x = np.atleast_2d(x)
        n = np.broadcast_to(np.atleast_2d(n), x.shape)
        u = exact_u(x)
        bn = np.einsum("pd,pd->p", beta(x), n)
        inflow = bn < 0.0
        un = np.einsum("pd,pd->p", u, n)
        return np.cross(n, u) + inflow[:, None] * un[:, None] * n

    return g


def _mixed_boundary_data_2d(exact_u, beta):
    def g(x, n):
        x = np.atleast_2d(x)
        n = np.broadcast_to(np.atleast_2d(n), x.shape)
        u = exact_u(x)
        t = np.column_stack([n[:, 1], -n[:, 0]])  # R n
        bn = np.einsum("pd,pd->p", beta(x), n)
        inflow = bn < 0.0
        ut = np.einsum("pd,pd->p", u, t)
        un = np.einsum("pd,pd->p", u, n)
        return ut[:, None] * t + inflow[:, None] * un[:, None] * n

    return g


def _experiment_1(eps: float) -> ProblemSpec:
    beta = _const_vector([1.0, 2.0, 3.0])

    def exact_u(x):
        x = np.atleast_2d(x)
        return np.column_stack([np.sin(x[:, 1]), np.sin(x[:, 2]), np.sin(x[:, 0])])

    def exact_curl(x):
        x = np.atleast_2d(x)
        return -np.column_stack([np.cos(x[:, 2]), np.cos(x[:, 0]), np.cos(x[:, 1])])

    def source(x):
        x = np.atleast_2d(x)
        adv = np.column_stack([2 * np.cos(x[:, 1]), 3 * np.cos(x[:, 2]), np.cos(x[:, 0])])
        return eps * exact_u(x) + adv

    return ProblemSpec(
        dim=3, eps=eps, beta=beta, grad_beta=_zero_matrix(3), gamma=_zero_scalar,
        source=source, boundary_data=_mixed_boundary_data_3d(exact_u, beta),
        exact_u=exact_u, exact_curl_u=exact_curl,
        description="3D smooth solution, constant advection (1,2,3)",
    )


def _experiment_2(eps: float) -> ProblemSpec:
    beta = _const_vector([1.0, 2.0])

    def exact_u(x):
        x = np.atleast_2d(x)
        return np.column_stack([np.sin(x[:, 1]), np.sin(x[:, 0])])

    def exact_curl(x):
        x = np.atleast_2d(x)
        return np.cos(x[:, 0]) - np.cos(x[:, 1])

    def source(x):
        x = np.atleast_2d(x)
        adv = np.column_stack([2 * np.cos(x[:, 1]), np.cos(x[:, 0])])
        return eps * exact_u(x) + adv

    return ProblemSpec(
        dim=2, eps=eps, beta=beta, grad_beta=_zero_matrix(2), gamma=_zero_scalar,
        source=source, boundary_data=_mixed_boundary_data_2d(exact_u, beta),
        exact_u=exact_u, exact_curl_u=exact_curl,
        description="2D smooth solution, constant advection (1,2)",
    )


def _experiment_3(eps: float) -> ProblemSpec:
    def beta(x):
        x = np.atleast_2d(x)
        return np.column_stack([x[:, 1] - 0.5, 0.5 - x[:, 0]])

    def grad_beta(x):
        x = np.atleast_2d(x)
        gb = np.zeros((x.shape[0], 2, 2))
        gb[:, 0, 1] = 1.0
        gb[:, 1, 0] = -1.0
        return gb

    def g_zero(x, n):
        x = np.atleast_2d(x)
        return np.zeros_like(x)

    return ProblemSpec(
        dim=2, eps=eps, beta=beta, grad_beta=grad_beta, gamma=_zero_scalar,
        source=_const_vector([0.0, 0.0]), boundary_data=g_zero,
        description="2D rotating flow with slit-prescribed trace",
    )


def _slit_spec_exp3() -> SlitSpec:
    def on_slit(v, tol=1e-12):
        return (np.abs(v[:, 0] - 0.5) <= tol) & (v[:, 1] <= 0.5 + tol)

    def value(x):
        x = np.atleast_2d(x)
        s = np.sin(2.0 * np.pi * x[:, 1]) ** 2
        return np.column_stack([s, s])

    return SlitSpec(on_slit=on_slit, value=value)


def _experiment_4(eps: float) -> ProblemSpec:
    beta = _const_vector([0.5, np.sqrt(3.0) / 2.0])

    def u_bc(x):
        x = np.atleast_2d(x)
        u = np.zeros_like(x)
        on_bottom = np.abs(x[:, 1]) <= 1e-12
        # Jump at (0, 0.2): the point on the jump takes the limit from below.
        on_left = (np.abs(x[:, 0]) <= 1e-12) & (x[:, 1] <= 0.2)
        hot = on_bottom | on_left
        u[hot] = 1.0
        return u

    return ProblemSpec(
        dim=2, eps=eps, beta=beta, grad_beta=_zero_matrix(2), gamma=_zero_scalar,
        source=_const_vector([0.0, 0.0]),
        boundary_data=_mixed_boundary_data_2d(u_bc, beta),
        description="2D interior layer, advection (1/2, sqrt(3)/2)",
    )


def _experiment_5(eps: float) -> ProblemSpec:
    beta = _const_vector([1.0, 2.0])

    def g_zero(x, n):
        x = np.atleast_2d(x)
        return np.zeros_like(x)

    return ProblemSpec(
        dim=2, eps=eps, beta=beta, grad_beta=_zero_matrix(2), gamma=_zero_scalar,
        source=_const_vector([1.0, 1.0]), boundary_data=g_zero,
        description="2D boundary layer, f=(1,1), homogeneous data",
    )


_CATALOG = {
    1: Experiment(
        id=1, dim=3, make_problem=_experiment_1,
        default_eps=(1.0, 1e-3, 1e-9), default_ks=(0, 1), default_levels=(1, 2, 4, 8),
        description="3D smooth solution",
    ),
    2: Experiment(
        id=2, dim=2, make_problem=_experiment_2,
        default_eps=(1.0, 1e-3, 1e-9), default_ks=(0, 1, 2),
        default_levels=(2, 4, 8, 16, 32, 64),
        description="2D smooth solution",
    ),
    3: Experiment(
        id=3, dim=2, make_problem=_experiment_3,
        default_eps=(1e-9,), default_ks=(0, 1, 2), default_levels=(16,),
        slit=_slit_spec_exp3(),
        description="2D rotating flow",
    ),
    4: Experiment(
        id=4, dim=2, make_problem=_experiment_4,
        default_eps=(1e-3, 1e-9), default_ks=(1,), default_levels=(16,),
        description="2D interior layer",
    ),
    5: Experiment(
        id=5, dim=2, make_problem=_experiment_5,
        default_eps=(1e-3, 1e-9), default_ks=(1,), default_levels=(16,),
        description="2D boundary layer",
    ),
}


def experiment_catalog(exp_id: int) -> Experiment:
    """Benchmark experiment by id (1..5)."""
    try:
        return _CATALOG[exp_id]
    except KeyError:
        raise ValueError(f"unknown experiment id {exp_id}; valid ids are 1..5") from None
