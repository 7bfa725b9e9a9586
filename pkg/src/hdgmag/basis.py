"""Orthonormal polynomial bases and quadrature on reference simplices.

Reference simplices are the unit interval [0,1], the unit triangle
{x,y >= 0, x+y <= 1} and the unit tetrahedron {x,y,z >= 0, x+y+z <= 1}.
All bases are L2-orthonormal on the reference simplex (plain Lebesgue
measure, no Jacobian), so expansion coefficients double as L2 moments.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import roots_jacobi

__all__ = [
    "CapabilityError",
    "NumericalRankError",
    "QuadratureRule",
    "quadrature_rule",
    "reference_measure",
    "ScalarBasis",
    "VectorBasis",
    "eval_scalar_basis",
    "curl_eval",
    "ROTATION_2D",
    "rotate2d",
    "CurlRangeFamilies",
    "build_curl_range_basis",
]

#: Largest quadrature exactness degree the generated rules are validated for.
MAX_QUAD_DEGREE = 60

#: The pi/2-rotation matrix used throughout the 2D reduction.
ROTATION_2D = np.array([[0.0, 1.0], [-1.0, 0.0]])


class CapabilityError(Exception):
    """Requested feature exceeds what the implemented tables support."""


class NumericalRankError(Exception):
    """Orthogonalization could not separate range from kernel."""


def reference_measure(dim: int) -> float:
    """Measure of the reference simplex: 1, 1/2 or 1/6."""
    return 1.0 / math.factorial(dim)


def _gauss_legendre_01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


def _gauss_jacobi_01(n, alpha):
    # Nodes/weights for weight (1-t)^alpha on [0,1].
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on a reference simplex, exact up to ``degree``."""

    dim: int
    degree: int
    barycentric: np.ndarray  # (npts, dim+1)
    weights: np.ndarray  # (npts,), sums to the reference measure

    @property
    def points(self) -> np.ndarray:
        """Cartesian reference coordinates, shape (npts, dim)."""
        return self.barycentric[:, 1:]

    @property
    def npoints(self) -> int:
        return self.weights.shape[0]


def quadrature_rule(dim: int, degree: int) -> QuadratureRule:
    """Collapsed-coordinate Gauss rule on the reference simplex.

    Built from Gauss-Legendre and Gauss-Jacobi 1D rules through the Duffy
    transform, hence exact for all polynomials of total degree <= ``degree``.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"unsupported dimension {dim}")
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    if degree > MAX_QUAD_DEGREE:
        raise CapabilityError(
            f"quadrature degree {degree} exceeds supported maximum {MAX_QUAD_DEGREE}"
        )
    m = degree // 2 + 1
    if dim == 1:
        x, w = _gauss_legendre_01(m)
        pts = x[:, None]
        wts = w
    elif dim == 2:
        a, wa = _gauss_legendre_01(m)
        b, wb = _gauss_jacobi_01(m, 1.0)
        A, B = np.meshgrid(a, b, indexing="ij")
        pts = np.column_stack([(A * (1.0 - B)).ravel(), B.ravel()])
        wts = np.outer(wa, wb).ravel()
    else:
        a, wa = _gauss_legendre_01(m)
        b, wb = _gauss_jacobi_01(m, 1.0)
        c, wc = _gauss_jacobi_01(m, 2.0)
        A, B, C = np.meshgrid(a, b, c, indexing="ij")
        x = A * (1.0 - B) * (1.0 - C)
        y = B * (1.0 - C)
        pts = np.column_stack([x.ravel(), y.ravel(), C.ravel()])
        wts = (wa[:, None, None] * wb[None, :, None] * wc[None, None, :]).ravel()
    bary = np.column_stack([1.0 - pts.sum(axis=1), pts])
    return QuadratureRule(dim=dim, degree=degree, barycentric=bary, weights=wts)


def _monomial_exponents(degree: int, dim: int) -> np.ndarray:
    expo = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(dim), total):
            e = [0] * dim
            for axis in combo:
                e[axis] += 1
            expo.append(e)
    return np.array(expo, dtype=np.int64).reshape(-1, dim)


def _monomial_values(points: np.ndarray, expo: np.ndarray) -> np.ndarray:
    # (npts, nmono)
    return np.prod(points[:, None, :] ** expo[None, :, :], axis=2)


def _monomial_gradients(points: np.ndarray, expo: np.ndarray) -> np.ndarray:
    npts, dim = points.shape
    nmono = expo.shape[0]
    grads = np.zeros((npts, nmono, dim))
    for axis in range(dim):
        lowered = expo.copy()
        active = expo[:, axis] > 0
        lowered[active, axis] -= 1
        vals = np.prod(points[:, None, :] ** lowered[None, :, :], axis=2)
        grads[:, :, axis] = vals * expo[:, axis]
        grads[:, ~active, axis] = 0.0
    return grads


class ScalarBasis:
    """L2-orthonormal scalar polynomial basis on a reference simplex.

    Monomials are orthonormalized against an exact quadrature rule with a
    second Cholesky pass to push the Gram matrix to machine-precision
    identity.
    """

    def __init__(self, degree: int, dim: int):
        if degree < 0:
            raise ValueError("polynomial degree must be nonnegative")
        if dim not in (1, 2, 3):
            raise ValueError(f"unsupported dimension {dim}")
        self.degree = degree
        self.dim = dim
        self.exponents = _monomial_exponents(degree, dim)
        self.count = self.exponents.shape[0]
        rule = quadrature_rule(dim, 2 * degree)
        vals = _monomial_values(rule.points, self.exponents)
        gram = (vals * rule.weights[:, None]).T @ vals
        coeff = np.eye(self.count)
        for _ in range(2):
            chol = cholesky(gram, lower=True)
            coeff = solve_triangular(chol, coeff, lower=True)
            basis_vals = vals @ coeff.T
            gram = (basis_vals * rule.weights[:, None]).T @ basis_vals
        self._coeff = coeff

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Basis values, shape (count, npts)."""
        vals = _monomial_values(np.atleast_2d(points), self.exponents)
        return self._coeff @ vals.T

    def eval_with_grad(self, points: np.ndarray):
        """Values (count, npts) and gradients (count, npts, dim)."""
        points = np.atleast_2d(points)
        vals = _monomial_values(points, self.exponents)
        grads = _monomial_gradients(points, self.exponents)
        values = self._coeff @ vals.T
        gradients = np.einsum("im,pmd->ipd", self._coeff, grads)
        return values, gradients


def eval_scalar_basis(k: int, dim: int, points: np.ndarray):
    """Values and gradients of the orthonormal degree-k basis at ``points``."""
    return ScalarBasis(k, dim).eval_with_grad(points)


class VectorBasis:
    """Componentwise vector basis: scalar basis times Cartesian unit vectors.

    Ordering is component-major: function ``c * count_scalar + i`` is the
    scalar function ``i`` times the unit vector ``e_c``.
    """

    def __init__(self, degree: int, dim: int):
        self.scalar = ScalarBasis(degree, dim)
        self.degree = degree
        self.dim = dim
        self.count = dim * self.scalar.count

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Vector values, shape (count, npts, dim)."""
        vals = self.scalar.eval(points)
        ns, npts = vals.shape
        out = np.zeros((self.count, npts, self.dim))
        for c in range(self.dim):
            out[c * ns:(c + 1) * ns, :, c] = vals
        return out

    def eval_jacobian(self, points: np.ndarray) -> np.ndarray:
        """Jacobians, shape (count, npts, dim, dim): jac[f,p,i,j] = d_j (phi_f)_i."""
        _, grads = self.scalar.eval_with_grad(points)
        ns, npts, dim = grads.shape
        out = np.zeros((self.count, npts, dim, dim))
        for c in range(dim):
            out[c * ns:(c + 1) * ns, :, c, :] = grads
        return out

    def eval_curl(self, points: np.ndarray) -> np.ndarray:
        """Curl values: (count, npts, 3) in 3D, scalar (count, npts) in 2D."""
        return curl_eval(self.eval_jacobian(points), self.dim)


def curl_eval(jacobians: np.ndarray, dim: int) -> np.ndarray:
    """Curl from Jacobians jac[..., i, j] = d_j v_i.

    3D returns the vector curl; in 2D the scalar d_1 v_2 - d_2 v_1, which
    equals div(R v) for the pi/2 rotation R.
    """
    if dim == 3:
        return np.stack(
            [
                jacobians[..., 2, 1] - jacobians[..., 1, 2],
                jacobians[..., 0, 2] - jacobians[..., 2, 0],
                jacobians[..., 1, 0] - jacobians[..., 0, 1],
            ],
            axis=-1,
        )
    if dim == 2:
        return jacobians[..., 1, 0] - jacobians[..., 0, 1]
    raise ValueError(f"curl undefined for dimension {dim}")


def rotate2d(vectors: np.ndarray) -> np.ndarray:
    """Apply the pi/2 rotation R to the last axis of ``vectors``."""
    return vectors @ ROTATION_2D.T


@dataclass
class CurlRangeFamilies:
    """Orthonormal bases of the curl range of degree-(k+1) vector fields
    and of the gradients of degree-(k+2) scalars.

    ``curl_coeffs`` expands the curl-range family in the degree-k vector
    basis (3D) or the degree-k scalar basis (2D scalar curls).
    ``grad_coeffs`` expands the gradient family in the degree-(k+1) vector
    basis.  Leading batch axes mirror a batch of affine transforms.
    """

    k: int
    dim: int
    curl_coeffs: np.ndarray  # (..., n_curl, n_low)
    grad_coeffs: np.ndarray  # (..., n_grad, n_vec_k1)
    n_curl: int = field(init=False)
    n_grad: int = field(init=False)

    def __post_init__(self):
        self.n_curl = self.curl_coeffs.shape[-2]
        self.n_grad = self.grad_coeffs.shape[-2]


def _range_basis(mat: np.ndarray, rank: int, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the row space of ``mat`` (batched), checked
    against the expected ``rank``."""
    _, sing, vt = np.linalg.svd(mat, full_matrices=False)
    smax = sing[..., :1]
    kept = sing > tol * smax
    counts = kept.sum(axis=-1)
    if np.any(counts != rank):
        raise NumericalRankError(
            f"rank detection found {np.unique(counts)} independent functions, "
            f"expected {rank}"
        )
    return vt[..., :rank, :]


def build_curl_range_basis(k_plus_1: int, dim: int, inv_jac_t: np.ndarray | None = None) -> CurlRangeFamilies:
    """Split degree-(k+1) vector polynomials into curl range and gradients.

    The curl images of an orthonormal degree-(k+1) vector basis and the
    gradients of the degree-(k+2) scalar basis are expanded in orthonormal
    reference bases and orthogonalized by SVD with a 1e-10 relative drop
    tolerance.  ``inv_jac_t`` (shape (d,d) or batched (...,d,d)) evaluates
    the families for affinely mapped elements; the identity gives the
    reference element.
    """
    if dim not in (2, 3):
        raise ValueError("curl range families exist in 2D and 3D only")
    if k_plus_1 < 1:
        raise ValueError("degree k+1 must be at least 1")
    k = k_plus_1 - 1
    if inv_jac_t is None:
        inv_jac_t = np.eye(dim)
    inv_jac_t = np.asarray(inv_jac_t, dtype=float)

    s_low = ScalarBasis(k, dim)
    s_k1 = ScalarBasis(k_plus_1, dim)
    s_k2 = ScalarBasis(k_plus_1 + 1, dim)
    rule = quadrature_rule(dim, 2 * (k_plus_1 + 1))
    w = rule.weights

    v_low, _ = s_low.eval_with_grad(rule.points)
    v_k1, g_k1 = s_k1.eval_with_grad(rule.points)
    _, g_k2 = s_k2.eval_with_grad(rule.points)

    # Physical gradients under x = A xi + b:  grad_x = A^{-T} grad_xi.
    gp_k1 = np.einsum("...ab,ipb->...ipa", inv_jac_t, g_k1)
    gp_k2 = np.einsum("...ab,ipb->...ipa", inv_jac_t, g_k2)

    ns1 = s_k1.count
    batch = inv_jac_t.shape[:-2]

    if dim == 3:
        # curl(phi e_c) = grad(phi) x e_c, expanded in the degree-k vector basis.
        cr = np.zeros(batch + (3 * ns1, 3 * s_low.count))
        for c in range(3):
            curl = np.cross(gp_k1, np.eye(3)[c])  # (..., ns1, npts, 3)
            for cp in range(3):
                block = np.einsum("...ip,jp,p->...ij", curl[..., cp], v_low, w)
                cr[..., c * ns1:(c + 1) * ns1, cp * s_low.count:(cp + 1) * s_low.count] = block
        n_curl = 3 * ns1 - (s_k2.count - 1)
        n_low = 3 * s_low.count
    else:
        # scalar curl(phi e_0) = -d2 phi, curl(phi e_1) = d1 phi.
        cr = np.zeros(batch + (2 * ns1, s_low.count))
        cr[..., 0:ns1, :] = np.einsum("...ip,jp,p->...ij", -gp_k1[..., 1], v_low, w)
        cr[..., ns1:2 * ns1, :] = np.einsum("...ip,jp,p->...ij", gp_k1[..., 0], v_low, w)
        n_curl = s_low.count
        n_low = s_low.count

    # Rows of cr are curl images in low-degree coordinates; their row space
    # is the curl range.
    curl_coeffs = _range_basis(cr, n_curl)

    gr = np.zeros(batch + (s_k2.count, dim * ns1))
    for c in range(dim):
        gr[..., :, c * ns1:(c + 1) * ns1] = np.einsum("...ip,jp,p->...ij", gp_k2[..., c], v_k1, w)
    n_grad = s_k2.count - 1
    grad_coeffs = _range_basis(gr, n_grad)

    assert n_curl + n_grad == dim * ns1
    return CurlRangeFamilies(k=k, dim=dim, curl_coeffs=curl_coeffs, grad_coeffs=grad_coeffs)
