"""Uniform simplicial meshes of the unit square/cube with facet topology.

Every facet stores one normal, oriented outward from its "left" element
(the adjacent element with the smaller index); the right side sees the
negated normal.  Meshes are immutable after construction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "Mesh",
    "FacetSide",
    "build_unit_square_mesh",
    "build_unit_cube_mesh",
    "classify_boundary_point",
    "write_mesh_vtk",
]

BOUNDARY = -1


class FacetSide(NamedTuple):
    """Addresses one side of a facet: (element, local facet, orientation).

    ``sign`` is +1 when the element is the facet's left (normal owner) and
    -1 otherwise; the outward normal of the side is ``sign * facet_normal``.
    """

    element: int
    local_facet: int
    sign: int


@dataclass
class Mesh:
    dim: int
    vertices: np.ndarray          # (nv, d)
    elements: np.ndarray          # (ne, d+1) vertex ids
    element_measure: np.ndarray   # (ne,)
    facets: np.ndarray            # (nf, d) sorted vertex ids
    facet_left: np.ndarray        # (nf,) element id
    facet_left_local: np.ndarray  # (nf,) local facet id in left element
    facet_right: np.ndarray       # (nf,) element id or BOUNDARY
    facet_right_local: np.ndarray
    facet_normal: np.ndarray      # (nf, d) unit, outward from left
    facet_measure: np.ndarray     # (nf,)
    facet_diameter: np.ndarray    # (nf,)
    element_facets: np.ndarray    # (ne, d+1) facet id per local facet
    element_facet_sign: np.ndarray  # (ne, d+1) +1 if element is facet's left
    structured: dict = field(default_factory=dict)
    _transforms: tuple | None = field(default=None, repr=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def num_facets(self) -> int:
        return self.facets.shape[0]

    @property
    def is_boundary_facet(self) -> np.ndarray:
        return self.facet_right == BOUNDARY

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.nonzero(self.is_boundary_facet)[0]

    @property
    def h_max(self) -> float:
        return float(self.facet_diameter.max())

    def facet_sides(self, facet: int) -> list[FacetSide]:
        sides = [FacetSide(int(self.facet_left[facet]), int(self.facet_left_local[facet]), +1)]
        if self.facet_right[facet] != BOUNDARY:
            sides.append(
                FacetSide(int(self.facet_right[facet]), int(self.facet_right_local[facet]), -1)
            )
        return sides

    def transforms(self):
        """Affine maps x = v0 + J xi: returns (v0, J, invJ, det) with det > 0."""
        if self._transforms is None:
            v0 = self.vertices[self.elements[:, 0]]
            jac = np.stack(
                [self.vertices[self.elements[:, i + 1]] - v0 for i in range(self.dim)],
                axis=-1,
            )
            det = np.linalg.det(jac)
            inv = np.linalg.inv(jac)
            self._transforms = (v0, jac, inv, det)
        return self._transforms

    def element_centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    def locate(self, points: np.ndarray):
        """Map physical points to (element id, reference coordinates).

        Uses closed-form lookup on the structured meshes built by this
        module and a brute-force barycentric scan otherwise.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        kind = self.structured.get("kind")
        if kind == "square":
            elems = _locate_square(self, points)
        elif kind == "cube":
            elems = _locate_cube(self, points)
        else:
            elems = _locate_scan(self, points)
        v0, _, inv, _ = self.transforms()
        xi = np.einsum("pij,pj->pi", inv[elems], points - v0[elems])
        return elems, xi


def _locate_square(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    n = mesh.structured["n"]
    pattern = mesh.structured["pattern"]
    scaled = np.clip(points * n, 0.0, n * (1.0 - 1e-15))
    cell = np.minimum(scaled.astype(np.int64), n - 1)
    frac = scaled - cell
    base = 2 * (cell[:, 1] * n + cell[:, 0])
    if pattern == "main":
        upper = frac[:, 1] > frac[:, 0]
    else:
        upper = frac[:, 0] + frac[:, 1] > 1.0
    return base + upper.astype(np.int64)


def _locate_cube(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    n = mesh.structured["n"]
    scaled = np.clip(points * n, 0.0, n * (1.0 - 1e-15))
    cell = np.minimum(scaled.astype(np.int64), n - 1)
    frac = scaled - cell
    base = 6 * ((cell[:, 2] * n + cell[:, 1]) * n + cell[:, 0])
    perms = list(itertools.permutations(range(3)))
    # Kuhn tet for permutation p covers frac[p0] >= frac[p1] >= frac[p2].
    order = np.argsort(-frac, axis=1, kind="stable")
    lookup = {p: i for i, p in enumerate(perms)}
    offsets = np.array([lookup[tuple(row)] for row in order], dtype=np.int64)
    return base + offsets


def _locate_scan(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    v0, _, inv, _ = mesh.transforms()
    xi = np.einsum("eij,pj->pei", inv, points[:, None, :] - v0[None, :, :])
    bary0 = 1.0 - xi.sum(axis=-1)
    ok = (xi >= -1e-12).all(axis=-1) & (bary0 >= -1e-12)
    elems = np.argmax(ok, axis=1)
    if not ok[np.arange(points.shape[0]), elems].all():
        raise ValueError("point outside the mesh")
    return elems


def _build_topology(vertices: np.ndarray, elements: np.ndarray, dim: int, structured: dict) -> Mesh:
    nv = vertices.shape[0]
    ne = elements.shape[0]
    # Enforce positive orientation.
    v0 = vertices[elements[:, 0]]
    jac = np.stack([vertices[elements[:, i + 1]] - v0 for i in range(dim)], axis=-1)
    det = np.linalg.det(jac)
    flip = det < 0
    if flip.any():
        elements = elements.copy()
        elements[flip, -1], elements[flip, -2] = elements[flip, -2], elements[flip, -1]
        det = np.abs(det)
    element_measure = det / (2.0 if dim == 2 else 6.0)

    facet_map: dict[tuple, list[tuple[int, int]]] = {}
    local_ids = [tuple(j for j in range(dim + 1) if j != i) for i in range(dim + 1)]
    for e in range(ne):
        verts = elements[e]
        for lf in range(dim + 1):
            key = tuple(sorted(verts[j] for j in local_ids[lf]))
            facet_map.setdefault(key, []).append((e, lf))

    keys = sorted(facet_map.keys())
    nf = len(keys)
    facets = np.array(keys, dtype=np.int64)
    facet_left = np.empty(nf, dtype=np.int64)
    facet_left_local = np.empty(nf, dtype=np.int64)
    facet_right = np.full(nf, BOUNDARY, dtype=np.int64)
    facet_right_local = np.full(nf, BOUNDARY, dtype=np.int64)
    for fid, key in enumerate(keys):
        sides = sorted(facet_map[key])
        if len(sides) > 2:
            raise ValueError(f"facet {key} shared by more than two elements")
        facet_left[fid], facet_left_local[fid] = sides[0]
        if len(sides) == 2:
            facet_right[fid], facet_right_local[fid] = sides[1]

    fverts = vertices[facets]  # (nf, d, d)
    if dim == 2:
        tang = fverts[:, 1] - fverts[:, 0]
        length = np.linalg.norm(tang, axis=1)
        normal = np.column_stack([tang[:, 1], -tang[:, 0]]) / length[:, None]
        facet_measure = length
        facet_diameter = length
    else:
        e1 = fverts[:, 1] - fverts[:, 0]
        e2 = fverts[:, 2] - fverts[:, 0]
        cross = np.cross(e1, e2)
        doubled = np.linalg.norm(cross, axis=1)
        normal = cross / doubled[:, None]
        facet_measure = doubled / 2.0
        e3 = fverts[:, 2] - fverts[:, 1]
        facet_diameter = np.max(
            np.stack([np.linalg.norm(e1, axis=1), np.linalg.norm(e2, axis=1), np.linalg.norm(e3, axis=1)]),
            axis=0,
        )

    centroids = vertices[elements].mean(axis=1)
    fcent = fverts.mean(axis=1)
    outward = np.einsum("fd,fd->f", normal, fcent - centroids[facet_left]) > 0
    normal[~outward] *= -1.0

    element_facets = np.empty((ne, dim + 1), dtype=np.int64)
    element_facet_sign = np.empty((ne, dim + 1), dtype=np.int64)
    for fid in range(nf):
        element_facets[facet_left[fid], facet_left_local[fid]] = fid
        element_facet_sign[facet_left[fid], facet_left_local[fid]] = 1
        if facet_right[fid] != BOUNDARY:
            element_facets[facet_right[fid], facet_right_local[fid]] = fid
            element_facet_sign[facet_right[fid], facet_right_local[fid]] = -1

    return Mesh(
        dim=dim,
        vertices=vertices,
        elements=elements,
        element_measure=element_measure,
        facets=facets,
        facet_left=facet_left,
        facet_left_local=facet_left_local,
        facet_right=facet_right,
        facet_right_local=facet_right_local,
        facet_normal=normal,
        facet_measure=facet_measure,
        facet_diameter=facet_diameter,
        element_facets=element_facets,
        element_facet_sign=element_facet_sign,
        structured=structured,
    )


def build_unit_square_mesh(n: int, pattern: str = "main") -> Mesh:
    """Uniform triangulation of (0,1)^2 with 2*n^2 triangles.

    ``pattern`` selects the diagonal direction: "main" draws the diagonal
    from the lower-left to the upper-right corner of each cell, "anti" the
    other one.
    """
    if n < 1:
        raise ValueError("subdivision count must be at least 1")
    if pattern not in ("main", "anti"):
        raise ValueError(f"unknown diagonal pattern {pattern!r}")
    coords_1d = np.arange(n + 1) / n
    xx, yy = np.meshgrid(coords_1d, coords_1d, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(ix, iy):
        return iy * (n + 1) + ix

    cells = []
    for iy in range(n):
        for ix in range(n):
            v00, v10 = vid(ix, iy), vid(ix + 1, iy)
            v01, v11 = vid(ix, iy + 1), vid(ix + 1, iy + 1)
            if pattern == "main":
                cells.append((v00, v10, v11))
                cells.append((v00, v11, v01))
            else:
                cells.append((v00, v10, v01))
                cells.append((v10, v11, v01))
    elements = np.array(cells, dtype=np.int64)
    return _build_topology(vertices, elements, 2, {"kind": "square", "n": n, "pattern": pattern})


def build_unit_cube_mesh(n: int) -> Mesh:
    """Kuhn subdivision of (0,1)^3 into 6*n^3 tetrahedra."""
    if n < 1:
        raise ValueError("subdivision count must be at least 1")
    coords_1d = np.arange(n + 1) / n
    grid = np.stack(np.meshgrid(coords_1d, coords_1d, coords_1d, indexing="ij"), axis=-1)
    # vertex id = (iz*(n+1) + iy)*(n+1) + ix
    vertices = grid.transpose(2, 1, 0, 3).reshape(-1, 3)

    def vid(ix, iy, iz):
        return (iz * (n + 1) + iy) * (n + 1) + ix

    unit = np.eye(3, dtype=np.int64)
    cells = []
    for iz in range(n):
        for iy in range(n):
            for ix in range(n):
                corner = np.array([ix, iy, iz], dtype=np.int64)
                for perm in itertools.permutations(range(3)):
                    path = [corner]
                    for axis in perm:
                        path.append(path[-1] + unit[axis])
                    cells.append(tuple(vid(*p) for p in path))
    elements = np.array(cells, dtype=np.int64)
    return _build_topology(vertices, elements, 3, {"kind": "cube", "n": n})


def classify_boundary_point(mesh: Mesh, beta: Callable, x: np.ndarray) -> str:
    """Inflow/outflow classification of a boundary point by the sign of
    beta.n; the tie beta.n = 0 counts as outflow."""
    x = np.asarray(x, dtype=float)
    normal = None
    for fid in mesh.boundary_facets:
        if _point_on_facet(mesh, fid, x):
            normal = mesh.facet_normal[fid]
            break
    if normal is None:
        raise ValueError(f"point {x} does not lie on a boundary facet")
    bn = float(np.asarray(beta(x[None, :]))[0] @ normal)
    return "inflow" if bn < 0.0 else "outflow"


def _point_on_facet(mesh: Mesh, fid: int, x: np.ndarray, tol: float = 1e-12) -> bool:
    verts = mesh.vertices[mesh.facets[fid]]
    v0 = verts[0]
    span = verts[1:] - v0
    rel = x - v0
    coeff, residuals, *_ = np.linalg.lstsq(span.T, rel, rcond=None)
    recon = span.T @ coeff
    if np.linalg.norm(recon - rel) > tol:
        return False
    return (coeff >= -tol).all() and coeff.sum() <= 1.0 + tol


VTK_CELL_TYPE = {2: 5, 3: 10}  # triangle, tetrahedron


def write_mesh_vtk(mesh: Mesh, path: str, title: str = "hdgmag mesh") -> None:
    """Dump the mesh as a legacy-ASCII VTK unstructured grid."""
    ne = mesh.num_elements
    npts = mesh.num_vertices
    nodal = mesh.vertices
    if mesh.dim == 2:
        nodal = np.column_stack([nodal, np.zeros(npts)])
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {npts} double\n")
        for p in nodal:
            fh.write(f"{p[0]:.16g} {p[1]:.16g} {p[2]:.16g}\n")
        fh.write(f"CELLS {ne} {ne * (mesh.dim + 2)}\n")
        for cell in mesh.elements:
            fh.write(f"{mesh.dim + 1} " + " ".join(str(v) for v in cell) + "\n")
        fh.write(f"CELL_TYPES {ne}\n")
        for _ in range(ne):
            fh.write(f"{VTK_CELL_TYPE[mesh.dim]}\n")
