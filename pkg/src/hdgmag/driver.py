"""CLI and orchestration: convergence tables, field dumps, self-checks.

Config is a single JSON document; every key is optional.  Outputs are
deterministic: rerunning a config reproduces the files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .assembly import solve_problem
from .basis import ScalarBasis
from .linsolve import SolveOptions
from .mesh import Mesh, build_unit_cube_mesh, build_unit_square_mesh, write_mesh_vtk
from .norms import (
    ErrorReport,
    energy_error,
    energy_identity_residual,
    hcurl_seminorm_error,
    l2_error,
    w_scaled_l2_error,
)
from .postprocess import postprocess_curlfit, postprocess_star_2d
from .problems import experiment_catalog

__all__ = ["RunConfig", "run_convergence", "run_field_dump", "run_check",
           "sample_field", "main"]

MAX_3D_LEVEL = 8


@dataclass
class RunConfig:
    """One run of the experiment harness; all fields have defaults."""

    experiment: int = 2
    k: int = 1
    eps: tuple = (1.0,)
    levels: tuple = (2, 4, 8, 16)
    postprocess: tuple = ()          # subset of {"star2d", "curlfit"}
    outdir: str = "out"
    quad_el_degree: Optional[int] = None
    quad_fc_degree: Optional[int] = None
    solver: str = "direct"
    solver_tol: float = 1e-10
    lattice: int = 129
    seed: int = 0
    allow_large_3d: bool = False

    def __post_init__(self):
        if self.k not in (0, 1, 2):
            raise ValueError("polynomial degree k must be 0, 1 or 2")
        if len(self.levels) == 0:
            raise ValueError("at least one refinement level is required")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("refinement levels must be strictly increasing")
        if any(e <= 0 for e in self.eps):
            raise ValueError("diffusion coefficients must be positive")
        for tag in self.postprocess:
            if tag not in ("star2d", "curlfit"):
                raise ValueError(f"unknown postprocess toggle {tag!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("eps", "levels", "postprocess"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _build_mesh(exp, n: int) -> Mesh:
    return build_unit_cube_mesh(n) if exp.dim == 3 else build_unit_square_mesh(n)


def _check_3d_budget(config: RunConfig, exp) -> tuple:
    levels = config.levels
    if exp.dim == 3 and not config.allow_large_3d:
        capped = tuple(n for n in levels if n <= MAX_3D_LEVEL)
        if not capped:
            raise ValueError(
                f"3D levels {levels} all exceed the default cap {MAX_3D_LEVEL}; "
                "set allow_large_3d to override")
        return capped
    return levels


def _solve_level(config: RunConfig, exp, eps: float, n: int):
    problem = exp.problem(eps)
    mesh = _build_mesh(exp, n)
    solver = SolveOptions(method=config.solver, tol=config.solver_tol)
    field, report = solve_problem(
        mesh, problem, config.k,
        quad_el_degree=config.quad_el_degree,
        quad_fc_degree=config.quad_fc_degree,
        slit=exp.slit,
        solver=solver,
    )
    return field, report


def _eps_tag(eps: float) -> str:
    return f"{eps:g}"


def run_convergence(config: RunConfig, quiet: bool = False):
    """Convergence study: one CSV (plus full-precision twin) per eps.

    Columns: level,n,h,dofs,err_energy,ord_energy,err_l2_u,ord_l2_u,
    err_w_scaled,ord_w_scaled,err_hc_u,ord_hc_u plus, per requested
    postprocess toggle, err_hc_star/ord_hc_star and
    err_hc_curlfit/ord_hc_curlfit.
    """
    exp = experiment_catalog(config.experiment)
    levels = _check_3d_budget(config, exp)
    probe = exp.problem(config.eps[0])
    if probe.exact_u is None:
        raise ValueError(
            f"experiment {config.experiment} has no exact solution; "
            "convergence error columns are unavailable")
    os.makedirs(config.outdir, exist_ok=True)
    want_star = "star2d" in config.postprocess and exp.dim == 2
    want_curlfit = "curlfit" in config.postprocess
    reports = []
    for eps in config.eps:
        report = ErrorReport()
        for n in levels:
            fieldsol, solve_report = _solve_level(config, exp, eps, n)
            problem = fieldsol.problem
            space = fieldsol.space
            qd = 2 * config.k + 6
            cols = {
                "err_energy": energy_error(fieldsol),
                "err_l2_u": l2_error(space.mesh, fieldsol.u, config.k,
                                     problem.exact_u, qd),
                "err_w_scaled": w_scaled_l2_error(fieldsol),
                "err_hc_u": hcurl_seminorm_error(space.mesh, fieldsol.u, config.k,
                                                 problem.exact_curl_u, qd),
            }
            if want_star:
                star = postprocess_star_2d(fieldsol)
                cols["err_hc_star"] = hcurl_seminorm_error(
                    space.mesh, star.coeffs, config.k + 1, problem.exact_curl_u, qd)
            if want_curlfit:
                cfit = postprocess_curlfit(fieldsol)
                cols["err_hc_curlfit"] = hcurl_seminorm_error(
                    space.mesh, cfit.coeffs, config.k + 1, problem.exact_curl_u, qd)
            report.add_level(n=n, h=1.0 / n, dofs=space.ndof_trace, **cols)
        stem = os.path.join(
            config.outdir, f"exp{config.experiment}_k{config.k}_eps{_eps_tag(eps)}")
        _write_report_csv(report, stem + ".csv", full=False)
        _write_report_csv(report, stem + ".full.csv", full=True)
        if not quiet:
            _print_report(config, eps, report)
        reports.append((eps, report))
    return reports


def _report_columns(report: ErrorReport):
    names = []
    for key in ("err_energy", "err_l2_u", "err_w_scaled", "err_hc_u",
                "err_hc_star", "err_hc_curlfit"):
        if key in report.errors:
            names.append(key)
    return names


def _write_report_csv(report: ErrorReport, path: str, full: bool):
    names = _report_columns(report)
    header = ["level", "n", "h", "dofs"]
    for name in names:
        header += [name, name.replace("err_", "ord_")]
    orders = {name: report.orders(name) for name in names}

    def fmt(value):
        return repr(float(value)) if full else f"{value:.5e}"

    lines = [",".join(header)]
    for i, n in enumerate(report.levels):
        row = [str(i), str(n), fmt(report.hs[i]), str(report.dofs[i])]
        for name in names:
            row.append(fmt(report.errors[name][i]))
            if i == 0:
                row.append("")
            else:
                o = orders[name][i - 1]
                row.append(repr(float(o)) if full else f"{o:.2f}")
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _print_report(config: RunConfig, eps: float, report: ErrorReport):
    names = _report_columns(report)
    print(f"experiment {config.experiment}  k={config.k}  eps={_eps_tag(eps)}")
    head = f"{'n':>5} {'dofs':>9}"
    for name in names:
        head += f" {name[4:]:>12} {'ord':>6}"
    print(head)
    orders = {name: report.orders(name) for name in names}
    for i, n in enumerate(report.levels):
        line = f"{n:>5} {report.dofs[i]:>9}"
        for name in names:
            line += f" {report.errors[name][i]:>12.3e}"
            line += "    ---" if i == 0 else f" {orders[name][i - 1]:>6.2f}"
        print(line)


def sample_field(fieldsol, points: np.ndarray, coeffs: Optional[np.ndarray] = None,
                 degree: Optional[int] = None) -> np.ndarray:
    """Evaluate a component-major element field at arbitrary points."""
    space = fieldsol.space
    mesh = space.mesh
    points = np.atleast_2d(points)
    if coeffs is None:
        coeffs, degree = fieldsol.u, space.k
    basis = ScalarBasis(degree, mesh.dim)
    elems, xi = mesh.locate(points)
    vals = basis.eval(xi)  # (ns, npts)
    ns = basis.count
    out = np.stack(
        [np.einsum("pi,ip->p", coeffs[elems][:, c * ns:(c + 1) * ns], vals)
         for c in range(mesh.dim)],
        axis=-1,
    )
    return out


def _lattice_points(dim: int, m: int) -> tuple:
    axis = np.linspace(0.0, 1.0, m)
    if dim == 2:
        xx, yy = np.meshgrid(axis, axis, indexing="xy")
        return np.column_stack([xx.ravel(), yy.ravel()]), (m, m, 1)
    m3 = min(m, 33)
    ax3 = np.linspace(0.0, 1.0, m3)
    xx, yy, zz = np.meshgrid(ax3, ax3, ax3, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()]), (m3, m3, m3)


def _write_field_vtk(path: str, dims: tuple, spacing: tuple, values: np.ndarray,
                     name: str = "u"):
    nx, ny, nz = dims
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write("hdgmag field dump\n")
        fh.write("ASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx} {ny} {nz}\n")
        fh.write("ORIGIN 0 0 0\n")
        fh.write(f"SPACING {spacing[0]:.16g} {spacing[1]:.16g} {spacing[2]:.16g}\n")
        fh.write(f"POINT_DATA {nx * ny * nz}\n")
        fh.write(f"VECTORS {name} double\n")
        vec3 = values if values.shape[1] == 3 else np.column_stack(
            [values, np.zeros(values.shape[0])])
        for row in vec3:
            fh.write(f"{row[0]:.16g} {row[1]:.16g} {row[2]:.16g}\n")


def run_field_dump(config: RunConfig, quiet: bool = False):
    """Solve at the finest requested level and dump lattice samples of u_h
    (and the curl-fit reconstruction when toggled) as CSV and legacy VTK."""
    exp = experiment_catalog(config.experiment)
    levels = _check_3d_budget(config, exp)
    os.makedirs(config.outdir, exist_ok=True)
    n = levels[-1]
    outputs = []
    for eps in config.eps:
        fieldsol, report = _solve_level(config, exp, eps, n)
        pts, dims = _lattice_points(exp.dim, config.lattice)
        uh = sample_field(fieldsol, pts)
        if not np.isfinite(uh).all():
            raise RuntimeError("field dump produced non-finite samples")
        data = [pts, uh]
        header = list("xyz"[:exp.dim]) + [f"u{c}" for c in range(exp.dim)]
        want_star = "star2d" in config.postprocess and exp.dim == 2
        if want_star:
            star = postprocess_star_2d(fieldsol)
            data.append(sample_field(fieldsol, pts, star.coeffs, config.k + 1))
            header += [f"ustar{c}" for c in range(exp.dim)]
        if "curlfit" in config.postprocess:
            cfit = postprocess_curlfit(fieldsol)
            data.append(sample_field(fieldsol, pts, cfit.coeffs, config.k + 1))
            header += [f"ucurlfit{c}" for c in range(exp.dim)]
        table = np.column_stack(data)
        stem = os.path.join(
            config.outdir,
            f"exp{config.experiment}_k{config.k}_eps{_eps_tag(eps)}_n{n}_field")
        with open(stem + ".csv", "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in table:
                fh.write(",".join(f"{v:.16g}" for v in row) + "\n")
        spacing = tuple(1.0 / (d - 1) if d > 1 else 1.0 for d in dims)
        _write_field_vtk(stem + ".vtk", dims, spacing, uh)
        mesh_path = stem + "_mesh.vtk"
        write_mesh_vtk(fieldsol.space.mesh, mesh_path)
        outputs.append(stem + ".csv")
        if not quiet:
            print(f"wrote {stem}.csv ({table.shape[0]} samples), {stem}.vtk")
    return outputs


def run_check(quiet: bool = False) -> int:
    """Fast invariant suite on tiny meshes; returns a process exit code."""
    from .basis import quadrature_rule
    from .problems import ProblemSpec, _const_vector, _mixed_boundary_data_2d, _zero_matrix

    failures = 0

    def check(name, ok):
        nonlocal failures
        status = "PASS" if ok else "FAIL"
        if not ok:
            failures += 1
        if not quiet:
            print(f"[{status}] {name}")

    rule = quadrature_rule(2, 6)
    mono = (rule.weights * rule.points[:, 0] ** 3).sum()
    check("quadrature: triangle degree-3 monomial", abs(mono - 1.0 / 20.0) < 1e-14)

    m2 = build_unit_square_mesh(4)
    check("mesh: unit square measure", abs(m2.element_measure.sum() - 1.0) < 1e-12)
    nrm = m2.facet_normal[m2.element_facets] * m2.element_facet_sign[..., None]
    meas = m2.facet_measure[m2.element_facets]
    check("mesh: per-element facet closure",
          np.abs((nrm * meas[..., None]).sum(axis=1)).max() < 1e-12)

    m3 = build_unit_cube_mesh(2)
    check("mesh: unit cube measure", abs(m3.element_measure.sum() - 1.0) < 1e-12)

    uv = np.array([1.0, 1.0])
    beta = _const_vector([1.0, 2.0])

    def exact_u(x):
        x = np.atleast_2d(x)
        return np.broadcast_to(uv, (x.shape[0], 2)).copy()

    prob = ProblemSpec(
        dim=2, eps=1.0, beta=beta, grad_beta=_zero_matrix(2),
        gamma=lambda x: np.ones(np.atleast_2d(x).shape[0]),
        source=exact_u, boundary_data=_mixed_boundary_data_2d(exact_u, beta),
        exact_u=exact_u, exact_curl_u=lambda x: np.zeros(np.atleast_2d(x).shape[0]))
    fieldsol, _ = solve_problem(build_unit_square_mesh(2), prob, 1)
    err = energy_error(fieldsol)
    check("assembly: constant patch test (k=1)", err < 1e-9)

    exp5 = experiment_catalog(5)
    f5, _ = solve_problem(build_unit_square_mesh(4), exp5.problem(1e-3), 1)
    check("energy identity residual (boundary-layer problem)",
          energy_identity_residual(f5) < 1e-8)

    if not quiet:
        print("all checks passed" if failures == 0 else f"{failures} checks failed")
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hdgmag",
        description="HDG solver for magnetic advection-diffusion problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_conv = sub.add_parser("convergence", help="run a convergence study")
    p_conv.add_argument("--config", help="JSON config path", default=None)
    p_dump = sub.add_parser("dump", help="solve and dump field samples")
    p_dump.add_argument("--config", help="JSON config path", default=None)
    sub.add_parser("check", help="run the invariant self-test suite")
    args = parser.parse_args(argv)

    if args.command == "check":
        return run_check()
    config = RunConfig.from_json(args.config) if args.config else RunConfig()
    try:
        if args.command == "convergence":
            run_convergence(config)
        else:
            run_field_dump(config)
    except Exception as exc:  # solver failures exit nonzero with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
