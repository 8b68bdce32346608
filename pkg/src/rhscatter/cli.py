"""Command-line entry point: forward, reconstruct, verify, nv, calibrate-c0, contour-dump.

A run is described by one JSON document (``--config``); missing keys take the
defaults in :data:`DEFAULTS`.  Every output directory receives a
``manifest.json`` with the resolved config, the package version and sha256
checksums of the files written.  Nothing time-dependent enters a manifest,
so equal configs give byte-identical manifests.

Exit codes: 0 success, 2 validation failure, 3 numerical failure, 4 IO.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checks import (check_det_unity, check_e_dbar, check_green_dbar, check_green_difference,
                     check_green_dlambda, check_jump_relation, check_psi_dbar, check_schwarz,
                     fields_from_dataset, CheckResult)
from .dbar import DbarSolveError
from .forward import (ExponentCapError, ManifestError, SolverError, build_dataset, load_dataset,
                      save_dataset)
from .kernels import BranchViolation, branch_sweep, kernel_table_dump, w_quadrature_matrix
from .nvflow import blowup_scan
from .potentials import SupportError, build_potential
from .reconstruct import (SingularSystemError, build_context, reconstruct_field,
                          relative_l2_error)
from .spectral import (ContourSpec, SpectralDomainError, apriori_bounds, build_contour,
                       build_exterior_grid, calibrate_c0, select_rho)

log = logging.getLogger("rhscatter")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "energy": 1.0,
    "rho": 0.25,
    "nodes_per_circle": 64,
    "potential": {
        "kind": "bump",
        "domain": {"shape": "disk", "center": [0.0, 0.0], "radius": 1.0},
        "n": 64,
        "center": [0.1, -0.05],
        "radius": 0.85,
        "amplitude": 0.1,
    },
    "exterior": {"cmax_factor": 16.0, "nradial": 24, "ntheta": 32, "grading": 1.5},
    "probe_factor": 4.0,
    "n_f_angles": 16,
    "exponent_cap": 60.0,
    "keep_fields": False,
    "stride": 1,
    "tolerances": {"rtol": 1e-12, "det_threshold": 1e-6, "identity": 1e-3, "fd_step": 1e-3},
    "verify": {"samples": 10},
    "nv": {"t_grid": [0.0], "s_grid": [1.0], "x_points": 9, "threshold": 1e-3},
    "seed": 0,
}

MIN_NODES = 8
MIN_GRID = 8


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "potential":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None, seed: int | None = None) -> dict:
    """Read, merge with defaults and validate; rho "auto" is resolved here."""
    user = {}
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
    cfg = _merge(DEFAULTS, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    if cfg["energy"] <= 0:
        raise ConfigError("energy must be positive")
    if cfg["nodes_per_circle"] < MIN_NODES or cfg["nodes_per_circle"] % 2:
        raise ConfigError(f"nodes_per_circle must be even and >= {MIN_NODES}")
    if int(cfg["potential"].get("n", 64)) < MIN_GRID:
        raise ConfigError(f"potential grid must have n >= {MIN_GRID}")
    ext = cfg["exterior"]
    if ext["nradial"] < 2 or ext["ntheta"] < MIN_NODES or ext["cmax_factor"] <= 1:
        raise ConfigError("exterior grid needs nradial >= 2, ntheta >= 8, cmax_factor > 1")
    if cfg["rho"] == "auto":
        v = build_potential(cfg["potential"])
        cfg["rho"] = float(select_rho(v.sup, v.domain, cfg["energy"]))
    if not isinstance(cfg["rho"], (int, float)) or cfg["rho"] <= 0:
        raise ConfigError("rho must be positive or \"auto\"")
    return cfg


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: dict, files: list[str], extra: dict | None = None) -> dict:
    manifest = {"version": __version__, "config": cfg,
                "files": {f: _sha(out / f) for f in sorted(files)}}
    if extra:
        manifest.update(extra)
    text = json.dumps(manifest, indent=1, sort_keys=True)
    manifest["checksum"] = hashlib.sha256(text.encode()).hexdigest()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def _setup(cfg):
    v = build_potential(cfg["potential"])
    E = float(cfg["energy"])
    spec = ContourSpec(E, float(cfg["rho"]), int(cfg["nodes_per_circle"]))
    ext = cfg["exterior"]
    grid = build_exterior_grid(E, spec.rho, float(ext["cmax_factor"]), int(ext["nradial"]),
                               int(ext["ntheta"]), float(ext["grading"]))
    return v, spec, grid


def _forward(cfg, v, contour, grid, workers, keep_fields=None):
    keep = cfg["keep_fields"] if keep_fields is None else keep_fields
    return build_dataset(v, contour, grid, n_f_angles=int(cfg["n_f_angles"]),
                         exponent_cap=float(cfg["exponent_cap"]),
                         rtol=float(cfg["tolerances"]["rtol"]), workers=workers, keep_fields=keep)


def _probes(cfg, contour):
    from .reconstruct import default_probes
    return default_probes(contour.spec.C, float(cfg["probe_factor"]))


# -- subcommands -----------------------------------------------------------------------

def cmd_forward(cfg: dict, out: Path, workers: int = 1) -> dict:
    v, spec, grid = _setup(cfg)
    ds = _forward(cfg, v, build_contour(spec), grid, workers)
    manifest = save_dataset(ds, out, extra={"config": cfg, "version": __version__})
    log.info("dataset written to %s (%d failures)", out, len(ds.failures))
    return manifest


def cmd_reconstruct(cfg: dict, dataset: Path, out: Path, workers: int = 1) -> dict:
    ds = load_dataset(dataset)
    ctx = build_context(ds, probes=_probes(cfg, ds.contour),
                        exponent_cap=float(cfg["exponent_cap"]))
    rec = reconstruct_field(ctx, stride=int(cfg["stride"]), workers=workers,
                            det_threshold=float(cfg["tolerances"]["det_threshold"]))
    if rec.singular.all():
        raise SingularSystemError("the jump system is singular at every sampled x")
    out.mkdir(parents=True, exist_ok=True)
    (out / "v_hat.bin").write_bytes(np.ascontiguousarray(rec.v_hat, "<c16").tobytes())
    (out / "detA.bin").write_bytes(np.ascontiguousarray(rec.det, "<c16").tobytes())
    # per-point |Im v_hat|; the probe spread goes to the summary
    (out / "residuals.bin").write_bytes(np.ascontiguousarray(np.abs(rec.v_hat.imag), "<f8").tobytes())
    mid = rec.v_hat.shape[1] // 2
    truth = ds.potential.values[::rec.stride, ::rec.stride]
    lines = ["x,y,v_hat_re,v_hat_im,v_true,det_abs"]
    for i, x in enumerate(rec.xs):
        lines.append(f"{x:.12g},{rec.ys[mid]:.12g},{rec.v_hat[i, mid].real:.12g},"
                     f"{rec.v_hat[i, mid].imag:.12g},{truth[i, mid]:.12g},{abs(rec.det[i, mid]):.12g}")
    (out / "slice.csv").write_text("\n".join(lines) + "\n")
    has_truth = bool(np.any(ds.potential.values))
    summary = {
        "shape": list(rec.v_hat.shape),
        "stride": rec.stride,
        "relative_l2_error": relative_l2_error(rec, ds.potential) if has_truth else None,
        "max_abs_v_hat": float(np.abs(rec.v_hat).max()),
        "imag_residual": rec.imag_residual,
        "probe_spread": rec.probe_spread,
        "det": {"min_abs": float(np.abs(rec.det).min()), "max_abs": float(np.abs(rec.det).max()),
                "max_dev_from_1": float(np.abs(rec.det - 1).max())},
        "flagged_points": np.argwhere(rec.flagged).tolist(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    files = ["v_hat.bin", "detA.bin", "residuals.bin", "slice.csv", "summary.json"]
    write_manifest(out, cfg, files, {"dataset_checksum": json.loads(
        (Path(dataset) / "manifest.json").read_text())["checksum"]})
    return summary


def run_checks(cfg: dict, misorient: bool = False, workers: int = 1) -> list[CheckResult]:
    """Every oracle identity on the configured potential; failures are entries, not errors."""
    v, spec, grid = _setup(cfg)
    E = spec.energy
    tol = float(cfg["tolerances"]["identity"])
    h = float(cfg["tolerances"]["fd_step"])
    contour = build_contour(spec, misorient=misorient)
    results = []

    def guarded(name, fn):
        try:
            with np.errstate(all="ignore"):
                results.append(fn())
        except (SolverError, DbarSolveError, BranchViolation, ExponentCapError,
                np.linalg.LinAlgError) as err:
            results.append(CheckResult(name, float("inf"), tol, False, {"error": str(err)}))

    worst, viol = branch_sweep(contour)
    results.append(CheckResult("log branch bound on the contour", worst, np.pi, viol == 0,
                               {"violations": viol}))
    with np.errstate(all="ignore"):
        Q = w_quadrature_matrix(contour)
    ds = _forward(cfg, v, contour, grid, workers, keep_fields=True)
    rng = np.random.default_rng(cfg["seed"])
    x_e = v.points[tuple(rng.integers(0, v.n, 2))]
    guarded("jump relation", lambda: check_jump_relation(v, contour, fields_from_dataset(ds),
                                                 int(cfg["verify"]["samples"]), cfg["seed"], tol, Q))
    guarded("G - G+ contour integral", lambda: check_green_difference(contour, tol=tol, Q=Q))
    guarded("dbar G", lambda: check_green_dbar(E, h=h, tol=tol))
    guarded("d_lambda G", lambda: check_green_dlambda(contour, h=h, tol=tol))
    guarded("Schwarz pair", lambda: check_schwarz(v, E))
    guarded("dbar psi", lambda: check_psi_dbar(v, E, h=h, tol=tol))
    guarded("dbar e", lambda: check_e_dbar(ds, x_e, h=h, tol=tol))
    zero = ds.with_tables(h=np.zeros_like(ds.h), b=np.zeros_like(ds.b))
    guarded("det at s = 0", lambda: check_det_unity(build_context(zero), v.points[::16, ::16]))
    return results


def cmd_verify(cfg: dict, out: Path | None, misorient: bool = False, workers: int = 1) -> list[CheckResult]:
    results = run_checks(cfg, misorient, workers)
    report = {"misoriented": misorient, "all_passed": all(r.passed for r in results),
              "checks": [r.to_dict() for r in results]}
    text = "\n".join(r.line() for r in results)
    print(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True, default=float))
        (out / "report.txt").write_text(text + "\n")
        write_manifest(out, cfg, ["report.json", "report.txt"])
    return results


def cmd_nv(cfg: dict, dataset: Path, out: Path, workers: int = 1) -> dict:
    ds = load_dataset(dataset)
    nv = cfg["nv"]
    datasets = {}
    for s in nv["s_grid"]:
        s = float(s)
        if s == 1.0:
            datasets[s] = ds
        else:
            datasets[s] = _forward(cfg, ds.potential.scaled(s), ds.contour, ds.grid, workers, False)
    (x0, y0), (x1, y1) = ds.potential.domain.bbox
    m = int(nv["x_points"])
    xs, ys = np.linspace(x0, x1, m), np.linspace(y0, y1, m)
    report, fields = blowup_scan(datasets, nv["t_grid"], xs, ys, float(nv["threshold"]),
                                 float(cfg["exponent_cap"]), _probes(cfg, ds.contour))
    out.mkdir(parents=True, exist_ok=True)
    files = ["report.json"]
    for (s, t), det in sorted(fields.items()):
        name = f"detA_s{s:+.6f}_t{t:+.6f}.bin"
        (out / name).write_bytes(np.ascontiguousarray(det, "<c16").tobytes())
        files.append(name)
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    write_manifest(out, cfg, files)
    return report


def cmd_calibrate(cfg: dict, out: Path | None) -> dict:
    E = float(cfg["energy"])
    v = build_potential(cfg["potential"])
    c0 = calibrate_c0(E)
    b = apriori_bounds(v.sup, v.domain, E, float(cfg["rho"]), c0)
    res = {"E": E, "c0": c0, "q": b.q, "I1": b.I1, "M": b.M, "rho1": b.rho1,
           "rho_selected": select_rho(v.sup, v.domain, E, c0)}
    print(json.dumps(res, indent=1, sort_keys=True))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "c0.json").write_text(json.dumps(res, indent=1, sort_keys=True))
        write_manifest(out, cfg, ["c0.json"])
    return res


def cmd_contour_dump(cfg: dict, out: Path) -> None:
    E = float(cfg["energy"])
    contour = build_contour(ContourSpec(E, float(cfg["rho"]), int(cfg["nodes_per_circle"])))
    out.mkdir(parents=True, exist_ok=True)
    (out / "contour.json").write_text(contour.to_json())
    Q = w_quadrature_matrix(contour)
    kernel_table_dump(Q, out / "w_table", {"rows": "lambda node index", "cols": "zeta node index"})
    write_manifest(out, cfg, ["contour.json", "w_table.bin", "w_table.json"])


# -- argument parsing -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rhscatter", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("forward", "reconstruct", "verify", "nv", "calibrate-c0", "contour-dump"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker processes")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("-v", "--verbose", action="store_true")
        if name in ("reconstruct", "nv"):
            sp.add_argument("--dataset", required=True, help="directory written by 'forward'")
        if name == "verify":
            sp.add_argument("--debug-misorient", action="store_true",
                            help="flip the inner circle (negative control)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    workers = max(1, args.threads)
    try:
        cfg = load_config(args.config, args.seed)
        if args.command in ("forward", "reconstruct", "nv", "contour-dump") and out is None:
            raise ConfigError(f"{args.command} needs --out")
        if args.command == "forward":
            cmd_forward(cfg, out, workers)
        elif args.command == "reconstruct":
            summary = cmd_reconstruct(cfg, Path(args.dataset), out, workers)
            print(json.dumps({k: summary[k] for k in ("relative_l2_error", "imag_residual")}))
        elif args.command == "verify":
            results = cmd_verify(cfg, out, args.debug_misorient, workers)
            return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION
        elif args.command == "nv":
            report = cmd_nv(cfg, Path(args.dataset), out, workers)
            print(json.dumps({"total_flagged": report["total_flagged"],
                              "errors": len(report["errors"])}))
        elif args.command == "calibrate-c0":
            cmd_calibrate(cfg, out)
        elif args.command == "contour-dump":
            cmd_contour_dump(cfg, out)
    except (ManifestError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, SpectralDomainError, SupportError, KeyError) as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SingularSystemError, SolverError, DbarSolveError, ExponentCapError, BranchViolation,
            np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
