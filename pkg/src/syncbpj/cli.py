"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import SweepConfig, dump_config, finite_or_none, load_config
from .efficiency import (
    ChannelModel,
    Constraints,
    EnergyModel,
    bits_per_joule,
    l1_distance_to_law,
    numerical_normalization,
    optimal_input_density,
    solve_gamma_constraints,
    verify_theorem1_laplace,
    write_density_csv,
)
from .errors import ConfigurationError, DataError, NumericalError
from .neuron import IsiSample
from .pipeline import run_sweep
from .stats import (
    SurfaceCoefficients,
    fit_gamma_mle,
    fit_surfaces,
    ks_test_gamma,
    read_surface_table,
    write_fit_table,
    write_surface_table,
)

log = logging.getLogger("syncbpj")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2
VERIFY_TOLERANCES = {"normalization_error": 1e-6, "laplace_max_residual": 1e-6, "l1_dropped": 1e-3}


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigurationError("no output directory: set output_dir in the config or pass --out")
    result = run_sweep(cfg, output_dir=out, workers=args.workers)
    ok = sum(c.ok for c in result.cells)
    passed = sum(1 for c in result.cells if c.ok and c.ks.passed)
    print(f"{len(result.cells)} cells, {ok} fitted, {passed} pass KS at {cfg.alpha:g}; output in {out}")
    for s, rep in sorted(result.efficiency.items()):
        print(f"s={s:g}: {rep.status}" + (f" ({rep.reason})" if rep.reason else ""))
    return EXIT_OK


def _read_isis(path):
    groups = defaultdict(list)
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or rows[0][:3] != ["lambda_ex_hz", "s", "isi_s"]:
        raise DataError(f"{path}: expected header lambda_ex_hz,s,isi_s")
    for lam, s, isi in rows[1:]:
        groups[(float(s), float(lam))].append(float(isi))
    return groups


def _cmd_fit(args) -> int:
    groups = _read_isis(args.isis)
    rows, by_s = [], defaultdict(list)
    for (s, lam), isis in sorted(groups.items()):
        sample = IsiSample(np.array(isis), lam, s)
        fit = fit_gamma_mle(sample)
        rows.append((s, lam, fit, ks_test_gamma(sample, fit, args.alpha)))
        by_s[s].append((lam, fit))
    out = args.out or "-"
    if out == "-":
        w = csv.writer(sys.stdout)
        w.writerow(["s", "lambda_ex_hz", "m_gam", "b_gam", "ks_stat", "ks_pass", "n"])
        for s, lam, fit, ks in rows:
            w.writerow([s, lam, fit.m_gam, fit.b_gam, ks.statistic, int(ks.passed), fit.n_samples])
    else:
        write_fit_table(rows, out, f"syncbpj {__version__}")
    if args.surfaces_out:
        surfaces = [fit_surfaces(pts, s) for s, pts in sorted(by_s.items()) if len({p[0] for p in pts}) >= 3]
        write_surface_table(surfaces, args.surfaces_out, f"syncbpj {__version__}")
    return EXIT_OK


def _report(surface: SurfaceCoefficients, constraints: Constraints, energy: EnergyModel) -> tuple[dict, object]:
    law = solve_gamma_constraints(constraints)
    full = ChannelModel(surface)
    dist = optimal_input_density(full.dropped(), law)
    g0 = constraints.g0
    eff = bits_per_joule(dist, full.dropped(), energy)
    rep = {
        "tool": "syncbpj", "version": __version__,
        "s": surface.s, "g0": g0, "g1": constraints.g1, "C0": energy.C0, "C1": energy.C1,
        "surface": dict(zip(["s", "d1_b", "d0_b", "d2_m", "d1_m", "d0_m"], surface.to_row())),
        "kappa": law.kappa, "beta": law.beta,
        "support_min": dist.support_min, "mode": dist.mode, "truncated_mass": dist.truncated_mass,
        "I_bits": eff.mutual_information, "energy": eff.mean_energy, "bpj": eff.ratio,
        "normalization_error": abs(numerical_normalization(dist) - 1.0),
        "laplace_max_residual": verify_theorem1_laplace(full.dropped(), law, dist).max_residual,
        "l1_dropped": l1_distance_to_law(dist, law, g0 / 100.0, 10.0 * g0),
    }
    return {k: finite_or_none(v) if isinstance(v, float) else v for k, v in rep.items()}, dist


def _cmd_optimize(args) -> int:
    surfaces = read_surface_table(args.surfaces)
    match = [c for c in surfaces if math.isclose(c.s, args.s, abs_tol=1e-12)]
    if not match:
        raise ConfigurationError(f"no surface row for s={args.s} in {args.surfaces}")
    rep, dist = _report(match[0], Constraints(args.g0, args.g1), EnergyModel(args.C0, args.C1))
    text = json.dumps(rep, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.density_out:
        hi = float(dist.ppf(0.99))
        grid = np.linspace(0.0, max(hi, 1.0), 601)
        write_density_csv([(dist.surface.s, x, d) for x, d in zip(grid, dist.pdf(grid))],
                          args.density_out, f"syncbpj {__version__}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    try:
        data = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read report {args.report}: {exc}") from exc
    reports = data["reports"] if "reports" in data else [data]
    failures = 0
    for rep in reports:
        if rep.get("status", "ok") != "ok":
            print(f"s={rep['s']:g}: {rep['status']}, nothing to verify")
            continue
        surface = SurfaceCoefficients(**rep["surface"])
        law = solve_gamma_constraints(Constraints(rep["g0"], rep["g1"]))
        if not (math.isclose(law.kappa, rep["kappa"], rel_tol=1e-9)
                and math.isclose(law.beta, rep["beta"], rel_tol=1e-9)):
            print(f"s={rep['s']:g}: stored Gamma law does not match the constraints")
            failures += 1
        fresh, _ = _report(surface, Constraints(rep["g0"], rep["g1"]), EnergyModel(rep["C0"], rep["C1"]))
        for key, tol in VERIFY_TOLERANCES.items():
            ok = fresh[key] is not None and fresh[key] < tol
            failures += not ok
            print(f"s={rep['s']:g}: {key} = {fresh[key]:.3e} (< {tol:g}) {'PASS' if ok else 'FAIL'}")
        for key in ("support_min", "mode", "bpj"):
            stored = rep.get(key)
            if stored is not None and not math.isclose(fresh[key], stored, rel_tol=1e-6, abs_tol=1e-9):
                print(f"s={rep['s']:g}: {key} recomputed {fresh[key]!r} differs from stored {stored!r}")
                failures += 1
    return EXIT_OK if failures == 0 else EXIT_NUMERICAL


def _cmd_defaults(args) -> int:
    sys.stdout.write(dump_config(SweepConfig()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="syncbpj", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sweep", help="run the (lambda_ex, s) grid and write all artifacts")
    sp.add_argument("config", help="TOML config or a previous manifest.json")
    sp.add_argument("--out", help="output directory (overrides output_dir)")
    sp.add_argument("--workers", type=int, help="worker processes (overrides config and environment)")
    sp.set_defaults(func=_cmd_sweep)

    sp = sub.add_parser("fit", help="Gamma fits and KS tests for an ISI table")
    sp.add_argument("isis", help="CSV with columns lambda_ex_hz,s,isi_s")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--out", help="fit table path (default: stdout)")
    sp.add_argument("--surfaces-out", help="also write per-s surface coefficients")
    sp.set_defaults(func=_cmd_fit)

    sp = sub.add_parser("optimize", help="optimal input density for one surface row")
    sp.add_argument("--g0", type=float, required=True, help="mean ISI (s)")
    sp.add_argument("--g1", type=float, required=True, help="mean log ISI (log s)")
    sp.add_argument("--surfaces", required=True, help="surface table CSV")
    sp.add_argument("--s", type=float, required=True, help="synchrony level to select")
    sp.add_argument("--C0", type=float, default=EnergyModel().C0)
    sp.add_argument("--C1", type=float, default=EnergyModel().C1)
    sp.add_argument("--out", help="report JSON path (default: stdout)")
    sp.add_argument("--density-out", help="write the density on a rate grid")
    sp.set_defaults(func=_cmd_optimize)

    sp = sub.add_parser("verify", help="recompute and check an optimisation report")
    sp.add_argument("report", help="report JSON from optimize, or efficiency.json from sweep")
    sp.set_defaults(func=_cmd_verify)

    sp = sub.add_parser("defaults", help="print the default configuration as TOML")
    sp.set_defaults(func=_cmd_defaults)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
