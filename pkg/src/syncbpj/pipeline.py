"""Grid sweep over input rate and synchrony: simulate, fit, optimise, report."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .balance import manifest as balance_manifest
from .balance import solve_weights
from .config import SweepConfig, finite_or_none, worker_count
from .efficiency import (
    ChannelModel,
    OptimalInputDist,
    bits_per_joule,
    l1_distance_to_law,
    numerical_normalization,
    optimal_input_density,
    solve_gamma_constraints,
    verify_theorem1_laplace,
    write_density_csv,
)
from .errors import ConfigurationError, DataError, NumericalError
from .neuron import IsiSample, extract_isis, isis_to_csv, simulate
from .spikegen import SynchronyConfig, generate_synchronized_population
from .stats import (
    GammaFit,
    KsResult,
    SurfaceCoefficients,
    fit_gamma_mle,
    fit_surfaces,
    freedman_diaconis_edges,
    ks_test_gamma,
    write_fit_table,
    write_surface_table,
)

log = logging.getLogger(__name__)

CELL_ERRORS = (DataError, NumericalError, ConfigurationError)


def cell_seed(master: int, lambda_index: int, s_index: int) -> int:
    """64-bit seed for one grid cell, independent of every other cell."""
    ss = np.random.SeedSequence(int(master), spawn_key=(int(lambda_index), int(s_index)))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


@dataclass
class CellResult:
    lambda_ex: float
    s: float
    lambda_index: int
    s_index: int
    seed: int
    n_spikes: int = 0
    sample: IsiSample | None = None
    fit: GammaFit | None = None
    ks: KsResult | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.fit is not None

    @property
    def n_isis(self) -> int:
        return 0 if self.sample is None else len(self.sample)


@dataclass
class EfficiencyReport:
    s: float
    status: str
    reason: str | None = None
    surface: SurfaceCoefficients | None = None
    dist: OptimalInputDist | None = None
    values: dict = field(default_factory=dict)

    def to_dict(self, cfg: SweepConfig) -> dict:
        out = {"s": self.s, "status": self.status, "reason": self.reason,
               "g0": cfg.constraints.g0, "g1": cfg.constraints.g1,
               "C0": cfg.energy.C0, "C1": cfg.energy.C1}
        if self.surface is not None:
            out["surface"] = dict(zip(["s", "d1_b", "d0_b", "d2_m", "d1_m", "d0_m"], self.surface.to_row()))
        out.update({k: finite_or_none(v) if isinstance(v, float) else v for k, v in self.values.items()})
        return out


@dataclass
class SweepResult:
    config: SweepConfig
    cells: list[CellResult]
    surfaces: dict[float, SurfaceCoefficients]
    surface_errors: dict[float, str]
    efficiency: dict[float, EfficiencyReport]
    weights: dict

    def cell(self, lambda_ex: float, s: float) -> CellResult:
        for c in self.cells:
            if c.lambda_ex == lambda_ex and c.s == s:
                return c
        raise KeyError((lambda_ex, s))

    def manifest(self) -> dict:
        return {
            "tool": "syncbpj",
            "version": __version__,
            "config": self.config.to_dict(),
            "resolved": self.weights,
            "cells": [
                {"lambda_ex_hz": c.lambda_ex, "s": c.s, "lambda_index": c.lambda_index,
                 "s_index": c.s_index, "seed": c.seed, "n_spikes": c.n_spikes,
                 "n_isis": c.n_isis, "status": "ok" if c.ok else "failed", "error": c.error}
                for c in self.cells
            ],
            "surface_errors": {repr(k): v for k, v in self.surface_errors.items()},
        }


def resolve_synapses(cfg: SweepConfig):
    syn = solve_weights(cfg.balance, cfg.synapse, cfg.neuron)
    return syn, balance_manifest(cfg.balance, syn, cfg.neuron)


def run_cell(cfg: SweepConfig, i: int, j: int, lam: float, s: float, syn) -> CellResult:
    """Simulate one ``(lambda_ex, s)`` cell and fit its ISIs; errors are captured."""
    seed = cell_seed(cfg.seed, j, i)
    res = CellResult(lam, s, j, i, seed)
    try:
        sync = SynchronyConfig.from_level(lam, s, cfg.participation, cfg.balance.n_ex)
        activity = generate_synchronized_population(
            sync, cfg.balance.lambda_in, cfg.balance.n_in, cfg.duration, seed, dt=cfg.dt * 1e-3
        )
        sim = simulate(cfg.neuron, syn, activity, dt=cfg.dt)
        res.n_spikes = int(sim.spike_times.size)
        res.sample = extract_isis(sim.spike_times, cfg.transient_cut, lam, s)
        res.fit = fit_gamma_mle(res.sample)
        res.ks = ks_test_gamma(res.sample, res.fit, cfg.alpha)
    except CELL_ERRORS as exc:
        res.error = f"{type(exc).__name__}: {exc}"
        log.warning("cell lambda=%g s=%g failed: %s", lam, s, res.error)
    return res


def _run_cell_star(args):
    return run_cell(*args)


def _surfaces(cfg: SweepConfig, cells: list[CellResult]):
    surfaces, errors = {}, {}
    for s in cfg.s_grid:
        pts = [(c.lambda_ex, c.fit) for c in cells
               if c.s == s and c.ok and c.n_isis >= cfg.min_surface_isis]
        try:
            surfaces[s] = fit_surfaces(pts, s)
        except NumericalError as exc:
            errors[s] = str(exc)
    return surfaces, errors


def evaluate_efficiency(cfg: SweepConfig, surface: SurfaceCoefficients) -> EfficiencyReport:
    """Closed-form input density and its checks for one fitted surface."""
    s = surface.s
    if s <= cfg.efficiency_min_s:
        return EfficiencyReport(s, "skipped", f"s = {s:g} is at or below {cfg.efficiency_min_s:g}; "
                                "the shape terms cannot be neglected there", surface)
    law = solve_gamma_constraints(cfg.constraints)
    full = ChannelModel(surface)
    dropped = full.dropped()
    values = {"kappa": law.kappa, "beta": law.beta, "d1_m_over_d0_m": surface.d1_m / surface.d0_m}
    try:
        dist = optimal_input_density(dropped, law)
    except ConfigurationError as exc:
        return EfficiencyReport(s, "inapplicable", str(exc), surface, values=values)
    g0 = cfg.constraints.g0
    values.update(
        support_min=dist.support_min,
        mode=dist.mode,
        truncated_mass=dist.truncated_mass,
        normalizer=dist.normalizer,
        normalization_error=abs(numerical_normalization(dist) - 1.0),
    )
    lap = verify_theorem1_laplace(dropped, law, dist)
    values["laplace_max_residual"] = lap.max_residual
    values["l1_dropped"] = l1_distance_to_law(dist, law, g0 / 100.0, 10.0 * g0)
    try:
        values["l1_full"] = l1_distance_to_law(dist, law, g0 / 100.0, 10.0 * g0, channel=full)
    except NumericalError as exc:
        values["l1_full"] = math.nan
        values["l1_full_error"] = str(exc)
    try:
        eff = bits_per_joule(dist, dropped, cfg.energy)
        values.update(I_bits=eff.mutual_information, energy=eff.mean_energy, bpj=eff.ratio,
                      mean_isi=eff.mean_isi)
    except NumericalError as exc:
        values["bpj_error"] = str(exc)
    return EfficiencyReport(s, "ok", None, surface, dist, values)


def run_sweep(cfg: SweepConfig, output_dir=None, workers: int | None = None) -> SweepResult:
    """Run every grid cell, fit surfaces per synchrony level and optimise.

    Cell failures are recorded and skipped.  Results are collected in
    grid order whatever the worker count, and artifacts are written when
    an output directory is given (argument or config).
    """
    syn, weights = resolve_synapses(cfg)
    jobs = [(cfg, i, j, lam, s, syn) for i, j, lam, s in cfg.cells]
    n_workers = worker_count(cfg) if workers is None else workers
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            cells = list(pool.map(_run_cell_star, jobs))
    else:
        cells = [_run_cell_star(job) for job in jobs]
    surfaces, surface_errors = _surfaces(cfg, cells)
    efficiency = {s: evaluate_efficiency(cfg, surf) for s, surf in surfaces.items()}
    result = SweepResult(cfg, cells, surfaces, surface_errors, efficiency, weights)
    out = output_dir if output_dir is not None else cfg.output_dir
    if out is not None:
        write_outputs(result, out)
    return result


def _comment(cfg: SweepConfig) -> str:
    return f"syncbpj {__version__} seed={cfg.seed}"


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_outputs(result: SweepResult, output_dir) -> Path:
    """Write the manifest, tables, reports and figure datasets."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    comment = _comment(cfg)
    _dump_json(result.manifest(), out / "manifest.json")
    _dump_json(result.weights, out / "balance.json")

    with (out / "cells.csv").open("w", newline="") as fh:
        fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["s", "lambda_ex_hz", "seed", "n_spikes", "n_isis", "status", "error"])
        for c in result.cells:
            w.writerow([repr(c.s), repr(c.lambda_ex), c.seed, c.n_spikes, c.n_isis,
                        "ok" if c.ok else "failed", c.error or ""])

    ok = [c for c in result.cells if c.ok]
    write_fit_table([(c.s, c.lambda_ex, c.fit, c.ks) for c in ok], out / "fits.csv", comment)
    isis_to_csv([c.sample for c in ok], out / "isis.csv", comment)
    write_surface_table([result.surfaces[s] for s in sorted(result.surfaces)], out / "surfaces.csv", comment)

    reports = [result.efficiency[s].to_dict(cfg) for s in sorted(result.efficiency)]
    _dump_json({"tool": "syncbpj", "version": __version__, "seed": cfg.seed, "reports": reports},
               out / "efficiency.json")
    emit_figures(result, out / "figures")
    return out


def _density_grid(result: SweepResult, n: int = 601) -> np.ndarray:
    top = 1.25 * max(result.config.lambda_ex_grid)
    return np.linspace(0.0, top, n)


def emit_figures(result: SweepResult, fig_dir) -> list[Path]:
    """Plot-ready datasets: ISI histograms, fitted surfaces, optimal densities, shape terms."""
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    comment = _comment(result.config)
    written = []

    ok = [c for c in result.cells if c.ok]
    if ok:
        path = fig_dir / "isi_histograms.csv"
        with path.open("w", newline="") as fh:
            fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["s", "lambda_ex_hz", "bin_left_s", "bin_right_s", "density", "fitted_pdf"])
            for c in ok:
                for row in histogram_rows(c):
                    w.writerow([repr(float(v)) for v in row])
        written.append(path)

    if result.surfaces:
        path = fig_dir / "gamma_surfaces.csv"
        with path.open("w", newline="") as fh:
            fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["s", "lambda_ex_hz", "m_gam", "b_gam", "m_fit", "b_fit"])
            for s in sorted(result.surfaces):
                surf = result.surfaces[s]
                for lam in result.config.lambda_ex_grid:
                    try:
                        c = result.cell(lam, s)
                    except KeyError:
                        c = None
                    m = c.fit.m_gam if c is not None and c.ok else math.nan
                    b = c.fit.b_gam if c is not None and c.ok else math.nan
                    w.writerow([repr(s), repr(lam), repr(m), repr(b),
                                repr(float(surf.shape(lam))), repr(float(surf.rate(lam)))])
        written.append(path)

        path = fig_dir / "shape_coefficients.csv"
        with path.open("w", newline="") as fh:
            fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["s", "d2_m", "d1_m", "d0_m", "abs_d2_over_d0", "abs_d1_over_d0"])
            for s in sorted(result.surfaces):
                c = result.surfaces[s]
                w.writerow([repr(v) for v in (s, c.d2_m, c.d1_m, c.d0_m,
                                              abs(c.d2_m / c.d0_m), abs(c.d1_m / c.d0_m))])
        written.append(path)

    dists = [(s, r.dist) for s, r in sorted(result.efficiency.items()) if r.dist is not None]
    if dists:
        grid = _density_grid(result)
        path = fig_dir / "optimal_densities.csv"
        write_density_csv([(s, lam, d) for s, dist in dists for lam, d in zip(grid, dist.pdf(grid))],
                          path, comment)
        written.append(path)
    return written


def histogram_rows(cell: CellResult):
    """Normalised histogram (Freedman-Diaconis bins) with the fitted density at bin centres."""
    x = cell.sample.isis
    edges = freedman_diaconis_edges(x)
    counts, _ = np.histogram(x, bins=edges)
    widths = np.diff(edges)
    dens = counts / (x.size * widths)
    centres = 0.5 * (edges[:-1] + edges[1:])
    pdf = cell.fit.pdf(centres)
    return [(cell.s, cell.lambda_ex, edges[k], edges[k + 1], dens[k], pdf[k]) for k in range(widths.size)]
