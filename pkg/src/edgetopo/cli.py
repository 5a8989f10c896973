"""Command line front end.

One executable, several subcommands. Every run prints a JSON result
document to stdout and may drop CSV/PNG side files into the output
directory. Heavy ribbon spectra are cached on disk keyed by a hash of
everything that determines them, so repeated runs and sibling commands
reuse the diagonalizations. Set EDGETOPO_WORKERS to parallelize grid
sweeps.

Exit codes: 0 success, 2 a model assumption failed, 3 a numerical
gate failed, 4 bad configuration or arguments.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bundle import (bloch_bundle, bulk_index_qh, bulk_index_ti, chern_index,
                     z2_index)
from .errors import (AssumptionError, ConfigError, NearSpectrumError,
                     NumericalError)
from .halfline import (Branch, EdgeSpectrum, count_crossings_qh,
                       count_crossings_ti, edge_spectrum)
from .model import (BUILTIN_MODELS, EdgeModelSpec, build_model, bulk_energies,
                    check_time_reversal, edge_model, load_model,
                    model_to_dict, spectral_gap, validate_model)
from .numutil import atomic_write_text
from .scatter import (band_chart, edge_scattering_solution,
                      full_circle_winding, levinson_delta, scatter_trace,
                      semi_bound_scan, transition_winding)

EXIT_OK = 0
EXIT_ASSUMPTION = 2
EXIT_NUMERICAL = 3
EXIT_CONFIG = 4

_MIN_GRID = 8
_MIN_CELLS = 12


class _Parser(argparse.ArgumentParser):
    # argparse exits on its own; route everything through ConfigError so
    # the exit-code contract holds for bad flags too
    def error(self, message):
        raise ConfigError(message)


@dataclass
class RunConfig:
    """Echo of everything that determines a run's output."""

    command: str
    model: str = ""
    model_file: str = ""
    params: dict = field(default_factory=dict)
    mu: float = 0.0
    n_k: int = 128
    n_kappa: int = 128
    n_contour: int = 64
    cells: int = 60
    window: tuple = ()
    band: int = 0
    bands: tuple = ()
    k_range: tuple = ()
    delta: float = 1e-2
    method: str = "eigenphase"
    symmetry: str = "auto"
    eta: float = 1e-3
    phase_tol: float = 0.1
    loc_threshold: float = 0.5
    seed: int = 0
    out: str = "."
    plot: bool = False

    def validate(self):
        for name, val, floor in (("--n-k", self.n_k, _MIN_GRID),
                                 ("--n-kappa", self.n_kappa, _MIN_GRID),
                                 ("--n-contour", self.n_contour, 2 * _MIN_GRID),
                                 ("--cells", self.cells, _MIN_CELLS)):
            if val < floor:
                raise ConfigError(f"{name} must be at least {floor}")
        for name, val in (("--eta", self.eta), ("--phase-tol", self.phase_tol),
                          ("--loc-threshold", self.loc_threshold),
                          ("--delta", self.delta)):
            if val <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.window and not self.window[0] < self.window[1]:
            raise ConfigError("--window needs lo < hi")
        if self.k_range and not self.k_range[0] < self.k_range[1]:
            raise ConfigError("--k-range needs lo < hi")

    def echo(self) -> dict:
        doc = {
            "command": self.command,
            "mu": self.mu,
            "n_k": self.n_k,
            "n_kappa": self.n_kappa,
            "n_contour": self.n_contour,
            "cells": self.cells,
            "eta": self.eta,
            "phase_tol": self.phase_tol,
            "loc_threshold": self.loc_threshold,
            "seed": self.seed,
            "out": self.out,
            "plot": self.plot,
        }
        if self.model:
            doc["model"] = self.model
            doc["params"] = dict(sorted(self.params.items()))
        if self.model_file:
            doc["model_file"] = self.model_file
        for key in ("window", "bands", "k_range"):
            val = getattr(self, key)
            if val:
                doc[key] = list(val)
        if self.command in ("chern", "scatter"):
            doc["band"] = self.band
        if self.command in ("z2",):
            doc["method"] = self.method
        if self.command in ("edge-index", "bulk-index", "verify-duality"):
            doc["symmetry"] = self.symmetry
        if self.command == "scatter":
            doc["delta"] = self.delta
        return doc


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _clean(obj):
    """12-significant-digit floats, plain python containers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.12g}")
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(f"{obj.real:.12g}"), "im": float(f"{obj.imag:.12g}")}
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    return obj


def result_text(doc: dict) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(f"{v:.12g}" if isinstance(v, float) else str(v)
                              for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# model construction and shared helpers
# ---------------------------------------------------------------------------

def _build(cfg: RunConfig):
    if cfg.model_file:
        obj = load_model(cfg.model_file)
        bulk = obj.bulk if isinstance(obj, EdgeModelSpec) else obj
        edge = obj if isinstance(obj, EdgeModelSpec) else edge_model(obj)
    elif cfg.model:
        bulk = build_model(cfg.model, **cfg.params)
        edge = edge_model(bulk)
    else:
        raise ConfigError("pass --model or --model-file")
    validate_model(bulk)
    return bulk, edge


def _auto_symmetry(bulk) -> str:
    """ti for models with a fermionic time-reversal operator or purely
    real hoppings, qh otherwise."""
    if bulk.theta is not None:
        return "ti"
    mats = list(bulk.a_harmonics.values())
    for site in bulk.v_harmonics:
        mats.extend(site.values())
    if all(np.max(np.abs(m.imag)) < 1e-12 for m in mats):
        return "ti"
    return "qh"


def _pick_symmetry(cfg: RunConfig, bulk) -> str:
    if cfg.symmetry != "auto":
        return cfg.symmetry
    return _auto_symmetry(bulk)


def _gap_window(bulk, mu: float, margin: float = 0.9):
    rep = spectral_gap(bulk, mu)
    if rep.gap <= 0:
        raise AssumptionError(
            f"mu={mu:.6g} touches the bulk bands; no spectral gap to work in")
    return (mu - margin * rep.gap, mu + margin * rep.gap), rep


def _occupied_bands(bulk, mu: float):
    n_bands = bulk.n_orb * bulk.period
    lows = np.full(n_bands, np.inf)
    highs = np.full(n_bands, -np.inf)
    for k in np.linspace(0.0, 2 * np.pi, 33, endpoint=False):
        for kappa in np.linspace(0.0, 2 * np.pi, 65, endpoint=False):
            ev = bulk_energies(bulk, kappa, k)
            lows = np.minimum(lows, ev)
            highs = np.maximum(highs, ev)
    occ = [b for b in range(n_bands) if highs[b] < mu]
    if not occ:
        raise AssumptionError(f"no band lies entirely below mu={mu:.6g}")
    if occ != list(range(occ[0], occ[-1] + 1)):
        raise AssumptionError("occupied bands are not contiguous")
    return occ


# ---------------------------------------------------------------------------
# ribbon spectrum cache
# ---------------------------------------------------------------------------

def _spectrum_key(edge, k_grid, n_cells, window) -> str:
    payload = {
        "model": model_to_dict(edge),
        "k0": float(k_grid[0]),
        "k1": float(k_grid[-1]),
        "n": int(len(k_grid)),
        "cells": int(n_cells),
        "window": [float(window[0]), float(window[1])],
    }
    blob = json.dumps(_clean(payload), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def cached_edge_spectrum(edge, k_grid, n_cells, window, cache_dir):
    """edge_spectrum with an npz disk cache.

    Returns (spectrum, hit). The cache key covers the model, the grid
    and the window, so any change recomputes.
    """
    key = _spectrum_key(edge, k_grid, n_cells, window)
    path = os.path.join(cache_dir, f"edgespec-{key}.npz")
    if os.path.exists(path):
        with np.load(path) as dat:
            branches = []
            bounds = np.concatenate([[0], np.cumsum(dat["lengths"])])
            for i, start in enumerate(dat["starts"]):
                lo, hi = bounds[i], bounds[i + 1]
                branches.append(Branch(int(start), dat["energies"][lo:hi],
                                       dat["weights"][lo:hi]))
            spec = EdgeSpectrum(dat["k_grid"], tuple(branches),
                                (float(window[0]), float(window[1])),
                                int(n_cells), int(dat["weight_cells"]),
                                edge, tuple(dat["overlap_ks"].tolist()))
        return spec, True
    spec = edge_spectrum(edge, k_grid, n_cells, window)
    os.makedirs(cache_dir, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez_compressed(
            fh,
            k_grid=spec.k_grid,
            starts=np.array([b.start for b in spec.branches], dtype=int),
            lengths=np.array([len(b.energies) for b in spec.branches],
                             dtype=int),
            energies=np.concatenate([b.energies for b in spec.branches])
            if spec.branches else np.zeros(0),
            weights=np.concatenate([b.weights for b in spec.branches])
            if spec.branches else np.zeros(0),
            overlap_ks=np.array(spec.band_overlap_ks, dtype=float),
            weight_cells=spec.weight_cells,
        )
    os.replace(tmp, path)
    return spec, False


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_bands(cfg: RunConfig, bulk, edge, files: list):
    ks = np.linspace(0.0, 2 * np.pi, cfg.n_k, endpoint=False)
    kappas = np.linspace(0.0, 2 * np.pi, cfg.n_kappa, endpoint=False)
    n_bands = bulk.n_orb * bulk.period
    rows = []
    lows = np.full(n_bands, np.inf)
    highs = np.full(n_bands, -np.inf)
    for k in ks:
        for kappa in kappas:
            ev = bulk_energies(bulk, kappa, k)
            lows = np.minimum(lows, ev)
            highs = np.maximum(highs, ev)
            for b in range(n_bands):
                rows.append((float(k), float(kappa), b + 1, float(ev[b])))
    path = os.path.join(cfg.out, "bands.csv")
    _write_csv(path, ("k", "kappa", "band", "energy"), rows)
    files.append(path)
    rep = spectral_gap(bulk, cfg.mu)
    values = {
        "bands": [{"band": b + 1, "min": float(lows[b]), "max": float(highs[b])}
                  for b in range(n_bands)],
        "gap_at_mu": rep.gap,
        "n_below_mu": rep.n_below,
    }
    diagnostics = {"e_min": rep.e_min, "e_max": rep.e_max,
                   "gap_attained_at": {"k": rep.k_at, "kappa": rep.kappa_at}}
    if cfg.plot:
        from . import report
        png = os.path.join(cfg.out, "bands.png")
        report.save_band_projection(png, ks, kappas, bulk)
        files.append(png)
    return values, diagnostics, "dense Bloch eigenvalues"


def _ribbon_grid(n_k: int) -> np.ndarray:
    # k = pi must be a grid point: the Kramers-paired branches meet
    # there and the crossing counters resolve them by endpoint hits
    n = n_k if n_k % 2 else n_k + 1
    return np.linspace(0.0, 2 * np.pi, n)


def cmd_edge_spectrum(cfg: RunConfig, bulk, edge, files: list):
    if not cfg.window:
        raise ConfigError("edge-spectrum needs --window lo,hi")
    ks = _ribbon_grid(cfg.n_k)
    spec, hit = cached_edge_spectrum(edge, ks, cfg.cells, cfg.window,
                                     os.path.join(cfg.out, "cache"))
    rows = []
    for bid, branch in enumerate(spec.branches):
        kv = branch.k_values(spec.k_grid)
        for k, e, w in zip(kv, branch.energies, branch.weights):
            rows.append((float(k), bid + 1, float(e), float(w)))
    path = os.path.join(cfg.out, "edge_spectrum.csv")
    _write_csv(path, ("k", "branch_id", "energy", "localization"), rows)
    files.append(path)
    n_loc = sum(1 for b in spec.branches
                if float(np.max(b.weights)) >= cfg.loc_threshold)
    values = {
        "n_branches": len(spec.branches),
        "n_localized": n_loc,
        "window": list(spec.window),
    }
    diagnostics = {"cache_hit": hit, "n_cells": spec.n_cells,
                   "band_overlap_points": len(spec.band_overlap_ks)}
    if cfg.plot:
        from . import report
        png = os.path.join(cfg.out, "edge_spectrum.png")
        report.save_edge_spectrum_plot(png, spec, cfg.loc_threshold)
        files.append(png)
    return values, diagnostics, "ribbon"


def _edge_count(cfg: RunConfig, bulk, edge, symmetry: str, files: list):
    if cfg.window:
        window = cfg.window
        gap_rep = None
    else:
        window, gap_rep = _gap_window(bulk, cfg.mu)
    ks = _ribbon_grid(cfg.n_k)
    spec, hit = cached_edge_spectrum(edge, ks, cfg.cells, window,
                                     os.path.join(cfg.out, "cache"))
    if symmetry == "ti":
        n, idx = count_crossings_ti(spec, cfg.mu)
        values = {"n": n, "index": idx}
    else:
        n = count_crossings_qh(spec, cfg.mu)
        values = {"n": abs(n), "index": n}
    diagnostics = {"cache_hit": hit, "window": list(window),
                   "symmetry": symmetry}
    if gap_rep is not None:
        diagnostics["gap_at_mu"] = gap_rep.gap
    return values, diagnostics


def cmd_edge_index(cfg: RunConfig, bulk, edge, files: list):
    symmetry = _pick_symmetry(cfg, bulk)
    values, diagnostics = _edge_count(cfg, bulk, edge, symmetry, files)
    return values, diagnostics, "ribbon"


def cmd_bulk_index(cfg: RunConfig, bulk, edge, files: list):
    symmetry = _pick_symmetry(cfg, bulk)
    if symmetry == "ti":
        idx = bulk_index_ti(bulk, edge, cfg.mu, cfg.n_contour,
                            max(cfg.n_k // 4, _MIN_GRID))
        method = "eigenphase"
    else:
        idx = bulk_index_qh(bulk, edge, cfg.mu, cfg.n_contour,
                            max(cfg.n_k // 4, _MIN_GRID))
        method = "plaquette"
    return {"index": idx}, {"symmetry": symmetry}, method


def cmd_chern(cfg: RunConfig, bulk, edge, files: list):
    if cfg.band < 1:
        raise ConfigError("--band is 1-based; pass 1 for the lowest band")
    bundle = bloch_bundle(bulk, [cfg.band - 1], cfg.n_kappa, cfg.n_k)
    value = chern_index(bundle)
    return ({"value": value, "band": cfg.band},
            {"grid": [cfg.n_kappa, cfg.n_k]}, "plaquette")


def cmd_z2(cfg: RunConfig, bulk, edge, files: list):
    if cfg.bands:
        lo, hi = int(cfg.bands[0]), int(cfg.bands[1])
        if lo < 1 or hi < lo:
            raise ConfigError("--bands is 1-based lo,hi with lo <= hi")
        sel = list(range(lo - 1, hi))
    else:
        sel = _occupied_bands(bulk, cfg.mu)
    n_k = cfg.n_k + (cfg.n_k % 2)  # the grid must contain k = pi
    bundle = bloch_bundle(bulk, sel, cfg.n_kappa, n_k)
    value = z2_index(bundle, method=cfg.method)
    return ({"value": value, "bands": [b + 1 for b in sel]},
            {"grid": [cfg.n_kappa, n_k]}, cfg.method)


def cmd_verify_duality(cfg: RunConfig, bulk, edge, files: list):
    symmetry = _pick_symmetry(cfg, bulk)
    if symmetry == "ti":
        bulk_idx = bulk_index_ti(bulk, edge, cfg.mu, cfg.n_contour,
                                 max(cfg.n_k // 4, _MIN_GRID))
    else:
        bulk_idx = bulk_index_qh(bulk, edge, cfg.mu, cfg.n_contour,
                                 max(cfg.n_k // 4, _MIN_GRID))
    edge_values, diagnostics = _edge_count(cfg, bulk, edge, symmetry, files)
    edge_idx = edge_values["index"]
    values = {"bulk": bulk_idx, "edge": edge_idx,
              "equal": bool(bulk_idx == edge_idx)}
    diagnostics["crossings"] = edge_values["n"]
    return values, diagnostics, "contour bundle + ribbon"


def cmd_scatter(cfg: RunConfig, bulk, edge, files: list):
    ell = cfg.band - 1
    if ell < 0:
        raise ConfigError("--band is 1-based; pass 1 for the lowest band")
    if not cfg.k_range:
        n_s, n_plus = full_circle_winding(edge, ell, cfg.delta,
                                          n_k=max(cfg.n_k, 64),
                                          n_cells=cfg.cells)
        values = {"winding": n_s, "n_plus": n_plus,
                  "equal": bool(n_s == n_plus)}
        return values, {"delta": cfg.delta, "full_circle": True}, "phase trace"

    k1, k2 = cfg.k_range
    # traces run from k2 down to k1; see the scatter module notes
    grid = np.linspace(k2, k1, cfg.n_k)
    trace = scatter_trace(edge, ell, grid, cfg.delta)
    rows = [(float(k), float(s.real), float(s.imag), float(a))
            for k, s, a in zip(trace.k_values, trace.s_values,
                               trace.arg_values)]
    path = os.path.join(cfg.out, "scatter.csv")
    _write_csv(path, ("k", "re_s", "im_s", "arg_s"), rows)
    files.append(path)

    phase, n_plus = levinson_delta(edge, ell, k1, k2, cfg.delta,
                                   n_k=cfg.n_k, n_cells=cfg.cells)
    semi = semi_bound_scan(edge, ell, np.linspace(k1, k2, 25))
    winding = transition_winding(edge, ell, k1, k2, eta=cfg.eta)
    values = {
        "phase_change": phase,
        "n_plus": n_plus,
        "winding": winding,
        "agree": bool(abs(phase - 2 * np.pi * n_plus) < cfg.phase_tol
                      and abs(phase - winding) < cfg.phase_tol),
        "semi_bound_k": semi,
    }
    diagnostics = {
        "delta": cfg.delta,
        "raw_phase_at_delta": trace.phase_change,
        "abs_s_range": [float(np.min(np.abs(trace.s_values))),
                        float(np.max(np.abs(trace.s_values)))],
    }
    if cfg.plot:
        from . import report
        png = os.path.join(cfg.out, "scatter.png")
        report.save_scatter_phase_plot(png, trace)
        files.append(png)
    return values, diagnostics, "phase trace + ribbon"


def cmd_model_dump(cfg: RunConfig, bulk, edge, files: list):
    doc = model_to_dict(edge)
    values = {"model": doc, "n_bands": bulk.n_orb * bulk.period}
    diagnostics = {}
    if bulk.theta is not None:
        rep = check_time_reversal(bulk)
        diagnostics["time_reversal"] = {"passed": rep.passed,
                                        "max_violation": rep.max_violation}
    return values, diagnostics, "model"


def _selfcheck_battery(seed: int):
    rng = np.random.default_rng(seed)
    checks = []

    def run(name, fn):
        t0 = time.perf_counter()
        try:
            fn()
            checks.append({"name": name, "ok": True,
                           "seconds": time.perf_counter() - t0})
        except Exception as exc:  # noqa: BLE001 - report, do not crash
            checks.append({"name": name, "ok": False, "detail": str(exc),
                           "seconds": time.perf_counter() - t0})

    def check_models():
        for name in BUILTIN_MODELS:
            validate_model(build_model(name))
        rep = check_time_reversal(build_model("kane_mele", t=1.0, tp=0.1))
        assert rep.passed, f"kane_mele time reversal violated: {rep.max_violation:.2e}"

    def check_scalar_reflection():
        e = edge_model(build_model("scalar_chain", t=1.0))
        chart = band_chart(e, 0, 0.0)
        for kappa in (0.4, 1.3, 2.8):
            _, _, s = edge_scattering_solution(e, chart,
                                               chart.kappa_plus + kappa)
            assert abs(s + 1.0) < 1e-10, f"scalar S = {s}"

    def check_flux():
        from .scatter import casoratian_flux
        e = edge_model(build_model("haldane", t=1.0, tp=0.1))
        chart = band_chart(e, 0, 1.0)
        flux = casoratian_flux(e, chart, chart.kappa_plus + 0.35)
        assert np.max(np.abs(flux)) < 1e-9, "matched solution leaks current"

    def check_root_pairing():
        from .transfer import transfer_roots
        m = build_model("kane_mele", t=1.0, tp=0.1)
        for _ in range(5):
            k = rng.uniform(0.0, 2 * np.pi)
            roots = transfer_roots(m, 0.0, k)
            xis = [r.xi for r in roots.roots for _ in range(r.multiplicity)]
            for xi in xis:
                partner = 1.0 / np.conj(xi)
                dist = min(abs(partner - y) for y in xis)
                assert dist < 1e-8 * max(1.0, abs(partner)), \
                    f"unpaired multiplier at k={k:.4f}"

    def check_chern():
        m = build_model("haldane", t=1.0, tp=0.1)
        assert chern_index(bloch_bundle(m, [0], 48, 48)) == 1
        assert chern_index(bloch_bundle(m, [1], 48, 48)) == -1

    def check_z2():
        m = build_model("kane_mele", t=1.0, tp=0.1)
        b = bloch_bundle(m, [0, 1], 32, 32)
        assert z2_index(b, "eigenphase") == -1
        assert z2_index(b, "fu_kane") == -1

    def check_edge_count():
        e = edge_model(build_model("haldane", t=1.0, tp=0.1))
        ks = np.linspace(0.0, 2 * np.pi, 201)
        spec = edge_spectrum(e, ks, 60, (-0.4, 0.4))
        assert count_crossings_qh(spec, 0.0) == 1

    def check_zero_modes():
        e = edge_model(build_model("graphene_zigzag", t=1.0))
        ks = np.linspace(0.0, 2 * np.pi, 101)
        spec = edge_spectrum(e, ks, 40, (-0.3, 0.3))
        arc = (2 * np.pi / 3, 4 * np.pi / 3)
        step = ks[1] - ks[0]
        inside, outside = 0, 0
        for branch in spec.branches:
            if not branch.is_edge:
                continue
            kv = branch.k_values(spec.k_grid)
            for k, en in zip(kv, branch.energies):
                if abs(en) > 1e-3:
                    continue
                if arc[0] - step <= k <= arc[1] + step:
                    inside += 1
                else:
                    outside += 1
        assert inside > 0, "no zero modes on the arc"
        assert outside == 0, f"{outside} zero modes off the arc"

    run("builtin models validate", check_models)
    run("scalar chain reflects with S = -1", check_scalar_reflection)
    run("matched solution conserves current", check_flux)
    run("transfer multipliers pair across the unit circle", check_root_pairing)
    run("haldane band Chern numbers are +1/-1", check_chern)
    run("kane_mele Kramers index is -1 by both methods", check_z2)
    run("haldane edge branch crosses once", check_edge_count)
    run("zigzag zero modes fill the inner arc", check_zero_modes)
    return checks


def cmd_selfcheck(cfg: RunConfig, bulk, edge, files: list):
    checks = _selfcheck_battery(cfg.seed)
    for c in checks:
        line = "ok" if c["ok"] else "FAIL"
        print(f"{line:4s} {c['name']} ({c['seconds']:.1f}s)", file=sys.stderr)
        if not c["ok"]:
            print(f"     {c['detail']}", file=sys.stderr)
    n_fail = sum(1 for c in checks if not c["ok"])
    values = {"n_checks": len(checks), "n_failed": n_fail,
              "checks": [{k: v for k, v in c.items() if k != "seconds"}
                         for c in checks]}
    return values, {}, "invariant battery"


_COMMANDS = {
    "bands": (cmd_bands, "bulk band extents and a (k, kappa) energy table"),
    "edge-spectrum": (cmd_edge_spectrum,
                      "ribbon spectrum branches inside an energy window"),
    "edge-index": (cmd_edge_index, "edge crossing count at the Fermi level"),
    "bulk-index": (cmd_bulk_index,
                   "bulk index from the decaying-solution bundle"),
    "chern": (cmd_chern, "Chern number of one Bloch band"),
    "z2": (cmd_z2, "Kramers index of an occupied band pair"),
    "verify-duality": (cmd_verify_duality,
                       "bulk and edge indices with an equality flag"),
    "scatter": (cmd_scatter,
                "reflection phase trace and bound-state bookkeeping"),
    "selfcheck": (cmd_selfcheck, "run the invariant battery on built-ins"),
    "model-dump": (cmd_model_dump, "serialized model with symmetry checks"),
}


def _add_common(sub):
    sub.add_argument("--model", choices=BUILTIN_MODELS, default="")
    sub.add_argument("--model-file", default="")
    sub.add_argument("--t", type=float, default=None)
    sub.add_argument("--tp", type=float, default=None)
    sub.add_argument("--lam-v", type=float, default=None)
    sub.add_argument("--mu", type=float, default=0.0)
    sub.add_argument("--n-k", type=int, default=128)
    sub.add_argument("--n-kappa", type=int, default=128)
    sub.add_argument("--n-contour", type=int, default=64)
    sub.add_argument("--cells", type=int, default=60)
    sub.add_argument("--eta", type=float, default=1e-3)
    sub.add_argument("--phase-tol", type=float, default=0.1)
    sub.add_argument("--loc-threshold", type=float, default=0.5)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", default=".")
    sub.add_argument("--plot", action="store_true")


_PAIR_FLAGS = ("--window", "--k-range", "--bands")


def _glue_pairs(argv):
    # lo,hi values may start with a minus sign, which argparse would
    # read as a new flag; fold them into --flag=value form
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in _PAIR_FLAGS and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def _parse(argv) -> RunConfig:
    parser = _Parser(
        prog="edgetopo",
        description="Bulk and edge topological indices for edge-periodic "
                    "tight-binding models.",
        epilog="Set EDGETOPO_WORKERS to parallelize grid sweeps.")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        sub = subs.add_parser(name, help=help_text)
        _add_common(sub)
        if name == "edge-spectrum":
            sub.add_argument("--window", required=True)
        if name in ("edge-index", "verify-duality"):
            sub.add_argument("--window", default="")
        if name in ("edge-index", "bulk-index", "verify-duality"):
            sub.add_argument("--symmetry", choices=("auto", "ti", "qh"),
                             default="auto")
        if name in ("chern", "scatter"):
            sub.add_argument("--band", type=int, default=1)
        if name == "z2":
            sub.add_argument("--bands", default="")
            sub.add_argument("--method",
                             choices=("eigenphase", "fu_kane"),
                             default="eigenphase")
        if name == "scatter":
            sub.add_argument("--k-range", default="")
            sub.add_argument("--delta", type=float, default=1e-2)
    ns = parser.parse_args(_glue_pairs(argv))

    params = {}
    for key in ("t", "tp", "lam_v"):
        val = getattr(ns, key)
        if val is not None:
            params[key] = val
    cfg = RunConfig(command=ns.command, model=ns.model,
                    model_file=ns.model_file, params=params, mu=ns.mu,
                    n_k=ns.n_k, n_kappa=ns.n_kappa, n_contour=ns.n_contour,
                    cells=ns.cells, eta=ns.eta, phase_tol=ns.phase_tol,
                    loc_threshold=ns.loc_threshold, seed=ns.seed, out=ns.out,
                    plot=ns.plot)
    if getattr(ns, "window", ""):
        cfg.window = _parse_pair(ns.window, "--window")
    if getattr(ns, "k_range", ""):
        cfg.k_range = _parse_pair(ns.k_range, "--k-range")
    if getattr(ns, "bands", ""):
        pair = _parse_pair(ns.bands, "--bands")
        cfg.bands = (int(pair[0]), int(pair[1]))
    if hasattr(ns, "band"):
        cfg.band = ns.band
    if hasattr(ns, "method"):
        cfg.method = ns.method
    if hasattr(ns, "symmetry"):
        cfg.symmetry = ns.symmetry
    if hasattr(ns, "delta"):
        cfg.delta = ns.delta
    cfg.validate()
    return cfg


def _parse_pair(text: str, flag: str):
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"{flag} expects lo,hi")
    try:
        return (float(parts[0]), float(parts[1]))
    except ValueError as exc:
        raise ConfigError(f"{flag}: {exc}") from None


def main(argv=None) -> int:
    t_start = time.perf_counter()
    try:
        cfg = _parse(sys.argv[1:] if argv is None else argv)
        os.makedirs(cfg.out, exist_ok=True)
        if cfg.command == "selfcheck" and not (cfg.model or cfg.model_file):
            bulk = edge = None
        else:
            bulk, edge = _build(cfg)
        files: list = []
        fn = _COMMANDS[cfg.command][0]
        values, diagnostics, method = fn(cfg, bulk, edge, files)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionError as exc:
        print(f"assumption failed: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (NumericalError, NearSpectrumError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    doc = {
        "command": cfg.command,
        "config": cfg.echo(),
        "values": values,
        "diagnostics": diagnostics,
        "method": method,
        "files": files,
        "timings": {"total_s": time.perf_counter() - t_start},
        "version": __version__,
    }
    text = result_text(doc)
    sys.stdout.write(text)
    atomic_write_text(os.path.join(cfg.out, f"{cfg.command}.json"), text)
    if cfg.command == "selfcheck" and values["n_failed"]:
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
