"""``occusim {simulate|converge|price}``: run an experiment from a JSON config.

Exit codes: 0 success, 2 config error, 3 simulation divergence, 4 a
``--check`` threshold was missed.
"""
from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, RunConfig, load_config, validate
from .errors import ConfigError, InsufficientData, SimulationDiverged
from .harness import (ErrorTable, PriceTable, exit_time_diagnostics, fit_rate, monotonicity_violations,
                      strictly_decreasing, strong_error_experiment, weak_error_experiment)
from .measure import build_uniform_partition, family_for_partition
from .scheme import RNG_ID, brownian_increments, map_chunks, simulate

log = logging.getLogger("occusim")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK = 0, 2, 3, 4


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(fmt(v) for v in r) + "\n")


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_metadata(rc: RunConfig, out: Path, results: dict):
    raw = {k: v for k, v in rc.raw.items() if k not in ("out", "workers")}
    meta = {
        "command": rc.command,
        "config": raw,
        "seed": rc.seed,
        "rng": RNG_ID,
        "version": __version__,
        "git_describe": git_describe(),
        "numpy": np.__version__,
        "results": results,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")


def _axis_names(d, stem):
    return [stem] if d == 1 else [f"{stem}_{i + 1}" for i in range(d)]


# --- commands ----------------------------------------------------------------

def cmd_simulate(rc: RunConfig, out: Path) -> dict:
    d = rc.model.dim
    part = build_uniform_partition(d, rc.R, rc.M, rc.origin, rc.anchor)
    proj = rc.model.projected(part)
    fam = family_for_partition(part, rc.J_fam) if rc.r_stop is not None else None
    t = rc.grid.nodes

    def run(lo, hi):
        idx = np.arange(lo, hi)
        dw = brownian_increments(rc.seed, idx, rc.grid, d)
        return simulate(proj, rc.grid, dw, r_stop=rc.r_stop, fam=fam, path_indices=idx)

    batches = map_chunks(run, rc.paths, rc.workers)
    path_rows, occ_rows = [], []
    for b in batches:
        for i, pid in enumerate(b.path_indices):
            for n in range(rc.grid.N + 1):
                path_rows.append([int(pid), n, t[n], *b.states[i, n]])
            for k in np.flatnonzero(b.z_final[i]):
                occ_rows.append([int(pid), int(k), *part.centers[k], b.z_final[i, k]])
    write_csv(out / "paths.csv", ["path_id", "step", "t", *_axis_names(d, "x")], path_rows)
    write_csv(out / "occupation.csv", ["path_id", "bin", *_axis_names(d, "center"), "weight"], occ_rows)
    results = {"n_paths": rc.paths, "truncated": int(sum((b.exit_step >= 0).sum() for b in batches))}
    if rc.radii:
        fam = fam or family_for_partition(part, rc.J_fam)
        diag = {}
        for b in batches:
            for r, f in exit_time_diagnostics(b, part, fam, rc.radii).items():
                diag[r] = diag.get(r, 0.0) + f * len(b)
        results["exit_fraction"] = {fmt(r): v / rc.paths for r, v in diag.items()}
    return results


CONVERGE_GP = """\
set datafile separator ','
set logscale xy
set key top right
set xlabel 'K'
set ylabel 'error'
plot 'errors.csv' using 1:2:4 with yerrorlines title 'state', \\
     'errors.csv' using 1:3:5 with yerrorlines title 'occupation'
"""

PRICE_GP = """\
set datafile separator ','
set multiplot layout 1,2
set xlabel 'K'
plot 'prices.csv' using 1:2:4:5 with yerrorbars title 'price'
set logscale xy
plot 'prices.csv' using 1:6 with linespoints title 'weak error', \\
     'prices.csv' using 1:8 with linespoints title 'strong error'
unset multiplot
"""


def _fit_dict(fit):
    if fit is None:
        return None
    return {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2,
            "k_min": fit.k_min, "k_max": fit.k_max, "n_points": fit.n_points}


def _try_fit(K, err):
    try:
        return fit_rate(K, err)
    except InsufficientData as e:
        log.warning("no rate fit: %s", e)
        return None


def write_error_table(table: ErrorTable, out: Path):
    write_csv(out / "errors.csv", ErrorTable.COLUMNS,
              [[getattr(r, c) for c in ErrorTable.COLUMNS] for r in table.rows])
    loglog = [[np.log(r.K), np.log(r.state_error) if r.state_error > 0 else float("nan"),
               np.log(r.occ_error) if r.occ_error > 0 else float("nan")] for r in table.rows]
    write_csv(out / "loglog.csv", ["log_K", "log_state_error", "log_occ_error"], loglog)
    (out / "convergence.gp").write_text(CONVERGE_GP)


def cmd_converge(rc: RunConfig, out: Path) -> dict:
    table = strong_error_experiment(rc.model, rc.K_list, rc.grid, rc.paths, rc.seed, reference=rc.reference,
                                    R=rc.R, origin=rc.origin, anchor=rc.anchor, J_fam=rc.J_fam,
                                    r_stop=rc.r_stop, workers=rc.workers)
    write_error_table(table, out)
    fits = {c: _fit_dict(_try_fit(table.Ks, table.column(c)))
            for c in ("state_error", "occ_error", "state_error_T", "occ_error_T")}
    (out / "ratefit.json").write_text(json.dumps(fits, indent=2, sort_keys=True) + "\n")
    return {
        "rate_fit": fits,
        "state_strictly_decreasing": strictly_decreasing(table, "state_error"),
        "occ_strictly_decreasing": strictly_decreasing(table, "occ_error"),
        "state_violations": monotonicity_violations(table, "state_error"),
        "occ_violations": monotonicity_violations(table, "occ_error"),
        "excluded": table.rows[0].excluded,
    }


def cmd_price(rc: RunConfig, out: Path) -> dict:
    table = weak_error_experiment(rc.model, rc.payoff, rc.K_list, rc.reference, rc.grid, rc.paths, rc.seed,
                                  R=rc.R, origin=rc.origin, anchor=rc.anchor, workers=rc.workers)
    write_csv(out / "prices.csv", PriceTable.COLUMNS,
              [[getattr(r, c) for c in PriceTable.COLUMNS] for r in table.rows])
    (out / "prices.gp").write_text(PRICE_GP)
    rows = [r for r in table.rows if r.K != table.reference_K]
    fit = _try_fit(np.array([r.K for r in rows], float), np.array([r.weak_error for r in rows]))
    (out / "ratefit.json").write_text(json.dumps({"weak_error": _fit_dict(fit)}, indent=2, sort_keys=True) + "\n")
    ratios = [r.weak_error / r.strong_error for r in rows if r.strong_error > 0]
    return {"rate_fit": {"weak_error": _fit_dict(fit)}, "reference_price": table.reference_price,
            "reference_stderr": table.reference_stderr, "max_weak_over_strong": max(ratios, default=0.0),
            "excluded": table.excluded}


COMMAND_FNS = {"simulate": cmd_simulate, "converge": cmd_converge, "price": cmd_price}


def evaluate_checks(check: dict, results: dict) -> list[tuple[str, bool, str]]:
    """Compare run results against ``check`` thresholds; one ``(name, ok, detail)`` per entry."""
    fits = results.get("rate_fit", {})
    out = []
    for name, spec in check.items():
        if name in ("state_slope", "occ_slope", "weak_slope"):
            col = {"state_slope": "state_error", "occ_slope": "occ_error", "weak_slope": "weak_error"}[name]
            if fits.get(col) is None:
                out.append((name, False, "no fit available"))
                continue
            s = fits[col]["slope"]
            lo, hi = spec
            out.append((name, lo <= s <= hi, f"slope {s:.4f} vs [{lo}, {hi}]"))
        elif name == "strictly_decreasing":
            ok = results.get("state_strictly_decreasing", False) and results.get("occ_strictly_decreasing", False)
            out.append((name, ok or not spec, "state and occupation errors beyond 3 paired standard errors"))
        elif name == "weak_le_strong":
            r = results.get("max_weak_over_strong", float("inf"))
            out.append((name, r <= float(spec), f"max weak/strong {r:.4f} vs {spec}"))
        else:
            out.append((name, False, "unknown check"))
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="occusim", description="Projected occupied SDE experiments.")
    ap.add_argument("command", choices=sorted(COMMAND_FNS))
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--preset", choices=sorted(PRESETS), help="bundled parameter set")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config field (dotted keys, JSON values); wins over the file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--workers", type=int, help="worker threads (default: $OCCUSIM_THREADS or 1)")
    ap.add_argument("--fast", action="store_true", help="reduced path count and widened check bands")
    ap.add_argument("--check", action="store_true", help="exit 4 if a preset threshold is missed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    if args.out is not None:
        overrides.append("out=" + json.dumps(args.out))
    try:
        cfg = load_config(args.config, args.preset, overrides, fast=args.fast)
        cmd = cfg.pop("command", None)
        if cmd is not None and cmd != args.command:
            log.warning("preset is meant for '%s', running '%s'", cmd, args.command)
        rc = validate(cfg, args.command)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = rc.out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"cannot create output directory {out}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            results = COMMAND_FNS[rc.command](rc, out)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except SimulationDiverged as e:
        print(f"simulation diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as e:
        print(f"I/O error under {out}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    write_metadata(rc, out, results)
    for name, fit in results.get("rate_fit", {}).items():
        if fit is not None:
            print(f"{name}: slope {fit['slope']:.4f} (r2 {fit['r2']:.4f})")
    if args.check:
        failed = False
        for name, ok, detail in evaluate_checks(rc.check, results):
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
            failed |= not ok
        if failed:
            return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
