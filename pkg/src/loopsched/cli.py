"""Command-line driver: single simulations, factorial sweeps and reports.

Exit codes: 0 success, 2 bad flags or values, 3 unreadable or malformed files.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import logging
import math
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import metrics
from .dls import DlsConfig, DlsError, Technique, parse_technique
from .perturbation import PerturbationError, get_scenario, load_scenario
from .platform import PlatformError, load_platform
from .simas import (DEFAULT_PORTFOLIO, SimasConfig, SimasError, overhead_percent, run_time_stepping_with_simas,
                    run_with_simas, selection_percentages)
from .simcore import SimError, SimInput, TimeSteppingInput, simulate, simulate_time_stepping, write_outcome
from .workload import (KINDS, WorkloadError, generate_workload, load_flop_file, parse_gen,
                       standard_workload_specs)

log = logging.getLogger("loopsched")

SIMAS = "SIMAS"
DEFAULT_N = 400_000
EXIT_USAGE = 2
EXIT_FILE = 3


class UsageError(Exception):
    pass


class InputFileError(Exception):
    pass


def parse_technique_name(name: str) -> str:
    if name.strip().upper() == SIMAS:
        return SIMAS
    return parse_technique(name).value


def parse_portfolio(text: str | None) -> tuple:
    if not text:
        return DEFAULT_PORTFOLIO
    return tuple(parse_technique(t) for t in text.split(",") if t.strip())


def parse_weights(text: str | None):
    if not text:
        return None
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"--weights: not a comma separated list of numbers: {text!r}") from None


# -- simulate --------------------------------------------------------------

def _load_platform(spec: str):
    try:
        return load_platform(spec)
    except FileNotFoundError:
        raise InputFileError(f"platform file not found: {spec}") from None
    except (OSError, PlatformError) as exc:
        raise InputFileError(f"platform {spec}: {exc}") from None


def _load_workload(args):
    if args.workload and args.gen:
        raise UsageError("give either --workload or --gen, not both")
    if args.workload:
        try:
            return load_flop_file(args.workload)
        except FileNotFoundError:
            raise InputFileError(f"FLOP file not found: {args.workload}") from None
        except (OSError, WorkloadError) as exc:
            raise InputFileError(str(exc)) from None
    if args.gen:
        if args.n is None:
            raise UsageError("--gen needs --n")
        return generate_workload(parse_gen(args.gen), args.n)
    raise UsageError("one of --workload or --gen is required")


def _load_scenario(args):
    if args.scenario and args.scenario_file:
        raise UsageError("give either --scenario or --scenario-file, not both")
    if args.scenario_file:
        try:
            return load_scenario(args.scenario_file, args.seed)
        except FileNotFoundError:
            raise InputFileError(f"scenario file not found: {args.scenario_file}") from None
        except (OSError, PerturbationError) as exc:
            raise InputFileError(f"{args.scenario_file}: {exc}") from None
    return get_scenario(args.scenario or "np", args.seed)


def cmd_simulate(args) -> int:
    if args.n is not None and args.n < 1:
        raise UsageError("--n must be >= 1")
    if args.timesteps < 1:
        raise UsageError("--timesteps must be >= 1")
    tech = parse_technique_name(args.dls)
    platform = _load_platform(args.platform)
    workload = _load_workload(args)
    scenario = _load_scenario(args)
    weights = parse_weights(args.weights)
    if weights is not None and len(weights) != platform.P:
        raise UsageError(f"--weights has {len(weights)} entries, platform has {platform.P} PEs")
    cfg = DlsConfig(1, 1, h=args.h, sigma=args.sigma, static_weights=weights)
    base = SimInput(platform, workload, scenario, Technique.SS if tech == SIMAS else tech, cfg,
                    max_sim_time=args.max_sim_time if args.max_sim_time is not None else math.inf)
    out_dir = Path(args.out)
    t0 = time.perf_counter()
    if tech == SIMAS:
        scfg = SimasConfig(portfolio=parse_portfolio(args.portfolio), poll_interval=args.poll,
                           resim_interval=args.resim)
        if args.timesteps > 1:
            outs = run_time_stepping_with_simas(TimeSteppingInput([workload], args.timesteps), base, scfg,
                                                args.oracle)
        else:
            outs = [run_with_simas(base, scfg, args.oracle)[0]]
    elif args.timesteps > 1:
        outs = simulate_time_stepping(TimeSteppingInput([workload], args.timesteps), base)
    else:
        outs = [simulate(base)]
    log.info("simulated %s in %.2f s wall-clock", tech, time.perf_counter() - t0)
    for k, out in enumerate(outs):
        prefix = f"step{k}_" if len(outs) > 1 else ""
        write_outcome(out, out_dir, prefix)
        if tech == SIMAS:
            write_selection_log(out.extra["selections"], out_dir / f"{prefix}selection.csv",
                                scfg.portfolio, out)
    last = outs[-1]
    print(f"sim_time={last.sim_time!r} finished_tasks={sum(o.finished_tasks for o in outs)} "
          f"completed={all(o.completed for o in outs)}")
    return 0


def write_selection_log(events, path, portfolio, outcome=None) -> None:
    cols = ["time", "chosen", "previous", "reason"]
    for t in portfolio:
        cols += [f"{t.value}_sim_time", f"{t.value}_finished"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for ev in events:
            row = [repr(ev.time), ev.chosen.value, ev.previous.value if ev.previous else "", ev.reason]
            for t in portfolio:
                p = ev.predictions.get(t)
                row += [repr(p[0]), p[1]] if p else ["", ""]
            w.writerow(row)
        if outcome is not None:
            # overhead summary; modeled compute time keeps the file deterministic
            fh.write(f"# prediction_compute_s={outcome.extra['prediction_compute_s']!r} "
                     f"overhead_pct={overhead_percent(outcome)!r}\n")


# -- sweep -----------------------------------------------------------------

@dataclass
class Manifest:
    workloads: list
    platforms: list
    scenarios: list
    techniques: list
    n: int = DEFAULT_N
    repetitions: int = 1
    seed: int = 0
    timesteps: list = field(default_factory=lambda: [1])
    portfolio: tuple = DEFAULT_PORTFOLIO
    poll: float = 5.0
    resim: float = 50.0
    oracle: bool = False
    max_sim_time: float = math.inf

    def cells(self):
        return list(itertools.product(self.workloads, self.platforms, self.timesteps, self.scenarios,
                                      self.techniques))


_LIST_AXES = {"workload": "workloads", "platform": "platforms", "scenario": "scenarios",
              "technique": "techniques", "timesteps": "timesteps"}
_SCALAR_AXES = {"n": int, "repetitions": int, "seed": int, "poll": float, "resim": float,
                "max_sim_time": float, "oracle": str, "portfolio": str}


def parse_manifest(text: str) -> Manifest:
    """``axis <name> <values...>`` lines; ``#`` starts a comment."""
    vals: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] != "axis" or len(tok) < 3:
            raise InputFileError(f"manifest line {lineno}: expected 'axis <name> <values...>'")
        name, values = tok[1], tok[2:]
        if name in vals:
            raise InputFileError(f"manifest line {lineno}: axis {name!r} given twice")
        try:
            if name in _LIST_AXES:
                if name == "technique":
                    values = [parse_technique_name(v) for v in values]
                elif name == "timesteps":
                    values = [int(v) for v in values]
                elif name == "scenario":
                    for v in values:
                        get_scenario(v)
                vals[_LIST_AXES[name]] = values
            elif name in _SCALAR_AXES:
                if len(values) != 1:
                    raise ValueError(f"axis {name} takes one value")
                v = values[0]
                if name == "oracle":
                    vals[name] = v.lower() in ("1", "yes", "true", "on")
                elif name == "portfolio":
                    vals[name] = parse_portfolio(v)
                else:
                    vals[name] = _SCALAR_AXES[name](v)
            else:
                raise ValueError(f"unknown axis {name!r}")
        except (ValueError, DlsError, PerturbationError) as exc:
            raise InputFileError(f"manifest line {lineno}: {exc}") from None
    missing = [a for a in ("workloads", "platforms", "scenarios", "techniques") if a not in vals]
    if missing:
        raise InputFileError(f"manifest lacks axis: {', '.join(m.rstrip('s') for m in missing)}")
    m = Manifest(**vals)
    if m.repetitions < 1 or m.n < 1 or any(k < 1 for k in m.timesteps):
        raise InputFileError("manifest: repetitions, n and timesteps must be >= 1")
    return m


def _cell_workload(spec: str, n: int, seed: int):
    std = standard_workload_specs(seed)
    if spec in std:
        return generate_workload(std[spec], n)
    if "," in spec and spec.split(",", 1)[0].lower() in KINDS:
        g = parse_gen(spec)
        return generate_workload(replace(g, seed=g.seed + seed), n)
    return load_flop_file(spec)


def _run_cell(manifest: Manifest, cell, rep: int) -> dict:
    """One repetition of one cell; returns a flat result row."""
    wl_spec, plat_spec, steps, scen_name, tech = cell
    seed = manifest.seed + rep
    platform = load_platform(plat_spec)
    workload = _cell_workload(wl_spec, manifest.n, seed)
    scenario = get_scenario(scen_name, seed)
    base = SimInput(platform, workload, scenario, Technique.SS if tech == SIMAS else tech,
                    max_sim_time=manifest.max_sim_time, record_log=False, collect_stats=steps > 1)
    row = {"seed": seed}
    if tech == SIMAS:
        scfg = SimasConfig(portfolio=manifest.portfolio, poll_interval=manifest.poll,
                           resim_interval=manifest.resim)
        base = replace(base, record_log=True, collect_stats=True)
        if steps > 1:
            outs = run_time_stepping_with_simas(TimeSteppingInput([workload], steps), base, scfg, manifest.oracle)
        else:
            outs = [run_with_simas(base, scfg, manifest.oracle)[0]]
        events = [ev for o in outs for ev in o.extra["selections"]]
        row["selection"] = {t.value: p for t, p in selection_percentages(events).items()}
        row["selection_events"] = sum(1 for ev in events if ev.reason != "default")
        compute = math.fsum(o.extra["prediction_compute_s"] for o in outs)
    elif steps > 1:
        outs = simulate_time_stepping(TimeSteppingInput([workload], steps), base)
    else:
        outs = [simulate(base)]
    last = outs[-1]
    # steps run back to back from time 0, so the last finish is the total loop time
    t_par = last.t_par
    rep_ = metrics.imbalance(last.per_pe_finish)
    row.update(t_par=t_par, cov=rep_.cov, mean_max=rep_.mean_max,
               finished_tasks=sum(o.finished_tasks for o in outs), completed=all(o.completed for o in outs))
    if tech == SIMAS:
        row["overhead_pct"] = 100.0 * compute / t_par if t_par > 0 else 0.0
    return row


def _run_cell_safe(args):
    manifest, cell, rep = args
    try:
        return cell, rep, _run_cell(manifest, cell, rep), None
    except Exception as exc:  # recorded as a missing cell, the sweep goes on
        return cell, rep, None, f"{type(exc).__name__}: {exc}"


RESULT_COLUMNS = ("workload", "platform", "timesteps", "scenario", "technique", "rep", "seed", "status",
                  "t_par", "cov", "mean_max", "finished_tasks", "completed", "overhead_pct")
MEDIAN_COLUMNS = ("workload", "platform", "timesteps", "scenario", "technique", "reps", "t_par", "cov",
                  "mean_max", "overhead_pct")


def _workers() -> int:
    raw = os.environ.get("LOOPSCHED_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"LOOPSCHED_WORKERS must be an integer, got {raw!r}") from None
    return max(1, n)


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def run_sweep(manifest: Manifest, out_dir, workers: int = 1) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(manifest, cell, rep) for cell in manifest.cells() for rep in range(manifest.repetitions)]
    log.info("sweep: %d cells x %d repetitions, %d worker(s)", len(manifest.cells()), manifest.repetitions, workers)
    t0 = time.perf_counter()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell_safe, jobs))
    else:
        results = [_run_cell_safe(j) for j in jobs]
    log.info("sweep finished in %.1f s wall-clock", time.perf_counter() - t0)

    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for cell, rep, row, err in results:
            wl, plat, steps, scen, tech = cell
            base = [wl, plat, steps, scen, tech, rep, manifest.seed + rep]
            if err is not None:
                log.warning("cell %s rep %d failed: %s", cell, rep, err)
                w.writerow(base + [f"failed: {err}"] + [""] * 6)
            else:
                w.writerow(base + ["ok"] + [_fmt(row.get(c)) for c in RESULT_COLUMNS[8:]])

    by_cell: dict = {}
    for cell, rep, row, err in results:
        if err is None:
            by_cell.setdefault(cell, []).append(row)
    with open(out / "medians.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MEDIAN_COLUMNS)
        for cell in manifest.cells():
            rows = by_cell.get(cell)
            if not rows:
                continue
            med = [statistics.median(r[k] for r in rows) for k in ("t_par", "cov", "mean_max")]
            ovh = statistics.median(r["overhead_pct"] for r in rows) if cell[4] == SIMAS else None
            w.writerow([*cell, len(rows), *(_fmt(x) for x in med), _fmt(ovh)])

    with open(out / "selection.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["workload", "platform", "timesteps", "scenario", "rep", "technique", "percent", "events"])
        for cell, rep, row, err in results:
            if err is None and "selection" in row:
                for tech, pct in sorted(row["selection"].items()):
                    w.writerow([*cell[:4], rep, tech, repr(pct), row["selection_events"]])
    return out


def cmd_sweep(args) -> int:
    try:
        text = Path(args.manifest).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputFileError(f"cannot read manifest {args.manifest}: {exc}") from None
    manifest = parse_manifest(text)
    out = run_sweep(manifest, args.out, _workers())
    write_reports(out)
    print(f"results in {out}")
    return 0


# -- report ----------------------------------------------------------------

REPORT_EXTRA = ("overhead_pct",)


def _read_csv(path):
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise InputFileError(f"cannot read {path}: {exc}") from None


def write_reports(results_dir) -> list[Path]:
    """Per (workload, platform, timesteps) group: a normalized report and, when
    SIMAS cells exist, a selection-frequency table."""
    d = Path(results_dir)
    medians = _read_csv(d / "medians.csv")
    groups: dict = {}
    for r in medians:
        groups.setdefault((r["workload"], r["platform"], r["timesteps"]), []).append(r)
    written = []
    for key, rows in groups.items():
        tag = "_".join(_slug(k) for k in key)
        table = {(r["scenario"], r["technique"]): float(r["t_par"]) for r in rows}
        if metrics.BASELINE not in table:
            raise InputFileError(f"group {key}: baseline cell (np, STATIC) missing; cannot normalize")
        norm = metrics.normalize_to_baseline(table)
        out_rows = []
        for r in rows:
            k = (r["scenario"], r["technique"])
            out_rows.append({"scenario": k[0], "technique": k[1], "t_par": float(r["t_par"]),
                             "cov": float(r["cov"]), "mean_max": float(r["mean_max"]),
                             "normalized_pct": norm[k],
                             "overhead_pct": float(r["overhead_pct"]) if r["overhead_pct"] else ""})
        path = d / f"report_{tag}.csv"
        metrics.write_report(out_rows, path, REPORT_EXTRA)
        written.append(path)

    sel = _read_csv(d / "selection.csv") if (d / "selection.csv").exists() else []
    counts: dict = {}
    for r in sel:
        # percentages back to counts so repetitions pool correctly
        n = round(float(r["percent"]) * int(r["events"]) / 100.0)
        g = (r["workload"], r["platform"], r["timesteps"])
        counts.setdefault(g, {}).setdefault(r["scenario"], {}).setdefault(r["technique"], 0)
        counts[g][r["scenario"]][r["technique"]] += n
    for g, per_scen in counts.items():
        path = d / f"selection_{'_'.join(_slug(k) for k in g)}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "technique", "percent"])
            for scen in sorted(per_scen):
                total = sum(per_scen[scen].values())
                for tech in sorted(per_scen[scen]):
                    pct = 100.0 * per_scen[scen][tech] / total if total else 0.0
                    w.writerow([scen, tech, repr(pct)])
        written.append(path)
    return written


def _slug(s: str) -> str:
    return "".join(c if c.isalnum() or c in "-." else "-" for c in Path(s).name)


def cmd_report(args) -> int:
    for p in write_reports(args.results):
        print(p)
    return 0


# -- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="loopsched", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one loop execution")
    s.add_argument("--platform", required=True, help="platform file, or mini128 / mini416")
    s.add_argument("--workload", help="FLOP file, one count per line")
    s.add_argument("--gen", help="KIND,PARAMS...,SEED synthetic workload")
    s.add_argument("--n", type=int, help="iteration count for --gen")
    s.add_argument("--dls", required=True, help="technique name, or SIMAS")
    s.add_argument("--scenario", help="perturbation scenario name (default np)")
    s.add_argument("--scenario-file", help="custom perturbation file")
    s.add_argument("--max-sim-time", type=float)
    s.add_argument("--h", type=float, help="scheduling overhead per chunk for FSC (s)")
    s.add_argument("--sigma", type=float, help="iteration time std for FSC (s)")
    s.add_argument("--weights", help="comma separated WF weights, one per PE")
    s.add_argument("--out", default="out")
    s.add_argument("--seed", type=int, default=0, help="perturbation seed")
    s.add_argument("--timesteps", type=int, default=1)
    s.add_argument("--portfolio", help="comma separated SIMAS portfolio")
    s.add_argument("--poll", type=float, default=5.0)
    s.add_argument("--resim", type=float, default=50.0)
    s.add_argument("--oracle", action="store_true", help="SIMAS predictions see the true perturbations")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run a factorial experiment manifest")
    w.add_argument("manifest")
    w.add_argument("--out", default="results")
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="rebuild report tables from a results directory")
    r.add_argument("results")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputFileError as exc:
        print(f"loopsched: error: {exc}", file=sys.stderr)
        return EXIT_FILE
    except (UsageError, DlsError, WorkloadError, PerturbationError, SimasError, SimError) as exc:
        print(f"loopsched: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
