"""Simulation-assisted selection of the scheduling technique during execution.

The controller follows a model-predictive loop: from the live execution state
it simulates the rest of the loop once per portfolio technique, and switches
the live loop to the technique that finishes the most iterations in the
least time.  Predictions are launched at most every ``resim_interval``
simulated seconds and checked at most every ``poll_interval``.

Prediction cost never delays the live run.  It is accounted separately, as
the number of events the sub-simulations processed (deterministic) and as
measured wall-clock seconds.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from . import dls
from .dls import DlsConfig, Technique, parse_technique
from .perturbation import NO_PERTURBATION
from .simcore import LoopEngine, SimInput, SimOutcome, simulate

log = logging.getLogger(__name__)

EXCLUDED = (Technique.GSS, Technique.TSS, Technique.FAC)
DEFAULT_PORTFOLIO = tuple(t for t in Technique if t not in EXCLUDED)
# one compiled-simulator event per microsecond, used for modeled overhead
DEFAULT_EVENT_COST = 1e-6


class SimasError(ValueError):
    pass


@dataclass
class SimasConfig:
    portfolio: Sequence[Technique] = DEFAULT_PORTFOLIO
    default_technique: Technique = Technique.AWF_B
    poll_interval: float = 5.0
    resim_interval: float = 50.0
    prediction_horizon: float = math.inf
    min_remaining: Optional[int] = None  # defaults to P
    prediction_delay: float = 0.0  # simulated seconds from launch until results are usable
    event_cost: float = DEFAULT_EVENT_COST

    def __post_init__(self):
        self.portfolio = tuple(parse_technique(t) for t in self.portfolio)
        self.default_technique = parse_technique(self.default_technique)
        if not self.portfolio:
            raise SimasError("portfolio must not be empty")
        if len(set(self.portfolio)) != len(self.portfolio):
            raise SimasError("portfolio lists a technique twice")
        if not 0 < self.poll_interval <= self.resim_interval:
            raise SimasError("need 0 < poll_interval <= resim_interval")
        if not self.prediction_horizon > 0:
            raise SimasError("prediction_horizon must be positive")
        if self.prediction_delay < 0:
            raise SimasError("prediction_delay must be >= 0")


@dataclass
class SelectionEvent:
    time: float
    chosen: Technique
    previous: Optional[Technique]
    reason: str  # default | switch | keep
    predictions: dict = field(default_factory=dict)  # technique -> (sim_time, finished_tasks)


@dataclass
class Snapshot:
    """Live execution state handed to the sub-simulations."""
    now: float
    start_task: int  # first unscheduled iteration
    initial: list  # per-PE entries in SimInput.initial form
    stats: list
    weights: list
    exec_chunks: dict = field(default_factory=dict)  # pe -> (exec_start, flops) for running chunks
    recent: list = field(default_factory=list)  # (pe, exec_start, exec_end, flops) of finished chunks


@dataclass
class _Batch:
    launched: float
    ready: float
    outcomes: dict  # technique -> SimOutcome
    events: int
    wall: float


def rank(outcomes: dict, portfolio: Sequence[Technique]) -> Technique:
    """Most finished tasks first, then shortest time, then portfolio order."""
    order = {t: i for i, t in enumerate(portfolio)}
    best = min(outcomes, key=lambda t: (-outcomes[t].finished_tasks, outcomes[t].sim_time, order[t]))
    return best


def estimate_system_state(records, platform, now: float, window: float) -> list[float]:
    """Per-PE delivered-speed factor from chunks that finished in ``[now - window, now]``.

    ``records`` holds (pe, exec_start, exec_end, flops).  PEs without a
    finished chunk in the window keep factor 1.
    """
    flops = [0.0] * platform.P
    busy = [0.0] * platform.P
    lo = now - window
    for pe, x0, x1, f in records:
        if lo <= x1 <= now and x1 > x0:
            flops[pe] += f
            busy[pe] += x1 - x0
    out = []
    for i, h in enumerate(platform.hosts):
        if busy[i] > 0:
            out.append(min(1.5, max(1e-9, flops[i] / busy[i] / h.core_speed)))
        else:
            out.append(1.0)
    return out


class SimasController:
    """Owns prediction batches and the current live technique."""

    def __init__(self, config: SimasConfig, base: SimInput, *, oracle_mode: bool = False,
                 executor: Optional[Executor] = None):
        self.config = config
        self.base = base
        self.oracle_mode = oracle_mode
        self.executor = executor
        self.P = base.platform.P
        self.min_remaining = config.min_remaining if config.min_remaining is not None else self.P
        if self.min_remaining < self.P:
            raise SimasError("min_remaining must be >= P")
        self.technique = config.default_technique
        self.pending: Optional[_Batch] = None
        self.last_launch = -math.inf
        self.last_poll = -math.inf
        self.events: list[SelectionEvent] = []
        self.prediction_events = 0
        self.prediction_wall = 0.0
        self.launches = 0

    # -- predictions -----------------------------------------------------
    def _sub_input(self, snap: Snapshot, technique: Technique) -> SimInput:
        base = self.base
        horizon_end = min(base.max_sim_time, snap.now + self.config.prediction_horizon)
        if self.oracle_mode:
            platform, scenario, initial = base.platform, base.scenario, snap.initial
        else:
            factors = estimate_system_state(snap.recent, base.platform, snap.now, self.config.resim_interval)
            platform = base.platform.with_speeds([h.core_speed * f for h, f in zip(base.platform.hosts, factors)])
            scenario = NO_PERTURBATION
            initial = list(snap.initial)
            for pe, (x0, fl) in snap.exec_chunks.items():
                end = max(snap.now, x0 + fl / platform.hosts[pe].core_speed)
                initial[pe] = ("send", end)
        return replace(base, platform=platform, scenario=scenario, technique=technique,
                       start_task=snap.start_task, start_time=snap.now, max_sim_time=horizon_end,
                       initial=initial, stats=snap.stats, weights=snap.weights, record_log=False,
                       collect_stats=False)

    def predict(self, snap: Snapshot) -> dict:
        inputs = [(t, self._sub_input(snap, t)) for t in self.config.portfolio]
        if self.executor is not None:
            futures = [(t, self.executor.submit(simulate, inp)) for t, inp in inputs]
            results = []
            for t, fut in futures:
                try:
                    results.append((t, fut.result()))
                except Exception as exc:  # a failed prediction is dropped, not fatal
                    log.warning("prediction with %s failed: %s", t, exc)
        else:
            results = []
            for t, inp in inputs:
                try:
                    results.append((t, simulate(inp)))
                except Exception as exc:
                    log.warning("prediction with %s failed: %s", t, exc)
        return dict(results)

    def launch(self, snap: Snapshot) -> None:
        t0 = time.perf_counter()
        outcomes = self.predict(snap)
        wall = time.perf_counter() - t0
        events = sum(o.events for o in outcomes.values())
        self.prediction_events += events
        self.prediction_wall += wall
        self.launches += 1
        self.last_launch = snap.now
        self.pending = _Batch(snap.now, snap.now + self.config.prediction_delay, outcomes, events, wall)

    # -- control loop ----------------------------------------------------
    def setup(self, snap: Snapshot) -> Technique:
        if snap.start_task >= self.base.workload.N:
            raise SimasError("nothing left to schedule")
        self.technique = self.config.default_technique
        self.events.append(SelectionEvent(snap.now, self.technique, None, "default"))
        self.launch(snap)
        return self.technique

    def update(self, now: float, snapshot_fn, remaining: int) -> Optional[Technique]:
        """Return the new technique when the live loop must switch, else None."""
        if now - self.last_poll < self.config.poll_interval and self.last_poll > -math.inf:
            return None
        self.last_poll = now
        switch = None
        batch = self.pending
        if batch is not None and now >= batch.ready:
            self.pending = None
            if batch.outcomes:
                best = rank(batch.outcomes, [t for t in self.config.portfolio if t in batch.outcomes])
                preds = {t: (o.sim_time, o.finished_tasks) for t, o in batch.outcomes.items()}
                previous = self.technique
                reason = "keep" if best == previous else "switch"
                self.events.append(SelectionEvent(now, best, previous, reason, preds))
                if best != previous:
                    self.technique = best
                    switch = best
        if (self.pending is None and now - self.last_launch >= self.config.resim_interval
                and remaining > self.min_remaining):
            self.launch(snapshot_fn())
        return switch

    def selection_counts(self) -> dict:
        counts = {}
        for ev in self.events:
            if ev.reason != "default":
                counts[ev.chosen] = counts.get(ev.chosen, 0) + 1
        return counts

    def overhead_seconds(self) -> float:
        return self.prediction_events * self.config.event_cost


class _LiveScheduler:
    """Scheduler whose technique can be swapped between chunks."""

    def __init__(self, base_cfg: DlsConfig, first: int, N_total: int, technique: Technique,
                 prefix, stats=None, weights=None):
        self.base_cfg = base_cfg
        self.N_total = N_total
        self.prefix = prefix
        self.state = dls.init_state(technique, replace(base_cfg, N=N_total - first), first=first,
                                    stats=stats, weights=weights)
        self.issued: dict = {}  # pe -> flops of the chunk it runs
        self.recent: list = []  # (pe, exec_start, exec_end, flops) of finished chunks
        self.segments: list = []  # (technique, iterations scheduled)
        self._seg_start = first

    @property
    def next_start(self) -> int:
        return self.state.first + self.state.scheduled

    def switch(self, technique: Technique) -> None:
        st = self.state
        remaining = self.N_total - self.next_start
        if remaining <= 0:
            return
        self.segments.append((st.technique, self.next_start - self._seg_start))
        self._seg_start = self.next_start
        self.state = dls.init_state(technique, replace(self.base_cfg, N=remaining), first=self.next_start,
                                    stats=st.stats, weights=st.weights)

    def next_chunk(self, pe, now):
        c = dls.next_chunk(self.state, pe, now)
        if c is None:
            return None
        start, size = c
        self.issued[pe] = self.prefix[start + size] - self.prefix[start]
        return start, size, self.state.technique.value

    def chunk_done(self, pe, size, iter_time, total_time, now):
        dls.update_stats(self.state, pe, size, iter_time, total_time)
        self.recent.append((pe, now - iter_time, now, self.issued.pop(pe, 0.0)))

    def close(self):
        self.segments.append((self.state.technique, self.next_start - self._seg_start))


def _snapshot(engine: LoopEngine, live: _LiveScheduler, now: float, window: float) -> Snapshot:
    initial = []
    running = {}
    for pe, st in enumerate(engine.status):
        if st is None:
            initial.append(None)
        elif st[0] == "exec":
            initial.append(("send", st[1]))
            running[pe] = (st[2], st[3])
        else:
            initial.append(("arrive", st[1], st[2]))
    lo = now - window
    live.recent = [r for r in live.recent if r[2] >= lo]  # older records never re-enter a window
    stats, weights = live.state.snapshot_stats()
    return Snapshot(now, live.next_start, initial, stats, weights, running, list(live.recent))


def run_with_simas(inp: SimInput, config: SimasConfig, oracle_mode: bool = False,
                   executor: Optional[Executor] = None) -> tuple[SimOutcome, list[SelectionEvent]]:
    """Live loop execution with the technique chosen by the selection controller.

    ``inp.technique`` is ignored.  Switches only affect chunks not yet issued.
    """
    engine = LoopEngine(inp)
    ctrl = SimasController(config, inp, oracle_mode=oracle_mode, executor=executor)
    live = _LiveScheduler(inp.dls_config(), inp.start_task, inp.workload.N, config.default_technique,
                          engine.prefix, stats=inp.stats, weights=inp.weights)
    window = config.resim_interval

    def snap_now():
        return _snapshot(engine, live, engine.now, window)

    started = False

    def on_serve(eng, now):
        nonlocal started
        if not started:
            # engine status is seeded by now, so the first snapshot is complete
            started = True
            ctrl.setup(snap_now())
        new = ctrl.update(now, snap_now, inp.workload.N - live.next_start)
        if new is not None:
            live.switch(new)

    out = engine.run(live, on_serve=on_serve)
    live.close()
    out.stats = live.state.stats
    out.weights = dls.current_weights(live.state)
    out.extra.update(
        selections=ctrl.events,
        segments=live.segments,
        prediction_events=ctrl.prediction_events,
        prediction_wall_s=ctrl.prediction_wall,
        prediction_compute_s=ctrl.overhead_seconds(),
        launches=ctrl.launches,
        selection_counts=ctrl.selection_counts(),
    )
    return out, ctrl.events


def overhead_percent(outcome: SimOutcome) -> float:
    t = outcome.t_par
    if not t > 0:
        return 0.0
    return 100.0 * outcome.extra.get("prediction_compute_s", 0.0) / t


def selection_percentages(events: Sequence[SelectionEvent]) -> dict:
    counts = {}
    for ev in events:
        if ev.reason != "default":
            counts[ev.chosen] = counts.get(ev.chosen, 0) + 1
    total = sum(counts.values())
    return {t: 100.0 * c / total for t, c in counts.items()} if total else {}


def run_time_stepping_with_simas(ts, base: SimInput, config: SimasConfig, oracle_mode: bool = False,
                                 executor: Optional[Executor] = None,
                                 default_technique: Optional[Technique] = Technique.WF) -> list[SimOutcome]:
    """Time-stepping loop where every step restarts from the default technique
    (WF unless overridden; None keeps ``config.default_technique``) and
    launches a fresh prediction batch at its first request."""
    if default_technique is not None:
        config = replace(config, default_technique=default_technique)
    outcomes = []
    t = base.start_time
    stats, weights = base.stats, base.weights
    for k in range(ts.steps):
        inp = replace(base, workload=ts.workload(k), start_task=0, start_time=t, initial=None,
                      stats=stats, weights=weights)
        if inp.max_sim_time <= t:
            break
        out, _ = run_with_simas(inp, config, oracle_mode, executor)
        outcomes.append(out)
        if not out.completed:
            break
        t = out.sim_time
        if ts.carry_weights:
            stats, weights = out.stats, out.weights
    return outcomes


def simas_setup(config: SimasConfig, base: SimInput, snapshot: Optional[Snapshot] = None, *,
                oracle_mode: bool = False, executor: Optional[Executor] = None):
    """Create a controller, launch the first prediction batch, return (technique, controller)."""
    ctrl = SimasController(config, base, oracle_mode=oracle_mode, executor=executor)
    if snapshot is None:
        snapshot = Snapshot(base.start_time, base.start_task, [("send", base.start_time)] * base.platform.P,
                            base.stats or [dls.PEStats() for _ in range(base.platform.P)],
                            list(base.weights) if base.weights else [1.0] * base.platform.P)
    return ctrl.setup(snapshot), ctrl


def simas_update(ctrl: SimasController, now: float, snapshot: Snapshot) -> Optional[Technique]:
    remaining = ctrl.base.workload.N - snapshot.start_task
    return ctrl.update(now, lambda: replace(snapshot, now=now), remaining)
