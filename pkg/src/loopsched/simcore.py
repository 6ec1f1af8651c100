"""Discrete-event simulation of master-worker self-scheduled loop execution.

Each PE is one core.  An idle worker sends a work request over its own link,
the master answers with a chunk computed by the scheduling technique, and the
worker runs the chunk at its (possibly perturbed) delivered speed.  The master
also works; it fetches its own chunks locally at no message cost.

Two event kinds drive the loop, ordered by (time, kind, pe): a chunk finishing
on a PE (kind 0) and a request being served by the master (kind 1).  Finishing
first at equal times means statistics are up to date when the next chunk is
computed.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from . import dls
from .dls import DlsConfig, Technique
from .perturbation import NO_PERTURBATION, Scenario, work_until
from .platform import Platform, relative_core_weights
from .workload import Workload, workload_sigma

DEFAULT_MSG_BYTES = 32

_DONE = 0
_SERVE = 1


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class ChunkRecord:
    time_issued: float
    pe: int
    start: int
    size: int
    technique: str
    exec_start: float
    exec_end: float
    flops: float
    request_sent: float


@dataclass
class SimInput:
    platform: Platform
    workload: Workload
    scenario: Scenario = NO_PERTURBATION
    technique: Technique | str = Technique.SS
    config: Optional[DlsConfig] = None  # h, sigma, weights; N and P are filled in
    start_task: int = 0
    start_time: float = 0.0
    max_sim_time: float = math.inf
    request_msg_bytes: float = DEFAULT_MSG_BYTES
    reply_msg_bytes: float = DEFAULT_MSG_BYTES
    master_poll_interval: float = 0.0
    # per-PE starting condition; None means every PE asks for work at start_time.
    # entries: ("send", t) | ("arrive", t_arrive, t_sent) | None (PE has left the loop)
    initial: Optional[list] = None
    stats: Optional[list] = None  # carried dls.PEStats per PE
    weights: Optional[Sequence[float]] = None  # carried adaptive weights
    record_log: bool = True
    # per-PE statistics are only needed by adaptive techniques or by callers
    # that carry them on; switching this off speeds up nonadaptive runs
    collect_stats: bool = True

    def validate(self) -> None:
        N = self.workload.N
        if not 0 <= self.start_task < N:
            raise SimError(f"start_task {self.start_task} outside [0, {N})")
        if not self.start_time >= 0:
            raise SimError("start_time must be >= 0")
        if not self.max_sim_time > self.start_time:
            raise SimError("max_sim_time must exceed start_time")
        if self.request_msg_bytes < 0 or self.reply_msg_bytes < 0:
            raise SimError("message sizes must be >= 0")
        if self.master_poll_interval < 0:
            raise SimError("master_poll_interval must be >= 0")
        if self.initial is not None and len(self.initial) != self.platform.P:
            raise SimError("initial must have one entry per PE")

    def dls_config(self) -> DlsConfig:
        """Scheduling parameters with N and P filled in and unset fields defaulted.

        Defaults: h is one request/reply round trip on the slowest worker link,
        sigma the iteration-time spread at mean PE speed, WF weights the
        relative core speeds.
        """
        base = self.config or DlsConfig(1, 1)
        plat = self.platform
        h, sigma, weights = base.h, base.sigma, base.static_weights
        if h is None:
            h = default_overhead(plat, self.request_msg_bytes, self.reply_msg_bytes)
        if sigma is None:
            sigma = workload_sigma(self.workload, math.fsum(plat.speeds) / plat.P)
        if weights is None:
            weights = relative_core_weights(plat)
        return replace(base, N=self.workload.N - self.start_task, P=plat.P, h=h, sigma=sigma,
                       static_weights=tuple(weights))


def default_overhead(platform: Platform, req_bytes: float = DEFAULT_MSG_BYTES,
                     rep_bytes: float = DEFAULT_MSG_BYTES) -> float:
    costs = [2 * l.latency + (req_bytes + rep_bytes) / l.bandwidth
             for i, l in enumerate(platform.links) if i != platform.master_host_index]
    return max(costs) if costs else 0.0


@dataclass
class SimOutcome:
    sim_time: float
    finished_tasks: int
    per_pe_finish: list
    chunk_log: list
    completed: bool
    events: int = 0
    stats: Optional[list] = None
    weights: Optional[list] = None
    extra: dict = field(default_factory=dict)

    @property
    def t_par(self) -> float:
        return max(self.per_pe_finish)


class StateScheduler:
    """Adapter that drives a single ``DlsState`` from the engine."""

    def __init__(self, state: dls.DlsState, collect_stats: bool = True):
        self.state = state
        self.name = state.technique.value
        if state.technique in (Technique.SS, Technique.FSC, Technique.mFSC):
            self.fixed = 1 if state.technique is Technique.SS else state.fixed_size
            self.next_chunk = self._fixed_chunk
        self.needs_done = True
        if not collect_stats and state.technique not in dls.ADAPTIVE:
            self.chunk_done = self._ignore
            self.needs_done = False

    def next_chunk(self, pe, now):
        c = dls.next_chunk(self.state, pe, now)
        if c is None:
            return None
        return c[0], c[1], self.name

    def _fixed_chunk(self, pe, now):
        # same result as dls.next_chunk for fixed-size techniques, minus the dispatch
        st = self.state
        R = st.config.N - st.scheduled
        if R <= 0:
            st.finished.add(pe)
            return None
        size = self.fixed if self.fixed < R else R
        start = st.first + st.scheduled
        st.scheduled += size
        return start, size, self.name

    def chunk_done(self, pe, size, iter_time, total_time, now):
        dls.update_stats(self.state, pe, size, iter_time, total_time)

    def _ignore(self, pe, size, iter_time, total_time, now):
        pass


class LoopEngine:
    """Event loop shared by plain simulations and live selection runs."""

    def __init__(self, inp: SimInput):
        inp.validate()
        self.inp = inp
        plat = inp.platform
        self.P = plat.P
        self.master = plat.master_host_index
        self.prefix = inp.workload.prefix().tolist()  # python floats: faster indexing, plain reprs
        self.N = inp.workload.N
        sc = inp.scenario
        self.speed = [h.core_speed for h in plat.hosts]
        self.avail = [sc.for_host("availability", i) for i in range(self.P)]
        self.lat_spec = [sc.for_host("latency", i) for i in range(self.P)]
        self.bw_spec = [sc.for_host("bandwidth", i) for i in range(self.P)]
        self.latency = [l.latency for l in plat.links]
        self.bandwidth = [l.bandwidth for l in plat.links]
        # unperturbed message costs are constants
        self.fixed_req = [None] * self.P
        self.fixed_rep = [None] * self.P
        for i in range(self.P):
            if i == self.master:
                self.fixed_req[i] = self.fixed_rep[i] = 0.0
            elif self.lat_spec[i] is None and self.bw_spec[i] is None:
                self.fixed_req[i] = self.latency[i] + inp.request_msg_bytes / self.bandwidth[i]
                self.fixed_rep[i] = self.latency[i] + inp.reply_msg_bytes / self.bandwidth[i]
        self.now = inp.start_time
        self.finish = [inp.start_time] * self.P
        # per-PE status as seen by an observer: ("exec", end, start, flops) while running a
        # chunk, ("arrive", t_arrive, t_sent) with a request in flight, None when gone
        self.status: list = [None] * self.P
        self.sent_at = [inp.start_time] * self.P
        self.finished_tasks = 0
        self.scheduled_upto = inp.start_task
        self.log: list = []
        self.events = 0

    def message_cost(self, pe: int, t: float, nbytes: float, fixed) -> float:
        c = fixed[pe]
        if c is not None:
            return c
        lat = self.latency[pe]
        s = self.lat_spec[pe]
        if s is not None:
            lat = lat / s.segment(t)[0]
        bw = self.bandwidth[pe]
        s = self.bw_spec[pe]
        if s is not None:
            bw = bw * s.segment(t)[0]
        return lat + nbytes / bw

    def _serve_time(self, t: float) -> float:
        poll = self.inp.master_poll_interval
        if poll <= 0:
            return t
        t0 = self.inp.start_time
        return t0 + math.ceil((t - t0) / poll) * poll

    def run(self, scheduler, on_serve=None) -> SimOutcome:
        inp = self.inp
        P, master = self.P, self.master
        prefix, speed, avail = self.prefix, self.speed, self.avail
        fixed_req, fixed_rep = self.fixed_req, self.fixed_rep
        req_bytes, rep_bytes = inp.request_msg_bytes, inp.reply_msg_bytes
        max_t = inp.max_sim_time
        record = inp.record_log
        log = self.log
        status, sent_at, finish = self.status, self.sent_at, self.finish
        cost = self.message_cost
        serve_time = self._serve_time
        heap: list = []
        push, pop = heapq.heappush, heapq.heappop
        pending = {}  # pe -> (size, exec_start, request_sent)

        initial = inp.initial or [("send", inp.start_time)] * P
        for pe, entry in enumerate(initial):
            if entry is None:
                continue
            if entry[0] == "send":
                t = entry[1]
                sent_at[pe] = t
                finish[pe] = max(finish[pe], t)
                c = 0.0 if pe == master else cost(pe, t, req_bytes, fixed_req)
                ta = t + c if pe != master else t
                status[pe] = ("arrive", ta, t)
                push(heap, (ta if pe == master else serve_time(ta), _SERVE, pe))
            elif entry[0] == "arrive":
                _, ta, t = entry
                sent_at[pe] = t
                finish[pe] = max(finish[pe], t)
                status[pe] = ("arrive", ta, t)
                push(heap, (ta if pe == master else serve_time(ta), _SERVE, pe))
            else:
                raise SimError(f"bad initial entry {entry!r}")

        # Schedulers that ignore completions let a chunk's end and the PE's next
        # request be handled as one event: the service event is pushed with
        # the same heap key it would otherwise get once the chunk is done.
        merge = on_serve is None and not getattr(scheduler, "needs_done", True)
        done = {}  # merged mode: pe -> (size, exec_end)
        cut = False
        events = 0
        while heap:
            t, kind, pe = heap[0]
            if t > max_t:
                cut = True
                break
            pop(heap)
            events += 1
            self.now = t
            if kind == _DONE:
                size, x0, sent = pending.pop(pe)
                self.finished_tasks += size
                finish[pe] = t
                scheduler.chunk_done(pe, size, t - x0, t - sent, t)
                sent_at[pe] = t
                if pe == master:
                    status[pe] = ("arrive", t, t)
                    push(heap, (t, _SERVE, pe))
                else:
                    ta = t + cost(pe, t, req_bytes, fixed_req)
                    status[pe] = ("arrive", ta, t)
                    push(heap, (serve_time(ta), _SERVE, pe))
                continue
            if merge and pe in done:
                size, x1 = done.pop(pe)
                self.finished_tasks += size
                finish[pe] = x1
                sent_at[pe] = x1
                events += 1
            elif on_serve is not None:
                on_serve(self, t)
            chunk = scheduler.next_chunk(pe, t)
            if chunk is None:
                status[pe] = None
                continue
            start, size, tech = chunk
            if start != self.scheduled_upto:
                raise SimError(f"scheduler issued start {start}, expected {self.scheduled_upto}")
            self.scheduled_upto = start + size
            x0 = t if pe == master else t + cost(pe, t, rep_bytes, fixed_rep)
            flops = prefix[start + size] - prefix[start]
            spec = avail[pe]
            if spec is None:
                x1 = x0 + flops / speed[pe]
            else:
                x1 = work_until(spec, speed[pe], x0, flops)
            if record:
                log.append(ChunkRecord(t, pe, start, size, tech, x0, x1, flops, sent_at[pe]))
            status[pe] = ("exec", x1, x0, flops)
            if merge:
                done[pe] = (size, x1)
                if pe == master:
                    push(heap, (x1, _SERVE, pe))
                else:
                    push(heap, (serve_time(x1 + cost(pe, x1, req_bytes, fixed_req)), _SERVE, pe))
            else:
                pending[pe] = (size, x0, sent_at[pe])
                push(heap, (x1, _DONE, pe))

        if cut:
            # chunks that ended before the cutoff still count in merged mode
            for pe, (size, x1) in done.items():
                if x1 <= max_t:
                    self.finished_tasks += size
                    finish[pe] = x1
                    events += 1
        self.events += events
        if cut:
            sim_time = max_t
        else:
            sim_time = max(finish)
        return SimOutcome(sim_time, self.finished_tasks, list(finish), log, not cut, events)


def simulate(inp: SimInput) -> SimOutcome:
    """Run one loop execution; stops early at ``max_sim_time`` with partial progress."""
    engine = LoopEngine(inp)
    state = dls.init_state(inp.technique, inp.dls_config(), first=inp.start_task,
                           stats=inp.stats, weights=inp.weights)
    out = engine.run(StateScheduler(state, inp.collect_stats))
    out.stats = state.stats
    out.weights = dls.current_weights(state)
    return out


@dataclass
class TimeSteppingInput:
    workloads: list  # one Workload per step
    steps: int
    carry_weights: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise SimError("steps must be >= 1")
        if len(self.workloads) not in (1, self.steps):
            raise SimError("give one workload, or one per step")

    def workload(self, k: int) -> Workload:
        return self.workloads[0] if len(self.workloads) == 1 else self.workloads[k]


def simulate_time_stepping(ts: TimeSteppingInput, base: SimInput) -> list[SimOutcome]:
    """Run ``ts.steps`` loops back to back; step k+1 starts when step k ends.

    Per-PE measurements (and thus adaptive weights) carry over iff
    ``ts.carry_weights``; chunk schedules always restart over the step's N.
    """
    outcomes = []
    t = base.start_time
    stats, weights = base.stats, base.weights
    for k in range(ts.steps):
        inp = replace(base, workload=ts.workload(k), start_task=0, start_time=t,
                      initial=None, stats=stats, weights=weights)
        if inp.max_sim_time <= t:
            break
        out = simulate(inp)
        outcomes.append(out)
        if not out.completed:
            break
        t = out.sim_time
        if ts.carry_weights:
            stats, weights = out.stats, out.weights
    return outcomes


def percent_error(t_native: float, t_sim: float) -> float:
    """Relative deviation of a simulated time from the native one, in percent."""
    if not t_native > 0:
        raise SimError("t_native must be positive")
    return 100.0 * (t_native - t_sim) / t_native


REPORTED_ERROR_BAND = (0.95, 2.99)


def within_reported_band(t_native: float, t_sim: float, band=REPORTED_ERROR_BAND) -> bool:
    e = percent_error(t_native, t_sim)
    return band[0] <= e <= band[1]


def write_outcome(out: SimOutcome, outdir, prefix: str = "") -> None:
    """summary.csv (sim_time,finished_tasks), finish.csv (pe,finish_time), chunks.csv."""
    d = Path(outdir)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / f"{prefix}summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sim_time", "finished_tasks"])
        w.writerow([repr(out.sim_time), out.finished_tasks])
    with open(d / f"{prefix}finish.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pe", "finish_time"])
        for pe, f in enumerate(out.per_pe_finish):
            w.writerow([pe, repr(f)])
    write_chunk_log(out.chunk_log, d / f"{prefix}chunks.csv")


def write_chunk_log(log, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_issued", "pe", "start", "size", "technique"])
        for r in log:
            w.writerow([repr(r.time_issued), r.pe, r.start, r.size, r.technique])


def read_chunk_log(path) -> list[tuple[float, int, int, int, str]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(float(r["time_issued"]), int(r["pe"]), int(r["start"]), int(r["size"]), r["technique"])
            for r in rows]
