"""Chunk calculators for the thirteen loop scheduling techniques.

Every technique is driven through the same two calls: ``next_chunk`` when a PE
asks for work and ``update_stats`` when a PE reports a finished chunk.  The
simulator and the selection sub-simulations use exactly this interface.

All chunk arithmetic rounds up and then caps at the remaining iteration count.
The factoring family (FAC, WF, AWF-*) forms a batch of ``ceil(R/2)``
iterations whenever the previous batch has handed out P chunks.
"""
from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence


class DlsError(ValueError):
    pass


class Technique(str, enum.Enum):
    STATIC = "STATIC"
    SS = "SS"
    FSC = "FSC"
    mFSC = "mFSC"
    GSS = "GSS"
    TSS = "TSS"
    FAC = "FAC"
    WF = "WF"
    AWF_B = "AWF-B"
    AWF_C = "AWF-C"
    AWF_D = "AWF-D"
    AWF_E = "AWF-E"
    AF = "AF"

    def __str__(self):
        return self.value

    @property
    def adaptive(self) -> bool:
        return self in ADAPTIVE


ADAPTIVE = frozenset({Technique.AWF_B, Technique.AWF_C, Technique.AWF_D, Technique.AWF_E, Technique.AF})
AWF = (Technique.AWF_B, Technique.AWF_C, Technique.AWF_D, Technique.AWF_E)
FACTORING = (Technique.FAC, Technique.WF) + AWF
# weight recomputation on every chunk vs. at batch boundaries
PER_CHUNK_UPDATE = frozenset({Technique.AWF_C, Technique.AWF_E})
# AWF-D / AWF-E measure total chunk time (iterations plus acquisition overhead)
TOTAL_TIME_BASIS = frozenset({Technique.AWF_D, Technique.AWF_E})

_BY_NAME = {t.value.upper(): t for t in Technique}
_BY_NAME.update({t.name.upper(): t for t in Technique})


def parse_technique(name: str | Technique) -> Technique:
    if isinstance(name, Technique):
        return name
    try:
        return _BY_NAME[str(name).strip().upper()]
    except KeyError:
        raise DlsError(f"unknown technique {name!r}; known: {', '.join(t.value for t in Technique)}") from None


@dataclass
class DlsConfig:
    N: int
    P: int
    h: Optional[float] = None  # scheduling overhead per chunk, seconds (FSC)
    sigma: Optional[float] = None  # std of iteration time, seconds (FSC)
    static_weights: Optional[Sequence[float]] = None  # WF, sums to P


@dataclass
class PEStats:
    chunks: int = 0
    iters: int = 0
    iter_time: float = 0.0
    chunk_time: float = 0.0
    # sum over chunks of iter_time**2 / size, for the AF variance estimate
    sq_term: float = 0.0

    @property
    def measured(self) -> bool:
        return self.iters > 0 and self.iter_time > 0

    def mean_iter_time(self) -> float:
        return self.iter_time / self.iters

    def iter_variance(self) -> float:
        # each chunk mean x_k = t_k/s_k has variance sigma^2/s_k, so
        # sum_k s_k (x_k - mu)^2 / K estimates sigma^2
        if self.chunks < 2:
            return 0.0
        mu = self.iter_time / self.iters
        return max(0.0, (self.sq_term - mu * self.iter_time) / self.chunks)


@dataclass
class DlsState:
    technique: Technique
    config: DlsConfig
    first: int = 0  # absolute index of the first iteration this state schedules
    scheduled: int = 0
    batch_size: int = 0
    batch_remaining: int = 0  # chunks still to hand out from the current batch
    batch_chunk: int = 0
    tss_first: int = 0
    tss_count: int = 0  # C of the trapezoid
    tss_index: int = 0  # chunks issued so far
    tss_delta: float = 0.0
    fixed_size: int = 0
    weights: list = field(default_factory=list)
    stats: list = field(default_factory=list)
    served: set = field(default_factory=set)
    finished: set = field(default_factory=set)
    weights_stale: bool = False
    # AF: per-PE (mu, var, var/mu, 1/mu), None until measured
    af_terms: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.config.N

    @property
    def P(self) -> int:
        return self.config.P

    @property
    def R(self) -> int:
        return self.config.N - self.scheduled

    def snapshot_stats(self) -> tuple[list, list]:
        return copy.deepcopy(self.stats), list(self.weights)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def fac_chunk_count(N: int, P: int) -> int:
    """Number of chunks FAC hands out for N iterations on P PEs."""
    if N < 1 or P < 1:
        raise DlsError("N and P must be >= 1")
    R, count = N, 0
    while R > 0:
        chunk = _ceil_div(_ceil_div(R, 2), P)
        for _ in range(P):
            size = min(chunk, R)
            R -= size
            count += 1
            if R == 0:
                break
    return count


def fsc_chunk_size(N: int, P: int, h: float, sigma: float) -> int:
    """Fixed-size chunk (sqrt(2) N h / (sigma P sqrt(ln P)))^(2/3), within [1, ceil(N/P)]."""
    cap = -(-N // P)
    if sigma == 0 or P == 1:
        return cap
    k = (math.sqrt(2.0) * N * h / (sigma * P * math.sqrt(math.log(P)))) ** (2.0 / 3.0)
    return max(1, min(cap, math.ceil(k)))


def _validate(technique: Technique, cfg: DlsConfig) -> None:
    if cfg.N < 1 or cfg.P < 1:
        raise DlsError(f"need N >= 1 and P >= 1, got N={cfg.N}, P={cfg.P}")
    if technique is Technique.FSC:
        if cfg.h is None or cfg.sigma is None:
            raise DlsError("FSC needs the scheduling overhead h and iteration-time sigma")
        if not cfg.h > 0 or cfg.sigma < 0:
            raise DlsError(f"FSC needs h > 0 and sigma >= 0, got h={cfg.h}, sigma={cfg.sigma}")
    if technique is Technique.WF:
        w = cfg.static_weights
        if w is None:
            raise DlsError("WF needs static PE weights")
        if len(w) != cfg.P or any(not x > 0 for x in w):
            raise DlsError("WF weights must be P positive numbers")
        if abs(math.fsum(w) - cfg.P) > 1e-6 * cfg.P:
            raise DlsError(f"WF weights must sum to P={cfg.P}, got {math.fsum(w)}")


def init_state(technique, config: DlsConfig, *, first: int = 0,
               stats: Optional[list] = None, weights: Optional[Sequence[float]] = None) -> DlsState:
    """Fresh scheduling state over ``config.N`` iterations starting at ``first``.

    ``stats``/``weights`` carry per-PE measurements and adaptive weights over
    from an earlier state (technique switch or a new time step).
    """
    technique = parse_technique(technique)
    _validate(technique, config)
    N, P = config.N, config.P
    st = DlsState(technique, config, first=first)
    st.stats = copy.deepcopy(stats) if stats is not None else [PEStats() for _ in range(P)]
    if len(st.stats) != P:
        raise DlsError("carried statistics do not match P")
    if technique is Technique.WF:
        st.weights = [float(w) for w in config.static_weights]
    elif weights is not None:
        st.weights = [float(w) for w in weights]
    else:
        st.weights = [1.0] * P
    if technique is Technique.STATIC:
        st.fixed_size = -(-N // P)
    elif technique is Technique.FSC:
        st.fixed_size = fsc_chunk_size(N, P, config.h, config.sigma)
    elif technique is Technique.mFSC:
        st.fixed_size = -(-N // fac_chunk_count(N, P))
    elif technique is Technique.TSS:
        f, _, C, delta = tss_parameters(N, P)
        st.tss_first, st.tss_count, st.tss_delta = f, C, delta
    if technique is Technique.AF:
        st.af_terms = [_af_terms(s) for s in st.stats]
    if technique in AWF and any(s.measured for s in st.stats):
        st.weights = adaptive_weights(st.stats, technique, st.weights)
    return st


def tss_parameters(N: int, P: int) -> tuple[int, int, int, float]:
    """(first, last, count, delta) of the trapezoid schedule."""
    f = -(-N // (2 * P))
    C = -(-2 * N // (f + 1))
    return f, 1, C, (f - 1) / (C - 1) if C > 1 else 0.0


def _tss_size(f: int, C: int, k: int) -> int:
    """round(f - k*delta) with halves rounded up, at least 1; exact integer arithmetic."""
    if C <= 1:
        return f
    d = 2 * (C - 1)
    return max(1, (2 * f * (C - 1) - 2 * k * (f - 1) + (C - 1)) // d)


def adaptive_weights(stats: Sequence[PEStats], technique: Technique, current: Sequence[float]) -> list[float]:
    """Harmonic weights from per-iteration time; unmeasured PEs keep their weight.

    Measured PEs share the weight mass they held before, so the total stays P.
    """
    total_basis = technique in TOTAL_TIME_BASIS
    inv = {}
    for i, s in enumerate(stats):
        if s.measured:
            t = s.chunk_time if total_basis else s.iter_time
            if t > 0:
                inv[i] = s.iters / t
    if not inv:
        return list(current)
    out = list(current)
    mass = len(current) - math.fsum(current[i] for i in range(len(current)) if i not in inv)
    denom = math.fsum(inv.values())
    for i, v in inv.items():
        out[i] = v * mass / denom
    return out


def _af_terms(s: PEStats):
    if not s.measured:
        return None
    mu, var = s.mean_iter_time(), s.iter_variance()
    return mu, var, var / mu, 1.0 / mu


def _af_chunk(st: DlsState, pe: int) -> int:
    P, R = st.P, st.R
    terms = st.af_terms
    own = terms[pe]
    if own is None:
        return -(-st.N // (4 * P))
    known = [c for c in terms if c is not None]
    D = 0.0
    inv_mu = 0.0
    if len(known) == P:
        for c in terms:
            D += c[2]
            inv_mu += c[3]
    else:
        # unmeasured PEs are assumed to behave like the measured average
        mu_fill = math.fsum(c[0] for c in known) / len(known)
        var_fill = math.fsum(c[1] for c in known) / len(known)
        for c in terms:
            if c is None:
                D += var_fill / mu_fill
                inv_mu += 1.0 / mu_fill
            else:
                D += c[2]
                inv_mu += c[3]
    E = 1.0 / inv_mu
    mu_i = own[0]
    ER = E * R
    k = (D + 2.0 * ER - math.sqrt(D * D + 4.0 * D * ER)) / (2.0 * mu_i)
    return max(1, math.ceil(k))


def next_chunk(st: DlsState, pe: int, now: float = 0.0) -> Optional[tuple[int, int]]:
    """Next chunk ``(start, size)`` for ``pe``, or None when it has no more work."""
    if not 0 <= pe < st.P:
        raise DlsError(f"unknown PE {pe}")
    R = st.config.N - st.scheduled
    if R <= 0 or pe in st.finished:
        st.finished.add(pe)
        return None
    t = st.technique
    if t is Technique.SS:
        size = 1
    elif t is Technique.GSS:
        size = -(-R // st.config.P)
    elif t is Technique.FSC or t is Technique.mFSC:
        size = st.fixed_size
    elif t is Technique.STATIC:
        if pe in st.served:
            st.finished.add(pe)
            return None
        st.served.add(pe)
        size = st.fixed_size
    elif t is Technique.TSS:
        size = _tss_size(st.tss_first, st.tss_count, st.tss_index)
        st.tss_index += 1
    elif t is Technique.AF:
        size = _af_chunk(st, pe)
    else:
        P = st.config.P
        if st.batch_remaining == 0:
            if st.weights_stale:
                st.weights = adaptive_weights(st.stats, t, st.weights)
                st.weights_stale = False
            st.batch_size = -(-R // 2)
            st.batch_chunk = -(-st.batch_size // P)
            st.batch_remaining = P
        st.batch_remaining -= 1
        if t is Technique.FAC:
            size = st.batch_chunk
        else:
            size = max(1, math.ceil(st.weights[pe] * st.batch_size / P))
    if size > R:
        size = R
    start = st.first + st.scheduled
    st.scheduled += size
    return start, size


def update_stats(st: DlsState, pe: int, chunk_size: int, iter_time: float, total_chunk_time: float) -> None:
    """Record a finished chunk; adaptive techniques refresh their weights."""
    if not 0 <= pe < st.P:
        raise DlsError(f"unknown PE {pe}")
    if chunk_size < 1 or iter_time < 0 or total_chunk_time < 0:
        raise DlsError("chunk size must be >= 1 and times >= 0")
    s = st.stats[pe]
    s.chunks += 1
    s.iters += chunk_size
    s.iter_time += iter_time
    s.chunk_time += total_chunk_time
    s.sq_term += iter_time * iter_time / chunk_size
    t = st.technique
    if t is Technique.AF:
        st.af_terms[pe] = _af_terms(s)
    elif t in PER_CHUNK_UPDATE:
        st.weights = adaptive_weights(st.stats, t, st.weights)
    elif t is Technique.AWF_B or t is Technique.AWF_D:
        st.weights_stale = True


def current_weights(st: DlsState) -> list[float]:
    """Weights as of now, including measurements a batch-wise refresh has not used yet."""
    if st.weights_stale:
        return adaptive_weights(st.stats, st.technique, st.weights)
    return list(st.weights)


def is_done(st: DlsState) -> bool:
    return st.scheduled >= st.config.N
