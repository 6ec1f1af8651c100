"""Periodic perturbations of PE availability, link bandwidth and link latency.

A spec is inactive before ``onset``.  After it, every ``period`` starts with an
active window of ``duty * period`` seconds during which the delivered value is
scaled by that period's factor; the rest of the period runs at nominal.

Factors multiply speed and bandwidth and divide latency, so a small factor is
always the more severe one.  Exponential scenarios draw one factor per period
from a counter-based hash of ``(seed, period index)``; evaluation is therefore
pure and order independent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

TARGETS = ("availability", "bandwidth", "latency")
DISTRIBUTIONS = ("constant", "exponential")
FACTOR_FLOOR = 1e-9

_MASK = (1 << 64) - 1


class PerturbationError(ValueError):
    pass


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


@lru_cache(maxsize=1 << 16)
def _period_draw(seed: int, k: int, mean: float) -> float:
    h = _splitmix64(_splitmix64(seed & _MASK) ^ (k & _MASK))
    u = ((h >> 11) + 0.5) * 2.0**-53
    x = -mean * math.log(u)
    return min(1.0, max(FACTOR_FLOOR, x))


@dataclass(frozen=True)
class PerturbationSpec:
    target: str
    distribution: str
    mean_factor: float
    sigma_factor: float = 0.0  # metadata only; exponential draws use mean_factor
    onset: float = 0.0
    period: float = 100.0
    duty: float = 0.5
    seed: int = 0
    hosts: tuple[int, ...] | None = None  # None: every host / link

    def __post_init__(self):
        if self.target not in TARGETS:
            raise PerturbationError(f"unknown target {self.target!r}")
        if self.distribution not in DISTRIBUTIONS:
            raise PerturbationError(f"unknown distribution {self.distribution!r}")
        if not 0 < self.mean_factor <= 1:
            raise PerturbationError(f"mean_factor must be in (0, 1], got {self.mean_factor}")
        if self.sigma_factor < 0:
            raise PerturbationError("sigma_factor must be >= 0")
        if not self.period > 0:
            raise PerturbationError("period must be positive")
        if not 0 < self.duty <= 1:
            raise PerturbationError("duty must be in (0, 1]")
        if self.onset < 0:
            raise PerturbationError("onset must be >= 0")
        if self.hosts is not None:
            object.__setattr__(self, "hosts", tuple(int(h) for h in self.hosts))

    def applies_to(self, host_index: int) -> bool:
        return self.hosts is None or host_index in self.hosts

    def period_factor(self, k: int) -> float:
        if self.distribution == "constant":
            return self.mean_factor
        return _period_draw(self.seed, k, self.mean_factor)

    def factor_at(self, t: float) -> float:
        return factor_at(self, t)

    def segment(self, t: float) -> tuple[float, float]:
        """(factor, end) of the constant piece containing ``t``."""
        if t < self.onset:
            return 1.0, self.onset
        k = math.floor((t - self.onset) / self.period)
        start = self.onset + k * self.period
        edge = start + self.duty * self.period
        if t < edge:
            return self.period_factor(k), edge
        end = start + self.period
        if end <= t:  # float rounding at the period boundary
            return self.segment(end)
        return 1.0, end


def factor_at(spec: PerturbationSpec, t: float) -> float:
    return spec.segment(t)[0]


@dataclass(frozen=True)
class Scenario:
    name: str
    specs: tuple[PerturbationSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        targets = [s.target for s in self.specs]
        if len(set(targets)) != len(targets):
            raise PerturbationError(f"scenario {self.name!r}: more than one spec per target")

    def get(self, target: str) -> PerturbationSpec | None:
        for s in self.specs:
            if s.target == target:
                return s
        return None

    def for_host(self, target: str, host_index: int) -> PerturbationSpec | None:
        s = self.get(target)
        return s if s is not None and s.applies_to(host_index) else None

    def reseeded(self, seed: int) -> "Scenario":
        from dataclasses import replace
        return Scenario(self.name, tuple(replace(s, seed=seed + i) for i, s in enumerate(self.specs)))


NO_PERTURBATION = Scenario("np")

# (distribution, mean, sigma) per intensity; values are fractions of nominal
_TABLE = {
    "availability": {
        "cm": ("constant", 0.75, 0.0),
        "cs": ("constant", 0.25, 0.0),
        "em": ("exponential", 0.78, 24e-5),
        "es": ("exponential", 0.31, 89e-5),
    },
    "bandwidth": {
        "cm": ("constant", 1e-7, 0.0),
        "cs": ("constant", 1e-9, 0.0),
        "em": ("exponential", 1.1e-3, 9e-4),
        "es": ("exponential", 23e-4, 19e-4),
    },
    "latency": {
        "cm": ("constant", 1e-7, 0.0),
        "cs": ("constant", 1e-9, 0.0),
        "em": ("exponential", 1.2e-7, 1.5e-7),
        "es": ("exponential", 2.9e-9, 1.8e-9),
    },
}
_PREFIX = {"availability": "pea", "bandwidth": "bw", "latency": "lat"}
AVAILABILITY_ONSET = 50.0
NETWORK_ONSET = 0.0


def _spec(target: str, intensity: str, seed: int) -> PerturbationSpec:
    dist, mean, sigma = _TABLE[target][intensity]
    onset = AVAILABILITY_ONSET if target == "availability" else NETWORK_ONSET
    return PerturbationSpec(target, dist, mean, sigma, onset, 100.0, 0.5, seed)


def standard_scenarios(seed: int = 0) -> dict[str, Scenario]:
    """np plus {pea,bw,lat,all}-{cm,cs,em,es}: 17 scenarios."""
    out = {"np": NO_PERTURBATION}
    for target in TARGETS:
        for intensity in ("cm", "cs", "em", "es"):
            name = f"{_PREFIX[target]}-{intensity}"
            out[name] = Scenario(name, (_spec(target, intensity, seed),))
    for intensity in ("cm", "cs", "em", "es"):
        # distinct seeds so combined targets do not draw identical factors
        specs = tuple(_spec(t, intensity, seed + i) for i, t in enumerate(TARGETS))
        out[f"all-{intensity}"] = Scenario(f"all-{intensity}", specs)
    return out


def get_scenario(name: str, seed: int = 0) -> Scenario:
    catalog = standard_scenarios(seed)
    if name not in catalog:
        raise PerturbationError(f"unknown scenario {name!r}; known: {', '.join(catalog)}")
    return catalog[name]


def parse_scenario(text: str, name: str = "custom", seed: int = 0) -> Scenario:
    """Lines ``perturb <target> <dist> <mean> <sigma> <onset> <period> <duty> [hosts=i,j,..]``."""
    specs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] != "perturb" or len(tok) not in (8, 9):
            raise PerturbationError(
                f"line {lineno}: expected 'perturb <target> <constant|exponential> "
                "<mean_factor> <sigma_factor> <onset_s> <period_s> <duty> [hosts=..]'")
        hosts = None
        if len(tok) == 9:
            if not tok[8].startswith("hosts="):
                raise PerturbationError(f"line {lineno}: unexpected field {tok[8]!r}")
            hosts = tuple(int(h) for h in tok[8][6:].split(",") if h)
        try:
            mean, sigma, onset, period, duty = (float(x) for x in tok[3:8])
        except ValueError as exc:
            raise PerturbationError(f"line {lineno}: {exc}") from None
        try:
            specs.append(PerturbationSpec(tok[1], tok[2], mean, sigma, onset, period, duty,
                                          seed + len(specs), hosts))
        except PerturbationError as exc:
            raise PerturbationError(f"line {lineno}: {exc}") from None
    return Scenario(name, tuple(specs))


def load_scenario(path, seed: int = 0) -> Scenario:
    p = Path(path)
    return parse_scenario(p.read_text(encoding="utf-8"), p.stem, seed)


def effective_speed(host, host_index: int, scenario: Scenario, t: float) -> float:
    s = scenario.for_host("availability", host_index)
    return host.core_speed * (factor_at(s, t) if s else 1.0)


def effective_bandwidth(link, host_index: int, scenario: Scenario, t: float) -> float:
    s = scenario.for_host("bandwidth", host_index)
    return link.bandwidth * (factor_at(s, t) if s else 1.0)


def effective_latency(link, host_index: int, scenario: Scenario, t: float) -> float:
    s = scenario.for_host("latency", host_index)
    return link.latency / (factor_at(s, t) if s else 1.0)


def work_until(spec: PerturbationSpec | None, speed: float, t0: float, flops: float) -> float:
    """Time at which ``flops`` of work started at ``t0`` completes.

    Solves integral_{t0}^{tf} speed * factor(t) dt = flops over the piecewise
    constant factor trace.  Constant specs skip whole periods at once.
    """
    if flops <= 0:
        return t0
    if spec is None:
        return t0 + flops / speed
    t = t0
    w = flops
    period = spec.period
    per_period = 0.0
    if spec.distribution == "constant":
        per_period = speed * period * (spec.duty * spec.mean_factor + (1.0 - spec.duty))
    while True:
        f, end = spec.segment(t)
        rate = speed * f
        cap = rate * (end - t)
        if cap >= w:
            return t + w / rate
        w -= cap
        t = end
        if per_period and t >= spec.onset:
            k = round((t - spec.onset) / period)
            if spec.onset + k * period == t:
                skip = math.floor(w / per_period) - 1
                if skip > 0:
                    w -= skip * per_period
                    t = spec.onset + (k + skip) * period
