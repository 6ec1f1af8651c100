"""Per-iteration FLOP traces: synthetic generators and FLOP files.

Random draws come from numpy's PCG64 bit stream and are mapped to the target
distribution by inverse CDF, so a (spec, n) pair reproduces the same trace
bit for bit wherever the PCG64 raw stream does.  Truncated kinds reject and
redraw samples outside ``[lo, hi]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

KINDS = ("constant", "uniform", "normal", "exponential", "gamma")

# parameter names per kind, in CLI order
PARAMS = {
    "constant": ("value",),
    "uniform": ("lo", "hi"),
    "normal": ("mu", "sigma", "lo", "hi"),
    "exponential": ("rate", "lo", "hi"),
    "gamma": ("shape", "scale", "lo", "hi"),
}


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class Workload:
    flops: np.ndarray  # float64, one entry per iteration

    def __post_init__(self):
        arr = np.ascontiguousarray(self.flops, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "flops", arr)
        if arr.ndim != 1 or arr.size == 0:
            raise WorkloadError("a workload needs at least one iteration")
        if not np.all(arr > 0) or not np.all(np.isfinite(arr)):
            raise WorkloadError("every iteration needs a positive finite FLOP count")

    @property
    def N(self) -> int:
        return int(self.flops.size)

    def prefix(self) -> np.ndarray:
        """Cumulative FLOP, length N+1, so a chunk [s, s+k) costs prefix[s+k]-prefix[s]."""
        out = np.empty(self.N + 1)
        out[0] = 0.0
        np.cumsum(self.flops, out=out[1:])
        return out

    def __eq__(self, other):
        return isinstance(other, Workload) and np.array_equal(self.flops, other.flops)

    __hash__ = None


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise WorkloadError(f"unknown distribution {self.kind!r}; expected one of {KINDS}")
        missing = [p for p in PARAMS[self.kind] if p not in self.params and p not in ("lo", "hi")]
        if missing:
            raise WorkloadError(f"{self.kind}: missing parameter(s) {missing}")
        p = {k: float(v) for k, v in self.params.items()}
        object.__setattr__(self, "params", p)
        if not 0 <= int(self.seed) < 2**64:
            raise WorkloadError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        for name in ("value", "sigma", "rate", "shape", "scale"):
            if name in p and not p[name] > 0:
                raise WorkloadError(f"{self.kind}: {name} must be positive, got {p[name]}")
        if self.kind == "uniform" or "lo" in p or "hi" in p:
            lo, hi = p.get("lo", 0.0), p.get("hi", math.inf)
            if not (0 <= lo < hi):
                raise WorkloadError(f"{self.kind}: need 0 <= lo < hi, got lo={lo}, hi={hi}")
        if self.kind == "uniform" and p["lo"] <= 0:
            raise WorkloadError("uniform: lo must be positive")

    @property
    def bounds(self) -> tuple[float, float]:
        return self.params.get("lo", 0.0), self.params.get("hi", math.inf)


def _uniforms(bitgen: np.random.PCG64, n: int) -> np.ndarray:
    # 53 random bits per double, shifted off zero: values in (0, 1)
    raw = bitgen.random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _draw(spec: DistributionSpec, u: np.ndarray) -> np.ndarray:
    p = spec.params
    if spec.kind == "uniform":
        return p["lo"] + (p["hi"] - p["lo"]) * u
    if spec.kind == "normal":
        return p["mu"] + p["sigma"] * special.ndtri(u)
    if spec.kind == "exponential":
        return -np.log1p(-u) / p["rate"]
    if spec.kind == "gamma":
        return p["scale"] * special.gammaincinv(p["shape"], u)
    raise AssertionError(spec.kind)


def generate_workload(spec: DistributionSpec, n: int) -> Workload:
    if n < 1:
        raise WorkloadError(f"n must be >= 1, got {n}")
    if spec.kind == "constant":
        return Workload(np.full(n, spec.params["value"]))
    bitgen = np.random.PCG64(int(spec.seed))
    lo, hi = spec.bounds
    out = np.empty(n)
    filled = 0
    for _ in range(10_000):
        want = n - filled
        x = _draw(spec, _uniforms(bitgen, max(want, 1024)))
        x = x[(x >= lo) & (x <= hi) & (x > 0)]
        take = min(want, x.size)
        out[filled:filled + take] = x[:take]
        filled += take
        if filled == n:
            return Workload(out)
    raise WorkloadError(f"{spec.kind}: truncation window [{lo}, {hi}] rejects almost every sample")


def standard_workload_specs(seed: int = 0) -> dict[str, DistributionSpec]:
    """The five standard synthetic workloads."""
    return {
        "constant": DistributionSpec("constant", {"value": 2.3e8}, seed),
        "uniform": DistributionSpec("uniform", {"lo": 1e3, "hi": 7e8}, seed),
        "normal": DistributionSpec("normal", {"mu": 9.5e8, "sigma": 7e7, "lo": 6e8, "hi": 1.3e9}, seed),
        "exponential": DistributionSpec("exponential", {"rate": 1 / 3e8, "lo": 9.48e2, "hi": 4.5e9}, seed),
        "gamma": DistributionSpec("gamma", {"shape": 2.0, "scale": 1e8, "lo": 4.1e6, "hi": 2.7e9}, seed),
    }


def parse_gen(text: str) -> DistributionSpec:
    """Parse ``KIND,P1,P2,...,SEED`` (parameters in PARAMS order, bounds optional)."""
    parts = [s.strip() for s in text.split(",") if s.strip()]
    if not parts:
        raise WorkloadError("empty generator spec")
    kind = parts[0].lower()
    if kind not in KINDS:
        raise WorkloadError(f"unknown distribution {kind!r}")
    names = PARAMS[kind]
    values = parts[1:]
    required = [n for n in names if n not in ("lo", "hi")] if kind != "uniform" else list(names)
    if len(values) not in (len(required) + 1, len(names) + 1):
        raise WorkloadError(f"{kind}: expected {','.join(required)}[,lo,hi],SEED")
    try:
        seed = int(values[-1])
        nums = [float(v) for v in values[:-1]]
    except ValueError as exc:
        raise WorkloadError(f"bad generator spec {text!r}: {exc}") from None
    return DistributionSpec(kind, dict(zip(names, nums)), seed)


def load_flop_file(path) -> Workload:
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            try:
                v = float(s)
            except ValueError:
                raise WorkloadError(f"{path}:{lineno}: malformed FLOP count {s!r}") from None
            if not (v > 0 and math.isfinite(v)):
                raise WorkloadError(f"{path}:{lineno}: nonpositive FLOP count {s!r}")
            values.append(v)
    if not values:
        raise WorkloadError(f"{path}: empty FLOP file")
    return Workload(np.array(values))


def store_flop_file(workload: Workload, path) -> None:
    # repr round-trips float64 exactly
    Path(path).write_text("".join(f"{v!r}\n" for v in workload.flops.tolist()), encoding="utf-8")


def workload_sigma(workload: Workload, speed: float) -> float:
    """Population standard deviation of per-iteration times at ``speed``."""
    if not speed > 0:
        raise WorkloadError("speed must be positive")
    t = workload.flops / speed
    if t.min() == t.max():
        return 0.0  # np.std leaves rounding residue on identical values
    return float(np.std(t))
