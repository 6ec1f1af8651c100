"""Heterogeneous computing platform: one host per core, star network.

Platform files are line oriented::

    # comment
    host <id> <class> <speed_flops>
    link <host_id> <bandwidth_Bps> <latency_s>
    master <host_id>

Every host needs exactly one link, declared after the host, and the file has
exactly one ``master`` line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Sequence


class PlatformError(ValueError):
    """Raised for malformed platform files or invalid platform contents."""


@dataclass(frozen=True)
class Host:
    id: str
    core_speed: float  # FLOP/s, unperturbed
    core_class: str = "generic"


@dataclass(frozen=True)
class Link:
    host_id: str
    bandwidth: float  # bytes/s
    latency: float  # seconds


@dataclass(frozen=True)
class Platform:
    hosts: tuple[Host, ...]
    links: tuple[Link, ...]
    master_host_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hosts", tuple(self.hosts))
        object.__setattr__(self, "links", tuple(self.links))
        validate(self)

    @property
    def P(self) -> int:
        return len(self.hosts)

    @property
    def speeds(self) -> list[float]:
        return [h.core_speed for h in self.hosts]

    def with_speeds(self, speeds: Sequence[float]) -> "Platform":
        """Copy of the platform with new nominal core speeds (same order)."""
        if len(speeds) != self.P:
            raise PlatformError(f"expected {self.P} speeds, got {len(speeds)}")
        hosts = tuple(replace(h, core_speed=float(s)) for h, s in zip(self.hosts, speeds))
        return Platform(hosts, self.links, self.master_host_index)


def validate(platform: Platform) -> None:
    hosts, links = platform.hosts, platform.links
    if len(hosts) < 2:
        raise PlatformError(f"a platform needs at least 2 hosts (master + worker), got {len(hosts)}")
    seen = set()
    for h in hosts:
        if h.id in seen:
            raise PlatformError(f"duplicate host id {h.id!r}")
        seen.add(h.id)
        if not (h.core_speed > 0 and math.isfinite(h.core_speed)):
            raise PlatformError(f"host {h.id!r}: nonpositive speed {h.core_speed!r}")
    if len(links) != len(hosts):
        raise PlatformError(f"{len(hosts)} hosts but {len(links)} links")
    for h, link in zip(hosts, links):
        if link.host_id != h.id:
            raise PlatformError(f"link for {link.host_id!r} does not match host {h.id!r} at the same position")
        if not (link.bandwidth > 0 and math.isfinite(link.bandwidth)):
            raise PlatformError(f"link {link.host_id!r}: nonpositive bandwidth {link.bandwidth!r}")
        if not (link.latency >= 0 and math.isfinite(link.latency)):
            raise PlatformError(f"link {link.host_id!r}: negative latency {link.latency!r}")
    if not 0 <= platform.master_host_index < len(hosts):
        raise PlatformError(f"master index {platform.master_host_index} out of range")


def relative_core_weights(platform: Platform) -> list[float]:
    """Per-host weight ``speed_i * P / sum(speed)``; the weights sum to P."""
    total = math.fsum(platform.speeds)
    P = platform.P
    return [s * P / total for s in platform.speeds]


def _number(tok: str, lineno: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise PlatformError(f"line {lineno}: {what} {tok!r} is not a number") from None


def parse_platform(text: str) -> Platform:
    hosts: list[Host] = []
    links: dict[str, Link] = {}
    master: str | None = None
    host_line: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind = tok[0]
        if kind == "host":
            if len(tok) != 4:
                raise PlatformError(f"line {lineno}: expected 'host <id> <class> <speed_flops>'")
            speed = _number(tok[3], lineno, "speed")
            if not speed > 0:
                raise PlatformError(f"line {lineno}: nonpositive speed {speed!r} for host {tok[1]!r}")
            if tok[1] in host_line:
                raise PlatformError(f"line {lineno}: duplicate host id {tok[1]!r}")
            host_line[tok[1]] = lineno
            hosts.append(Host(tok[1], speed, tok[2]))
        elif kind == "link":
            if len(tok) != 4:
                raise PlatformError(f"line {lineno}: expected 'link <host_id> <bandwidth_Bps> <latency_s>'")
            if tok[1] not in host_line:
                raise PlatformError(f"line {lineno}: link for undeclared host {tok[1]!r}")
            if tok[1] in links:
                raise PlatformError(f"line {lineno}: second link for host {tok[1]!r}")
            bw = _number(tok[2], lineno, "bandwidth")
            lat = _number(tok[3], lineno, "latency")
            if not bw > 0:
                raise PlatformError(f"line {lineno}: nonpositive bandwidth {bw!r}")
            if not lat >= 0:
                raise PlatformError(f"line {lineno}: negative latency {lat!r}")
            links[tok[1]] = Link(tok[1], bw, lat)
        elif kind == "master":
            if len(tok) != 2:
                raise PlatformError(f"line {lineno}: expected 'master <host_id>'")
            if master is not None:
                raise PlatformError(f"line {lineno}: more than one master line")
            master = tok[1]
        else:
            raise PlatformError(f"line {lineno}: unknown record {kind!r}")
    missing = [h.id for h in hosts if h.id not in links]
    if missing:
        raise PlatformError(f"host {missing[0]!r} (line {host_line[missing[0]]}) has no link")
    if master is None:
        raise PlatformError("missing 'master' line")
    ids = [h.id for h in hosts]
    if master not in ids:
        raise PlatformError(f"master {master!r} is not a declared host")
    return Platform(tuple(hosts), tuple(links[i] for i in ids), ids.index(master))


def format_platform(platform: Platform) -> str:
    lines = []
    for h in platform.hosts:
        lines.append(f"host {h.id} {h.core_class} {h.core_speed!r}")
    for link in platform.links:
        lines.append(f"link {link.host_id} {link.bandwidth!r} {link.latency!r}")
    lines.append(f"master {platform.hosts[platform.master_host_index].id}")
    return "\n".join(lines) + "\n"


BUILTIN = {"mini128": "minihpc128.plat", "mini416": "minihpc416.plat"}


def load_platform(path) -> Platform:
    """Load a platform file; ``mini128`` / ``mini416`` name the bundled fixtures."""
    if str(path) in BUILTIN:
        text = resources.files("loopsched").joinpath("data", BUILTIN[str(path)]).read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_platform(text)


def store_platform(platform: Platform, path) -> None:
    Path(path).write_text(format_platform(platform), encoding="utf-8")


# Broadwell:KNL core weights 0.817 : 0.183 give a speed ratio of about 4.46.
BROADWELL_SPEED = 1.0e10
KNL_SPEED = BROADWELL_SPEED * 0.183 / 0.817
# 32-byte messages must stay negligible even when bandwidth is scaled by 1e-9.
MINIHPC_BANDWIDTH = 1.0e15
MINIHPC_LATENCY = 2.0e-6


def make_platform(speeds: Sequence[float], *, bandwidth: float = MINIHPC_BANDWIDTH,
                  latency: float = MINIHPC_LATENCY, classes: Sequence[str] | None = None,
                  master: int = 0) -> Platform:
    classes = list(classes) if classes is not None else ["generic"] * len(speeds)
    hosts = tuple(Host(f"pe{i}", float(s), c) for i, (s, c) in enumerate(zip(speeds, classes)))
    links = tuple(Link(h.id, float(bandwidth), float(latency)) for h in hosts)
    return Platform(hosts, links, master)


def minihpc(n_broadwell: int, n_knl: int, **kw) -> Platform:
    speeds = [BROADWELL_SPEED] * n_broadwell + [KNL_SPEED] * n_knl
    classes = ["broadwell"] * n_broadwell + ["knl"] * n_knl
    return make_platform(speeds, classes=classes, **kw)
