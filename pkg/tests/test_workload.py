import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loopsched.workload import (DistributionSpec, Workload, WorkloadError, generate_workload, load_flop_file,
                                parse_gen, standard_workload_specs, store_flop_file, workload_sigma)


def test_constant():
    w = generate_workload(DistributionSpec("constant", {"value": 2.3e8}), 5)
    assert w.flops.tolist() == [2.3e8] * 5


def test_uniform_range():
    w = generate_workload(standard_workload_specs(0)["uniform"], 400_000)
    assert w.N == 400_000
    assert w.flops.min() >= 1e3 and w.flops.max() <= 7e8


def test_normal_mean():
    w = generate_workload(standard_workload_specs(3)["normal"], 400_000)
    # independent routine: python's statistics over the plain list
    assert abs(statistics.fmean(w.flops.tolist()) - 9.5e8) / 9.5e8 < 0.01


def test_untruncated_exponential_mean():
    w = generate_workload(DistributionSpec("exponential", {"rate": 1 / 3e8}, 11), 100_000)
    assert abs(statistics.fmean(w.flops.tolist()) - 3e8) / 3e8 < 0.02


@pytest.mark.parametrize("kind", ["uniform", "normal", "exponential", "gamma"])
def test_truncation_and_determinism(kind):
    spec = standard_workload_specs(7)[kind]
    a = generate_workload(spec, 20_000)
    b = generate_workload(spec, 20_000)
    assert np.array_equal(a.flops, b.flops)
    lo, hi = spec.bounds
    assert a.flops.min() >= lo and a.flops.max() <= hi
    c = generate_workload(standard_workload_specs(8)[kind], 20_000)
    assert not np.array_equal(a.flops, c.flops)


def test_gamma_shape_mean():
    # truncation at [4.1e6, 2.7e9] barely moves the mean k*theta = 2e8
    w = generate_workload(standard_workload_specs(1)["gamma"], 200_000)
    assert statistics.fmean(w.flops.tolist()) == pytest.approx(2e8, rel=0.02)


def test_flop_file(tmp_path):
    f = tmp_path / "w.flops"
    f.write_text("1000\n2000\n")
    w = load_flop_file(f)
    assert w.N == 2 and w.flops.tolist() == [1000.0, 2000.0]


def test_flop_round_trip(tmp_path):
    w = generate_workload(standard_workload_specs(2)["gamma"], 5000)
    f = tmp_path / "g.flops"
    store_flop_file(w, f)
    assert load_flop_file(f).flops.tolist() == w.flops.tolist()


def test_flop_file_large(tmp_path):
    f = tmp_path / "big.flops"
    store_flop_file(generate_workload(standard_workload_specs(0)["constant"], 400_000), f)
    assert load_flop_file(f).N == 400_000


@pytest.mark.parametrize("content, needle", [
    ("", "empty"),
    ("10\n-3\n", ":2: nonpositive"),
    ("10\nabc\n", ":2: malformed"),
    ("0\n", ":1: nonpositive"),
])
def test_flop_file_errors(tmp_path, content, needle):
    f = tmp_path / "bad.flops"
    f.write_text(content)
    with pytest.raises(WorkloadError, match=needle):
        load_flop_file(f)


def test_sigma():
    assert workload_sigma(generate_workload(standard_workload_specs()["constant"], 100), 1e10) == 0.0
    assert workload_sigma(Workload(np.array([1e9, 3e9])), 1e9) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(WorkloadError):
        workload_sigma(Workload(np.array([1.0])), 0)


@pytest.mark.parametrize("kind, params", [
    ("uniform", {"lo": 5, "hi": 1}),
    ("normal", {"mu": 1, "sigma": -1}),
    ("gamma", {"shape": 2}),
    ("weibull", {}),
    ("exponential", {"rate": 0}),
])
def test_invalid_specs(kind, params):
    with pytest.raises(WorkloadError):
        DistributionSpec(kind, params)


def test_parse_gen():
    s = parse_gen("gamma,2,1e8,4.1e6,2.7e9,42")
    assert s.kind == "gamma" and s.seed == 42 and s.params["scale"] == 1e8
    assert parse_gen("constant,2.3e8,0").params == {"value": 2.3e8}
    for bad in ("", "gamma,2", "uniform,1,2", "constant,x,1"):
        with pytest.raises(WorkloadError):
            parse_gen(bad)


def test_workload_validation():
    with pytest.raises(WorkloadError):
        Workload(np.array([]))
    with pytest.raises(WorkloadError):
        Workload(np.array([1.0, math.nan]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3000), st.integers(0, 2**64 - 1))
def test_generated_length_and_positive(n, seed):
    w = generate_workload(standard_workload_specs(seed)["exponential"], n)
    assert w.N == n and (w.flops > 0).all()
