import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from loopsched import simas
from loopsched.dls import Technique
from loopsched.perturbation import get_scenario
from loopsched.platform import load_platform, make_platform
from loopsched.simas import (DEFAULT_PORTFOLIO, SimasConfig, SimasController, SimasError, Snapshot, _Batch,
                             estimate_system_state, rank, run_time_stepping_with_simas, run_with_simas,
                             selection_percentages, simas_setup, simas_update)
from loopsched.simcore import SimInput, SimOutcome, TimeSteppingInput, simulate
from loopsched.workload import Workload, generate_workload, standard_workload_specs

EXCLUDED = {Technique.GSS, Technique.TSS, Technique.FAC}


def outcome(t, n):
    return SimOutcome(t, n, [t], [], True)


def small_input(scenario="np", n=6000, kind="gamma", platform=None):
    plat = platform or make_platform([4e9] * 4 + [1e9] * 4)
    wl = generate_workload(standard_workload_specs(1)[kind], n)
    return SimInput(plat, wl, get_scenario(scenario, 1))


def test_standard_portfolio():
    assert len(DEFAULT_PORTFOLIO) == 10
    assert not EXCLUDED & set(DEFAULT_PORTFOLIO)
    assert SimasConfig().default_technique is Technique.AWF_B


@pytest.mark.parametrize("kw", [dict(portfolio=()), dict(poll_interval=60.0), dict(poll_interval=0.0),
                                dict(portfolio=("SS", "SS")), dict(prediction_horizon=0.0)])
def test_config_validation(kw):
    with pytest.raises(SimasError):
        SimasConfig(**kw)


def test_min_remaining_at_least_p():
    with pytest.raises(SimasError):
        SimasController(SimasConfig(min_remaining=2), small_input())


def test_rank_rules():
    port = (Technique.SS, Technique.AWF_B, Technique.WF)
    assert rank({Technique.SS: outcome(120, 100), Technique.AWF_B: outcome(100, 100)}, port) is Technique.AWF_B
    # equal outcomes: first in portfolio order wins
    assert rank({Technique.WF: outcome(100, 100), Technique.AWF_B: outcome(100, 100)}, port) is Technique.AWF_B
    # horizon cutoffs: more finished tasks beats an earlier time
    assert rank({Technique.SS: outcome(50, 90), Technique.WF: outcome(50, 95)}, port) is Technique.WF


def test_setup_launches_full_portfolio():
    base = small_input()
    tech, ctrl = simas_setup(SimasConfig(), base)
    assert tech is Technique.AWF_B
    assert ctrl.pending is not None and set(ctrl.pending.outcomes) == set(DEFAULT_PORTFOLIO)
    assert ctrl.events[0].reason == "default"
    with pytest.raises(SimasError):
        simas_setup(SimasConfig(), base, Snapshot(0.0, base.workload.N, [], [], []))


def _ctrl_with_pending(outcomes, current=Technique.SS, portfolio=(Technique.SS, Technique.AWF_B)):
    ctrl = SimasController(SimasConfig(portfolio=portfolio, default_technique=current), small_input())
    ctrl.pending = _Batch(0.0, 0.0, outcomes, 0, 0.0)
    ctrl.last_launch = 0.0
    return ctrl


def _snap(start_task, now=1.0):
    return Snapshot(now, start_task, [("send", now)] * 8, None, None)


def test_update_switch_and_keep():
    ctrl = _ctrl_with_pending({Technique.SS: outcome(120, 100), Technique.AWF_B: outcome(100, 100)})
    assert simas_update(ctrl, 1.0, _snap(10)) is Technique.AWF_B
    assert ctrl.events[-1].reason == "switch" and ctrl.events[-1].previous is Technique.SS
    ctrl = _ctrl_with_pending({Technique.SS: outcome(90, 100), Technique.AWF_B: outcome(100, 100)})
    assert simas_update(ctrl, 1.0, _snap(10)) is None
    assert ctrl.events[-1].reason == "keep"


def test_update_launch_rules():
    ctrl = _ctrl_with_pending({})
    N, P = ctrl.base.workload.N, ctrl.P
    ctrl.pending = None
    # too early
    assert simas_update(ctrl, 10.0, _snap(0, 10.0)) is None and ctrl.pending is None
    # remaining <= P: no new batch
    assert simas_update(ctrl, 60.0, _snap(N - P, 60.0)) is None and ctrl.pending is None
    # poll interval gates the next check
    assert simas_update(ctrl, 62.0, _snap(0, 62.0)) is None and ctrl.pending is None
    simas_update(ctrl, 66.0, _snap(0, 66.0))
    assert ctrl.pending is not None and ctrl.launches == 1


def test_prediction_delay_holds_results():
    cfg = SimasConfig(portfolio=(Technique.SS, Technique.WF), default_technique=Technique.SS, prediction_delay=7.0)
    ctrl = SimasController(cfg, small_input())
    ctrl.setup(_snap(0, 0.0))
    assert ctrl.update(5.0, lambda: _snap(0, 5.0), 100) is None and ctrl.pending is not None
    ctrl.update(10.0, lambda: _snap(0, 10.0), 100)
    assert ctrl.pending is None and ctrl.events[-1].reason in ("keep", "switch")


def test_estimator_unperturbed():
    base = small_input()
    out = simulate(base)
    recs = [(r.pe, r.exec_start, r.exec_end, r.flops) for r in out.chunk_log]
    f = estimate_system_state(recs, base.platform, out.sim_time, out.sim_time)
    assert f == pytest.approx([1.0] * 8, abs=1e-6)


def test_estimator_active_window():
    plat = make_platform([1e9] * 4)
    wl = Workload(np.full(4000, 1e8))
    out = simulate(SimInput(plat, wl, get_scenario("pea-cs"), "SS", record_log=True))
    # a window fully inside [50, 100): chunks there run at quarter speed
    recs = [(r.pe, r.exec_start, r.exec_end, r.flops) for r in out.chunk_log]
    inside = [r for r in recs if 60.0 <= r[1] and r[2] <= 90.0]
    f = estimate_system_state(inside, plat, 90.0, 30.0)
    assert f == pytest.approx([0.25] * 4, rel=1e-6)
    # a window spanning the end of the active half mixes both speeds
    g = estimate_system_state(recs, plat, 110.0, 30.0)
    assert all(0.25 < x < 1.0 for x in g)


def test_estimator_without_records():
    plat = make_platform([1e9] * 3)
    assert estimate_system_state([], plat, 10.0, 5.0) == [1.0, 1.0, 1.0]
    assert estimate_system_state([(0, 0.0, 1.0, 5e9)], plat, 1.0, 5.0)[0] == 1.5


def best_single(base, portfolio=DEFAULT_PORTFOLIO):
    return min(simulate(replace(base, technique=t, record_log=False)).t_par for t in portfolio)


def test_homogeneous_np_near_best():
    plat = make_platform([1e9] * 8)
    base = SimInput(plat, Workload(np.full(20000, 2e7)))
    out, events = run_with_simas(base, SimasConfig(), oracle_mode=True)
    assert out.t_par <= 1.02 * best_single(base)
    assert out.finished_tasks == 20000


@pytest.mark.parametrize("oracle", [True, False])
@pytest.mark.parametrize("scenario", ["np", "pea-cs", "all-em"])
def test_live_run_properties(oracle, scenario):
    base = small_input(scenario, n=8000)
    cfg = SimasConfig(poll_interval=1.0, resim_interval=4.0)
    out, events = run_with_simas(base, cfg, oracle_mode=oracle)
    assert out.finished_tasks == base.workload.N and out.completed
    assert all(ev.chosen in set(DEFAULT_PORTFOLIO) | {cfg.default_technique} for ev in events)
    assert not any(ev.chosen in EXCLUDED for ev in events)
    # segments account for every iteration once, in order
    assert sum(n for _, n in out.extra["segments"]) == base.workload.N
    techs = [r.technique for r in sorted(out.chunk_log, key=lambda r: r.start)]
    runs = [t for i, t in enumerate(techs) if i == 0 or techs[i - 1] != t]
    assert runs == [t.value for t, n in out.extra["segments"] if n > 0]
    times = [ev.time for ev in events]
    assert times == sorted(times)
    assert out.extra["prediction_events"] > 0 and out.extra["launches"] >= 1


def test_single_technique_portfolio():
    base = small_input("pea-cm", n=5000)
    cfg = SimasConfig(portfolio=(Technique.GSS,), poll_interval=1.0, resim_interval=3.0)
    out, events = run_with_simas(base, cfg, oracle_mode=True)
    assert all(ev.chosen is Technique.GSS for ev in events if ev.reason != "default")
    assert selection_percentages(events) == {Technique.GSS: 100.0}


def test_reselecting_current_is_untouched():
    base = small_input("pea-es", n=5000)
    cfg = SimasConfig(portfolio=(Technique.AWF_B,), poll_interval=1.0, resim_interval=2.0)
    out, events = run_with_simas(base, cfg, oracle_mode=True)
    plain = simulate(replace(base, technique=Technique.AWF_B))
    assert [ev.reason for ev in events[1:]] and all(ev.reason == "keep" for ev in events[1:])
    assert [(r.pe, r.start, r.size, r.exec_end) for r in out.chunk_log] == \
        [(r.pe, r.start, r.size, r.exec_end) for r in plain.chunk_log]


def test_non_blocking_and_deterministic():
    base = small_input("all-es", n=6000)
    cfg = SimasConfig(poll_interval=1.0, resim_interval=3.0)
    a, ea = run_with_simas(base, cfg, oracle_mode=False)
    b, eb = run_with_simas(base, replace(cfg, event_cost=1.0), oracle_mode=False)
    with ThreadPoolExecutor(2) as ex:
        c, ec = run_with_simas(base, cfg, oracle_mode=False, executor=ex)
    assert a.per_pe_finish == b.per_pe_finish == c.per_pe_finish
    assert [(e.time, e.chosen) for e in ea] == [(e.time, e.chosen) for e in eb] == [(e.time, e.chosen) for e in ec]
    assert b.extra["prediction_compute_s"] > a.extra["prediction_compute_s"]


def test_failed_prediction_is_dropped(monkeypatch, caplog):
    real = simas.simulate

    def flaky(inp):
        if inp.technique is Technique.SS:
            raise RuntimeError("boom")
        return real(inp)

    monkeypatch.setattr(simas, "simulate", flaky)
    base = small_input(n=3000)
    out, events = run_with_simas(base, SimasConfig(portfolio=(Technique.SS, Technique.WF)), oracle_mode=True)
    assert out.finished_tasks == 3000
    assert all(Technique.SS not in ev.predictions for ev in events)
    assert "boom" in caplog.text


def test_time_stepping_restarts_with_wf():
    base = small_input(n=3000)
    ts = TimeSteppingInput([base.workload], 3)
    outs = run_time_stepping_with_simas(ts, base, SimasConfig(), oracle_mode=True)
    assert len(outs) == 3
    for o in outs:
        sel = o.extra["selections"]
        assert sel[0].reason == "default" and sel[0].chosen is Technique.WF
        assert o.extra["launches"] >= 1
    assert outs[1].sim_time > outs[0].sim_time


def test_horizon_limits_predictions():
    base = small_input(n=8000)
    out, events = run_with_simas(base, SimasConfig(prediction_horizon=0.5), oracle_mode=True)
    preds = events[1].predictions
    assert all(t <= 0.5 + 1e-12 for t, _ in preds.values())
    assert all(n < 8000 for _, n in preds.values())
