import dataclasses
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modemguard.errors import ConfigError, NotFoundError
from modemguard.sim import (
    ForcedDegradation, ManualOperator, OracleRestartPolicy, Phase, RestartStatus, SimConfig, Simulator,
    load_outages, load_truth, run_scenario, save_outages, save_truth,
)
from modemguard.sim.scenario import OUTAGE_PHASES
from modemguard.telemetry import haversine_km, reference_topology

QUIET = dict(hazard_degrade=0.0, hazard_weak_radio=0.0)
T0 = SimConfig().start_time


def forced(at=1000, dwell=600, **kw):
    return SimConfig(duration=3600, n_vessels=1, forced_events=(ForcedDegradation("cpe00-wan0", at, dwell),),
                     **{**QUIET, **kw})


def test_quiet_scenario_emits_every_tick():
    res = run_scenario(SimConfig(duration=600, n_vessels=1, **QUIET))
    parts = res.partitions()
    assert sorted(parts) == ["cpe00-wan0", "cpe00-wan1"]
    assert all(len(p) == 120 for p in parts.values())
    assert res.truth == [] and res.outages == []


def test_forced_degradation_drops_then_reconnects():
    res = run_scenario(forced())
    (ev,) = res.truth
    assert (ev.onset, ev.drop_time) == (T0 + 1000, T0 + 1600)
    (o,) = res.outages
    assert (o.wan_id, o.start, o.end, o.kind) == ("cpe00-wan0", T0 + 1600, T0 + 1900, "drop")
    times = [s.time for s in res.partitions()["cpe00-wan0"]]
    assert not any(T0 + 1600 <= t < T0 + 1900 for t in times)
    assert T0 + 1900 in times


def test_oracle_restart_replaces_drop_with_short_restart():
    res = run_scenario(forced(), OracleRestartPolicy())
    (ev,) = res.truth
    assert ev.drop_time is None
    (o,) = res.outages
    assert (o.start, o.end, o.kind) == (T0 + 1000, T0 + 1010, "restart")


def _run_until(sim, t):
    while sim.now < t:
        sim.step()


def test_restart_on_degraded_modem():
    sim = Simulator(forced())
    _run_until(sim, T0 + 1100)
    assert sim.state("cpe00-wan0").phase is Phase.DEGRADED
    assert sim.apply_restart("cpe00-wan0") is RestartStatus.OK
    assert sim.state("cpe00-wan0").phase is Phase.RESTARTING
    _run_until(sim, T0 + 1110)
    assert sim.state("cpe00-wan0").phase is Phase.HEALTHY
    assert sim.state("cpe00-wan0").degradation_onset is None


def test_restart_during_reconnect_is_ignored():
    sim = Simulator(forced())
    _run_until(sim, T0 + 1700)
    st_before = dataclasses.replace(sim.state("cpe00-wan0"))
    assert st_before.phase is Phase.RECONNECTING
    assert sim.apply_restart("cpe00-wan0") is RestartStatus.IGNORED
    assert sim.state("cpe00-wan0") == st_before
    _run_until(sim, T0 + 1900)
    assert sim.state("cpe00-wan0").phase is Phase.HEALTHY


def test_second_restart_one_second_later_is_ignored():
    sim = Simulator(SimConfig(duration=600, n_vessels=1, **QUIET))
    sim.step()
    assert sim.apply_restart("cpe00-wan1", T0) is RestartStatus.OK
    assert sim.apply_restart("cpe00-wan1", T0 + 1) is RestartStatus.IGNORED


def test_restart_unknown_modem():
    sim = Simulator(SimConfig(duration=60, n_vessels=1))
    with pytest.raises(NotFoundError):
        sim.apply_restart("nope-wan0")


def test_config_errors_name_field():
    with pytest.raises(ConfigError) as e:
        SimConfig.from_dict({"reconnect_seconds": 7})
    assert e.value.field == "sim.reconnect_seconds"
    with pytest.raises(ConfigError) as e:
        SimConfig.from_dict({"hazard_degrade": 2})
    assert e.value.field == "sim.hazard_degrade"
    with pytest.raises(ConfigError):
        SimConfig.from_dict({"warp": 9})


def test_config_dict_round_trip():
    cfg = SimConfig(seed=3, degraded_dwell_bounds=(400, 900), forced_events=(ForcedDegradation("cpe00-wan1", 50, 300),))
    assert SimConfig.from_dict(cfg.to_dict()) == cfg


def _farthest(res):
    sites = reference_topology().site_coords
    return max(min(haversine_km((s.latitude, s.longitude), c) for c in sites) for s in res.telemetry)


def test_vessels_stay_in_area():
    assert _farthest(run_scenario(SimConfig(duration=6 * 3600, n_vessels=3, glitch_probability=0.0))) < 20.0


def test_glitches_produce_outliers():
    assert _farthest(run_scenario(SimConfig(duration=6 * 3600, n_vessels=3, glitch_probability=0.01))) > 30.0


def test_manual_operator_lag_bounds():
    op = ManualOperator(seed=4)
    res = run_scenario(SimConfig(seed=4, duration=12 * 3600, n_vessels=4), op)
    onsets = {(e.wan_id, e.onset) for e in res.truth}
    assert 0 < len(op.actions) <= len(res.truth)
    for w, t in op.actions:
        assert any(w == ow and 540 <= t - on <= 725 for ow, on in onsets)


def test_file_round_trips(tmp_path):
    res = run_scenario(SimConfig(seed=2, duration=6 * 3600, n_vessels=2))
    save_outages(tmp_path / "o.csv", res.outages)
    save_truth(tmp_path / "t.ndjson", res.truth)
    assert load_outages(tmp_path / "o.csv") == res.outages
    assert load_truth(tmp_path / "t.ndjson") == res.truth


# ---------------------------------------------------------------- properties

small = st.builds(lambda seed, dur, nv: SimConfig(seed=seed, duration=dur, n_vessels=nv, hazard_degrade=2e-3),
                  st.integers(0, 2 ** 63), st.integers(0, 4 * 3600), st.integers(1, 2))


@settings(max_examples=8)
@given(small)
def test_determinism(cfg):
    a, b = run_scenario(cfg), run_scenario(cfg)
    assert a.telemetry == b.telemetry and a.truth == b.truth and a.outages == b.outages


@settings(max_examples=8)
@given(small)
def test_conservation_and_silence(cfg):
    res = run_scenario(cfg)
    drops = [o for o in res.outages if o.kind == "drop"]
    for ev in res.truth:
        if ev.drop_time is not None:
            assert ev.onset < ev.drop_time
            match = [o for o in drops if o.wan_id == ev.wan_id and o.start == ev.drop_time]
            assert len(match) == 1 and match[0].duration == cfg.reconnect_seconds
    parts = res.partitions()
    for o in res.outages:
        assert not any(o.start <= s.time < o.end for s in parts.get(o.wan_id, ()))


@settings(max_examples=6)
@given(small, st.integers(0, 2 ** 32))
def test_phase_invariants_under_random_restarts(cfg, seed):
    rnd = random.Random(seed)
    sim = Simulator(cfg)
    entered: dict[str, tuple[Phase, int]] = {}
    while not sim.done:
        t, _ = sim.step()
        for w, m in sim.modems.items():
            st_ = m.state
            assert (st_.degradation_onset is not None) == (st_.phase in (Phase.DEGRADED, Phase.DROPPED))
            prev = entered.get(w)
            if prev and prev[0] in (Phase.RECONNECTING, Phase.RESTARTING) and st_.phase is not prev[0]:
                dwell = cfg.reconnect_seconds if prev[0] is Phase.RECONNECTING else cfg.restart_seconds
                assert t - prev[1] == dwell
            if prev is None or prev[0] is not st_.phase:
                entered[w] = (st_.phase, st_.phase_entered_at)
            if rnd.random() < 0.01:
                phase = st_.phase
                status = sim.apply_restart(w, t)
                assert status is (RestartStatus.IGNORED if phase in OUTAGE_PHASES else RestartStatus.OK)
                if status is RestartStatus.OK:
                    entered[w] = (Phase.RESTARTING, t)
