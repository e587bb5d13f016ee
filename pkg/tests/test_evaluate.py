import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_latency_bundle
from modemguard.evaluate import (
    ABResult, ArmResult, OutageMetrics, check_safety, classifier_report, confusion_report, lead_times,
    onsets_match, outage_metrics, read_detail, render_report, run_ab,
)
from modemguard.preprocess import TrainingSequence
from modemguard.service import ActionPolicy, Decision, DecisionEvent
from modemguard.sim import GroundTruthEvent, Outage, SimConfig

POLICY = ActionPolicy()
FIELDS = ("one_modem_disconnections", "dual_modem_disconnections", "network_disconnectivity_events",
          "manual_actions", "automated_actions", "mean_response_time")


def ev(wan, t, decision=Decision.RESTART_ISSUED, score=0.1):
    return DecisionEvent(wan, t, score, decision, (t - 50, t))


# ---------------------------------------------------------------- outage metrics


def test_outage_metrics_counts():
    outs = [Outage("cpe00-wan0", 100, 400, "drop"), Outage("cpe00-wan1", 300, 600, "drop"),
            Outage("cpe00-wan1", 1000, 1010, "restart"), Outage("cpe01-wan0", 0, 300, "drop")]
    m = outage_metrics(outs, ["cpe00-wan0", "cpe00-wan1", "cpe01-wan0", "cpe01-wan1"], 3600)
    assert m.one_modem_disconnections == 3
    assert m.dual_modem_disconnections == 1 == m.network_disconnectivity_events
    assert m.mean_response_time == pytest.approx((300 * 3 + 10) / 4)


def test_touching_outages_are_not_dual():
    outs = [Outage("cpe00-wan0", 0, 300, "drop"), Outage("cpe00-wan1", 300, 600, "drop")]
    assert outage_metrics(outs, ["cpe00-wan0", "cpe00-wan1"], 600).dual_modem_disconnections == 0


def test_zero_hazard_gives_zero_table():
    cfg = SimConfig(duration=3 * 3600, n_vessels=2, hazard_degrade=0.0, hazard_weak_radio=0.0)
    (r,) = run_ab(cfg, make_latency_bundle(pivot=80.0), POLICY, [1])
    for arm in (r.baseline, r.treated):
        assert all(getattr(arm.metrics, f) == 0 for f in FIELDS)


def test_oracle_policy_bounds():
    cfg = SimConfig(duration=12 * 3600, n_vessels=4)
    results = run_ab(cfg, None, POLICY, [3, 4], oracle=True)
    assert sum(r.baseline.metrics.dual_modem_disconnections for r in results) > 0
    for r in results:
        assert onsets_match(r.baseline.truth, r.treated.truth)
        assert r.baseline.metrics.mean_response_time == 300.0
        assert r.treated.metrics.dual_modem_disconnections == 0
        assert r.treated.metrics.mean_response_time == 10.0
        assert r.treated.metrics.automated_actions == len(r.treated.truth)


def test_model_arm_fairness_and_action_count():
    cfg = SimConfig(duration=6 * 3600, n_vessels=2)
    (r,) = run_ab(cfg, make_latency_bundle(pivot=80.0), POLICY, [7])
    assert onsets_match(r.baseline.truth, r.treated.truth)
    issued = sum(1 for e in r.treated.events if e.decision is Decision.RESTART_ISSUED)
    assert r.treated.metrics.automated_actions == issued > 0
    assert r.baseline.metrics.automated_actions == 0 and r.baseline.events == []
    assert check_safety(r.treated.events, r.treated.outages, POLICY) == []
    assert r.treated.metrics.one_modem_disconnections <= r.baseline.metrics.one_modem_disconnections


def test_onsets_match_detects_difference():
    a = [GroundTruthEvent("w0", 10)]
    assert onsets_match(a, [GroundTruthEvent("w0", 10, 40)])
    assert not onsets_match(a, [GroundTruthEvent("w0", 15)])


# ---------------------------------------------------------------- safety audit


def test_check_safety_clean_log():
    events = [ev("cpe00-wan0", 1000), ev("cpe00-wan0", 1600), ev("cpe00-wan1", 1000, Decision.NONE, 0.9)]
    assert check_safety(events, [], POLICY) == []


def test_check_safety_flags_cooldown_and_sibling_and_order():
    outs = [Outage("cpe00-wan1", 900, 1200, "drop")]
    events = [ev("cpe00-wan0", 1000), ev("cpe00-wan0", 1300), ev("cpe00-wan0", 1200, Decision.NONE, 0.9)]
    problems = check_safety(events, outs, POLICY)
    assert len(problems) == 3
    assert any("sibling down" in p for p in problems)
    assert any("cooldown" in p for p in problems)
    assert any("before" in p for p in problems)
    assert len(check_safety(events, outs, ActionPolicy(sibling_guard=False))) == 2


def test_failed_restart_is_not_an_action():
    events = [ev("cpe00-wan0", 1000, Decision.RESTART_FAILED), ev("cpe00-wan0", 1010)]
    assert check_safety(events, [], POLICY) == []


# ---------------------------------------------------------------- classifier metrics


def test_confusion_perfect():
    rep = confusion_report(np.array([0.1, 0.9, 0.8, 0.2]), np.array([0, 1, 1, 0]), 0.5)
    assert rep.confusion == [[2, 0], [0, 2]]
    assert rep.accuracy == rep.balanced_accuracy == 1.0
    assert rep.precision == {0: 1.0, 1: 1.0} and rep.recall == {0: 1.0, 1: 1.0}


def test_confusion_constant_majority():
    y = np.array([1] * 90 + [0] * 10)
    rep = confusion_report(np.full(100, 0.99), y, 0.5)
    assert rep.accuracy == pytest.approx(0.9)
    assert rep.balanced_accuracy == pytest.approx(0.5)
    assert math.isnan(rep.precision[0]) and rep.recall[0] == 0.0


def test_confusion_threshold_one_flags_everything():
    y = np.array([1] * 90 + [0] * 10)
    rep = confusion_report(np.full(100, 0.99), y, 1.0)
    assert rep.recall[0] == 1.0 and rep.recall[1] == 0.0


def test_confusion_empty():
    with pytest.raises(ValueError):
        confusion_report(np.array([]), np.array([]), 0.5)


def test_classifier_report_and_lead_times(latency_bundle):
    x_bad = np.zeros((5, 6))
    x_bad[4] = 200.0
    x_ok = np.zeros((5, 6))
    x_ok[4] = 20.0
    test = [TrainingSequence(x_bad, 0, "w0", 0, 50), TrainingSequence(x_ok, 1, "w0", 60, 110)]
    events = [ev("w0", 1030, Decision.NONE, 0.9), ev("w0", 1060, Decision.NONE, 0.2), ev("w0", 1070)]
    truth = [GroundTruthEvent("w0", 1000, 1600), GroundTruthEvent("w1", 1000)]
    rep = classifier_report(latency_bundle, test, events, truth)
    assert rep.balanced_accuracy == 1.0
    assert rep.lead_times == [60]
    assert rep.lead_time_summary()["mean"] == 60.0
    assert lead_times(events, [GroundTruthEvent("w0", 1065, 1066)], 0.5) == []


# ---------------------------------------------------------------- report


def _ab(seed, base: dict, treated: dict, duration=3600):
    return ABResult(seed, ArmResult(OutageMetrics(duration=duration, **base), [], []),
                    ArmResult(OutageMetrics(duration=duration, **treated), [], []))


def test_render_empty_is_header_only():
    text, summary, detail = render_report([])
    assert summary.count("\n") == 1 and summary.startswith("arm,")
    assert detail.count("\n") == 1 and detail.startswith("seed,arm,")
    assert "Before" in text


def test_render_single_seed_two_rows(tmp_path):
    r = _ab(1, dict(one_modem_disconnections=4, mean_response_time=300.0),
            dict(automated_actions=3, mean_response_time=10.0))
    text, summary, detail = render_report([r])
    rows = summary.strip().splitlines()[1:]
    assert len(rows) == 2
    assert rows[0].startswith("Before") and ",4.0," in rows[0]
    (tmp_path / "d.csv").write_text(detail)
    (back,) = read_detail(tmp_path / "d.csv")
    assert back.baseline.metrics == r.baseline.metrics and back.treated.metrics == r.treated.metrics


def test_report_csv_is_deterministic_and_order_free():
    rs = [_ab(s, dict(dual_modem_disconnections=s), dict()) for s in (3, 1, 2)]
    assert render_report(rs) == render_report(list(reversed(rs)))


@given(st.lists(st.tuples(st.integers(0, 50), st.floats(0, 300)), min_size=1, max_size=8))
def test_aggregate_is_mean(vals):
    rs = [_ab(i, dict(dual_modem_disconnections=d, mean_response_time=t), dict()) for i, (d, t) in enumerate(vals)]
    _, summary, _ = render_report(rs)
    before = summary.splitlines()[1].split(",")
    header = summary.splitlines()[0].split(",")
    assert float(before[header.index("Two Modems Disconnected")]) == pytest.approx(np.mean([d for d, _ in vals]))
    assert float(before[header.index("Response Time (s)")]) == pytest.approx(np.mean([t for _, t in vals]), abs=1e-6)
