"""Closed-loop A/B evaluation, offline classifier metrics and the before/after report."""

from __future__ import annotations

import csv
import io
import logging
import statistics
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .nn.model import ModelBundle, predict_proba
from .preprocess import PreprocessConfig, TrainingSequence, stack
from .service import ActionPolicy, Decision, DecisionEvent, DecisionService, ServiceHook
from .sim.scenario import GroundTruthEvent, OracleRestartPolicy, Outage, SimConfig, run_scenario, with_seed
from .telemetry import sibling_of

logger = logging.getLogger(__name__)


@dataclass
class OutageMetrics:
    one_modem_disconnections: int = 0
    dual_modem_disconnections: int = 0
    network_disconnectivity_events: int = 0
    manual_actions: int = 0
    automated_actions: int = 0
    mean_response_time: float = 0.0
    duration: int = 0


def _overlap_episodes(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> int:
    """Number of maximal intervals during which both modems are down."""
    both = sorted((max(s1, s2), min(e1, e2)) for s1, e1 in a for s2, e2 in b if max(s1, s2) < min(e1, e2))
    count, cur_end = 0, None
    for s, e in both:
        if cur_end is None or s > cur_end:
            count += 1
            cur_end = e
        else:
            cur_end = max(cur_end, e)
    return count


def outage_metrics(outages: Sequence[Outage], wan_ids: Iterable[str], duration: int,
                   automated_actions: int = 0, manual_actions: int = 0) -> OutageMetrics:
    """Before/after outage counts from an outage log.

    Response time is the mean outage length, from link interruption to the
    modem being back in service, over drops and restarts alike.
    """
    by_wan: dict[str, list[tuple[int, int]]] = {w: [] for w in wan_ids}
    for o in outages:
        by_wan.setdefault(o.wan_id, []).append((o.start, o.end))
    dual = 0
    seen = set()
    for w in sorted(by_wan):
        s = sibling_of(w)
        pair = tuple(sorted((w, s)))
        if pair in seen or s not in by_wan:
            continue
        seen.add(pair)
        dual += _overlap_episodes(by_wan[w], by_wan[s])
    durations = [o.duration for o in outages]
    return OutageMetrics(
        one_modem_disconnections=sum(1 for o in outages if o.kind == "drop"),
        dual_modem_disconnections=dual,
        network_disconnectivity_events=dual,
        manual_actions=manual_actions,
        automated_actions=automated_actions,
        mean_response_time=float(np.mean(durations)) if durations else 0.0,
        duration=duration,
    )


@dataclass
class ArmResult:
    metrics: OutageMetrics
    truth: list[GroundTruthEvent]
    outages: list[Outage]
    events: list[DecisionEvent] = field(default_factory=list)


@dataclass
class ABResult:
    seed: int
    baseline: ArmResult
    treated: ArmResult


def run_arm(config: SimConfig, bundle: ModelBundle | None, policy: ActionPolicy,
            preprocess: PreprocessConfig = PreprocessConfig(), oracle: bool = False) -> ArmResult:
    """One scenario run: no policy when ``bundle`` is None and not ``oracle``."""
    wans = config.wan_ids()
    if oracle:
        hook = OracleRestartPolicy()
        res = run_scenario(config, hook)
        m = outage_metrics(res.outages, wans, config.duration, automated_actions=len(hook.actions))
        return ArmResult(m, res.truth, res.outages)
    if bundle is None:
        res = run_scenario(config)
        return ArmResult(outage_metrics(res.outages, wans, config.duration), res.truth, res.outages)
    svc = DecisionService(bundle, policy, preprocess, config.topology)
    res = run_scenario(config, ServiceHook(svc))
    n_auto = sum(1 for e in svc.log if e.decision is Decision.RESTART_ISSUED)
    m = outage_metrics(res.outages, wans, config.duration, automated_actions=n_auto)
    return ArmResult(m, res.truth, res.outages, list(svc.log))


def run_ab(config: SimConfig, bundle: ModelBundle | None, policy: ActionPolicy, seeds: Sequence[int],
           preprocess: PreprocessConfig = PreprocessConfig(), oracle: bool = False) -> list[ABResult]:
    """Run each seed twice: passive recovery only, then with the restart policy attached."""
    out = []
    for seed in sorted(seeds):
        cfg = with_seed(config, seed)
        base = run_arm(cfg, None, policy, preprocess)
        treated = run_arm(cfg, bundle, policy, preprocess, oracle=oracle)
        out.append(ABResult(seed, base, treated))
    return out


# --------------------------------------------------------------------------- log checks


def check_safety(events: Sequence[DecisionEvent], outages: Sequence[Outage], policy: ActionPolicy) -> list[str]:
    """Mechanical audit of a decision log against the outage log; returns violations."""
    problems = []
    last_restart: dict[str, int] = {}
    last_time: dict[str, int] = {}
    down: dict[str, list[Outage]] = {}
    for o in outages:
        down.setdefault(o.wan_id, []).append(o)
    for ev in events:
        if ev.wan_id in last_time and ev.time < last_time[ev.wan_id]:
            problems.append(f"{ev.wan_id}: event time {ev.time} before {last_time[ev.wan_id]}")
        last_time[ev.wan_id] = ev.time
        if ev.decision is not Decision.RESTART_ISSUED:
            continue
        prev = last_restart.get(ev.wan_id)
        if prev is not None and ev.time - prev < policy.cooldown:
            problems.append(f"{ev.wan_id}: restart at {ev.time} within cooldown of {prev}")
        last_restart[ev.wan_id] = ev.time
        if policy.sibling_guard:
            for o in down.get(sibling_of(ev.wan_id), ()):
                if o.start <= ev.time < o.end:
                    problems.append(f"{ev.wan_id}: restart at {ev.time} while sibling down [{o.start}, {o.end})")
    return problems


def onsets_match(a: Sequence[GroundTruthEvent], b: Sequence[GroundTruthEvent]) -> bool:
    return sorted((e.wan_id, e.onset) for e in a) == sorted((e.wan_id, e.onset) for e in b)


# --------------------------------------------------------------------------- classifier metrics


@dataclass
class ClassifierReport:
    threshold: float
    confusion: list[list[int]]  # rows: true 0/1, cols: predicted 0/1
    precision: dict[int, float]
    recall: dict[int, float]
    accuracy: float
    balanced_accuracy: float
    lead_times: list[int] = field(default_factory=list)

    def lead_time_summary(self) -> dict:
        if not self.lead_times:
            return {"n": 0}
        lt = np.array(self.lead_times, dtype=float)
        return {"n": len(lt), "mean": float(lt.mean()), "median": float(np.median(lt)),
                "p90": float(np.percentile(lt, 90)), "max": float(lt.max())}


def confusion_report(p: np.ndarray, y: np.ndarray, threshold: float) -> ClassifierReport:
    if len(y) == 0:
        raise ValueError("empty test set")
    y = np.asarray(y).astype(int)
    pred = (np.asarray(p) >= threshold).astype(int)
    cm = [[int(np.sum((y == t) & (pred == q))) for q in (0, 1)] for t in (0, 1)]
    precision, recall = {}, {}
    for c in (0, 1):
        tp = cm[c][c]
        col = cm[0][c] + cm[1][c]
        row = cm[c][0] + cm[c][1]
        precision[c] = tp / col if col else float("nan")
        recall[c] = tp / row if row else float("nan")
    acc = (cm[0][0] + cm[1][1]) / len(y)
    present = [recall[c] for c in (0, 1) if cm[c][0] + cm[c][1]]
    return ClassifierReport(threshold, cm, precision, recall, acc, float(np.mean(present)))


def lead_times(events: Sequence[DecisionEvent], truth: Sequence[GroundTruthEvent], threshold: float,
               horizon: int = 1200) -> list[int]:
    """Seconds from each degradation onset to the first sub-threshold score on that modem."""
    by_wan: dict[str, list[DecisionEvent]] = {}
    for ev in events:
        by_wan.setdefault(ev.wan_id, []).append(ev)
    out = []
    for gt in truth:
        end = gt.drop_time if gt.drop_time is not None else gt.onset + horizon
        for ev in by_wan.get(gt.wan_id, ()):
            if gt.onset <= ev.time <= end and ev.score < threshold:
                out.append(ev.time - gt.onset)
                break
    return out


def classifier_report(bundle: ModelBundle, test_set: Sequence[TrainingSequence],
                      events: Sequence[DecisionEvent] = (), truth: Sequence[GroundTruthEvent] = (),
                      threshold: float | None = None) -> ClassifierReport:
    if not test_set:
        raise ValueError("empty test set")
    tau = bundle.threshold if threshold is None else threshold
    X, y = stack(test_set)
    rep = confusion_report(predict_proba(bundle, X), y, tau)
    if events and truth:
        rep.lead_times = lead_times(events, truth, tau)
    return rep


# --------------------------------------------------------------------------- report

REPORT_COLUMNS = (
    ("One Modem Disconnected", "one_modem_disconnections"),
    ("Two Modems Disconnected", "dual_modem_disconnections"),
    ("Network Disconnectivity", "network_disconnectivity_events"),
    ("Manual Actions Taken", "manual_actions"),
    ("Automated Actions Taken", "automated_actions"),
    ("Response Time (s)", "mean_response_time"),
)
FOOTER = ("Complaints per Month omitted: the simulator has no model of user complaints. "
          "Rows are means over seeds; counts are per scenario of the stated duration.")


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".") if isinstance(x, float) else str(x)


def aggregate(metrics: Sequence[OutageMetrics]) -> dict[str, tuple[float, float, float]]:
    """(mean, min, max) per reported column."""
    out = {}
    for _, attr in REPORT_COLUMNS:
        vals = [float(getattr(m, attr)) for m in metrics]
        out[attr] = (statistics.fmean(vals), min(vals), max(vals)) if vals else (0.0, 0.0, 0.0)
    return out


def render_report(results: Sequence[ABResult]) -> tuple[str, str, str]:
    """Return (text table, report.csv content, detail.csv content)."""
    results = sorted(results, key=lambda r: r.seed)
    names = [n for n, _ in REPORT_COLUMNS]
    header = ["arm"] + names + ["seeds", "duration_s"]

    summary = io.StringIO()
    w = csv.writer(summary, lineterminator="\n")
    w.writerow(header)
    detail = io.StringIO()
    dw = csv.writer(detail, lineterminator="\n")
    dw.writerow(["seed", "arm"] + names + ["duration_s"])

    lines = []
    width = max(len(n) for n in names)
    if results:
        duration = results[0].baseline.metrics.duration
        rows = [("Before (passive recovery)", [r.baseline.metrics for r in results]),
                ("After (LSTM policy)", [r.treated.metrics for r in results])]
        for label, ms in rows:
            agg = aggregate(ms)
            w.writerow([label] + [repr(round(agg[a][0], 6)) for _, a in REPORT_COLUMNS] + [len(ms), duration])
        for r in results:
            for arm, m in (("before", r.baseline.metrics), ("after", r.treated.metrics)):
                dw.writerow([r.seed, arm] + [getattr(m, a) if a != "mean_response_time"
                                             else repr(round(m.mean_response_time, 6))
                                             for _, a in REPORT_COLUMNS] + [m.duration])
        lines.append(f"Network performance before/after, mean over {len(results)} seed(s) "
                     f"[min..max], scenario duration {duration} s")
        cells = {label: aggregate(ms) for label, ms in rows}
        lines.append(f"{'':<{width}}  {'Before':>24}  {'After':>24}")
        for name, attr in REPORT_COLUMNS:
            b, a = cells[rows[0][0]][attr], cells[rows[1][0]][attr]
            fb = f"{_fmt(b[0])} [{_fmt(b[1])}..{_fmt(b[2])}]"
            fa = f"{_fmt(a[0])} [{_fmt(a[1])}..{_fmt(a[2])}]"
            lines.append(f"{name:<{width}}  {fb:>24}  {fa:>24}")
    else:
        lines.append(f"{'':<{width}}  {'Before':>24}  {'After':>24}")
    lines.append(FOOTER)
    return "\n".join(lines) + "\n", summary.getvalue(), detail.getvalue()


def read_detail(path: str | Path) -> list[ABResult]:
    """Rebuild per-seed metrics from a detail.csv (logs are not kept)."""
    by_seed: dict[int, dict[str, OutageMetrics]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            m = OutageMetrics(duration=int(row["duration_s"]))
            for name, attr in REPORT_COLUMNS:
                setattr(m, attr, float(row[name]) if attr == "mean_response_time" else int(row[name]))
            by_seed.setdefault(int(row["seed"]), {})[row["arm"]] = m
    return [ABResult(s, ArmResult(d["before"], [], []), ArmResult(d["after"], [], [])) for s, d in sorted(by_seed.items())]
