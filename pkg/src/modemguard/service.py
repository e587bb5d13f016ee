"""Streaming anomaly scoring and restart decisions.

Samples are cleaned with the same rules as the offline pipeline, downsampled
on the fly and scored once per completed downsampled point (stride 1). A
restart is issued when the last ``k`` scores are below the threshold, the
modem is out of its cooldown, and (with the sibling guard on) its sibling
reported at the same tick with a healthy score.

Sibling status at tick ``t`` is only known once the sibling's own sample for
``t`` has arrived, so a decision that depends on it is held until then; it is
resolved as suppressed if the stream moves past ``t`` without that sample.
"""

from __future__ import annotations

import json
import logging
import socket
import time as _time
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Protocol

import numpy as np

from .errors import ConfigError
from .nn.model import ModelBundle, predict_proba
from .preprocess import PreprocessConfig, block_mean, feature_rows
from .telemetry import (
    ActionRecord, ActionSource, ModemSample, SiteTopology, modem_slot, nearest_site_km, sibling_of,
)

logger = logging.getLogger(__name__)


class Decision(str, Enum):
    NONE = "none"
    SUPPRESSED_COOLDOWN = "suppressed_cooldown"
    SUPPRESSED_SIBLING = "suppressed_sibling"
    RESTART_ISSUED = "restart_issued"
    RESTART_FAILED = "restart_failed"


@dataclass(frozen=True)
class ActionPolicy:
    threshold: float | None = None  # None: use the bundle's threshold
    cooldown: int = 600
    sibling_guard: bool = True
    consecutive_hits: int = 2
    restart_seconds: int = 10

    def validate(self) -> "ActionPolicy":
        if self.consecutive_hits < 1:
            raise ConfigError("policy.consecutive_hits must be >= 1", field="policy.consecutive_hits")
        if self.cooldown < self.restart_seconds:
            raise ConfigError("policy.cooldown must be >= restart duration", field="policy.cooldown")
        if self.threshold is not None and not (0.0 <= self.threshold <= 1.0):
            raise ConfigError("policy.threshold must be in [0, 1]", field="policy.threshold")
        return self


@dataclass(frozen=True)
class SiblingStatus:
    connected: bool
    latest_score: float | None


@dataclass
class DecisionEvent:
    wan_id: str
    time: int
    score: float
    decision: Decision
    window: tuple[int, int]

    def to_dict(self) -> dict:
        return {"wan_id": self.wan_id, "time": self.time, "score": self.score,
                "decision": self.decision.value, "window": list(self.window)}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionEvent":
        return cls(str(d["wan_id"]), int(d["time"]), float(d["score"]), Decision(d["decision"]),
                   (int(d["window"][0]), int(d["window"][1])))


def evaluate_policy(scores: Iterable[float], policy: ActionPolicy, threshold: float,
                    sibling: SiblingStatus | None, now: int, last_action_at: int | None) -> Decision:
    """Pure restart decision for one modem at time ``now``."""
    recent = list(scores)[-policy.consecutive_hits:]
    if len(recent) < policy.consecutive_hits or any(s >= threshold for s in recent):
        return Decision.NONE
    if last_action_at is not None and now - last_action_at < policy.cooldown:
        return Decision.SUPPRESSED_COOLDOWN
    if policy.sibling_guard:
        if (sibling is None or not sibling.connected or sibling.latest_score is None
                or sibling.latest_score < threshold):
            return Decision.SUPPRESSED_SIBLING
    return Decision.RESTART_ISSUED


class RestartEndpoint(Protocol):
    def restart(self, wan_id: str, time: int) -> str: ...


class SimulatorEndpoint:
    """In-process command channel to a running simulator."""

    def __init__(self, sim):
        self.sim = sim

    def restart(self, wan_id: str, time: int) -> str:
        from .errors import NotFoundError
        try:
            return self.sim.apply_restart(wan_id, time).value
        except NotFoundError:
            return "not_found"


class StreamEndpoint:
    """Newline-delimited JSON commands over a pair of text streams."""

    def __init__(self, reader: IO[str], writer: IO[str]):
        self.reader = reader
        self.writer = writer

    def restart(self, wan_id: str, time: int) -> str:
        self.writer.write(json.dumps({"wan_id": wan_id, "time": time}) + "\n")
        self.writer.flush()
        line = self.reader.readline()
        if not line:
            raise ConnectionError("command stream closed")
        return str(json.loads(line)["status"])


class TcpEndpoint:
    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.addr = (host, port)
        self.timeout = timeout
        self._sock = None
        self._stream = None

    def restart(self, wan_id: str, time: int) -> str:
        if self._stream is None:
            self._sock = socket.create_connection(self.addr, timeout=self.timeout)
            f = self._sock.makefile("rw", encoding="utf-8", newline="\n")
            self._stream = StreamEndpoint(f, f)
        try:
            return self._stream.restart(wan_id, time)
        except (OSError, ValueError):
            self.close()
            raise

    def close(self):
        if self._sock is not None:
            self._sock.close()
        self._sock = self._stream = None


class _ModemWindow:
    __slots__ = ("wan_id", "slot", "last_time", "last_valid", "last_valid_time", "block", "block_t0",
                 "down", "down_times", "scores", "latest_score", "last_action_at", "reported_at")

    def __init__(self, wan_id: str, L: int, k: int):
        self.wan_id = wan_id
        self.slot = modem_slot(wan_id)
        self.last_time: int | None = None
        self.last_valid: np.ndarray | None = None
        self.last_valid_time: int | None = None
        self.block: list[np.ndarray] = []
        self.block_t0 = 0
        self.down: deque = deque(maxlen=L)
        self.down_times: deque = deque(maxlen=L)
        self.scores: deque = deque(maxlen=k)
        self.latest_score: float | None = None
        self.last_action_at: int | None = None
        self.reported_at: int | None = None

    def reset_segment(self):
        self.block.clear()
        self.down.clear()
        self.down_times.clear()
        self.scores.clear()


@dataclass
class _Pending:
    time: int
    score: float
    window: tuple[int, int]
    scores: tuple[float, ...]  # score history as of this window


class DecisionService:
    def __init__(self, bundle: ModelBundle, policy: ActionPolicy = ActionPolicy(),
                 preprocess: PreprocessConfig = PreprocessConfig(), topology: SiteTopology | None = None,
                 endpoint: RestartEndpoint | None = None):
        self.bundle = bundle
        self.policy = policy.validate()
        self.cfg = preprocess.validate()
        self.topology = topology
        self.endpoint = endpoint
        self.threshold = bundle.threshold if policy.threshold is None else policy.threshold
        self.windows: dict[str, _ModemWindow] = {}
        self.pending: dict[str, list[_Pending]] = {}  # per modem, in window order
        self.actions: list[ActionRecord] = []
        self.log: list[DecisionEvent] = []
        self.rejections: Counter = Counter()
        self.out_of_order = 0
        self.clock: int | None = None
        if bundle.config.seq_len != self.cfg.seq_len:
            raise ConfigError(f"model seq_len {bundle.config.seq_len} != preprocess.seq_len {self.cfg.seq_len}",
                              field="preprocess.seq_len")

    # ---- cleaning, identical rules to preprocess.clean

    def _reject_reason(self, s: ModemSample) -> str | None:
        c = self.cfg
        if not (c.rsrp_range[0] <= s.rsrp <= c.rsrp_range[1]):
            return "range:rsrp"
        if not (c.sinr_range[0] <= s.sinr <= c.sinr_range[1]):
            return "range:sinr"
        if not (c.rsrq_range[0] <= s.rsrq <= c.rsrq_range[1]):
            return "range:rsrq"
        if not (c.latency_range[0] < s.latency <= c.latency_range[1]):
            return "range:latency"
        if self.topology is not None:
            if abs(s.latitude) > 90 or abs(s.longitude) > 180:
                return "geo"
            if nearest_site_km((s.latitude, s.longitude), self.topology) > c.geo_cutoff_km:
                return "geo"
        return None

    def _window(self, wan_id: str) -> _ModemWindow:
        w = self.windows.get(wan_id)
        if w is None:
            w = self.windows[wan_id] = _ModemWindow(wan_id, self.cfg.seq_len, self.policy.consecutive_hits)
        return w

    def _push(self, w: _ModemWindow, values: np.ndarray, t: int) -> tuple[float, tuple[int, int]] | None:
        """Add one base-grid record; return (score, window span) when a window completes."""
        if not w.block:
            w.block_t0 = t
        w.block.append(values)
        if len(w.block) < self.cfg.n_downsample:
            return None
        w.down.append(block_mean(np.array(w.block)))
        w.down_times.append(w.block_t0)
        w.block.clear()
        if len(w.down) < self.cfg.seq_len:
            return None
        x = feature_rows(np.array(w.down), w.slot)
        score = float(predict_proba(self.bundle, x[None])[0])
        return score, (w.down_times[0], w.down_times[-1])

    # ---- public API

    def ingest(self, sample: ModemSample) -> list[DecisionEvent]:
        """Consume one sample; return the decision events it completed (possibly for other modems)."""
        events: list[DecisionEvent] = []
        t = sample.time
        if self.clock is None or t > self.clock:
            events += self._resolve_pending(before=t)
            self.clock = t
        w = self._window(sample.wan_id)
        if w.last_time is not None and t <= w.last_time:
            self.out_of_order += 1
            return events
        w.last_time = t
        w.reported_at = t

        scored = []
        reason = self._reject_reason(sample)
        if reason is not None:
            self.rejections[reason] += 1
        else:
            values = np.array((sample.rsrp, sample.sinr, sample.rsrq, sample.latency))
            dt = self.cfg.sample_interval
            if w.last_valid is not None:
                missing = max(int(round((t - w.last_valid_time) / dt)), 1) - 1
                if missing > self.cfg.max_gap_fill:
                    w.reset_segment()
                else:
                    for j in range(1, missing + 1):
                        r = self._push(w, w.last_valid, w.last_valid_time + j * dt)
                        if r is not None:
                            scored.append(r)
            r = self._push(w, values, t)
            if r is not None:
                scored.append(r)
            w.last_valid, w.last_valid_time = values, t

        for score, span in scored:
            w.scores.append(score)
            w.latest_score = score
            ev = self._decide(w, t, score, span)
            if ev is not None:
                events.append(ev)
        sib = self.pending.get(sibling_of(sample.wan_id))
        if sib and sib[0].time == t:
            events += self._finish(sibling_of(sample.wan_id))
        return events

    def flush(self) -> list[DecisionEvent]:
        """Resolve every held decision as of the current clock (end of tick or end of stream)."""
        return self._resolve_pending(before=None)

    # ---- internals

    def _sibling_status(self, wan_id: str, now: int) -> SiblingStatus:
        s = self.windows.get(sibling_of(wan_id))
        if s is None:
            return SiblingStatus(False, None)
        restarting = s.last_action_at is not None and now < s.last_action_at + self.policy.restart_seconds
        connected = s.reported_at is not None and s.reported_at >= now and not restarting
        return SiblingStatus(connected, s.latest_score)

    def _decide(self, w: _ModemWindow, now: int, score: float, span) -> DecisionEvent | None:
        pol = self.policy
        held = _Pending(now, score, span, tuple(w.scores))
        if self.pending.get(w.wan_id):
            # gap filling can complete several windows in one tick; keep them in order
            self.pending[w.wan_id].append(held)
            return None
        sib = self._sibling_status(w.wan_id, now)
        decision = evaluate_policy(w.scores, pol, self.threshold, sib, now, w.last_action_at)
        if decision is Decision.SUPPRESSED_SIBLING and pol.sibling_guard:
            s = self.windows.get(sibling_of(w.wan_id))
            if s is not None and (s.reported_at is None or s.reported_at < now):
                # sibling has not reported for this tick yet
                self.pending[w.wan_id] = [held]
                return None
        return self._emit(w, now, score, span, decision)

    def _finish(self, wan_id: str) -> list[DecisionEvent]:
        w = self.windows[wan_id]
        out = []
        for p in self.pending.pop(wan_id):
            sib = self._sibling_status(wan_id, p.time)
            decision = evaluate_policy(p.scores, self.policy, self.threshold, sib, p.time, w.last_action_at)
            out.append(self._emit(w, p.time, p.score, p.window, decision))
        return out

    def _resolve_pending(self, before: int | None) -> list[DecisionEvent]:
        due = [wid for wid, q in self.pending.items() if before is None or q[0].time < before]
        return [ev for wid in sorted(due) for ev in self._finish(wid)]

    def _emit(self, w: _ModemWindow, now: int, score: float, span, decision: Decision) -> DecisionEvent:
        if decision is Decision.RESTART_ISSUED:
            decision = self.issue_restart(w, now)
        ev = DecisionEvent(w.wan_id, now, score, decision, (int(span[0]), int(span[1])))
        self.log.append(ev)
        return ev

    def issue_restart(self, w: _ModemWindow, now: int) -> Decision:
        """Send the restart command; cooldown starts whatever the reply, to avoid retry storms."""
        w.last_action_at = now
        if self.endpoint is None:
            self.actions.append(ActionRecord(w.wan_id, now, ActionSource.AUTOMATED))
            return Decision.RESTART_ISSUED
        try:
            status = self.endpoint.restart(w.wan_id, now)
        except (OSError, ConnectionError, ValueError) as exc:
            logger.error("restart of %s at %d failed: %s", w.wan_id, now, exc)
            return Decision.RESTART_FAILED
        if status != "ok":
            logger.info("restart of %s at %d answered %r", w.wan_id, now, status)
        self.actions.append(ActionRecord(w.wan_id, now, ActionSource.AUTOMATED))
        return Decision.RESTART_ISSUED


class ServiceHook:
    """Attach a DecisionService to a running Simulator as its policy hook."""

    def __init__(self, service: DecisionService):
        self.service = service

    def __call__(self, now, samples, sim) -> None:
        svc = self.service
        if svc.endpoint is None:
            svc.endpoint = SimulatorEndpoint(sim)
        for s in samples:
            svc.ingest(s)
        svc.flush()


def replay(service: DecisionService, samples: Iterable[ModemSample], speed: float | None = None,
           sink: IO[str] | None = None) -> list[DecisionEvent]:
    """Feed time-ordered samples through the service, optionally paced at ``speed`` x real time."""
    out: list[DecisionEvent] = []
    prev_t = None

    def emit(events):
        out.extend(events)
        if sink is not None:
            write_events(sink, events)

    for s in samples:
        if prev_t is not None and s.time > prev_t:
            emit(service.flush())
            if speed:
                _time.sleep((s.time - prev_t) / speed)
        prev_t = s.time
        emit(service.ingest(s))
    emit(service.flush())
    return out


def write_events(fh: IO[str], events: Iterable[DecisionEvent]) -> None:
    for ev in events:
        fh.write(json.dumps(ev.to_dict()) + "\n")


def read_events(path: str | Path) -> list[DecisionEvent]:
    with open(path) as fh:
        return [DecisionEvent.from_dict(json.loads(line)) for line in fh if line.strip()]
