"""Seeded discrete-time simulator of dual-modem vessel CPEs around an offshore windfarm.

Each modem runs a small link state machine::

    HEALTHY --onset--> DEGRADED --dwell--> DROPPED -> RECONNECTING --reconnect_seconds--> HEALTHY
    HEALTHY/DEGRADED --restart--> RESTARTING --restart_seconds--> HEALTHY

Degradation onsets and dwell times are drawn up front from per-modem RNG
streams, so two runs with the same seed see the same onsets whatever policy
is attached; only what happens after an action differs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Protocol

import numpy as np

from ..errors import ConfigError, NotFoundError
from ..telemetry import (
    EARTH_RADIUS_KM, LATENCY_RANGE, RSRQ_RANGE, SINR_RANGE,
    ModemSample, SiteTopology, reference_topology, sibling_of,
)

logger = logging.getLogger(__name__)


class Phase(str, Enum):
    HEALTHY = "HEALTHY"
    DEGRADED = "DEGRADED"
    DROPPED = "DROPPED"
    RECONNECTING = "RECONNECTING"
    RESTARTING = "RESTARTING"


OUTAGE_PHASES = (Phase.DROPPED, Phase.RECONNECTING, Phase.RESTARTING)


@dataclass(frozen=True)
class ForcedDegradation:
    """Scripted degradation: ``wan_id`` degrades ``at`` seconds after scenario start."""

    wan_id: str
    at: int
    dwell: int


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    duration: int = 86400
    start_time: int = 1_700_000_000
    sample_interval: int = 5
    reconnect_seconds: int = 300
    restart_seconds: int = 10
    degraded_dwell_bounds: tuple[int, int] = (300, 1200)
    hazard_degrade: float = 4e-4
    hazard_weak_radio: float = 4e-4
    weak_rsrp_dbm: float = -100.0
    pair_probability: float = 0.35
    pair_offset_bounds: tuple[int, int] = (120, 600)
    refractory_seconds: int = 600
    n_vessels: int = 4
    topology: SiteTopology = field(default_factory=reference_topology)
    area_margin_km: float = 3.5
    vessel_speed_bounds: tuple[float, float] = (2.0, 7.0)
    loiter_bounds: tuple[int, int] = (0, 1800)
    carrier: str = "B3"
    # radio model
    rsrp_at_1km: float = -72.0
    path_loss_exponent: float = 3.0
    shadowing_std: float = 3.0
    shadowing_tau: float = 120.0
    rsrp_noise_std: float = 1.0
    sinr_noise_std: float = 1.5
    rsrq_noise_std: float = 0.5
    latency_base_ms: float = 35.0
    latency_noise_std: float = 3.0
    # degradation signature, per sample step
    latency_drift: float = 2.0
    latency_walk_std: float = 1.5
    rsrq_drift: float = -0.05
    sinr_drift: float = -0.1
    glitch_probability: float = 0.001
    forced_events: tuple[ForcedDegradation, ...] = ()

    def validate(self) -> "SimConfig":
        def bad(name, why):
            raise ConfigError(f"sim.{name}: {why}", field=f"sim.{name}")

        if self.duration < 0:
            bad("duration", "must be >= 0")
        if self.sample_interval <= 0:
            bad("sample_interval", "must be > 0")
        if self.start_time <= 0:
            bad("start_time", "must be > 0")
        for name in ("reconnect_seconds", "restart_seconds"):
            v = getattr(self, name)
            if v <= 0 or v % self.sample_interval:
                bad(name, f"must be a positive multiple of sample_interval ({self.sample_interval})")
        lo, hi = self.degraded_dwell_bounds
        if not (0 < lo <= hi):
            bad("degraded_dwell_bounds", "need 0 < low <= high")
        lo, hi = self.pair_offset_bounds
        if not (0 <= lo <= hi):
            bad("pair_offset_bounds", "need 0 <= low <= high")
        for name in ("hazard_degrade", "hazard_weak_radio", "pair_probability", "glitch_probability"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                bad(name, "must be a probability in [0, 1]")
        if self.n_vessels < 0:
            bad("n_vessels", "must be >= 0")
        if len(self.topology) == 0:
            bad("topology", "needs at least one cell")
        if self.vessel_speed_bounds[0] < 0 or self.vessel_speed_bounds[0] > self.vessel_speed_bounds[1]:
            bad("vessel_speed_bounds", "need 0 <= low <= high")
        return self

    @property
    def n_ticks(self) -> int:
        return self.duration // self.sample_interval

    def wan_ids(self) -> list[str]:
        return [f"cpe{v:02d}-wan{slot}" for v in range(self.n_vessels) for slot in (0, 1)]

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"sim.{key}: unknown field", field=f"sim.{key}")
            default = getattr(cls(), key) if key != "topology" else None
            try:
                if key == "forced_events":
                    value = tuple(ForcedDegradation(str(e["wan_id"]), int(e["at"]), int(e["dwell"])) for e in value)
                elif key == "topology":
                    raise ConfigError("sim.topology: set topology with a topology CSV", field="sim.topology")
                elif isinstance(default, tuple):
                    if len(value) != 2:
                        raise ValueError("expected a pair")
                    value = tuple(type(d)(v) for d, v in zip(default, value))
                elif isinstance(default, bool):
                    value = bool(value)
                elif isinstance(default, int):
                    if isinstance(value, float) and not value.is_integer():
                        raise ValueError("expected an integer")
                    value = int(value)
                elif isinstance(default, float):
                    value = float(value)
                elif isinstance(default, str):
                    value = str(value)
            except ConfigError:
                raise
            except (TypeError, ValueError, KeyError) as exc:
                raise ConfigError(f"sim.{key}: {exc}", field=f"sim.{key}") from None
            kwargs[key] = value
        return cls(**kwargs).validate()

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "topology":
                continue
            if f.name == "forced_events":
                v = [{"wan_id": e.wan_id, "at": e.at, "dwell": e.dwell} for e in v]
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


@dataclass
class LinkState:
    phase: Phase
    phase_entered_at: int
    serving_cell: str
    degradation_onset: int | None = None


@dataclass
class GroundTruthEvent:
    wan_id: str
    onset: int
    drop_time: int | None = None

    def to_dict(self) -> dict:
        return {"wan_id": self.wan_id, "onset": self.onset, "drop_time": self.drop_time}


@dataclass(frozen=True)
class Outage:
    wan_id: str
    start: int
    end: int
    kind: str  # "drop" | "restart"

    @property
    def duration(self) -> int:
        return self.end - self.start


class RestartStatus(str, Enum):
    OK = "ok"
    IGNORED = "ignored"
    NOT_FOUND = "not_found"


class PolicyHook(Protocol):
    def __call__(self, now: int, samples: list[ModemSample], sim: "Simulator") -> None: ...


@dataclass
class ScenarioResult:
    telemetry: list[ModemSample]
    truth: list[GroundTruthEvent]
    outages: list[Outage]
    config: SimConfig

    def partitions(self) -> dict[str, tuple[ModemSample, ...]]:
        out: dict[str, list[ModemSample]] = {w: [] for w in self.config.wan_ids()}
        for s in self.telemetry:
            out[s.wan_id].append(s)
        return {w: tuple(v) for w, v in out.items()}


# --------------------------------------------------------------------------- precomputed traces


@dataclass
class _Schedule:
    onset_tick: int
    dwell: int


def _destination(lat: float, lon: float, bearing_deg: float, dist_km: float) -> tuple[float, float]:
    d = dist_km / EARTH_RADIUS_KM
    b = math.radians(bearing_deg)
    la, lo = math.radians(lat), math.radians(lon)
    la2 = math.asin(math.sin(la) * math.cos(d) + math.cos(la) * math.sin(d) * math.cos(b))
    lo2 = lo + math.atan2(math.sin(b) * math.sin(d) * math.cos(la), math.cos(d) - math.sin(la) * math.sin(la2))
    return math.degrees(la2), math.degrees(lo2)


def _vessel_track(cfg: SimConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Waypoint track inside the scenario box, one position per tick."""
    n = cfg.n_ticks
    lat_min, lat_max, lon_min, lon_max = cfg.topology.bounding_box(cfg.area_margin_km)
    lat = np.empty(n)
    lon = np.empty(n)
    pos = (rng.uniform(lat_min, lat_max), rng.uniform(lon_min, lon_max))
    i = 0
    while i < n:
        target = (rng.uniform(lat_min, lat_max), rng.uniform(lon_min, lon_max))
        speed_kms = rng.uniform(*cfg.vessel_speed_bounds) / 1000.0
        # equirectangular leg; legs are a few km so the error is negligible
        dy = (target[0] - pos[0])
        dx = (target[1] - pos[1]) * math.cos(math.radians(pos[0]))
        leg_km = math.radians(math.hypot(dx, dy)) * EARTH_RADIUS_KM
        leg_steps = max(1, int(leg_km / max(speed_kms * cfg.sample_interval, 1e-9)))
        steps = min(leg_steps, n - i)
        frac = np.arange(1, steps + 1) / leg_steps
        lat[i:i + steps] = pos[0] + frac * (target[0] - pos[0])
        lon[i:i + steps] = pos[1] + frac * (target[1] - pos[1])
        i += steps
        pos = (lat[i - 1], lon[i - 1])
        loiter = int(rng.integers(cfg.loiter_bounds[0], cfg.loiter_bounds[1] + 1)) // cfg.sample_interval
        loiter = min(loiter, n - i)
        lat[i:i + loiter] = pos[0]
        lon[i:i + loiter] = pos[1]
        i += loiter
    return lat, lon


def _sector_gain_db(bearing_from_site: np.ndarray, azimuth: float) -> np.ndarray:
    delta = (bearing_from_site - azimuth + 180.0) % 360.0 - 180.0
    return -np.minimum(12.0 * (delta / 65.0) ** 2, 20.0)


def _serving_radio(cfg: SimConfig, lat: np.ndarray, lon: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean RSRP (dBm) of the serving cell and serving-cell index per tick, 3 dB handover hysteresis."""
    cells = cfg.topology.cells
    n = len(lat)
    per_cell = np.empty((n, len(cells)))
    la1, lo1 = np.radians(lat), np.radians(lon)
    for k, c in enumerate(cells):
        la0, lo0 = math.radians(c.latitude), math.radians(c.longitude)
        h = np.sin((la1 - la0) / 2) ** 2 + math.cos(la0) * np.cos(la1) * np.sin((lo1 - lo0) / 2) ** 2
        d_km = 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))
        y = np.sin(lo1 - lo0) * np.cos(la1)
        x = math.cos(la0) * np.sin(la1) - math.sin(la0) * np.cos(la1) * np.cos(lo1 - lo0)
        bearing = np.degrees(np.arctan2(y, x)) % 360.0
        per_cell[:, k] = (cfg.rsrp_at_1km - 10.0 * cfg.path_loss_exponent * np.log10(np.maximum(d_km, 0.05))
                          + _sector_gain_db(bearing, c.azimuth))
    serving = np.empty(n, dtype=np.int64)
    cur = int(np.argmax(per_cell[0])) if n else 0
    best = np.argmax(per_cell, axis=1)
    for i in range(n):
        b = best[i]
        if b != cur and per_cell[i, b] > per_cell[i, cur] + 3.0:
            cur = int(b)
        serving[i] = cur
    return per_cell[np.arange(n), serving], serving


def _ar1(rng: np.random.Generator, n: int, std: float, rho: float) -> np.ndarray:
    out = np.empty(n)
    if n == 0:
        return out
    innov = rng.normal(0.0, std * math.sqrt(max(1.0 - rho * rho, 0.0)), n)
    x = rng.normal(0.0, std)
    for i in range(n):
        x = rho * x + innov[i]
        out[i] = x
    return out


class _ModemTrace:
    """Policy-independent per-tick baseline values and degradation increments for one modem."""

    __slots__ = ("rsrp", "sinr", "rsrq", "latency", "lat_walk", "glitch", "schedule")

    def __init__(self, cfg: SimConfig, rng: np.random.Generator, rsrp_mean: np.ndarray):
        n = cfg.n_ticks
        rho = math.exp(-cfg.sample_interval / cfg.shadowing_tau)
        rsrp = rsrp_mean + _ar1(rng, n, cfg.shadowing_std, rho) + rng.normal(0, cfg.rsrp_noise_std, n)
        sinr = 0.7 * (rsrp + 112.0) + rng.normal(0, cfg.sinr_noise_std, n)
        sinr = np.clip(sinr, -20.0, 35.0)
        rsrq = np.clip(-16.0 + 0.4 * sinr + rng.normal(0, cfg.rsrq_noise_std, n), -22.0, -3.0)
        latency = cfg.latency_base_ms + 0.5 * np.maximum(0.0, 10.0 - sinr) + rng.normal(0, cfg.latency_noise_std, n)
        self.rsrp = np.clip(rsrp, -135.0, -45.0)
        self.sinr = sinr
        self.rsrq = rsrq
        self.latency = np.maximum(latency, 5.0)
        steps = cfg.latency_drift + rng.normal(0, cfg.latency_walk_std, n)
        self.lat_walk = np.cumsum(steps)
        u = rng.random(n)
        kinds = rng.integers(0, 2, n)
        self.glitch = np.where(u < cfg.glitch_probability, 1 + kinds, 0).astype(np.int8)
        self.schedule: list[_Schedule] = []


def _draw_schedule(cfg: SimConfig, rng: np.random.Generator, traces: dict[str, _ModemTrace],
                   vessel_wans: tuple[str, str]) -> None:
    n = cfg.n_ticks
    dt = cfg.sample_interval
    lo, hi = cfg.degraded_dwell_bounds

    def draw_dwell() -> int:
        return int(round(rng.uniform(lo, hi) / dt)) * dt

    candidates: list[tuple[int, int]] = []
    draws = {}
    for j, w in enumerate(vessel_wans):
        hz = cfg.hazard_degrade + cfg.hazard_weak_radio * (traces[w].rsrp < cfg.weak_rsrp_dbm)
        u = rng.random(n)
        draws[w] = (rng.random(n), rng.uniform(*cfg.pair_offset_bounds, n) if n else np.empty(0))
        candidates.extend((int(i), j) for i in np.flatnonzero(u < hz))
    candidates.sort()
    next_allowed = [0, 0]
    span_extra = cfg.reconnect_seconds + cfg.refractory_seconds
    for tick, j in candidates:
        if tick < next_allowed[j]:
            continue
        w = vessel_wans[j]
        dwell = draw_dwell()
        traces[w].schedule.append(_Schedule(tick, dwell))
        next_allowed[j] = tick + (dwell + span_extra) // dt
        pair_u, offsets = draws[w]
        if pair_u[tick] < cfg.pair_probability:
            k = 1 - j
            sib_tick = tick + int(round(offsets[tick] / dt))
            if sib_tick >= next_allowed[k] and sib_tick < n:
                sib_dwell = draw_dwell()
                traces[vessel_wans[k]].schedule.append(_Schedule(sib_tick, sib_dwell))
                next_allowed[k] = sib_tick + (sib_dwell + span_extra) // dt
    for w in vessel_wans:
        traces[w].schedule.sort(key=lambda s: s.onset_tick)


# --------------------------------------------------------------------------- simulator


class _Modem:
    __slots__ = ("wan_id", "state", "trace", "next_sched", "pending", "drop_at", "onset_tick", "event")

    def __init__(self, wan_id: str, trace: _ModemTrace, serving_cell: str, t0: int):
        self.wan_id = wan_id
        self.state = LinkState(Phase.HEALTHY, t0, serving_cell)
        self.trace = trace
        self.next_sched = 0
        self.pending: _Schedule | None = None
        self.drop_at: int | None = None
        self.onset_tick = 0
        self.event: GroundTruthEvent | None = None


class Simulator:
    """Step-wise scenario runner; also the restart-action endpoint for attached policies."""

    def __init__(self, config: SimConfig):
        self.config = cfg = config.validate()
        root = np.random.SeedSequence(cfg.seed & 0xFFFFFFFFFFFFFFFF)
        vessel_seqs = root.spawn(cfg.n_vessels)
        self.serving: dict[str, np.ndarray] = {}
        self._positions: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        traces: dict[str, _ModemTrace] = {}
        cell_ids = [c.cell_id for c in cfg.topology.cells]
        for v, seq in enumerate(vessel_seqs):
            track_seq, sched_seq, *modem_seqs = seq.spawn(4)
            lat, lon = _vessel_track(cfg, np.random.default_rng(track_seq))
            rsrp_mean, serving = _serving_radio(cfg, lat, lon)
            wans = (f"cpe{v:02d}-wan0", f"cpe{v:02d}-wan1")
            for w, ms in zip(wans, modem_seqs):
                traces[w] = _ModemTrace(cfg, np.random.default_rng(ms), rsrp_mean)
                self._positions[w] = (lat, lon)
                self.serving[w] = serving
            _draw_schedule(cfg, np.random.default_rng(sched_seq), traces, wans)
        for fe in cfg.forced_events:
            if fe.wan_id not in traces:
                raise ConfigError(f"sim.forced_events: unknown wan_id {fe.wan_id!r}", field="sim.forced_events")
            if fe.at % cfg.sample_interval or fe.dwell % cfg.sample_interval or fe.dwell <= 0:
                raise ConfigError("sim.forced_events: at/dwell must be multiples of sample_interval",
                                  field="sim.forced_events")
            traces[fe.wan_id].schedule.append(_Schedule(fe.at // cfg.sample_interval, fe.dwell))
            traces[fe.wan_id].schedule.sort(key=lambda s: s.onset_tick)
        self._cell_ids = cell_ids
        self.modems: dict[str, _Modem] = {
            w: _Modem(w, traces[w], cell_ids[self.serving[w][0]] if cfg.n_ticks else cell_ids[0], cfg.start_time)
            for w in cfg.wan_ids()
        }
        self.truth: list[GroundTruthEvent] = []
        self.outages: list[Outage] = []
        self.onsets_this_tick: list[GroundTruthEvent] = []
        self.now = cfg.start_time
        self._tick = -1

    # ---- endpoint

    def state(self, wan_id: str) -> LinkState:
        try:
            return self.modems[wan_id].state
        except KeyError:
            raise NotFoundError(wan_id) from None

    def apply_restart(self, wan_id: str, at: int | None = None) -> RestartStatus:
        """Restart a modem. HEALTHY/DEGRADED go to RESTARTING; outage phases ignore the command."""
        m = self.modems.get(wan_id)
        if m is None:
            raise NotFoundError(wan_id)
        at = self.now if at is None else at
        st = m.state
        if st.phase not in (Phase.HEALTHY, Phase.DEGRADED):
            return RestartStatus.IGNORED
        if st.phase is Phase.DEGRADED:
            m.drop_at = None
            m.event = None
        st.phase = Phase.RESTARTING
        st.phase_entered_at = at
        st.degradation_onset = None
        self.outages.append(Outage(wan_id, at, at + self.config.restart_seconds, "restart"))
        return RestartStatus.OK

    # ---- stepping

    def _enter_degraded(self, m: _Modem, sched: _Schedule) -> None:
        cfg = self.config
        onset = cfg.start_time + sched.onset_tick * cfg.sample_interval
        m.state.phase = Phase.DEGRADED
        m.state.phase_entered_at = max(onset, m.state.phase_entered_at)
        m.state.degradation_onset = onset
        m.drop_at = onset + sched.dwell
        m.onset_tick = sched.onset_tick
        m.event = GroundTruthEvent(m.wan_id, onset)
        self.truth.append(m.event)
        self.onsets_this_tick.append(m.event)

    def _advance(self, m: _Modem, t: int, tick: int) -> None:
        cfg = self.config
        st = m.state
        if st.phase is Phase.RESTARTING and t >= st.phase_entered_at + cfg.restart_seconds:
            st.phase = Phase.HEALTHY
            st.phase_entered_at = st.phase_entered_at + cfg.restart_seconds
        if st.phase is Phase.RECONNECTING and t >= st.phase_entered_at + cfg.reconnect_seconds:
            st.phase = Phase.HEALTHY
            st.phase_entered_at = st.phase_entered_at + cfg.reconnect_seconds
        sched = m.trace.schedule
        while m.next_sched < len(sched) and sched[m.next_sched].onset_tick <= tick:
            s = sched[m.next_sched]
            m.next_sched += 1
            if st.phase is Phase.HEALTHY:
                self._enter_degraded(m, s)
            elif st.phase is Phase.RESTARTING:
                m.pending = s
                onset = cfg.start_time + s.onset_tick * cfg.sample_interval
                ev = GroundTruthEvent(m.wan_id, onset)
                self.truth.append(ev)
                self.onsets_this_tick.append(ev)
                m.event = ev
            else:
                logger.debug("%s: onset at tick %d skipped in phase %s", m.wan_id, s.onset_tick, st.phase)
        if m.pending is not None and st.phase is Phase.HEALTHY:
            s, m.pending = m.pending, None
            ev = m.event
            onset = cfg.start_time + s.onset_tick * cfg.sample_interval
            st.phase = Phase.DEGRADED
            st.degradation_onset = onset
            m.drop_at = onset + s.dwell
            m.onset_tick = s.onset_tick
            m.event = ev
        if st.phase is Phase.DEGRADED and m.drop_at is not None and t >= m.drop_at:
            drop = m.drop_at
            st.phase = Phase.DROPPED
            st.phase_entered_at = drop
            if m.event is not None:
                m.event.drop_time = drop
            self.outages.append(Outage(m.wan_id, drop, drop + cfg.reconnect_seconds, "drop"))
            st.phase = Phase.RECONNECTING
            st.degradation_onset = None
            m.drop_at = None
            m.event = None
        st.serving_cell = self._cell_ids[self.serving[m.wan_id][tick]]

    def _sample(self, m: _Modem, t: int, tick: int) -> ModemSample:
        cfg = self.config
        tr = m.trace
        rsrp = float(tr.rsrp[tick])
        sinr = float(tr.sinr[tick])
        rsrq = float(tr.rsrq[tick])
        latency = float(tr.latency[tick])
        if m.state.phase is Phase.DEGRADED:
            k = tick - m.onset_tick
            latency += float(tr.lat_walk[tick] - tr.lat_walk[m.onset_tick])
            sinr = max(SINR_RANGE[0] + 1.0, sinr + cfg.sinr_drift * k)
            rsrq = max(RSRQ_RANGE[0] + 1.0, rsrq + cfg.rsrq_drift * k)
            latency = min(LATENCY_RANGE[1] - 1.0, max(latency, 5.0))
        lat, lon = self._positions[m.wan_id]
        la, lo = float(lat[tick]), float(lon[tick])
        g = tr.glitch[tick]
        if g == 1:
            rsrp = -150.0
        elif g == 2:
            la = la + 0.9
        return ModemSample(m.wan_id, cfg.carrier, round(rsrp, 2), round(sinr, 2), round(rsrq, 2),
                           round(latency, 2), t, round(la, 6), round(lo, 6))

    def step(self) -> tuple[int, list[ModemSample]]:
        """Advance one tick; return its time and the samples emitted at it."""
        self._tick += 1
        tick = self._tick
        cfg = self.config
        t = cfg.start_time + tick * cfg.sample_interval
        self.now = t
        self.onsets_this_tick = []
        out = []
        for m in self.modems.values():
            self._advance(m, t, tick)
            if m.state.phase in (Phase.HEALTHY, Phase.DEGRADED):
                out.append(self._sample(m, t, tick))
        return t, out

    @property
    def done(self) -> bool:
        return self._tick + 1 >= self.config.n_ticks


def run_scenario(config: SimConfig, policy_hook: PolicyHook | None = None) -> ScenarioResult:
    """Run a full scenario. ``policy_hook`` is called after every tick and may restart modems."""
    sim = Simulator(config)
    telemetry: list[ModemSample] = []
    while not sim.done:
        t, samples = sim.step()
        telemetry.extend(samples)
        if policy_hook is not None:
            policy_hook(t, samples, sim)
    return ScenarioResult(telemetry, sim.truth, sim.outages, sim.config)


OUTAGES_HEADER = ("wan_id", "start", "end", "kind")


def save_outages(path: str | Path, outages: Iterable[Outage]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OUTAGES_HEADER)
        for o in outages:
            w.writerow([o.wan_id, o.start, o.end, o.kind])


def load_outages(path: str | Path) -> list[Outage]:
    with open(path, newline="") as fh:
        return [Outage(r["wan_id"], int(r["start"]), int(r["end"]), r["kind"]) for r in csv.DictReader(fh)]


def save_truth(path: str | Path, truth: Iterable[GroundTruthEvent]) -> None:
    with open(path, "w") as fh:
        for ev in truth:
            fh.write(json.dumps(ev.to_dict()) + "\n")


def load_truth(path: str | Path) -> list[GroundTruthEvent]:
    with open(path) as fh:
        return [GroundTruthEvent(d["wan_id"], int(d["onset"]), None if d["drop_time"] is None else int(d["drop_time"]))
                for d in map(json.loads, filter(str.strip, fh))]


# --------------------------------------------------------------------------- reference hooks


class OracleRestartPolicy:
    """Restarts a modem as soon as it is DEGRADED, waiting while its sibling is in an outage."""

    def __init__(self):
        self.actions: list[tuple[str, int]] = []

    def __call__(self, now: int, samples: list[ModemSample], sim: Simulator) -> None:
        for w, m in sim.modems.items():
            if m.state.phase is Phase.DEGRADED and sim.modems[sibling_of(w)].state.phase not in OUTAGE_PHASES:
                if sim.apply_restart(w, now) is RestartStatus.OK:
                    self.actions.append((w, now))


class ManualOperator:
    """Engineers restarting a degraded modem some minutes after the anomaly starts.

    Every action is logged, whether or not the modem was still degraded when
    the engineer got to it.
    """

    def __init__(self, lag_bounds: tuple[int, int] = (540, 720), seed: int = 0):
        self.lag_bounds = lag_bounds
        self._rng = np.random.default_rng(seed)
        self._due: list[tuple[int, str]] = []
        self.actions: list[tuple[str, int]] = []

    def __call__(self, now: int, samples: list[ModemSample], sim: Simulator) -> None:
        dt = sim.config.sample_interval
        for ev in sim.onsets_this_tick:
            lag = int(round(self._rng.uniform(*self.lag_bounds) / dt)) * dt
            self._due.append((ev.onset + lag, ev.wan_id))
        if not self._due:
            return
        self._due.sort()
        while self._due and self._due[0][0] <= now:
            _, w = self._due.pop(0)
            sim.apply_restart(w, now)
            self.actions.append((w, now))


def chain_hooks(*hooks: PolicyHook | None) -> PolicyHook:
    active = [h for h in hooks if h is not None]

    def hook(now, samples, sim):
        for h in active:
            h(now, samples, sim)
    return hook


def with_seed(config: SimConfig, seed: int) -> SimConfig:
    return replace(config, seed=seed)
