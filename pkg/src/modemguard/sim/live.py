"""Live mode: samples out as NDJSON, restart commands in as NDJSON.

The simulator advances in the caller's thread. Commands arrive on a separate
TCP listener and are applied under a lock at the simulator's current time,
so a command can never rewrite the past.
"""

from __future__ import annotations

import json
import logging
import socketserver
import threading
import time as _time
from typing import IO, Callable

from ..errors import NotFoundError
from .scenario import RestartStatus, ScenarioResult, Simulator

logger = logging.getLogger(__name__)


def handle_command(sim: Simulator, line: str, lock: threading.Lock | None = None) -> dict:
    """Apply one ``{"wan_id": ..., "time": ...}`` command and build the reply."""
    try:
        cmd = json.loads(line)
        wan_id = str(cmd["wan_id"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        logger.warning("malformed command %r: %s", line.strip(), exc)
        return {"status": RestartStatus.IGNORED.value}
    lock = lock or threading.Lock()
    with lock:
        try:
            status = sim.apply_restart(wan_id, None)
        except NotFoundError:
            return {"status": "not_found"}
    return {"status": status.value}


class CommandServer(socketserver.ThreadingTCPServer):
    """Line-oriented command listener bound to one simulator."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr: tuple[str, int], sim: Simulator, lock: threading.Lock):
        self.sim = sim
        self.lock = lock
        self.commands: list[tuple[str, dict]] = []
        super().__init__(addr, _CommandHandler)

    def start(self) -> threading.Thread:
        th = threading.Thread(target=self.serve_forever, name="sim-commands", daemon=True)
        th.start()
        return th


class _CommandHandler(socketserver.StreamRequestHandler):
    def handle(self):
        server: CommandServer = self.server  # type: ignore[assignment]
        for raw in self.rfile:
            line = raw.decode("utf-8", "replace")
            if not line.strip():
                continue
            reply = handle_command(server.sim, line, server.lock)
            server.commands.append((line.strip(), reply))
            self.wfile.write((json.dumps(reply) + "\n").encode())
            self.wfile.flush()


def sample_line(sample) -> str:
    return json.dumps(sample.to_dict()) + "\n"


def stream_live(sim: Simulator, out: IO[str], lock: threading.Lock | None = None,
                speed: float | None = None, on_tick: Callable | None = None) -> ScenarioResult:
    """Run ``sim`` to completion, writing each sample as one JSON line.

    ``speed`` paces ticks at that multiple of real time; None runs flat out.
    """
    lock = lock or threading.Lock()
    telemetry = []
    while True:
        with lock:
            if sim.done:
                break
            t, samples = sim.step()
            if on_tick is not None:
                on_tick(t, samples, sim)
        telemetry.extend(samples)
        for s in samples:
            out.write(sample_line(s))
        out.flush()
        if speed:
            _time.sleep(sim.config.sample_interval / speed)
    return ScenarioResult(telemetry, sim.truth, sim.outages, sim.config)
