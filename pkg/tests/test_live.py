import io
import json
import socket
import threading

import pytest

from conftest import make_latency_bundle
from modemguard.service import DecisionService, TcpEndpoint, replay
from modemguard.sim import ForcedDegradation, Phase, SimConfig, Simulator
from modemguard.sim.live import CommandServer, handle_command, stream_live
from modemguard.telemetry import ModemSample

QUIET = dict(hazard_degrade=0.0, hazard_weak_radio=0.0)


def _sim(duration=3600):
    return Simulator(SimConfig(duration=duration, n_vessels=1, forced_events=(ForcedDegradation("cpe00-wan0", 100, 600),),
                               **QUIET))


def _advance(sim, seconds):
    end = sim.now + seconds
    while sim.now < end:
        sim.step()


def test_handle_command_statuses():
    sim = _sim()
    _advance(sim, 200)
    assert handle_command(sim, '{"wan_id": "cpe00-wan0", "time": 0}') == {"status": "ok"}
    assert sim.state("cpe00-wan0").phase is Phase.RESTARTING
    assert sim.state("cpe00-wan0").phase_entered_at == sim.now  # applied now, not at the stated time
    assert handle_command(sim, '{"wan_id": "cpe00-wan0", "time": 0}') == {"status": "ignored"}
    assert handle_command(sim, '{"wan_id": "ghost-wan0"}') == {"status": "not_found"}
    assert handle_command(sim, "not json") == {"status": "ignored"}
    assert handle_command(sim, '{"time": 3}') == {"status": "ignored"}


def test_stream_live_writes_ndjson():
    sim = Simulator(SimConfig(duration=60, n_vessels=1, **QUIET))
    buf = io.StringIO()
    res = stream_live(sim, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == len(res.telemetry) == 24
    assert ModemSample.from_dict(json.loads(lines[0])) == res.telemetry[0]


def test_command_server_over_tcp():
    sim = _sim()
    _advance(sim, 200)
    lock = threading.Lock()
    server = CommandServer(("127.0.0.1", 0), sim, lock)
    server.start()
    try:
        ep = TcpEndpoint(*server.server_address[:2])
        assert ep.restart("cpe00-wan0", sim.now) == "ok"
        assert ep.restart("cpe00-wan0", sim.now) == "ignored"
        assert ep.restart("nobody-wan1", sim.now) == "not_found"
        ep.close()
        with socket.create_connection(server.server_address[:2]) as s, s.makefile("rw") as fh:
            fh.write("garbage\n")
            fh.flush()
            assert json.loads(fh.readline()) == {"status": "ignored"}
    finally:
        server.shutdown()
        server.server_close()
    assert [r["status"] for _, r in server.commands] == ["ok", "ignored", "not_found", "ignored"]


def test_closed_loop_over_sockets():
    # simulator streams samples; the service answers through the command listener
    sim = _sim(1800)
    lock = threading.Lock()
    server = CommandServer(("127.0.0.1", 0), sim, lock)
    server.start()
    buf = io.StringIO()
    try:
        stream_live(sim, buf, lock)
        ep = TcpEndpoint(*server.server_address[:2])
        svc = DecisionService(make_latency_bundle(pivot=80.0), endpoint=ep)
        samples = [ModemSample.from_dict(json.loads(line)) for line in buf.getvalue().splitlines()]
        replay(svc, samples)
        ep.close()
    finally:
        server.shutdown()
        server.server_close()
    # the run was already over, so the restart arrives after the drop
    assert svc.actions and server.commands
    assert server.commands[0][1]["status"] in ("ok", "ignored")


def test_tcp_endpoint_unreachable():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    ep = TcpEndpoint("127.0.0.1", port, timeout=0.5)
    with pytest.raises(OSError):
        ep.restart("cpe00-wan0", 0)
