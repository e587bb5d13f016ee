"""Command-line entry point: ``modemguard <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command writes ``manifest.json`` into its output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import socket
import sys
import threading
from dataclasses import asdict, replace
from pathlib import Path
from typing import Iterable, Iterator

from . import __version__
from . import config as config_mod
from .errors import ConfigError, ModelFormatError, ModemGuardError, SchemaError
from .evaluate import check_safety, classifier_report, onsets_match, read_detail, render_report, run_ab
from .nn.gradcheck import gradcheck
from .nn.serialize import load_model, save_model
from .nn.train import save_metrics, train
from .preprocess import label, load_sequences, save_rejections, save_sequences, split, windows_for
from .service import DecisionService, TcpEndpoint, replay, write_events
from .sim.live import CommandServer, stream_live
from .sim.scenario import ManualOperator, Simulator, run_scenario, save_outages, save_truth
from .telemetry import (
    ActionRecord, ActionSource, ModemSample, load_actions, load_telemetry, load_topology,
    reference_topology, save_actions, save_telemetry, save_topology,
)

logger = logging.getLogger("modemguard")

GRADCHECK_TOLERANCE = 1e-4
COMMANDS = ("simulate", "preprocess", "train", "gradcheck", "serve", "evaluate", "report")


class UsageError(ModemGuardError):
    pass


# --------------------------------------------------------------------------- helpers


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, cfg: config_mod.RunConfig, seeds: dict,
                   inputs: dict[str, Path | None], outputs: dict[str, Path]) -> Path:
    """Record what was run; no timestamps, so identical runs give identical manifests."""
    def entry(p: Path, base: Path | None = None) -> dict:
        return {"path": str(p.relative_to(base) if base else p), "sha256": sha256(p)}

    doc = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": seeds,
        "inputs": {k: entry(Path(v)) for k, v in sorted(inputs.items()) if v is not None},
        "outputs": {k: entry(v, out) for k, v in sorted(outputs.items())},  # relative to out
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise UsageError(f"address {text!r} must look like host:port")
    return host or "127.0.0.1", int(port)


def require_file(path: str | None, flag: str) -> Path:
    if path is None:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file {path}")
    return p


def resolve_topology(arg: str | None, near: Path | None = None) -> tuple[object, Path | None]:
    """Explicit --topology, else a topology.csv next to the input, else the reference layout."""
    if arg is not None:
        p = require_file(arg, "--topology")
        return load_topology(p), p
    if near is not None and (near.parent / "topology.csv").is_file():
        p = near.parent / "topology.csv"
        return load_topology(p), p
    return reference_topology(), None


def load_config(args) -> config_mod.RunConfig:
    return config_mod.load(args.config, args.set or [])


def _samples_from_lines(lines: Iterable[str]) -> Iterator[ModemSample]:
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield ModemSample.from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            logger.warning("input line %d skipped: %s", n, exc)


# --------------------------------------------------------------------------- commands


def cmd_simulate(args, cfg: config_mod.RunConfig, out: Path) -> int:
    sim_cfg = cfg.sim
    if args.seed is not None:
        sim_cfg = replace(sim_cfg, seed=args.seed)
    topo_path = None
    if args.topology is not None:
        topo, topo_path = resolve_topology(args.topology)
        sim_cfg = replace(sim_cfg, topology=topo)
    sim_cfg = sim_cfg.validate()
    cfg = replace(cfg, sim=sim_cfg)
    operator = ManualOperator(cfg.operator.lag_bounds, seed=sim_cfg.seed) if cfg.operator.enabled else None

    if args.live:
        sim = Simulator(sim_cfg)
        lock = threading.Lock()
        server = None
        if args.command_listen:
            server = CommandServer(parse_addr(args.command_listen), sim, lock)
            server.start()
            logger.info("accepting restart commands on %s:%d", *server.server_address[:2])
        try:
            if args.connect:
                with socket.create_connection(parse_addr(args.connect)) as sock:
                    with sock.makefile("w", encoding="utf-8", newline="\n") as fh:
                        res = stream_live(sim, fh, lock, args.speed, operator)
            else:
                res = stream_live(sim, sys.stdout, lock, args.speed, operator)
        finally:
            if server is not None:
                server.shutdown()
                server.server_close()
    else:
        res = run_scenario(sim_cfg, operator)

    files = {name: out / name for name in
             ("telemetry.csv", "truth.ndjson", "outages.csv", "actions.csv", "topology.csv")}
    save_telemetry(files["telemetry.csv"], res.telemetry)
    save_truth(files["truth.ndjson"], res.truth)
    save_outages(files["outages.csv"], res.outages)
    manual = [ActionRecord(w, t, ActionSource.MANUAL) for w, t in (operator.actions if operator else [])]
    save_actions(files["actions.csv"], manual)
    save_topology(files["topology.csv"], sim_cfg.topology)
    write_manifest(out, "simulate", cfg, {"sim": sim_cfg.seed}, {"topology": topo_path}, files)
    print(f"simulated {sim_cfg.duration} s, {len(sim_cfg.wan_ids())} modems: {len(res.telemetry)} samples, "
          f"{len(res.truth)} degradations, {len(res.outages)} outages, {len(manual)} manual actions",
          file=sys.stderr if args.live and not args.connect else sys.stdout)
    return 0


def cmd_preprocess(args, cfg: config_mod.RunConfig, out: Path) -> int:
    tel_path = require_file(args.telemetry, "--telemetry")
    ds = load_telemetry(tel_path)
    if args.actions is not None:
        act_path = require_file(args.actions, "--actions")
        actions = load_actions(act_path)
    else:
        act_path, actions = None, ()
        logger.warning("no actions file given: every sequence is labelled 1 (normal)")
    topo, topo_path = resolve_topology(args.topology, tel_path)
    pc = cfg.preprocess
    res = windows_for(ds.samples, pc, topo, "training")
    seqs = label(res.windows, actions, pc, known_wans=ds.samples.keys())
    rejections = res.rejections.copy()
    if ds.row_errors:
        rejections["parse"] += len(ds.row_errors)
    files = {"sequences.ndjson": out / "sequences.ndjson", "rejections.csv": out / "rejections.csv"}
    save_sequences(files["sequences.ndjson"], seqs)
    save_rejections(files["rejections.csv"], rejections)
    write_manifest(out, "preprocess", cfg, {}, {"telemetry": tel_path, "actions": act_path,
                                                "topology": topo_path}, files)
    n0 = sum(1 for s in seqs if s.label == 0)
    print(f"records {res.n_records}, rejected {sum(res.rejections.values())}, padded {res.n_synthetic}, "
          f"segments {res.n_segments}")
    print(f"sequences {len(seqs)} of shape 5x{pc.seq_len} (N={pc.n_downsample}, L={pc.seq_len}); "
          f"label 0: {n0}, label 1: {len(seqs) - n0}")
    return 0


def cmd_train(args, cfg: config_mod.RunConfig, out: Path) -> int:
    seq_path = require_file(args.sequences, "--sequences")
    seqs = load_sequences(seq_path)
    tc = cfg.train if args.seed is None else replace(cfg.train, seed=args.seed)
    cfg = replace(cfg, train=tc)
    tr, va = split(seqs, cfg.split_ratio, tc.seed)

    def report(m):
        if m.epoch % 10 == 0 or m.epoch == tc.epochs:
            logger.info("epoch %d loss %.4f val_acc %.4f val_bal_acc %.4f",
                        m.epoch, m.train_loss, m.val_acc, m.val_bal_acc)

    bundle, history = train(tr, va, cfg.model, tc, on_epoch=report)
    files = {"model.json": out / "model.json", "metrics.csv": out / "metrics.csv",
             "val.ndjson": out / "val.ndjson"}
    save_model(bundle, files["model.json"])
    save_metrics(files["metrics.csv"], history)
    save_sequences(files["val.ndjson"], va)
    write_manifest(out, "train", cfg, {"train": tc.seed}, {"sequences": seq_path}, files)
    best = bundle.meta.get("epoch", 0)
    print(f"trained on {len(tr)} sequences, validated on {len(va)}; best epoch {best}, "
          f"val balanced accuracy {bundle.meta.get('val_bal_acc', float('nan')):.4f}")
    return 0


def cmd_gradcheck(args, cfg: config_mod.RunConfig, out: Path) -> int:
    seed = 0 if args.seed is None else args.seed
    res = gradcheck(seed=seed, n_draws=args.draws, config=cfg.model)
    path = out / "gradcheck.json"
    path.write_text(json.dumps(asdict(res), indent=1, sort_keys=True) + "\n")
    write_manifest(out, "gradcheck", cfg, {"gradcheck": seed}, {}, {"gradcheck.json": path})
    ok = res.max_rel_error < GRADCHECK_TOLERANCE
    print(f"max relative error {res.max_rel_error:.3e} ({res.worst_param}) over {res.n_draws} draws, "
          f"{res.n_checked} gradient entries: {'PASS' if ok else 'FAIL'} (< {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


def cmd_serve(args, cfg: config_mod.RunConfig, out: Path) -> int:
    model_path = require_file(args.model, "--model")
    bundle = load_model(model_path, cfg.model)
    replay_path = require_file(args.replay, "--replay") if args.replay else None
    topo, topo_path = resolve_topology(args.topology, replay_path)
    endpoint = TcpEndpoint(*parse_addr(args.endpoint)) if args.endpoint else None
    svc = DecisionService(bundle, cfg.policy, cfg.preprocess, topo, endpoint)
    files = {"events.ndjson": out / "events.ndjson", "actions.csv": out / "actions.csv"}
    try:
        with open(files["events.ndjson"], "w") as sink:
            if replay_path is not None:
                replay(svc, load_telemetry(replay_path).iter_time_ordered(), args.speed, sink)
            elif args.listen:
                with socket.create_server(parse_addr(args.listen)) as srv:
                    logger.info("waiting for a sample stream on %s:%d", *srv.getsockname()[:2])
                    conn, _ = srv.accept()
                    with conn, conn.makefile("r", encoding="utf-8") as fh:
                        replay(svc, _samples_from_lines(fh), None, sink)
            else:
                replay(svc, _samples_from_lines(sys.stdin), None, sink)
    finally:
        if endpoint is not None:
            endpoint.close()
    save_actions(files["actions.csv"], svc.actions)
    write_manifest(out, "serve", cfg, {}, {"model": model_path, "replay": replay_path, "topology": topo_path},
                   files)
    counts: dict[str, int] = {}
    for ev in svc.log:
        counts[ev.decision.value] = counts.get(ev.decision.value, 0) + 1
    print(f"scored {len(svc.log)} windows {dict(sorted(counts.items()))}; "
          f"rejected {sum(svc.rejections.values())}, out of order {svc.out_of_order}")
    return 0


def cmd_evaluate(args, cfg: config_mod.RunConfig, out: Path) -> int:
    ev_cfg = cfg.eval if args.seed is None else replace(cfg.eval, first_seed=args.seed)
    cfg = replace(cfg, eval=ev_cfg)
    model_path = bundle = None
    if not ev_cfg.oracle:
        model_path = require_file(args.model, "--model")
        bundle = load_model(model_path, cfg.model)
    sim_cfg = cfg.eval_sim()
    topo_path = None
    if args.topology is not None:
        topo, topo_path = resolve_topology(args.topology)
        sim_cfg = replace(sim_cfg, topology=topo)
    results = run_ab(sim_cfg, bundle, cfg.policy, ev_cfg.seeds, cfg.preprocess, oracle=ev_cfg.oracle)

    files = {"detail.csv": out / "detail.csv", "safety.json": out / "safety.json"}
    logs = out / "logs"
    logs.mkdir(exist_ok=True)
    safety, unfair = {}, []
    for r in results:
        name = f"events-{r.seed}.ndjson"
        with open(logs / name, "w") as fh:
            write_events(fh, r.treated.events)
        files[f"logs/{name}"] = logs / name
        oname = f"outages-{r.seed}.csv"
        save_outages(logs / oname, r.treated.outages)
        files[f"logs/{oname}"] = logs / oname
        safety[str(r.seed)] = check_safety(r.treated.events, r.treated.outages, cfg.policy)
        if not onsets_match(r.baseline.truth, r.treated.truth):
            unfair.append(r.seed)
    files["detail.csv"].write_text(render_report(results)[2])
    files["safety.json"].write_text(json.dumps({"violations": safety, "unfair_seeds": unfair},
                                               indent=1, sort_keys=True) + "\n")
    val_path = None
    if args.sequences is not None and bundle is not None:
        val_path = require_file(args.sequences, "--sequences")
        rep = classifier_report(bundle, load_sequences(val_path), threshold=cfg.policy.threshold)
        files["classifier.json"] = out / "classifier.json"
        doc = asdict(rep)
        doc["lead_time_summary"] = rep.lead_time_summary()
        files["classifier.json"].write_text(json.dumps(doc, indent=1, sort_keys=True, default=float) + "\n")
        print(f"held-out accuracy {rep.accuracy:.4f}, balanced accuracy {rep.balanced_accuracy:.4f}")
    write_manifest(out, "evaluate", cfg, {"eval": ev_cfg.seeds},
                   {"model": model_path, "topology": topo_path, "sequences": val_path}, files)
    n_viol = sum(len(v) for v in safety.values())
    base = sum(r.baseline.metrics.dual_modem_disconnections for r in results)
    treated = sum(r.treated.metrics.dual_modem_disconnections for r in results)
    print(f"{len(results)} seeds: dual-modem outages {base} before, {treated} after; "
          f"safety violations {n_viol}; A/B onset mismatches {len(unfair)}")
    if n_viol or unfair:
        logger.error("evaluation found %d safety violations and %d unfair seeds", n_viol, len(unfair))
        return 1
    return 0


def cmd_report(args, cfg: config_mod.RunConfig, out: Path) -> int:
    detail_path = require_file(args.detail, "--detail")
    text, summary, _ = render_report(read_detail(detail_path))
    files = {"report.csv": out / "report.csv", "report.txt": out / "report.txt"}
    files["report.csv"].write_text(summary)
    files["report.txt"].write_text(text)
    write_manifest(out, "report", cfg, {}, {"detail": detail_path}, files)
    print(text, end="")
    return 0


HANDLERS = {
    "simulate": cmd_simulate, "preprocess": cmd_preprocess, "train": cmd_train, "gradcheck": cmd_gradcheck,
    "serve": cmd_serve, "evaluate": cmd_evaluate, "report": cmd_report,
}


# --------------------------------------------------------------------------- parser


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=_seed, help="override the command's seed")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="modemguard", description="Self-healing dual-modem connectivity pipeline")
    p.add_argument("--version", action="version", version=f"modemguard {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run the offshore link simulator")
    s.add_argument("--topology", help="cell layout CSV (default: reference layout)")
    s.add_argument("--live", action="store_true", help="stream samples as NDJSON while simulating")
    s.add_argument("--connect", metavar="HOST:PORT", help="live: send samples to this address instead of stdout")
    s.add_argument("--command-listen", metavar="HOST:PORT", help="live: accept restart commands here")
    s.add_argument("--speed", type=float, help="live: pace at this multiple of real time")

    s = sub.add_parser("preprocess", parents=[common], help="clean, window and label telemetry")
    s.add_argument("--telemetry", required=True)
    s.add_argument("--actions")
    s.add_argument("--topology")

    s = sub.add_parser("train", parents=[common], help="train the LSTM classifier")
    s.add_argument("--sequences", required=True)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    s.add_argument("--draws", type=int, default=10)

    s = sub.add_parser("serve", parents=[common], help="streaming decision service")
    s.add_argument("--model", required=True)
    s.add_argument("--replay", help="telemetry CSV to replay instead of reading a live stream")
    s.add_argument("--speed", type=float, help="replay pacing as a multiple of real time")
    s.add_argument("--listen", metavar="HOST:PORT", help="accept one NDJSON sample stream on this address")
    s.add_argument("--endpoint", metavar="HOST:PORT", help="restart command channel of a live simulator")
    s.add_argument("--topology")

    s = sub.add_parser("evaluate", parents=[common], help="closed-loop A/B evaluation")
    s.add_argument("--model")
    s.add_argument("--sequences", help="held-out sequences for the classifier report")
    s.add_argument("--topology")

    s = sub.add_parser("report", parents=[common], help="render the before/after table")
    s.add_argument("--detail", required=True, help="detail.csv written by evaluate")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"modemguard: config error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, SchemaError, ModelFormatError) as exc:
        print(f"modemguard: {exc}", file=sys.stderr)
        return 2
    except (ModemGuardError, OSError, ValueError, RuntimeError) as exc:
        print(f"modemguard: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
