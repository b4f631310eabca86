"""Command-line entry point wiring the whole pipeline.

One binary, subcommand style: dataset generation and ingestion, training
and evaluation, fuzzy inspection, session replay, chain lifecycle, the
upload/retrieve protocol, the threat suite and the timing benchmark.
A JSON config file can hold defaults; explicit flags always win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields

from . import contracts, crypto, fuzzy, gateway, ledger, neural, physio, session
from .contracts import ACCESS_POLICY_CONTRACT, DATA_STORE_CONTRACT, encode_call

# one named indicator per detected stress state
INDICATORS = {
    physio.StressState.LOW_NORMAL: "led-low-normal",
    physio.StressState.MEDIUM_LOW: "led-medium-low",
    physio.StressState.MEDIUM: "led-medium",
    physio.StressState.MEDIUM_HIGH: "led-medium-high",
    physio.StressState.HIGH: "led-high",
}


@dataclass
class Config:
    data: str = "dataset.csv"
    model: str = "model.json"
    chain: str = "chain.bin"
    keys: str = "keys"
    learning_rate: float = 0.5
    batch_size: int = 32
    max_steps: int = 20_000
    seed: int = 0
    log_every: int = 250
    target_bits: int = 12
    window_minutes: int = 15
    classifier: str = "crisp"


def load_config(path: str | None) -> Config:
    config = Config()
    if path is None:
        return config
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    known = {f.name for f in fields(Config)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, value in raw.items():
        setattr(config, key, type(getattr(config, key))(value))
    return config


def _pick(args_value, config_value):
    return config_value if args_value is None else args_value


# -- key and chain file plumbing -----------------------------------------


def _key_path(keys_dir: str, name: str) -> str:
    return os.path.join(keys_dir, f"{name}.key")


def _load_keys(keys_dir: str) -> gateway.NodeRegistry:
    requesters = {}
    for entry in sorted(os.listdir(keys_dir)):
        if entry.startswith("requester-") and entry.endswith(".key"):
            name = entry[len("requester-") : -len(".key")]
            requesters[name] = crypto.load_keypair(os.path.join(keys_dir, entry))
    return gateway.NodeRegistry(
        admin=crypto.load_keypair(_key_path(keys_dir, "admin")),
        edge=crypto.load_keypair(_key_path(keys_dir, "edge")),
        requesters=requesters,
    )


def _open_deployment(config: Config, capture_path: str | None = None) -> gateway.Deployment:
    registry = _load_keys(config.keys)
    publics = registry.public_keys()
    chain = ledger.load_chain(config.chain, registry=publics)
    engine = contracts.rebuild_engine(chain)
    bus = gateway.MessageBus(capture=capture_path is not None)
    admin = gateway.AdminNode(registry.admin, bus, publics, chain, engine)
    edge = gateway.EdgeClient(registry.edge, bus, publics, registry.admin.key_id)
    requesters = {
        name: gateway.RequesterClient(pair, bus, publics)
        for name, pair in registry.requesters.items()
    }
    return gateway.Deployment(registry, bus, chain, engine, admin, edge, requesters)


def _finish_deployment(dep: gateway.Deployment, config: Config, capture_path: str | None) -> None:
    ledger.save_chain(dep.chain, config.chain)
    if capture_path is not None:
        dep.bus.dump_capture(capture_path)


def _parse_values(text: str) -> physio.SleepSample:
    parts = [p for p in text.replace(",", " ").split() if p]
    return physio.SleepSample.from_values([float(p) for p in parts])


# -- subcommands ----------------------------------------------------------


def cmd_gen_data(args, config: Config) -> int:
    per_class = _pick(args.per_class, 3000)
    seed = _pick(args.seed, config.seed)
    out = _pick(args.out, config.data)
    dataset = physio.synth_dataset(per_class, seed=seed)
    physio.write_csv(dataset, out)
    print(f"wrote {len(dataset)} rows ({dataset.n_train} train) to {out}")
    return 0


def cmd_train(args, config: Config) -> int:
    data = _pick(args.data, config.data)
    out = _pick(args.out, config.model)
    dataset = physio.load_csv(data)
    train_config = neural.TrainConfig(
        batch_size=_pick(args.batch_size, config.batch_size),
        learning_rate=_pick(args.learning_rate, config.learning_rate),
        max_steps=_pick(args.max_steps, config.max_steps),
        seed=_pick(args.seed, config.seed),
        log_every=_pick(args.log_every, config.log_every),
    )
    params, history = neural.train(dataset, train_config)
    neural.save_params(params, out)
    if args.history:
        neural.write_history(history, args.history)
    last = history[-1]
    print(
        f"trained {last.step} steps; loss {last.loss:.3f}, "
        f"accuracy {last.accuracy * 100:.3f}%; saved to {out}"
    )
    return 0


def cmd_eval(args, config: Config) -> int:
    params = neural.load_params(_pick(args.model, config.model))
    dataset = physio.load_csv(_pick(args.data, config.data))
    rows = dataset.test_rows if dataset.test_rows else dataset.rows
    report = neural.evaluate(params, rows)
    if args.json:
        print(json.dumps(report.to_dict()))
        return 0
    print(f"accuracy {report.accuracy * 100:.3f}% over {len(rows)} rows")
    print(
        f"macro precision {report.macro_precision * 100:.3f}% "
        f"recall {report.macro_recall * 100:.3f}% f1 {report.macro_f1 * 100:.3f}%"
    )
    for state in physio.StressState:
        print(
            f"  class {int(state)} ({state.label}): "
            f"P {report.precision[state] * 100:.2f}% R {report.recall[state] * 100:.2f}% "
            f"F1 {report.f1[state] * 100:.2f}%"
        )
    return 0


def cmd_predict(args, config: Config) -> int:
    params = neural.load_params(_pick(args.model, config.model))
    sample = _parse_values(args.values)
    state, confidence = neural.predict(params, sample)
    print(f"prediction: {state.label} ({confidence:.1f}%)")
    return 0


def cmd_fuzzy(args, config: Config) -> int:
    if args.fuzzy_command == "count":
        print(fuzzy.rule_count(8, 5))
        return 0
    system = fuzzy.StressFuzzySystem()
    rows = fuzzy.surface_rows(
        system, args.x, args.y, at_level=args.at_level, steps=args.steps
    )
    out = args.out
    with open(out, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(f"{args.x},{args.y},output\n")
        for x, y, value in rows:
            fh.write(f"{x},{y},{value}\n")
    print(f"wrote {args.steps * args.steps} surface points to {out}")
    return 0


def _classifier(name: str, config: Config) -> physio.Classifier:
    if name == "crisp":
        return physio.classify_crisp
    if name == "fuzzy":
        return fuzzy.StressFuzzySystem().classify
    if name == "neural":
        params = neural.load_params(config.model)
        return lambda sample: neural.predict(params, sample)[0]
    raise ValueError(f"unknown classifier {name!r}")


def cmd_detect(args, config: Config) -> int:
    frames = session.load_replay(args.replay)
    classifier = _classifier(_pick(args.classifier, config.classifier), config)
    window_minutes = _pick(args.window_minutes, config.window_minutes)
    windows = session.detect_windows(frames, classifier, window_seconds=window_minutes * 60)
    run = session.run_session(frames)
    timeline = run.timeline
    latency = timeline.latency_minutes
    prediction = session.predict_next_day(
        windows, latency, timeline.slept_minutes
    )
    if args.json:
        print(
            json.dumps(
                {
                    "latency_minutes": latency,
                    "slept_minutes": timeline.slept_minutes,
                    "wake": timeline.wake_kind,
                    "windows": [
                        {
                            "start": w.start,
                            "end": w.end,
                            "detected": int(w.detected),
                            "flagged": w.flagged,
                        }
                        for w in windows
                    ],
                    "next_day": prediction.sp.value,
                    "advisory": prediction.advisory,
                }
            )
        )
        return 0
    for w in windows:
        flag = " (carried)" if w.flagged else ""
        print(
            f"window {w.start / 60:.0f}-{w.end / 60:.0f} min: "
            f"{w.detected.label} [{INDICATORS[w.detected]}]{flag}"
        )
    print(
        f"latency {latency:.1f} min, slept {timeline.slept_minutes:.1f} min, "
        f"woke {timeline.wake_kind}"
    )
    print(f"next-day prediction: {prediction.sp.value} ({prediction.advisory})")
    actions = session.control_actions(
        [w.detected for w in windows],
        prediction,
        on_pillow=False,
        latency_minutes=latency,
    )
    for action in actions:
        print(action.line())
    return 0


def cmd_keys(args, config: Config) -> int:
    keys_dir = _pick(args.keys, config.keys)
    os.makedirs(keys_dir, exist_ok=True)
    seed = _pick(args.seed, None)
    names = ["admin", "edge"] + [f"requester-{r}" for r in args.requesters]
    for offset, name in enumerate(names):
        pair = crypto.keygen(None if seed is None else seed * 100 + offset)
        crypto.save_keypair(pair, _key_path(keys_dir, name))
        print(f"{name}: key id {pair.key_id.hex()}")
    return 0


def cmd_chain(args, config: Config) -> int:
    config.chain = _pick(args.chain, config.chain)
    config.keys = _pick(args.keys, config.keys)
    if args.chain_command == "init":
        registry = _load_keys(config.keys)
        publics = registry.public_keys()
        chain = ledger.Chain(
            registry=publics, target_bits=_pick(args.target_bits, config.target_bits)
        )
        engine = contracts.ContractEngine()
        admin = gateway.AdminNode(
            registry.admin, gateway.MessageBus(), publics, chain, engine
        )
        admin.submit(admin.my_tx(ACCESS_POLICY_CONTRACT, encode_call("deploy")))
        admin.submit(
            admin.my_tx(DATA_STORE_CONTRACT, encode_call("deploy", [registry.edge.key_id]))
        )
        ledger.save_chain(chain, config.chain)
        print(f"initialized chain at height {chain.height} in {config.chain}")
        return 0
    if args.chain_command == "verify":
        registry = _load_keys(config.keys)
        chain = ledger.load_chain(config.chain, registry=registry.public_keys())
        audit = ledger.verify_chain(chain)
        if audit.ok:
            print(f"chain ok at height {chain.height}")
            return 0
        raise RuntimeError(f"chain invalid at height {audit.bad_height}")
    if args.chain_command == "export":
        registry = _load_keys(config.keys)
        chain = ledger.load_chain(config.chain, registry=registry.public_keys())
        print(ledger.export_chain(chain, miner_label=registry.admin.key_id.hex()[:16]))
        return 0
    raise ValueError(f"unknown chain command {args.chain_command!r}")


def cmd_roles(args, config: Config) -> int:
    config.chain = _pick(args.chain, config.chain)
    config.keys = _pick(args.keys, config.keys)
    dep = _open_deployment(config)
    admin = dep.admin
    if args.roles_command == "add":
        perms = [p.strip().encode() for p in args.perms.split(",") if p.strip()]
        call = encode_call("add-role", [args.role.encode()] + perms)
        event, _ = admin.submit(admin.my_tx(ACCESS_POLICY_CONTRACT, call))
    elif args.roles_command == "remove":
        event, _ = admin.submit(
            admin.my_tx(ACCESS_POLICY_CONTRACT, encode_call("remove-role", [args.role.encode()]))
        )
    elif args.roles_command == "bind":
        pair = dep.registry.requesters[args.requester]
        event, _ = admin.submit(
            admin.my_tx(
                ACCESS_POLICY_CONTRACT,
                encode_call("add-bearer", [pair.key_id, args.role.encode()]),
            )
        )
    elif args.roles_command == "unbind":
        pair = dep.registry.requesters[args.requester]
        event, _ = admin.submit(
            admin.my_tx(ACCESS_POLICY_CONTRACT, encode_call("remove-bearer", [pair.key_id]))
        )
    else:
        raise ValueError(f"unknown roles command {args.roles_command!r}")
    _finish_deployment(dep, config, None)
    print(f"{event.action} {event.subject}: {event.outcome}")
    return 0 if event.outcome == "granted" else 1


def cmd_upload(args, config: Config) -> int:
    config.chain = _pick(args.chain, config.chain)
    config.keys = _pick(args.keys, config.keys)
    dep = _open_deployment(config, args.capture)
    if args.values:
        sample = _parse_values(args.values)
    else:
        dataset = physio.synth_dataset(1, seed=_pick(args.seed, config.seed))
        sample = dataset.rows[0][0]
    detected = physio.classify_crisp(sample)
    if args.timestamp is not None:
        timestamp = args.timestamp
    elif dep.engine.store.records:
        timestamp = dep.engine.store.records[-1].timestamp + 900
    else:
        timestamp = 1000
    record = contracts.PhysiologicalRecord(
        timestamp=timestamp, sample=sample, detected=detected, predicted=args.predicted
    )
    receipt = gateway.upload_flow(dep, record)
    _finish_deployment(dep, config, args.capture)
    print(
        f"stored record ts={timestamp} detected={detected.label} "
        f"block={receipt.block_hash.hex()[:16]} height={receipt.height}"
    )
    return 0


def cmd_retrieve(args, config: Config) -> int:
    config.chain = _pick(args.chain, config.chain)
    config.keys = _pick(args.keys, config.keys)
    dep = _open_deployment(config, args.capture)
    outcome = gateway.retrieve_flow(dep, args.requester, args.query)
    _finish_deployment(dep, config, args.capture)
    if isinstance(outcome, gateway.Denial):
        raise PermissionError(f"retrieval denied ({outcome.reason})")
    if args.query == "latest":
        record = contracts.PhysiologicalRecord.decode(outcome)
        values = ",".join(f"{v:g}" for v in record.sample.as_tuple())
        print(
            f"record ts={record.timestamp} detected={record.detected.label} "
            f"predicted={record.predicted} features={values}"
        )
    else:
        means = ",".join(f"{m:g}" for m in outcome.means)
        print(
            f"averages over {outcome.count} records: modal={outcome.modal_state.label} "
            f"means={means}"
        )
    return 0


def cmd_threats(args, config: Config) -> int:
    results = gateway.threat_suite(seed=_pick(args.seed, config.seed))
    if args.json:
        print(
            json.dumps(
                [
                    {"threat": r.number, "name": r.name, "passed": r.passed, "detail": r.detail}
                    for r in results
                ]
            )
        )
    else:
        for r in results:
            print(f"threat {r.number} ({r.name}): {'PASS' if r.passed else 'FAIL'} - {r.detail}")
    return 0 if all(r.passed for r in results) else 1


def cmd_bench(args, config: Config) -> int:
    trials = args.trials
    low_bits = _pick(args.target_bits, 8)
    high_bits = args.high_bits
    reports = [gateway.tt_metrics(n_trials=trials, target_bits=low_bits, seed=config.seed)]
    if high_bits is not None:
        reports.append(
            gateway.tt_metrics(n_trials=trials, target_bits=high_bits, seed=config.seed)
        )
    if args.json:
        print(json.dumps([r.to_dict() for r in reports]))
        return 0
    for report in reports:
        print(f"target bits {report.target_bits}, {trials} trials per function:")
        for row in report.rows:
            print(
                f"  {row.function:<20} min {row.min_s:.6f}s  "
                f"mean {row.mean_s:.6f}s  max {row.max_s:.6f}s"
            )
    if len(reports) == 2:
        slower = all(
            high.mean_s > low.mean_s
            for low, high in zip(reports[0].rows, reports[1].rows)
        )
        print(f"mean transaction time increases with difficulty: {'yes' if slower else 'no'}")
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sleepstress",
        description="stress-from-sleep pipeline with a private permissioned ledger",
    )
    parser.add_argument("--config", help="JSON config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic labeled dataset")
    p.add_argument("--per-class", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the neural classifier")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--history", default=None, help="write step,loss,accuracy CSV")
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--log-every", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model on the test split")
    p.add_argument("--model", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="classify one sample with a trained model")
    p.add_argument("--model", default=None)
    p.add_argument("--values", required=True, help="8 comma-separated feature values")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("fuzzy", help="fuzzy system inspection")
    fuzzy_sub = p.add_subparsers(dest="fuzzy_command", required=True)
    fuzzy_sub.add_parser("count", help="print the rule-base size")
    ps = fuzzy_sub.add_parser("surface", help="export a response surface as CSV")
    ps.add_argument("--x", default="snoring")
    ps.add_argument("--y", default="heart_rate")
    ps.add_argument("--at-level", type=int, default=2)
    ps.add_argument("--steps", type=int, default=21)
    ps.add_argument("--out", default="surface.csv")
    p.set_defaults(fn=cmd_fuzzy)

    p = sub.add_parser("detect", help="replay a recorded night and detect stress windows")
    p.add_argument("replay", help="sensor replay CSV")
    p.add_argument("--classifier", choices=("crisp", "fuzzy", "neural"), default=None)
    p.add_argument("--window-minutes", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("keys", help="key management")
    keys_sub = p.add_subparsers(dest="keys_command", required=True)
    pg = keys_sub.add_parser("gen", help="generate admin, edge and requester keypairs")
    pg.add_argument("--keys", default=None)
    pg.add_argument("--seed", type=int, default=None)
    pg.add_argument("--requesters", nargs="*", default=["family"])
    p.set_defaults(fn=cmd_keys)

    p = sub.add_parser("chain", help="chain lifecycle")
    chain_sub = p.add_subparsers(dest="chain_command", required=True)
    for name, helptext in (
        ("init", "create a genesis chain and deploy the contracts"),
        ("verify", "re-validate every block"),
        ("export", "print a human-readable explorer dump"),
    ):
        pc = chain_sub.add_parser(name, help=helptext)
        pc.add_argument("--chain", default=None)
        pc.add_argument("--keys", default=None)
        if name == "init":
            pc.add_argument("--target-bits", type=int, default=None)
    p.set_defaults(fn=cmd_chain)

    p = sub.add_parser("roles", help="access-policy role management")
    roles_sub = p.add_subparsers(dest="roles_command", required=True)
    for name in ("add", "remove", "bind", "unbind"):
        pr = roles_sub.add_parser(name)
        pr.add_argument("--chain", default=None)
        pr.add_argument("--keys", default=None)
        if name in ("add", "remove", "bind"):
            pr.add_argument("--role", required=True)
        if name == "add":
            pr.add_argument("--perms", default="retrieve,averages")
        if name in ("bind", "unbind"):
            pr.add_argument("--requester", required=True)
    p.set_defaults(fn=cmd_roles)

    p = sub.add_parser("upload", help="run the secure upload flow for one record")
    p.add_argument("--chain", default=None)
    p.add_argument("--keys", default=None)
    p.add_argument("--values", default=None, help="8 comma-separated feature values")
    p.add_argument("--seed", type=int, default=None, help="used when --values is absent")
    p.add_argument("--timestamp", type=int, default=None)
    p.add_argument("--predicted", default="L/N")
    p.add_argument("--capture", default=None, help="dump wire bytes to this file")
    p.set_defaults(fn=cmd_upload)

    p = sub.add_parser("retrieve", help="run the secure access flow")
    p.add_argument("--chain", default=None)
    p.add_argument("--keys", default=None)
    p.add_argument("--requester", default="family")
    p.add_argument("--query", choices=("latest", "averages"), default="latest")
    p.add_argument("--capture", default=None, help="dump wire bytes to this file")
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("threats", help="run the four-scenario threat suite")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_threats)

    p = sub.add_parser("bench", help="transaction-time benchmark")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--target-bits", type=int, default=None)
    p.add_argument("--high-bits", type=int, default=None, help="second difficulty to compare")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = load_config(args.config)
        return args.fn(args, config)
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
