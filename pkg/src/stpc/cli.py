"""Command line front door: ``stpc {run,bench,size-modulus,gen-config,party,client}``."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from fractions import Fraction

from .controller import (
    ControllerError,
    modulus_for_bits,
    required_modulus_bits,
)
from .modring import Modulus
from .net.config import SessionConfig, pendulum_config
from .simharness import (
    DEFAULT_DIMS,
    InvariantViolation,
    ParameterViolation,
    bench_subprotocols,
    initial_state,
    measure,
    plant_step,
    plant_from_dict,
    random_measurements,
    run_closed_loop,
    write_csv,
)

EXIT_INVARIANT = 3


def _dims(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _spec_and_cfg(path: str | None):
    if path is None:
        cfg = pendulum_config()
        return cfg.controller_spec(), cfg
    cfg = SessionConfig.load(path)
    return cfg.controller_spec(), cfg


def _open_out(path: str | None):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w")


# --- subcommands -----------------------------------------------------------------

def cmd_size_modulus(args) -> int:
    bits = required_modulus_bits(args.n, args.p, args.k, args.ell, args.lam, args.c, args.gamma)
    print(bits)
    if args.prime:
        print(hex(modulus_for_bits(bits).q))
    if args.check is not None:
        q = Modulus(int(args.check, 0))
        ok = q.log2_floor >= bits
        print(f"floor(log2 q) = {q.log2_floor}: {'ok' if ok else 'too small'}")
        return 0 if ok else 1
    return 0


def cmd_gen_config(args) -> int:
    kw = dict(period_ms=args.period_ms, timeout_s=args.timeout, audit=args.audit)
    cfg = pendulum_config(**kw)
    if args.modulus:
        cfg.q = int(args.modulus, 0)
        cfg.controller_spec()  # sizing check against the new modulus
    if args.parties:
        cfg.parties = {0: args.parties[0], 1: args.parties[1]}
    cfg.plant = {"kind": "demo", "dt": args.period_ms / 1000, "delay": 1,
                 "x0": [0.0, 0.05, 0.0, 0.0]}
    with _open_out(args.out) as fh:
        json.dump(cfg.to_dict(include_controller=not args.party_copy), fh, indent=2)
        fh.write("\n")
    return 0


def _emit_log(log, out) -> None:
    with _open_out(out) as fh:
        for line in log.lines():
            fh.write(line + "\n")
        fh.write(f"# steps={len(log)} mode={log.mode} drift_bound={log.drift_bound}\n")


def cmd_run(args) -> int:
    spec, cfg = _spec_and_cfg(args.config)
    plant = measurements = None
    if args.measurements == "plant":
        plant = plant_from_dict(cfg.plant)
    else:
        measurements = random_measurements(args.steps, spec.p, cfg.measurement.get("k", 18),
                                           cfg.measurement.get("ell", 9), seed=args.seed)
    net_cfg = cfg if (args.mode == "networked" and args.remote) else None
    try:
        log = run_closed_loop(args.mode, spec, plant, args.steps, measurements=measurements,
                              seed=args.seed, audit=not args.no_audit, cfg=net_cfg,
                              strict=not args.keep_going)
    except (InvariantViolation, ParameterViolation) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    _emit_log(log, args.log)
    if log.violations:
        for v in log.violations:
            print(f"invariant violation: {v}", file=sys.stderr)
        return EXIT_INVARIANT
    return 0


def cmd_bench(args) -> int:
    spec, cfg = _spec_and_cfg(args.config)
    protocols = ("mult", "trunc") if args.protocol == "both" else (args.protocol,)
    rows = bench_subprotocols(args.dims, args.reps, args.mode, protocols, spec=spec,
                              cfg=cfg if args.remote else None, seed=args.seed)
    with _open_out(args.out) as fh:
        write_csv(rows, fh)
    return 0


def cmd_party(args) -> int:
    from .net.party import bind_listener, serve_party

    cfg = SessionConfig.load(args.config)
    if args.timeout is not None:
        cfg.timeout_s = args.timeout
    listen = args.listen or cfg.parties[args.role]
    listener = bind_listener(listen)
    host, port = listener.getsockname()[:2]
    print(f"LISTENING {host}:{port}", flush=True)
    report = serve_party(args.role, cfg, listener, args.peer)
    logging.getLogger("stpc.party").info("party %d done: %d steps, %d benchmark runs",
                                         args.role, report.steps, report.bench_runs)
    return 0


def cmd_client(args) -> int:
    from .net.client import client_session

    cfg = SessionConfig.load(args.config)
    if args.timeout is not None:
        cfg.timeout_s = args.timeout
    if args.period_ms is not None:
        cfg.period_ms = args.period_ms
    spec = cfg.controller_spec()
    plant = plant_from_dict(cfg.plant)

    state = [initial_state(plant), None]

    def source(t, last_u):
        if t == 0:
            return list(measure(plant, state[0].x))
        state[0], y = plant_step(plant, state[0], last_u if last_u is not None else [0] * spec.m)
        return list(y)

    with _open_out(args.log) as fh:
        def on_step(rec):
            u = "timeout" if rec.timed_out else ",".join(repr(float(v)) for v in rec.u.flat)
            fh.write(f"step={rec.step} y={','.join(str(float(v)) for v in rec.y.flat)} "
                     f"u={u} rtt_ms={rec.rtt_s * 1e3:.3f}\n")
            fh.flush()

        client_session(cfg, source, args.steps, spec=spec, seed=args.seed, on_step=on_step)
    return 0


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stpc", description="Two-party secret-shared linear controller")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("size-modulus", help="minimum floor(log2 q) for a controller")
    s.add_argument("--n", type=int, default=3)
    s.add_argument("--p", type=int, default=2)
    s.add_argument("--k", type=int, default=64)
    s.add_argument("--ell", type=int, default=32)
    s.add_argument("--lam", type=int, default=80)
    s.add_argument("--c", type=Fraction, default=Fraction("2.34"))
    s.add_argument("--gamma", type=Fraction, default=Fraction("0.59"))
    s.add_argument("--prime", action="store_true", help="also print the smallest prime >= 2^bits")
    s.add_argument("--check", metavar="Q", help="report whether modulus Q is large enough")
    s.set_defaults(func=cmd_size_modulus)

    g = sub.add_parser("gen-config", help="write a session configuration for the demo controller")
    g.add_argument("--out", default="-")
    g.add_argument("--modulus", help="prime modulus (decimal or 0x hex)")
    g.add_argument("--parties", nargs=2, metavar=("ADDR0", "ADDR1"))
    g.add_argument("--period-ms", type=float, default=40.0)
    g.add_argument("--timeout", type=float, default=5.0)
    g.add_argument("--audit", action="store_true", help="test mode: parties return state shares")
    g.add_argument("--party-copy", action="store_true", help="omit the controller matrices")
    g.set_defaults(func=cmd_gen_config)

    r = sub.add_parser("run", help="closed-loop run with invariant checks")
    r.add_argument("--config")
    r.add_argument("--steps", type=int, default=1000)
    r.add_argument("--mode", choices=("inprocess", "networked"), default="inprocess")
    r.add_argument("--remote", action="store_true", help="use the parties listed in the config")
    r.add_argument("--measurements", choices=("plant", "random"), default="plant")
    r.add_argument("--seed", help="test mode: deterministic client randomness")
    r.add_argument("--no-audit", action="store_true")
    r.add_argument("--keep-going", action="store_true", help="log violations instead of stopping")
    r.add_argument("--log", default="-")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="round-trip timings of the two subprotocols (CSV)")
    b.add_argument("--config")
    b.add_argument("--dims", type=_dims, default=list(DEFAULT_DIMS))
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--mode", choices=("inprocess", "networked"), default="networked")
    b.add_argument("--remote", action="store_true")
    b.add_argument("--protocol", choices=("mult", "trunc", "both"), default="both")
    b.add_argument("--seed")
    b.add_argument("--out", default="-")
    b.set_defaults(func=cmd_bench)

    p = sub.add_parser("party", help="run one computing party")
    p.add_argument("--role", type=int, choices=(0, 1), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--listen", help="host:port (port 0 picks a free one)")
    p.add_argument("--peer", help="party 1 address (role 0 only)")
    p.add_argument("--timeout", type=float)
    p.set_defaults(func=cmd_party)

    c = sub.add_parser("client", help="drive the demo plant against running parties")
    c.add_argument("--config", required=True)
    c.add_argument("--steps", type=int, default=250)
    c.add_argument("--seed", help="test mode: deterministic client randomness")
    c.add_argument("--timeout", type=float)
    c.add_argument("--period-ms", type=float)
    c.add_argument("--log", default="-")
    c.set_defaults(func=cmd_client)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ControllerError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
