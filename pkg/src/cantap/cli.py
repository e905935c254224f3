"""Command line entry point: ``cantap <command> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from . import harness
from .officer import AmbiguousOwner
from .scenario import OFFICER_MODES, ConfigError, ScenarioConfig, load_scenario


def _load(args) -> ScenarioConfig:
    cfg = load_scenario(harness.resolve_scenario(args.scenario))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "ticks", None) is not None:
        cfg = cfg.replace(duration_ticks=args.ticks)
    if getattr(args, "mode", None) is not None:
        cfg = cfg.with_mode(args.mode)
    return cfg


def _write(path: Optional[str], text: str):
    if path:
        Path(path).write_text(text)


def cmd_run(args) -> int:
    res = harness.run_scenario(_load(args))
    _write(args.trace, res.trace_text())
    _write(args.alerts, res.alerts_text())
    _write(args.metrics, res.metrics.to_json())
    sys.stdout.write(res.metrics.to_json())
    return 0


def cmd_learn(args) -> int:
    cfg = _load(args)
    table = harness.learn(cfg, args.ticks)
    if args.out:
        table.save(args.out)
    sys.stdout.write(table.dumps())
    return 0


def cmd_cdf(args) -> int:
    cfg = _load(args)
    res = harness.cdf_experiment(cfg)
    _write(args.out, res.csv())
    sys.stdout.write(res.csv())
    print(f"# frames={res.frames} max_offset={res.max_offset} fraction_at_4={res.fraction_at(4):.4f}")
    return 0 if res.max_offset <= 6 else 1


def cmd_sweep(args) -> int:
    cfg = _load(args)
    monitored = [m for m in args.monitored.split(",") if m]
    res = harness.coverage_sweep(cfg, monitored)
    sys.stdout.write(res.render())
    spoof, sba = harness.expected_coverage(res.ecus, res.monitored)
    ok = res.spoof == spoof and res.sba == sba and res.false_positives == 0
    print("coverage law holds" if ok else "coverage law VIOLATED")
    return 0 if ok else 1


def cmd_demo(args) -> int:
    cfg = load_scenario(harness.resolve_scenario(args.scenario)) if args.scenario else None
    if cfg is not None and args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    res = harness.toy_sensor_demo(cfg)
    _write(args.out, res.csv())
    _write(args.metrics, res.metrics.to_json())
    before = res.regime(0, res.t0)
    during = res.regime(res.t0, res.t1)
    after = res.regime(res.t1)
    print(f"baseline samples: {len(before)}  values {sorted({v for _, v, _ in before})}")
    print(f"attack samples:   {len(during)}  max {max((v for _, v, _ in during), default=None)}"
          f"  legitimate {sum(1 for s in during if not s[2])}")
    print(f"protected:        {len(after)}  spoofed {sum(1 for s in after if s[2])}")
    print(f"attacker bus-off at tick {res.attacker_busoff_tick}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cantap", description="Bit-level CAN simulator with a CANTX-tap officer.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def common(sp, mode=True):
        sp.add_argument("scenario", help="scenario file (or the name of a bundled one)")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--ticks", type=int, help="override the number of bit-times")
        if mode:
            sp.add_argument("--mode", choices=OFFICER_MODES, help="override the officer mode")

    sp = sub.add_parser("run", help="run a scenario and score it")
    common(sp)
    sp.add_argument("--trace", help="write the frame trace here")
    sp.add_argument("--alerts", help="write the alert log here")
    sp.add_argument("--metrics", help="write the metrics JSON here")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("learn", help="learn an allowlist from an attack-free run")
    common(sp, mode=False)
    sp.add_argument("--out", help="allowlist file to write")
    sp.set_defaults(func=cmd_learn)

    sp = sub.add_parser("cdf", help="owner-tap transition offsets after the ID")
    common(sp, mode=False)
    sp.add_argument("--out", help="CSV file to write")
    sp.set_defaults(func=cmd_cdf)

    sp = sub.add_parser("sweep-coverage", help="detectability matrices for a monitored subset")
    common(sp, mode=False)
    sp.add_argument("--monitored", default="A,B", help="comma list of monitored ECUs (default A,B)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("demo-sensor", help="spoofed sensor reading, then prevention")
    sp.add_argument("scenario", nargs="?", help="demo scenario (default: bundled demo-sensor.scn)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="CSV of dashboard readings")
    sp.add_argument("--metrics", help="write the metrics JSON here")
    sp.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"cantap: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, AmbiguousOwner) as exc:
        print(f"cantap: configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
