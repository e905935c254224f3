"""Experiment orchestration: build a bus world from a scenario, learn the
allowlist, run, and score the run against the attack ground truth."""

from __future__ import annotations

import dataclasses
import json
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .attacks import (AttackKind, AttackLog, DoubleReceiving, Flooding, FreezeDoomLoop, Replay, SbaAttacker,
                      SelectiveDos, Spoof, SpoofMode, fia_run)
from .bus import Bus, NodeKind, Outcome, TraceRecord, format_trace
from .controller import Controller, Dashboard
from .officer import Alert, AllowlistTable, Officer, OfficerMode, format_alerts
from .scenario import AttackConfig, ConfigError, NodeConfig, ScenarioConfig, load_scenario
from .traffic import (candump_schedule, decode_reading, install_burst, install_periodic, install_schedule,
                      load_candump, synthetic_mix)

# legitimate frames queued this close to the end may still be in flight
SETTLE_TICKS = 5_000
SCENARIO_DIR = Path(__file__).with_name("scenarios")


def node_seed(seed: int, name: str) -> int:
    return zlib.crc32(f"{seed}:{name}".encode())


def bundled_scenario(name: str) -> Path:
    return SCENARIO_DIR / name


def resolve_scenario(path_or_name) -> Path:
    p = Path(path_or_name)
    if p.is_file():
        return p
    q = SCENARIO_DIR / p.name
    if q.is_file():
        return q
    raise FileNotFoundError(f"scenario file not found: {path_or_name}")


@dataclass
class World:
    config: ScenarioConfig
    bus: Bus
    officer: Optional[Officer]
    log: AttackLog
    controllers: dict = field(default_factory=dict)
    attackers: dict = field(default_factory=dict)

    @property
    def dashboard(self):
        return self.bus.logger


def _traffic_specs(n: NodeConfig, cfg: ScenarioConfig, taken: set):
    specs = list(n.traffic)
    if n.synthetic:
        seed = n.synthetic_seed if n.synthetic_seed is not None else node_seed(cfg.seed, n.name)
        specs += synthetic_mix(n.synthetic, seed, exclude=taken)
    return specs


def _install_traffic(ctrl: Controller, n: NodeConfig, cfg: ScenarioConfig, taken: set, active: bool):
    specs = _traffic_specs(n, cfg, taken)
    taken.update(s.id for s in specs)
    if not active:
        return
    for spec in specs:
        install_periodic(ctrl, spec, n.payload)
    for spec in n.bursts:
        install_burst(ctrl, spec, n.payload)
    if n.trace and not (n.attack is not None and n.attack.kind == "replay"):
        path = Path(n.trace)
        if not path.is_absolute():
            path = cfg.base_dir / path
        if not path.is_file():
            raise ConfigError(f"[node {n.name}] trace: file not found: {path}")
        install_schedule(ctrl, candump_schedule(load_candump(path), cfg.bitrate_bps))


def _sba_strategy(a: AttackConfig):
    if a.kind == "selective-dos":
        return SelectiveDos(a.targets, a.max_hits, a.target_dlc, a.start, a.stop)
    if a.kind == "double-receiving":
        return DoubleReceiving(a.targets[0], a.start, a.stop)
    return FreezeDoomLoop(a.duration, a.start)


def _fia_strategy(a: AttackConfig, replay_segment=()):
    if a.kind == "spoof":
        mode = SpoofMode.AFTER_LEGIT if a.spoof_mode == "after-legit" else SpoofMode.BLIND
        return Spoof(a.targets[0], a.payload, mode, a.period, a.start, a.stop)
    if a.kind == "flooding":
        return Flooding(a.targets[0], a.period, a.payload, a.start, a.stop)
    return Replay(tuple(replay_segment), a.repeat, a.start)


def build_world(cfg: ScenarioConfig, allowlist: Optional[AllowlistTable] = None, learning: bool = False,
                replay_segments: Optional[dict] = None) -> World:
    """Wire up nodes.  A learning world has every legitimate node talking
    and every attack disabled."""
    bus = Bus(cfg.bitrate_bps)
    world = World(cfg, bus, None, AttackLog())
    taken: set = set()
    for n in cfg.nodes:
        seed = node_seed(cfg.seed + (1 if learning else 0), n.name)
        attack = None if learning else n.attack
        if n.kind is NodeKind.DASHBOARD:
            node = Dashboard(n.name, n.monitored, seed)
            world.controllers[n.name] = node
            bus.attach(node)
            continue
        pure_sba = n.kind is NodeKind.SBA and not (n.traffic or n.bursts or n.synthetic or n.trace)
        host = None
        if not pure_sba:
            host = Controller(n.name, n.kind, n.monitored, seed)
            _install_traffic(host, n, cfg, taken, learning or not n.suppress)
            world.controllers[n.name] = host
        if attack is not None and attack.is_sba:
            node = SbaAttacker(n.name, _sba_strategy(attack), n.monitored, world.log, host)
            world.attackers[n.name] = node
        elif pure_sba:
            if learning:
                continue
            node = None
        else:
            node = host
            if attack is not None:
                seg = (replay_segments or {}).get(n.name, ())
                fia_run(host, _fia_strategy(attack, seg), world.log)
                world.attackers[n.name] = host
        if node is not None:
            bus.attach(node)
    off = cfg.officer
    if learning:
        world.officer = Officer(mode=OfficerMode.LEARNING)
    elif off.mode != "off":
        world.officer = Officer(
            mode=OfficerMode(off.mode), allowlist=allowlist,
            allow_legacy_overflow=off.allow_legacy_overflow, escalate=off.escalate,
            schedule=[(tick, OfficerMode(m)) for tick, m in off.switch_at],
        )
    if world.officer is not None:
        bus.attach(world.officer)
    return world


def learn(cfg: ScenarioConfig, ticks: Optional[int] = None) -> AllowlistTable:
    """Run the attack-free learning world and return the learned table."""
    world = build_world(cfg, learning=True)
    world.bus.run(cfg.officer.learn_ticks if ticks is None else ticks)
    return world.officer.allowlist_from_learning()


def _capture_replay(cfg: ScenarioConfig) -> dict:
    """Record target-id frames from an attack-free run for replay attackers."""
    wanted = {n.name: n.attack for n in cfg.nodes if n.attack is not None and n.attack.kind == "replay"}
    if not wanted:
        return {}
    need = {name: a for name, a in wanted.items() if not cfg.node(name).trace}
    segments = {}
    if need:
        world = build_world(cfg, learning=True)
        world.bus.run(cfg.officer.learn_ticks)
        for name, a in need.items():
            recs = [r for r in world.bus.trace if r.outcome is Outcome.DELIVERED and r.frame.id in a.targets]
            segments[name] = tuple(recs[:16])
    for name in wanted:
        if name not in segments:
            path = Path(cfg.node(name).trace)
            if not path.is_absolute():
                path = cfg.base_dir / path
            segments[name] = tuple(candump_schedule(load_candump(path), cfg.bitrate_bps))
    return segments


def resolve_allowlist(cfg: ScenarioConfig) -> Optional[AllowlistTable]:
    if cfg.officer.mode == "off":
        return None
    src = cfg.officer.allowlist
    if src == "learned":
        return learn(cfg)
    path = Path(src)
    if not path.is_absolute():
        path = cfg.base_dir / path
    if not path.is_file():
        raise ConfigError(f"[officer] allowlist: file not found: {path}")
    return AllowlistTable.load(path)


# -- metrics -----------------------------------------------------------------

@dataclass
class Metrics:
    asr_percent: Optional[float]
    asr_by_kind: dict
    detection_rate_percent: Optional[float]
    miss_rate_percent: Optional[float]
    prevention_rate_percent: Optional[float]
    false_positive_count: int
    legit_delivery_rate_percent: Optional[float]
    delay_histogram: dict
    attacker_busoff_tick: Optional[int]
    attack_entries: int
    alert_count: int
    alerts_by_kind: dict
    prevented_frames: int
    escalation_us: list
    victim_busoff_ticks: dict

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["delay_histogram"] = {str(k): v for k, v in sorted(self.delay_histogram.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _pct(num: int, den: int) -> Optional[float]:
    return None if den == 0 else round(100.0 * num / den, 6)


def _alert_matches(log: AttackLog):
    fia_starts = {sof for starts in log.attempts.values() for sof in starts}
    sba_hits = {(e.bit_time, e.attacker) for e in log if not e.kind.is_fia}

    def match(a: Alert) -> bool:
        return a.frame_start in fia_starts or (a.bit_time, a.tap) in sba_hits
    return match


def compute_metrics(world: World, end: Optional[int] = None) -> Metrics:
    bus, log, officer = world.bus, world.log, world.officer
    end = bus.time if end is None else end
    trace = bus.trace
    alerts = officer.alerts if officer is not None else []
    delivered: Counter = Counter()
    first_delivery: dict = {}
    prevented_uids = set()
    for r in trace:
        if r.uid is None:
            continue
        if r.outcome is Outcome.DELIVERED:
            delivered[r.uid] += 1
            first_delivery.setdefault(r.uid, r.bit_time)
        elif r.outcome is Outcome.PREVENTED:
            prevented_uids.add(r.uid)

    match = _alert_matches(log)
    matched = [a for a in alerts if match(a)]
    alert_starts = {a.frame_start for a in alerts}
    alert_hits = {(a.bit_time, a.tap) for a in alerts}

    detected = 0
    for e in log:
        if e.kind.is_fia:
            ok = any(s in alert_starts for s in log.attempts[e.uid])
        else:
            ok = (e.bit_time, e.attacker) in alert_hits
        detected += ok

    # attack success per kind: (successes, trials)
    tally: dict = {}
    by_kind: dict = {}
    for e in log:
        by_kind.setdefault(e.kind, []).append(e)
    for kind, entries in by_kind.items():
        if kind.is_fia:
            uids = {e.uid for e in entries}
            tally[kind] = (sum(1 for u in uids if delivered[u] > 0), len(uids))
        elif kind is AttackKind.SELECTIVE_DOS:
            uids = {e.uid for e in entries if e.uid is not None}
            tally[kind] = (sum(1 for u in uids if delivered[u] == 0), len(uids))
        elif kind is AttackKind.DOUBLE_RECEIVING:
            uids = {e.uid for e in entries if e.uid is not None}
            tally[kind] = (sum(1 for u in uids if delivered[u] >= 2), len(uids))
        else:
            lo, hi = entries[0].bit_time, entries[-1].bit_time
            due = [it for c in world.controllers.values() for it in c.items
                   if it.tag is None and lo <= it.enqueued <= hi]
            held = sum(1 for it in due if first_delivery.get(it.uid, hi + 1) > hi)
            tally[kind] = (held, len(due))
    asr_by_kind = {k.value: _pct(*v) for k, v in sorted(tally.items(), key=lambda kv: kv[0].value)}
    total = [sum(v[0] for v in tally.values()), sum(v[1] for v in tally.values())]
    asr = _pct(*total) if tally else None

    fia_uids = sorted({e.uid for e in log if e.kind.is_fia})
    prevention = None
    prevent_mode = officer is not None and (
        officer.mode is OfficerMode.PREVENT or any(m == "prevent" for _, m in world.config.officer.switch_at))
    if prevent_mode and fia_uids:
        stopped = sum(1 for u in fia_uids if u in prevented_uids and delivered[u] == 0)
        prevention = _pct(stopped, len(fia_uids))

    legit_total = legit_ok = 0
    for c in world.controllers.values():
        for it in c.items:
            if it.tag is None and it.enqueued <= end - SETTLE_TICKS:
                legit_total += 1
                legit_ok += delivered[it.uid] == 1

    attacker_ticks = [n.bus_off_tick for n in world.attackers.values()
                      if isinstance(n, Controller) and n.bus_off_tick is not None]
    victims = {name: c.bus_off_tick for name, c in sorted(world.controllers.items())
               if c.bus_off_tick is not None and name not in world.attackers}
    kinds = Counter(a.kind.value for a in alerts)
    esc_us = []
    if officer is not None:
        esc_us = [e["duration_us"] for e in officer.report()["escalations"]]
    detection = _pct(detected, len(log)) if officer is not None else None
    return Metrics(
        asr_percent=asr,
        asr_by_kind=asr_by_kind,
        detection_rate_percent=detection,
        miss_rate_percent=None if detection is None else round(100.0 - detection, 6),
        prevention_rate_percent=prevention,
        false_positive_count=len(alerts) - len(matched),
        legit_delivery_rate_percent=_pct(legit_ok, legit_total),
        delay_histogram=dict(Counter(a.bit_offset for a in matched)),
        attacker_busoff_tick=min(attacker_ticks) if attacker_ticks else None,
        attack_entries=len(log),
        alert_count=len(alerts),
        alerts_by_kind=dict(sorted(kinds.items())),
        prevented_frames=len(officer.prevented) if officer is not None else 0,
        escalation_us=esc_us,
        victim_busoff_ticks=victims,
    )


@dataclass
class RunResult:
    world: World
    allowlist: Optional[AllowlistTable]
    metrics: Metrics

    @property
    def trace(self) -> list[TraceRecord]:
        return self.world.bus.trace

    @property
    def alerts(self) -> list[Alert]:
        return self.world.officer.alerts if self.world.officer is not None else []

    @property
    def log(self) -> AttackLog:
        return self.world.log

    def trace_text(self) -> str:
        return format_trace(self.trace)

    def alerts_text(self) -> str:
        return format_alerts(self.alerts)


def run_scenario(cfg: ScenarioConfig, allowlist: Optional[AllowlistTable] = None) -> RunResult:
    cfg.validate()
    if allowlist is None:
        allowlist = resolve_allowlist(cfg)
    world = build_world(cfg, allowlist, replay_segments=_capture_replay(cfg))
    world.bus.run(cfg.duration_ticks)
    return RunResult(world, allowlist, compute_metrics(world))


# -- experiments ---------------------------------------------------------------

@dataclass
class CdfResult:
    rows: list           # (offset, cumulative fraction)
    frames: int
    max_offset: int
    histogram: dict

    def fraction_at(self, offset: int) -> float:
        frac = 0.0
        for o, f in self.rows:
            if o <= offset:
                frac = f
        return frac

    def csv(self) -> str:
        return "offset,fraction\n" + "".join(f"{o},{f:.6f}\n" for o, f in self.rows)


def cdf_from_offsets(offsets: Iterable[int]) -> CdfResult:
    hist = Counter(offsets)
    n = sum(hist.values())
    if n == 0:
        return CdfResult([], 0, 0, {})
    top = max(hist)
    rows, acc = [], 0
    for o in range(0, top + 1):
        acc += hist.get(o, 0)
        rows.append((o, acc / n))
    return CdfResult(rows, n, top, dict(sorted(hist.items())))


def cdf_experiment(cfg: ScenarioConfig, duration: Optional[int] = None) -> CdfResult:
    """Owner-tap transition offset after the ID, over every delivered frame
    of an attack-free run."""
    if cfg.attackers:
        raise ConfigError("the CDF experiment needs attack-free traffic")
    cfg = cfg.with_mode("detect")
    if duration is not None:
        cfg = cfg.replace(duration_ticks=duration)
    res = run_scenario(cfg)
    if res.alerts:
        raise AssertionError(f"attack-free CDF run raised {len(res.alerts)} alerts")
    return cdf_from_offsets(res.world.officer.transition_offsets)


@dataclass
class CoverageResult:
    ecus: tuple
    monitored: tuple
    spoof: dict   # (origin, spoofed-id owner) -> detected
    sba: dict     # (attacker, victim) -> detected
    false_positives: int

    def render(self) -> str:
        def table(title, cells, col):
            head = f"{title}\n{'':>8}" + "".join(f"{c:>4}" for c in self.ecus) + f"   ({col})\n"
            body = ""
            for r in self.ecus:
                mark = "*" if r in self.monitored else " "
                body += f"{r + mark:>8}" + "".join(
                    f"{'-' if r == c else ('Y' if cells[(r, c)] else 'N'):>4}" for c in self.ecus) + "\n"
            return head + body
        return (table("spoofing (rows: origin)", self.spoof, "spoofed id owner") + "\n"
                + table("single-bit attack (rows: attacker)", self.sba, "victim")
                + "* monitored\n")


def expected_coverage(ecus, monitored) -> tuple[dict, dict]:
    m = set(monitored)
    spoof = {(o, x): (o in m or x in m) for o in ecus for x in ecus if o != x}
    sba = {(o, x): o in m for o in ecus for x in ecus if o != x}
    return spoof, sba


def coverage_sweep(base: ScenarioConfig, monitored: Iterable[str] = ("A", "B"),
                   ecus: Iterable[str] = ("A", "B", "C", "D")) -> CoverageResult:
    ecus, monitored = tuple(ecus), tuple(sorted(monitored))
    base = base.with_mode("detect")
    nodes = []
    for n in base.nodes:
        if n.name in ecus:
            n = dataclasses.replace(n, monitored=n.name in monitored, attack=None)
        nodes.append(n)
    base = base.replace(nodes=nodes)
    allowlist = learn(base)
    owned = {n.name: n.traffic[0] for n in base.nodes if n.name in ecus}
    spoof, sba, fps = {}, {}, 0
    for origin in ecus:
        for victim in ecus:
            if origin == victim:
                continue
            spec = owned[victim]
            for key, attack in (
                ("spoof", AttackConfig("spoof", (spec.id,), "after-legit", bytes(range(8)))),
                ("sba", AttackConfig("selective-dos", (spec.id,), target_dlc=spec.dlc)),
            ):
                cfg_nodes = [dataclasses.replace(n, attack=attack) if n.name == origin else n for n in base.nodes]
                res = run_scenario(base.replace(nodes=cfg_nodes), allowlist)
                m = res.metrics
                if m.attack_entries == 0:
                    raise AssertionError(f"{key} {origin}->{victim}: attack never reached the bus")
                fps += m.false_positive_count
                (spoof if key == "spoof" else sba)[(origin, victim)] = m.detection_rate_percent == 100.0
    return CoverageResult(ecus, monitored, spoof, sba, fps)


@dataclass
class DemoResult:
    series: list            # (tick, value, malicious)
    t0: int
    t1: int
    baseline: int
    jitter: int
    spoofed_value: int
    sensor_period: int
    attacker_busoff_tick: Optional[int]
    metrics: Metrics

    def csv(self) -> str:
        return "tick,value,malicious\n" + "".join(f"{t},{v},{int(m)}\n" for t, v, m in self.series)

    def regime(self, lo: int, hi: Optional[int] = None) -> list:
        return [s for s in self.series if s[0] >= lo and (hi is None or s[0] < hi)]


def toy_sensor_demo(cfg: Optional[ScenarioConfig] = None) -> DemoResult:
    """Dashboard view of one sensor reading: clean, then spoofed, then
    protected once the officer switches to prevent."""
    if cfg is None:
        cfg = load_scenario(bundled_scenario("demo-sensor.scn"))
    sensor = next(n for n in cfg.nodes if n.kind is NodeKind.SENSOR)
    attacker = next(n for n in cfg.nodes if n.attack is not None)
    kind, _, arg = sensor.payload.partition(":")
    if kind != "sensor":
        raise ConfigError(f"[node {sensor.name}] payload: the demo needs a sensor:<value>:<jitter> payload")
    value, _, jitter = arg.partition(":")
    switches = [tick for tick, m in cfg.officer.switch_at if m == "prevent"]
    if not switches:
        raise ConfigError("[officer] switch_at: the demo needs a '<tick>:prevent' switch")
    res = run_scenario(cfg)
    sid = sensor.traffic[0].id
    series = [(r.bit_time, decode_reading(r.frame.payload), r.tag is not None)
              for r in res.trace if r.outcome is Outcome.DELIVERED and r.frame.id == sid]
    return DemoResult(series, attacker.attack.start, switches[0], int(value, 0), int(jitter or "0", 0),
                      decode_reading(attacker.attack.payload), sensor.traffic[0].period,
                      res.metrics.attacker_busoff_tick, res.metrics)
