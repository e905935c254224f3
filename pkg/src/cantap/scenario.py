"""Scenario files.

A scenario is an INI file::

    [scenario]
    name = spoof-demo
    seed = 7
    duration_ticks = 1000000

    [officer]
    mode = detect            # off | detect | prevent
    allowlist = learned      # or a path to an allowlist file

    [node sensor]
    kind = sensor
    monitored = true
    traffic = 0x0C8:8:50000
    payload = sensor:25:1

    [node attacker]
    kind = fia
    attack = spoof
    target = 0x0C8
    attack_payload = FFFF000000000000

Every key is documented in ``NODE_KEYS``/``OFFICER_KEYS``/``SCENARIO_KEYS``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .bus import NodeKind
from .traffic import BurstSpec, TrafficSpec, parse_int, split_list

SCENARIO_KEYS = {
    "name": "label used in reports",
    "seed": "master RNG seed",
    "duration_ticks": "bit-times to simulate (default 1000000, 2 s at 500 kbit/s)",
    "bitrate_bps": "bus bitrate used only to convert bit-times to seconds",
}
OFFICER_KEYS = {
    "mode": "off | detect | prevent",
    "allowlist": "'learned' or a path to an allowlist file",
    "learn_ticks": "length of the attack-free learning run",
    "allow_legacy_overflow": "skip the first-intermission-bit check",
    "escalate": "push killed senders to bus-off (default true)",
    "switch_at": "'<tick>:<mode>' entries applied at the next frame start",
}
NODE_KEYS = {
    "kind": "ecu | sensor | dashboard | simulator | fia | sba",
    "monitored": "CANTX line wired to the officer",
    "traffic": "comma list of id:dlc:period[:offset]",
    "bursts": "comma list of id:dlc:count:every[:offset]",
    "payload": "random | zeros | hex:<bytes> | sensor:<value>:<jitter>",
    "synthetic": "number of ids in a seeded synthetic mix",
    "synthetic_seed": "seed for the synthetic mix (defaults to the scenario seed)",
    "trace": "candump log replayed by this node",
    "suppress": "node takes part in learning but stays silent in the measured run",
    "attack": "spoof | flooding | replay | selective-dos | double-receiving | freeze-doom-loop",
    "target": "attacked id (comma list for selective-dos)",
    "spoof_mode": "blind | after-legit",
    "attack_payload": "hex bytes of spoofed or flooding frames",
    "attack_period": "period of blind spoofing or flooding",
    "attack_start": "first tick of the attack",
    "attack_stop": "tick after which the attack stops",
    "max_hits": "cap on selective-dos injections",
    "target_dlc": "data length the selective-dos attacker expects",
    "duration": "freeze-doom-loop duration",
    "repeat": "replay repetitions",
}

ATTACKS = ("spoof", "flooding", "replay", "selective-dos", "double-receiving", "freeze-doom-loop")
SBA_ATTACKS = ("selective-dos", "double-receiving", "freeze-doom-loop")
OFFICER_MODES = ("off", "detect", "prevent")
DEFAULT_DURATION = 1_000_000
DEFAULT_LEARN = 200_000


class ConfigError(ValueError):
    """Invalid scenario; the message names the offending section and key."""


@dataclass
class AttackConfig:
    kind: str
    targets: tuple = ()
    spoof_mode: str = "blind"
    payload: bytes = bytes(8)
    period: int = 5000
    start: int = 0
    stop: Optional[int] = None
    max_hits: Optional[int] = None
    target_dlc: int = 8
    duration: int = 100_000
    repeat: int = 1

    @property
    def is_sba(self) -> bool:
        return self.kind in SBA_ATTACKS


@dataclass
class NodeConfig:
    name: str
    kind: NodeKind
    monitored: bool = False
    traffic: tuple = ()
    bursts: tuple = ()
    payload: str = "random"
    synthetic: int = 0
    synthetic_seed: Optional[int] = None
    trace: Optional[str] = None
    suppress: bool = False
    attack: Optional[AttackConfig] = None


@dataclass
class OfficerConfig:
    mode: str = "off"
    allowlist: str = "learned"
    learn_ticks: int = DEFAULT_LEARN
    allow_legacy_overflow: bool = False
    escalate: bool = True
    switch_at: tuple = ()


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    duration_ticks: int = DEFAULT_DURATION
    bitrate_bps: int = 500_000
    officer: OfficerConfig = field(default_factory=OfficerConfig)
    nodes: list = field(default_factory=list)
    base_dir: Path = field(default=Path("."), compare=False)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def with_mode(self, mode: str) -> "ScenarioConfig":
        if mode not in OFFICER_MODES:
            raise ConfigError(f"[officer] mode: expected one of {', '.join(OFFICER_MODES)}, got {mode!r}")
        return self.replace(officer=dataclasses.replace(self.officer, mode=mode))

    def node(self, name: str) -> NodeConfig:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    @property
    def attackers(self) -> list[NodeConfig]:
        return [n for n in self.nodes if n.attack is not None]

    def validate(self) -> "ScenarioConfig":
        if self.duration_ticks <= 0:
            raise ConfigError("[scenario] duration_ticks: must be positive")
        if self.officer.mode not in OFFICER_MODES:
            raise ConfigError(f"[officer] mode: expected one of {', '.join(OFFICER_MODES)}")
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate node names")
        if not self.nodes:
            raise ConfigError("scenario declares no [node ...] sections")
        for n in self.nodes:
            a = n.attack
            if n.kind is NodeKind.SBA and (a is None or not a.is_sba):
                raise ConfigError(f"[node {n.name}] attack: sba nodes need an sba attack ({', '.join(SBA_ATTACKS)})")
            if n.kind is NodeKind.FIA and (a is None or a.is_sba):
                raise ConfigError(f"[node {n.name}] attack: fia nodes need spoof, flooding or replay")
            if a is not None and a.kind in ("spoof", "flooding", "selective-dos", "double-receiving") and not a.targets:
                raise ConfigError(f"[node {n.name}] target: required for {a.kind}")
            if n.kind is NodeKind.DASHBOARD and (n.traffic or n.bursts or n.attack):
                raise ConfigError(f"[node {n.name}] kind: a dashboard only receives")
        return self


def _bool(section: str, key: str, text: str) -> bool:
    val = text.strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got {text!r}")


def _int(section: str, key: str, text: str) -> int:
    try:
        return parse_int(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {text!r}") from None


def _opt_int(section, key, text) -> Optional[int]:
    return None if text is None or not text.strip() else _int(section, key, text)


def _check_keys(section: str, got, allowed):
    for k in got:
        if k not in allowed:
            raise ConfigError(f"[{section}] {k}: unknown key")


def parse_scenario(text: str, base_dir: Path = Path(".")) -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed scenario file: {exc}") from None
    cfg = ScenarioConfig(base_dir=base_dir)
    if cp.has_section("scenario"):
        sec = cp["scenario"]
        _check_keys("scenario", sec, SCENARIO_KEYS)
        cfg.name = sec.get("name", cfg.name)
        cfg.seed = _int("scenario", "seed", sec.get("seed", "0"))
        cfg.duration_ticks = _int("scenario", "duration_ticks", sec.get("duration_ticks", str(DEFAULT_DURATION)))
        cfg.bitrate_bps = _int("scenario", "bitrate_bps", sec.get("bitrate_bps", "500000"))
    if cp.has_section("officer"):
        sec = cp["officer"]
        _check_keys("officer", sec, OFFICER_KEYS)
        switches = []
        for item in split_list(sec.get("switch_at", "")):
            tick, _, mode = item.partition(":")
            if mode not in OFFICER_MODES[1:]:
                raise ConfigError(f"[officer] switch_at: bad entry {item!r}")
            switches.append((_int("officer", "switch_at", tick), mode))
        cfg.officer = OfficerConfig(
            mode=sec.get("mode", "off").strip(),
            allowlist=sec.get("allowlist", "learned").strip(),
            learn_ticks=_int("officer", "learn_ticks", sec.get("learn_ticks", str(DEFAULT_LEARN))),
            allow_legacy_overflow=_bool("officer", "allow_legacy_overflow", sec.get("allow_legacy_overflow", "false")),
            escalate=_bool("officer", "escalate", sec.get("escalate", "true")),
            switch_at=tuple(switches),
        )
    for section in cp.sections():
        if section in ("scenario", "officer"):
            continue
        head, _, name = section.partition(" ")
        if head != "node" or not name.strip():
            raise ConfigError(f"[{section}]: unknown section (expected [scenario], [officer] or [node <name>])")
        cfg.nodes.append(_parse_node(section, name.strip(), cp[section]))
    return cfg.validate()


def _parse_node(section: str, name: str, sec) -> NodeConfig:
    _check_keys(section, sec, NODE_KEYS)
    try:
        kind = NodeKind(sec.get("kind", "ecu").strip())
    except ValueError:
        raise ConfigError(f"[{section}] kind: unknown node kind {sec.get('kind')!r}") from None
    if kind is NodeKind.OFFICER:
        raise ConfigError(f"[{section}] kind: the officer is configured in [officer]")
    try:
        traffic = tuple(TrafficSpec.parse(x) for x in split_list(sec.get("traffic", "")))
        bursts = tuple(BurstSpec.parse(x) for x in split_list(sec.get("bursts", "")))
    except ValueError as exc:
        raise ConfigError(f"[{section}] traffic: {exc}") from None
    node = NodeConfig(
        name=name, kind=kind,
        monitored=_bool(section, "monitored", sec.get("monitored", "false")),
        traffic=traffic, bursts=bursts,
        payload=sec.get("payload", "random").strip(),
        synthetic=_int(section, "synthetic", sec.get("synthetic", "0")),
        synthetic_seed=_opt_int(section, "synthetic_seed", sec.get("synthetic_seed")),
        trace=sec.get("trace"),
        suppress=_bool(section, "suppress", sec.get("suppress", "false")),
    )
    attack = sec.get("attack")
    if attack:
        attack = attack.strip()
        if attack not in ATTACKS:
            raise ConfigError(f"[{section}] attack: expected one of {', '.join(ATTACKS)}, got {attack!r}")
        spoof_mode = sec.get("spoof_mode", "blind").strip()
        if spoof_mode not in ("blind", "after-legit"):
            raise ConfigError(f"[{section}] spoof_mode: expected blind or after-legit")
        try:
            payload = bytes.fromhex(sec.get("attack_payload", "00" * 8))
        except ValueError:
            raise ConfigError(f"[{section}] attack_payload: not hex") from None
        if len(payload) > 8:
            raise ConfigError(f"[{section}] attack_payload: at most 8 bytes")
        targets = tuple(_int(section, "target", x) for x in split_list(sec.get("target", "")))
        for t in targets:
            if not 0 <= t < 1 << 11:
                raise ConfigError(f"[{section}] target: {t:#x} is not an 11-bit id")
        node.attack = AttackConfig(
            kind=attack, targets=targets, spoof_mode=spoof_mode, payload=payload,
            period=_int(section, "attack_period", sec.get("attack_period", "5000")),
            start=_int(section, "attack_start", sec.get("attack_start", "0")),
            stop=_opt_int(section, "attack_stop", sec.get("attack_stop")),
            max_hits=_opt_int(section, "max_hits", sec.get("max_hits")),
            target_dlc=_int(section, "target_dlc", sec.get("target_dlc", "8")),
            duration=_int(section, "duration", sec.get("duration", "100000")),
            repeat=_int(section, "repeat", sec.get("repeat", "1")),
        )
    return node


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    return parse_scenario(path.read_text(), path.parent)
