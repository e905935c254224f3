import pytest

from cantap.bus import NodeKind
from cantap.harness import SCENARIO_DIR
from cantap.scenario import ConfigError, load_scenario, parse_scenario

BASIC = """
[scenario]
name = basic
seed = 4
duration_ticks = 5000

[officer]
mode = prevent
learn_ticks = 1000
switch_at = 3000:detect

[node s]
kind = sensor
monitored = yes
traffic = 0x0C8:2:1000, 0x0C9:1:2000:10
payload = sensor:25:1

[node x]
kind = fia
attack = spoof
target = 0x0C8
spoof_mode = after-legit
attack_payload = 00FA
attack_start = 100

[node d]
kind = dashboard
"""


def test_parse_basic():
    cfg = parse_scenario(BASIC)
    assert (cfg.name, cfg.seed, cfg.duration_ticks) == ("basic", 4, 5000)
    assert cfg.officer.mode == "prevent" and cfg.officer.switch_at == ((3000, "detect"),)
    s = cfg.node("s")
    assert s.kind is NodeKind.SENSOR and s.monitored and len(s.traffic) == 2
    x = cfg.node("x")
    assert x.attack.targets == (0xC8,) and x.attack.payload == b"\x00\xfa" and x.attack.start == 100
    assert [n.name for n in cfg.attackers] == ["x"]
    assert cfg.with_mode("off").officer.mode == "off"
    assert cfg.officer.mode == "prevent"


@pytest.mark.parametrize("patch,needle", [
    (("seed = 4", "seed = four"), "[scenario] seed"),
    (("mode = prevent", "mode = maybe"), "[officer] mode"),
    (("monitored = yes", "monitored = perhaps"), "[node s] monitored"),
    (("kind = sensor", "kind = toaster"), "[node s] kind"),
    (("attack = spoof", "attack = ddos"), "[node x] attack"),
    (("target = 0x0C8", "target = 0x900"), "[node x] target"),
    (("attack_payload = 00FA", "attack_payload = zz"), "[node x] attack_payload"),
    (("traffic = 0x0C8:2:1000,", "traffic = 0x0C8:2,"), "[node s] traffic"),
    (("payload = sensor:25:1", "payload = sensor:25:1\ncolour = red"), "[node s] colour"),
    (("[node d]", "[gadget d]"), "[gadget d]"),
    (("target = 0x0C8\n", ""), "[node x] target"),
    (("switch_at = 3000:detect", "switch_at = 3000:off"), "[officer] switch_at"),
])
def test_field_level_errors(patch, needle):
    with pytest.raises(ConfigError) as err:
        parse_scenario(BASIC.replace(*patch))
    assert needle in str(err.value)


def test_kind_attack_consistency():
    with pytest.raises(ConfigError, match="sba nodes"):
        parse_scenario(BASIC.replace("kind = fia", "kind = sba"))
    with pytest.raises(ConfigError, match="dashboard"):
        parse_scenario(BASIC + "traffic = 0x10:1:100\n")
    with pytest.raises(ConfigError, match="no \\[node"):
        parse_scenario("[scenario]\nseed = 1\n")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "missing.scn")


@pytest.mark.parametrize("path", sorted(SCENARIO_DIR.glob("*.scn")), ids=lambda p: p.stem)
def test_bundled_scenarios_load(path):
    cfg = load_scenario(path)
    assert cfg.nodes and cfg.base_dir == path.parent
