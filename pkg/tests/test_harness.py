import json

import pytest
import yaml

from dlma import cli
from dlma.harness import (ConfigError, apply_overrides, config_from_dict, expand, load_configs,
                          load_raw, preset_names, run_experiment, run_suite)

SMALL = {
    "name": "small",
    "seed": 1,
    "total_slots": 120,
    "K": 4,
    "M": 4,
    "channel": {"e_up": 0.0, "e_down": 0.2},
    "users": [{"kind": "agent", "count": 2}, {"kind": "tdma", "frame": 5, "slots": [2]},
              {"kind": "aloha", "p": 0.2}],
    "train": {"batch_size": 8, "buffer_size": 50, "hidden": 8},
}


def test_presets_load():
    names = preset_names()
    assert {"fig9", "fig10", "fig13", "table3", "table4", "table5"} <= set(names)
    for name in names:
        for cfg in load_configs(name):
            assert cfg.n_agents >= 1 and cfg.total_slots == 100_000
    fig9 = load_configs("fig9")
    assert len(fig9) == 16 and fig9[0].name == "fig9[e_down=0.1,K=1]"
    assert {(c.channel.e_down, c.train.K) for c in fig9} >= {(0.6, 8), (0.6, 1)}


def test_config_mapping():
    cfg = config_from_dict(SMALL)
    assert cfg.n_agents == 2 and cfg.n_users == 4
    assert cfg.users[2].tdma_slots == frozenset({1})
    assert cfg.train.K == 4 and cfg.train.batch_size == 8
    assert cfg.channel.e_down == 0.2
    assert cfg.digest() == config_from_dict(dict(SMALL)).digest()


def test_rejects_no_agents():
    raw = {**SMALL, "users": [{"kind": "tdma", "frame": 5, "slots": [2]}]}
    with pytest.raises(ConfigError, match="L >= 1"):
        config_from_dict(raw)


@pytest.mark.parametrize("patch,path", [
    ({"channel": {"e_down": 1.5}}, "channel.e_down"),
    ({"users": [{"kind": "agent"}, {"kind": "csma"}]}, "users[1].kind"),
    ({"users": [{"kind": "agent"}, {"kind": "tdma", "frame": 5, "slots": [7]}]}, "users[1].slots"),
    ({"users": [{"kind": "agent"}, {"kind": "aloha"}]}, "users[1]"),
    ({"train": {"learning_rate": 1}}, "train"),
    ({"train": {"grad_clip": "1e9"}}, "train.grad_clip"),
    ({"train": {"batch_size": 6.5}}, "train.batch_size"),
    ({"bogus": 1}, "<root>"),
    ({"users": [{"kind": "tdma", "frame": 5, "slots": [1]}, {"kind": "agent"}]}, "users"),
])
def test_schema_errors_name_the_path(patch, path):
    with pytest.raises(ConfigError) as info:
        config_from_dict({**SMALL, **patch})
    assert str(info.value).startswith(path)


def test_overrides_and_sweep():
    raw = apply_overrides(SMALL, ["channel.e_down=0.4", "K=2", "sweep={alpha: [0, 1]}"])
    items = expand(raw)
    assert [i["name"] for i in items] == ["small[alpha=0]", "small[alpha=1]"]
    cfgs = [config_from_dict(i) for i in items]
    assert [c.alpha for c in cfgs] == [0, 1]
    assert cfgs[0].channel.e_down == 0.4 and cfgs[0].train.K == 2
    with pytest.raises(ConfigError):
        apply_overrides(SMALL, ["K"])


def test_load_raw_from_file(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({k: v for k, v in SMALL.items() if k != "name"}))
    assert load_raw(path)["name"] == "exp"
    with pytest.raises(ConfigError):
        load_raw(tmp_path / "missing.yaml")


def test_same_seed_is_byte_identical(tmp_path):
    cfg = config_from_dict(SMALL)
    _, s1 = run_experiment(cfg, tmp_path / "a")
    _, s2 = run_experiment(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "run.csv").read_bytes()
    assert a == (tmp_path / "b" / "run.csv").read_bytes()
    assert len(a.splitlines()) == 1 + 120 * 4
    assert s1["throughputs"] == s2["throughputs"]
    assert s1["benchmark"]["sum_throughput"] > 0
    for f in ("summary.json", "config.yaml", "series.csv"):
        assert (tmp_path / "a" / f).exists()
    cfg2 = config_from_dict({**SMALL, "seed": 2})
    run_experiment(cfg2, tmp_path / "c")
    assert (tmp_path / "c" / "run.csv").read_bytes() != a


def test_suite_isolates_failures(tmp_path):
    good = tmp_path / "good.yaml"
    good.write_text(yaml.safe_dump({**SMALL, "total_slots": 30}))
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({**SMALL, "channel": {"e_down": 2}}))
    out = run_suite([good, bad], tmp_path / "out", seeds=2)
    assert sorted("error" in s for s in out) == [False, False, True]
    index = json.loads((tmp_path / "out" / "index.json").read_text())
    assert index["aggregate"]["small"]["runs"] == 2
    assert sorted(s["seed"] for s in out if "error" not in s) == [0, 1]
    empty = run_suite([], tmp_path / "empty")
    assert empty == [] and json.loads((tmp_path / "empty" / "index.json").read_text())["aggregate"] == {}


def test_cli(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    assert cli.main(["run", str(cfg), "--slots", "40", "--seed", "3", "--out", str(tmp_path / "r")]) == 0
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert summary["slots"] == 40 and summary["seed"] == 3
    capsys.readouterr()
    assert cli.main(["oracle", "fig9", "--override", "sweep={}"]) == 0
    doc = yaml.safe_load(capsys.readouterr().out)
    assert doc["sum_throughput"] == pytest.approx(0.8)
    assert cli.main(["suite", str(tmp_path), "--slots", "20", "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["run", str(tmp_path / "nope.yaml")]) == 2
    assert cli.main(["presets"]) == 0
