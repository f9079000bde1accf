import pytest

from weifed.config import ConfigError, ExperimentConfig

BASE = """
[data]
class_counts = [400, 200, 120, 80]
dim = 10
client_count = 8

[training]
rounds = 2
"""


def errors_of(text):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_toml(text)
    return info.value.errors


def test_documented_defaults():
    cfg = ExperimentConfig()
    assert cfg.training.hidden == [64, 32]
    assert (cfg.training.lr, cfg.training.batch_size, cfg.training.local_epochs) == (0.01, 32, 5)
    assert cfg.training.rounds == 100
    assert cfg.data.client_count == 20 and cfg.data.eta == 0.4
    assert cfg.attack.adversary_fraction == 0.15
    assert cfg.validate() == []


def test_eta_zero_names_the_field():
    assert errors_of(BASE.replace("[data]", "[data]\neta = 0")) == ["data.eta: must be > 0"]


def test_unknown_keys_and_sections_rejected():
    errs = errors_of(BASE + "\n[training2]\nx = 1\n" + "\n[attack]\npoison_rate = 0.1\n")
    assert "training2: unknown section" in errs
    assert "attack.poison_rate: unknown key" in errs


def test_types_are_strict():
    errs = errors_of(BASE.replace("rounds = 2", 'rounds = "2"'))
    assert errs and errs[0].startswith("training.rounds:")
    errs = errors_of(BASE.replace("dim = 10", "dim = 10.5"))
    assert errs[0].startswith("data.dim:")
    # integers are accepted where floats are expected
    assert ExperimentConfig.from_toml(BASE + "\n[attack]\npoison_ratio = 1\n").attack.poison_ratio == 1.0


def test_cross_field_constraints():
    errs = errors_of(BASE + '\n[attack]\nkind = "LabelFlip"\ntarget_labels = [7]\n')
    assert any(e.startswith("attack.target_labels") for e in errs)
    errs = errors_of(BASE + '\n[defense]\naggregator = "Krum"\nf = 3\n')
    assert any(e.startswith("defense.f") for e in errs)
    errs = errors_of(BASE + '\n[attack]\nkind = "FGSM"\ntarget_labels = [1]\nadversary_fraction = 0.5\n')
    assert any("one-third cap" in e for e in errs)


def test_all_problems_reported_together():
    errs = errors_of(BASE.replace("[data]", "[data]\neta = -1\ntest_fraction = 2.0"))
    assert len(errs) == 2


def test_adversary_count_rounding():
    cfg = ExperimentConfig.from_toml(BASE + '\n[attack]\nkind = "FGSM"\ntarget_labels = [1]\n')
    assert cfg.adversary_count == 1  # 0.15 * 8 = 1.2
    assert ExperimentConfig().replace({"attack.kind": "FGSM", "attack.target_labels": [0]}).adversary_count == 3
    assert ExperimentConfig.from_toml(BASE).adversary_count == 0


def test_replace_and_roundtrip(tmp_path):
    cfg = ExperimentConfig.from_toml(BASE)
    cfg2 = cfg.replace({"seeds.master": 9, "defense.aggregator": "Median"})
    assert cfg2.seeds.master == 9 and cfg.seeds.master == 0
    assert ExperimentConfig.from_dict(cfg2.to_dict()) == cfg2
    with pytest.raises(ConfigError):
        cfg.replace({"defense.top_t": 100})


def test_load_resolves_relative_paths(tmp_path):
    p = tmp_path / "exp.toml"
    p.write_text('[data]\nsource = "csv"\ncsv_path = "flows.csv"\nschema_path = "s.toml"\n')
    cfg = ExperimentConfig.load(p)
    assert cfg.resolve_path(cfg.data.csv_path) == tmp_path / "flows.csv"
