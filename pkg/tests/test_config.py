import pytest

from m3dbfs import RunConfig
from m3dbfs.config import apply_overrides, parse_config, parse_config_text
from m3dbfs.errors import ConfigError


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("")
    assert parse_config(path) == RunConfig()


def test_selected_mixing_weights_are_accepted():
    cfg = parse_config_text("alpha = 0.6\nbeta = 0.3\n")
    assert (cfg.alpha, cfg.beta) == (0.6, 0.3)


def test_comments_blank_lines_and_types():
    cfg = parse_config_text(
        "# experiment\n\nn_experts = 3   # three experts\nlr = 1e-3\nsc_log1p = yes\nout_root = /tmp/x\n"
    )
    assert cfg.n_experts == 3 and cfg.lr == 1e-3 and cfg.sc_log1p is True
    assert cfg.out_root == "/tmp/x"


def test_range_error_cites_interval_and_line():
    with pytest.raises(ConfigError, match=r"run\.cfg:3: alpha .*\(0,1\)"):
        parse_config_text("seed = 1\n\nalpha = 1.5\n", source="run.cfg")


@pytest.mark.parametrize("text, fragment", [
    ("seed = 1\nbogus = 2\n", ":2: unknown key 'bogus'"),
    ("n_experts = four\n", ":1: cannot parse n_experts"),
    ("moe_loss = maybe\n", ":1: cannot parse moe_loss"),
    ("seed 3\n", ":1: expected 'key = value'"),
    ("seed = 1\nseed = 2\n", ":2: duplicate key"),
    ("n_experts = 2\ntop_k = 3\n", ":2: top_k"),
    ("n_experts = 17\n", ":1: n_experts"),
])
def test_parse_errors_carry_line_numbers(text, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text, source="c")
    assert fragment in str(info.value)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "absent.cfg")


def test_overrides_apply_on_top_of_base():
    base = parse_config_text("n_experts = 3\nseed = 5\n")
    cfg = apply_overrides(base, ["seed=9", "beta = 0.2"])
    assert (cfg.n_experts, cfg.seed, cfg.beta) == (3, 9, 0.2)
    with pytest.raises(ConfigError, match="--set:1"):
        apply_overrides(base, ["beta=0"])


def test_direct_construction_validates():
    with pytest.raises(ConfigError, match="beta"):
        RunConfig(beta=1.0)


def test_echo_round_trips():
    cfg = RunConfig(seed=4, alpha=0.55, moe_loss=False, data_dir="d")
    assert parse_config_text(cfg.echo()) == cfg


def test_derived_settings():
    cfg = RunConfig(token_dim=12)
    assert cfg.d_hidden == 12
    assert cfg.replace(expert_hidden=5).d_hidden == 5
    synth = cfg.synth_config()
    assert (synth.N, synth.n_samples, synth.seed) == (cfg.n_regions, cfg.n_samples, cfg.seed)
    assert "data_dir" not in cfg.model_dict() and "alpha" in cfg.model_dict()


def test_later_overrides_win():
    assert apply_overrides(RunConfig(), ["seed=1", "seed=2"]).seed == 2


def test_override_order_of_dependent_keys_is_free():
    cfg = apply_overrides(RunConfig(), ["top_k=6", "n_experts=8"])
    assert (cfg.top_k, cfg.n_experts) == (6, 8)
