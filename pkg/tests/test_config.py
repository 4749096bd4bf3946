import pytest
from hypothesis import given, strategies as st

from myow.config import (PRESETS, ConfigError, RunConfig, from_text, load_config, preset, to_text, with_mode)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate_and_round_trip(name):
    cfg = preset(name)
    text = to_text(cfg)
    again = from_text(text)
    assert again == cfg and to_text(again) == text


def test_neural_appendix_values():
    cfg = preset("neural-appendix")
    assert (cfg.optim.kind, cfg.optim.lr, cfg.optim.weight_decay) == ("adamw", 0.02, 2e-5)
    assert (cfg.ema.tau_base, cfg.ema.tau_final, cfg.ema.schedule) == (0.98, 1.0, "cosine")
    assert (cfg.train.batch_size, cfg.miner.pool_size, cfg.miner.k) == (512, 1024, 5)
    assert (cfg.mining.lam, cfg.mining.lam_warmup_epochs, cfg.train.epochs) == (1.0, 10, 1000)


def test_neural_main_values():
    cfg = preset("neural-main")
    assert (cfg.miner.k, cfg.mining.lam, cfg.miner.pool_size, cfg.ema.tau_base) == (3, 0.1, 512, 0.98)


def test_rodent_values():
    cfg = preset("rodent")
    assert cfg.model.rep_size == 64 and cfg.miner.mask == "exclude-time-window" and cfg.miner.window_s == 1800.0
    assert cfg.augment.T.jitter.window == 3


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        from_text("miner.kk = 3")
    with pytest.raises(ConfigError, match="unknown section"):
        from_text("solver.k = 3")
    with pytest.raises(ConfigError, match="unknown key"):
        from_text("epochs = 3")


@pytest.mark.parametrize("text", ["mode = simclr", "miner.k = 0", "miner.k = 2000", "train.batch_size = 1",
                                  "ema.tau_base = 1.5", "miner.mask = sometimes", "train.grad_clip = 1.0",
                                  "augment.T = dropout(p_min=0.1, p_max=0.2) + jitter(window=2)",
                                  "miner.k = three", "just words"])
def test_invalid_values_rejected(text):
    with pytest.raises(ConfigError):
        from_text(text)


def test_preset_line_must_come_first():
    assert from_text("preset = neural-main\nseed = 4").seed == 4
    with pytest.raises(ConfigError, match="preset"):
        from_text("seed = 4\npreset = neural-main")


def test_comments_and_same_mined_transform(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# a comment\nseed = 3  # trailing\naugment.T_m = same\n")
    cfg = load_config(p)
    assert cfg.seed == 3 and cfg.augment.mined == cfg.augment.T


def test_byol_mode_zeroes_lambda():
    cfg = with_mode(preset("reach-desk"), "byol")
    assert cfg.mode == "byol" and cfg.mining.lam == 0.0


@given(st.integers(0, 2**31), st.sampled_from(["myow", "byol"]), st.integers(1, 50), st.floats(1e-5, 1.0),
       st.sampled_from(["none", "exclude-same-trial", "exclude-time-window"]),
       st.sampled_from(["cascaded", "parallel", "single"]))
def test_round_trip_fixed_point(seed, mode, k, lr, mask, variant):
    text = (f"seed = {seed}\nmode = {mode}\nminer.k = {k}\noptim.lr = {lr!r}\nminer.mask = {mask}\n"
            f"model.variant = {variant}\nmodel.projector_hidden = 16\nmodel.projector_size = 8\n")
    cfg = from_text(text)
    assert from_text(to_text(cfg)) == cfg
    assert to_text(from_text(to_text(cfg))) == to_text(cfg)


def test_default_config_is_neural_appendix():
    assert RunConfig().validate() == preset("neural-appendix")
