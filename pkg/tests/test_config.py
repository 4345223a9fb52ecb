import pytest

from deepspec.config import Config, load_config, parse_config
from deepspec.errors import ConfigurationError


class TestParse:
    def test_empty_text_gives_defaults(self):
        assert parse_config("") == Config()

    def test_values_and_comments(self):
        cfg = parse_config("""
            # training
            beta = 0.1   # stronger MI
            relative_recon = false
            sweep_betas = 0.5, 1.5
            architecture = micro
        """)
        assert cfg.beta == 0.1
        assert cfg.relative_recon is False
        assert cfg.sweep_betas == (0.5, 1.5)
        assert cfg.architecture == "micro"

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="unknown config key 'bta'"):
            parse_config("bta = 0.1")

    def test_bad_value(self):
        with pytest.raises(ConfigurationError, match="cannot parse n"):
            parse_config("n = many")

    def test_bad_boolean(self):
        with pytest.raises(ConfigurationError):
            parse_config("freeze_head = maybe")

    def test_malformed_line(self):
        with pytest.raises(ConfigurationError):
            parse_config("just some words")

    def test_overrides_win_and_none_is_ignored(self):
        cfg = parse_config("seed = 3\nout_dir = a", seed=7, out_dir=None)
        assert cfg.seed == 7 and cfg.out_dir == "a"

    def test_text_round_trip(self):
        cfg = Config(beta=0.25, freeze_head=True, sweep_gammas=(2.0,), n=123)
        assert parse_config(cfg.to_text()) == cfg

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("n_clusters = 6\nbatch_size = 64\n")
        cfg = load_config(path)
        assert (cfg.n_clusters, cfg.batch_size) == (6, 64)


class TestValidate:
    @pytest.mark.parametrize("changes", [
        {"beta": -1.0},
        {"gamma": float("nan")},
        {"lr_joint": float("inf")},
        {"n": 0},
        {"pretrain_epochs": -1},
        {"batch_size": 2, "n_clusters": 4},
        {"dataset": "cifar"},
        {"dataset": "idx"},
        {"sweep_betas": (1.0, float("nan"))},
    ])
    def test_rejected(self, changes):
        with pytest.raises(ConfigurationError):
            Config(**changes)

    def test_zero_noise_and_zero_weights_allowed(self):
        cfg = Config(noise_std=0.0, beta=0.0, spectral_weight=0.0, joint_epochs=0)
        assert cfg.noise_std == 0.0

    def test_replace_validates(self):
        with pytest.raises(ConfigurationError):
            Config().replace(k_nn=0)
