"""
tests/unit/test_config.py

Unit tests for layered settings (YAML, profile overlay, environment) and
the metrics textfile.
"""

from __future__ import annotations

import pytest

from delaynet.utils.config import Settings, load_settings
from delaynet.utils.exceptions import ConfigurationError
from delaynet.utils.metrics import anneal_steps_total, write_metrics


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ("DELAYNET_PROFILE", "DELAYNET_CONFIG_DIR", "DELAYNET_ANNEAL__ALPHA", "DELAYNET_TRAINING__M"):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture
def config_dir(tmp_path):
    (tmp_path / "config.yaml").write_text(
        "anneal:\n  alpha: 1.1\n  n_inits: 20\ntraining:\n  m: 400\n", encoding="utf-8"
    )
    (tmp_path / "small.yaml").write_text("anneal:\n  n_inits: 3\n", encoding="utf-8")
    return tmp_path


class TestDefaults:
    def test_models_carry_defaults(self):
        settings = Settings()
        assert settings.data.d == 5
        assert settings.data.forcing == 8.15
        assert settings.anneal.alpha == 1.1
        assert settings.network.output_activation == "tanh"

    def test_repository_ci_profile(self):
        settings = load_settings("ci")
        assert settings.profile == "ci"
        assert settings.anneal.r_f_max_over_rm == 1e6
        assert settings.anneal.alpha == 1.3
        assert settings.anneal.n_inits == 5
        assert settings.anneal.r_f0_over_rm == 1e-8

    def test_repository_paper_profile(self):
        settings = load_settings("paper")
        assert settings.profile == "paper"
        assert settings.anneal.r_f_max_over_rm == 1e11
        assert settings.anneal.n_inits == 20
        assert settings.experiments.m_values[0] == 50
        assert settings.experiments.m_values[-1] == 1200
        assert settings.training.m_total is None

    def test_full_is_an_alias_of_paper(self):
        assert load_settings("full").model_dump() == load_settings("paper").model_dump()


class TestLayering:
    def test_overlay_is_deep_merged(self, config_dir):
        settings = load_settings("small", config_dir)
        assert settings.anneal.n_inits == 3
        assert settings.anneal.alpha == 1.1
        assert settings.training.m == 400

    def test_environment_wins(self, monkeypatch, config_dir):
        monkeypatch.setenv("DELAYNET_ANNEAL__ALPHA", "1.5")
        monkeypatch.setenv("DELAYNET_TRAINING__M", "77")
        settings = load_settings("small", config_dir)
        assert settings.anneal.alpha == 1.5
        assert settings.training.m == 77
        assert settings.anneal.n_inits == 3

    def test_profile_from_environment(self, monkeypatch, config_dir):
        monkeypatch.setenv("DELAYNET_PROFILE", "small")
        assert load_settings(config_dir=config_dir).profile == "small"


class TestErrors:
    def test_unknown_profile(self, config_dir):
        with pytest.raises(ConfigurationError, match="Unknown profile"):
            load_settings("missing", config_dir)

    def test_invalid_value(self, config_dir):
        (config_dir / "bad.yaml").write_text("anneal:\n  alpha: 0.5\n", encoding="utf-8")
        with pytest.raises(ConfigurationError) as exc_info:
            load_settings("bad", config_dir)
        assert exc_info.value.exit_code == 2

    def test_invalid_yaml(self, config_dir):
        (config_dir / "broken.yaml").write_text("anneal: [1, 2\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_settings("broken", config_dir)

    def test_top_level_must_be_mapping(self, config_dir):
        (config_dir / "list.yaml").write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_settings("list", config_dir)


class TestMetrics:
    def test_textfile_lists_counters(self, tmp_path):
        anneal_steps_total.inc()
        path = tmp_path / "delaynet.prom"
        write_metrics(str(path))
        text = path.read_text(encoding="utf-8")
        assert "delaynet_anneal_steps_total" in text

    def test_unwritable_path_does_not_raise(self, tmp_path):
        write_metrics(str(tmp_path / "missing" / "dir" / "metrics.prom"))
