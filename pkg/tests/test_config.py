import pytest

from planar_mvs.config import PipelineConfig, load_config, parse_config_text
from planar_mvs.errors import ValidationError


def test_defaults():
    c = PipelineConfig()
    assert (c.eps, c.alpha, c.gamma, c.lambda_n_deg) == (0.1, 0.18, 0.5, 5.0)
    assert (c.sigma, c.eta, c.lambda_geo, c.tau_geo) == (0.3, 0.9, 0.1, 5.0)
    assert (c.t_photo, c.t_pphoto, c.t_geo, c.geo_rounds) == (3, 3, 2, 2)
    assert c.fusion_params().max_normal_diff_deg == 10.0
    assert c.engine_params().patch.offsets().tolist() == [-5, -3, -1, 1, 3, 5]


@pytest.mark.parametrize(
    "bad",
    [dict(alpha=0), dict(eta=1.5), dict(t_photo=0), dict(threads=0), dict(top_k=0),
     dict(patch_radius=1, patch_step=3), dict(prior_corruption=2.0), dict(gamma=-1)],
)
def test_validation(bad):
    with pytest.raises(ValidationError):
        PipelineConfig(**bad)


def test_text_roundtrip(tmp_path):
    c = PipelineConfig(seed=5, use_prior=False, alpha=0.2)
    p = tmp_path / "c.txt"
    p.write_text(c.to_text())
    assert load_config(p) == c


def test_parse_and_overrides(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\nseed = 4  # trailing\nuse_geom = no\n\nalpha=0.3\n")
    c = load_config(p, seed=9, threads=None)
    assert (c.seed, c.use_geom, c.alpha, c.threads) == (9, False, 0.3, 1)
    assert c.replace(eps="0.2").eps == 0.2


@pytest.mark.parametrize("text", ["nokey", "bogus = 1", "seed = abc", "use_prior = maybe"])
def test_parse_errors(text):
    with pytest.raises(ValidationError):
        parse_config_text(text)
