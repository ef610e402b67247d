import numpy as np
import pytest

from riskfusion import autodiff as ad
from riskfusion.attribution import (AttributionConfig, AttributionResult, block_sums,
                                    feature_names, integrated_gradients, rank_dimensions,
                                    ranking_csv, ranking_table, write_ranking)
from riskfusion.models import Output, Preprocessor, build_model


class LinearModel:
    """F_c(x) = W_c . [xu, xv]; identity preprocessing."""

    training = False

    def __init__(self, w):
        self.w = np.asarray(w, dtype=float)
        self.d_u = self.w.shape[1] - 2

    def standardize(self, xu, xv):
        return np.atleast_2d(xu), np.atleast_2d(xv)

    def forward_standardized(self, pu, pv, rng=None):
        logits = ad.linear(ad.concat([ad.as_tensor(pu), ad.as_tensor(pv)]), ad.Tensor(self.w))
        return Output(ad.softmax(logits), logits)

    def score(self, out):
        return out.logits

    def predict_proba(self, xu, xv):
        return self.forward_standardized(xu, xv).probs.value


@pytest.mark.parametrize("steps", [1, 7, 50])
def test_linear_model_closed_form(steps):
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 6))
    xu, xv = rng.normal(size=4), rng.normal(size=2)
    res = integrated_gradients(LinearModel(w), xu, xv, AttributionConfig(steps=steps, target=1))
    np.testing.assert_allclose(res.attribution, w[1] * np.concatenate([xu, xv]), atol=1e-12)
    assert res.completeness_gap < 1e-12


def test_nonzero_baseline_linear():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(3, 6))
    xu, xv, bu, bv = (rng.normal(size=s) for s in (4, 2, 4, 2))
    cfg = AttributionConfig(steps=3, baseline_u=bu, baseline_v=bv, target=0)
    res = integrated_gradients(LinearModel(w), xu, xv, cfg)
    np.testing.assert_allclose(res.attribution, w[0] * np.concatenate([xu - bu, xv - bv]),
                               atol=1e-12)


def test_input_equal_to_baseline_gives_zero():
    m = build_model("model_dfnn", 7, 5, 0).eval()
    x = np.zeros(7), np.zeros(5)
    res = integrated_gradients(m, *x)
    np.testing.assert_array_equal(res.attribution, 0.0)


def _trained_like(kind):
    rng = np.random.default_rng(2)
    extra = {"feature_dfnn": {"d_z": 4}, "model_dfnn": {"d_z_u": 4, "d_z_v": 4}}.get(kind, {})
    m = build_model(kind, 7, 5, 3, hidden=8, **extra)
    m.pre = Preprocessor.fit(rng.exponential(size=(50, 7)), rng.normal(size=(50, 5)))
    return m.eval(), rng.exponential(size=7), rng.normal(size=5)


@pytest.mark.parametrize("kind", ["fcn", "feature_dfnn", "model_dfnn", "cnne"])
def test_gap_shrinks_with_steps(kind):
    m, xu, xv = _trained_like(kind)
    gaps = [integrated_gradients(m, xu, xv, AttributionConfig(steps=s)).completeness_gap
            for s in (10, 100, 3000)]
    assert gaps[2] < gaps[0]
    assert gaps[2] <= 1e-2 * abs(integrated_gradients(m, xu, xv).f_x
                                 - integrated_gradients(m, xu, xv).f_baseline) + 1e-9


def test_target_defaults_to_prediction_and_endpoints_match_model():
    m, xu, xv = _trained_like("fcn")
    res = integrated_gradients(m, xu, xv, AttributionConfig(steps=5))
    assert res.target == int(m.predict(xu, xv)[0])
    logits = m.forward(xu[None], xv[None]).logits.value[0]
    assert res.f_x == pytest.approx(logits[res.target], abs=1e-12)


def test_config_and_model_errors():
    with pytest.raises(ValueError):
        AttributionConfig(steps=0)
    with pytest.raises(ValueError):
        AttributionConfig(baseline_u=np.array([np.nan]))
    m, xu, xv = _trained_like("fcn")
    with pytest.raises(ValueError):
        integrated_gradients(m, xu, xv, AttributionConfig(baseline_u=np.zeros(3)))
    m.train()
    with pytest.raises(ValueError):
        integrated_gradients(m, xu, xv)


def test_feature_names_cover_all_dims():
    names = feature_names()
    assert len(names) == 124
    assert names[0] == ("tra", "tra.in_h00") and names[24] == ("tra", "tra.out_h00")
    assert names[64] == ("con", "con.high") and names[67] == ("wid", "wid.level_1")
    assert names[71][0] == "fra" and names[-1] == ("cnn", "cnn.cnn_44")


def test_ranking_examples(tmp_path):
    a = np.zeros(124)
    a[30] = 0.5
    ranked = rank_dimensions(AttributionResult(a, 2, 1.0, 0.5))
    assert ranked[0].dim_index == 30
    assert [r.dim_index for r in ranked[1:4]] == [0, 1, 2]  # ties by index
    b = np.random.default_rng(0).normal(size=124)
    ranked = rank_dimensions(AttributionResult(b, 0, 0.0, 0.0))
    sums = block_sums(ranked)
    assert sums["tra"] == pytest.approx(b[:48].sum())
    assert sums["cnn"] == pytest.approx(b[79:].sum())
    assert sum(sums.values()) == pytest.approx(b.sum())
    assert ranking_csv(ranked).splitlines()[0] == "dim_index,block,name,attribution"
    assert "block sums" in ranking_table(ranked)
    write_ranking(ranked, tmp_path, "x")
    assert (tmp_path / "x.csv").exists() and (tmp_path / "x.txt").exists()
    with pytest.raises(ValueError):
        rank_dimensions(AttributionResult(np.zeros(5), 0, 0.0, 0.0))
