import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weifed import nn
from weifed.aggregation import fedavg
from weifed.data import AuxiliaryDataset, Dataset
from weifed.defense import (
    CLAMP,
    ValidationScores,
    WeibullFit,
    aggregate_selected,
    default_top_t,
    fit_weibull,
    select_by_scores,
    validate_models,
    weibull_cdf,
    weibull_filter,
    weibull_loglik,
)
from weifed.metrics import macro_f1


def grid_loglik(x, shape, scale, half_width=0.2, n=100):
    """Brute-force log-likelihood over an n x n relative grid around (shape, scale)."""
    shapes = shape * np.linspace(1 - half_width, 1 + half_width, n)
    scales = scale * np.linspace(1 - half_width, 1 + half_width, n)
    best = -math.inf
    for b in shapes:
        for lam in scales:
            best = max(best, weibull_loglik(x, b, lam))
    return best


def test_macro_f1_hand_case():
    # every class has one TP and nothing else correct
    y_true = [0, 0, 1, 1, 2, 2]
    y_pred = [0, 1, 1, 2, 2, 0]
    assert macro_f1(y_true, y_pred, 3) == pytest.approx(0.5)
    assert macro_f1([0, 1, 2], [1, 2, 0], 3) == 0.0
    # perfect on class 0, class 1 never predicted, class 2 absent from truth
    assert macro_f1([0, 0, 1], [0, 0, 0], 3) == pytest.approx((0.8 + 0.0) / 2)


def test_weibull_recovers_known_parameters():
    x = np.random.default_rng(0).weibull(2.0, size=10_000)
    fit = fit_weibull(x)
    assert fit.converged
    assert 1.9 <= fit.shape <= 2.1
    assert 0.98 <= fit.scale <= 1.02
    assert fit.log_likelihood(x) >= grid_loglik(x, fit.shape, fit.scale) - 1e-9


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 40), st.floats(0.05, 5), st.integers(0, 10_000))
def test_shape_solves_likelihood_stationarity(shape, scale, seed):
    x = scale * np.random.default_rng(seed).weibull(shape, size=50)
    fit = fit_weibull(x)
    x = np.maximum(x, CLAMP)  # the fit sees clamped scores
    assert fit.converged
    h = 1e-6 * fit.shape
    d_shape = (weibull_loglik(x, fit.shape + h, fit.scale)
               - weibull_loglik(x, fit.shape - h, fit.scale)) / (2 * h)
    d_scale = (weibull_loglik(x, fit.shape, fit.scale * (1 + 1e-7))
               - weibull_loglik(x, fit.shape, fit.scale * (1 - 1e-7))) / 2e-7
    assert abs(d_shape) / x.size < 1e-4
    assert abs(d_scale) / x.size < 1e-4


def test_constant_scores_do_not_converge():
    fit = fit_weibull([0.7] * 20)
    assert not fit.converged and math.isnan(fit.shape)
    with pytest.raises(ValueError):
        weibull_cdf(0.5, fit)


def test_fit_rejects_tiny_or_bad_input():
    with pytest.raises(ValueError):
        fit_weibull([0.1, 0.2])
    with pytest.raises(ValueError):
        fit_weibull([0.1, 0.2, math.nan])


def test_scores_at_location_are_clamped():
    fit = fit_weibull([0.0, 0.5, 0.6, 0.9])
    assert fit.converged and np.isfinite(fit.shape)


def test_cdf_identities():
    fit = WeibullFit(2.5, 0.7, floc=0.1)
    assert weibull_cdf(0.1, fit) == 0.0
    assert weibull_cdf(0.8, fit) == pytest.approx(1 - math.exp(-1), abs=1e-12)
    assert weibull_cdf(10.0, fit) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        weibull_cdf(0.05, fit)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.2, 30), st.floats(0.05, 5))
def test_cdf_strictly_increasing_on_support(shape, scale):
    fit = WeibullFit(shape, scale)
    # below the scale the CDF is far from both 0 and 1 in double precision
    vals = weibull_cdf(np.linspace(0.05, 1.0, 200) * scale, fit)
    assert np.all(np.diff(vals) > 0)
    tail = weibull_cdf(np.linspace(1.0, 50.0, 200) * scale, fit)
    assert np.all(np.diff(tail) >= 0) and tail[-1] <= 1.0


def _scores(f1):
    return ValidationScores(list(range(len(f1))), np.asarray(f1, dtype=float))


def test_filter_drops_low_scorers():
    f1 = [0.9 + 0.001 * k for k in range(17)] + [0.2, 0.21, 0.19]
    sel = select_by_scores(_scores(f1), T=17)
    assert sorted(sel.rejected_ids) == [17, 18, 19]
    assert sel.fit.converged


def test_filter_constant_scores_fall_back_to_ids():
    sel = select_by_scores(_scores([0.5] * 6), T=4)
    assert sel.benign_ids == [0, 1, 2, 3]
    assert not sel.fit.converged and sel.notes


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=25), st.integers(1, 25))
def test_selection_equals_top_t_by_raw_score(f1, T):
    sel = select_by_scores(_scores(f1), T=T)
    raw = sorted(range(len(f1)), key=lambda i: (-f1[i], i))[:T]
    assert set(sel.benign_ids) == set(raw)
    assert set(sel.benign_ids).isdisjoint(sel.rejected_ids)
    assert len(sel.benign_ids) == min(T, len(f1))


def test_default_top_t():
    assert default_top_t(20) == 14
    assert default_top_t(1) == 1


def test_select_rejects_bad_t():
    with pytest.raises(ValueError):
        select_by_scores(_scores([0.1, 0.2, 0.3]), T=0)


@pytest.fixture(scope="module")
def toy_models():
    # one input feature; class decided by the bias alone
    arch = nn.MlpArchitecture(1, (), 2)
    good = np.array([0.0, 0.0, 0.0, 0.0])
    good[0:2] = [-10.0, 10.0]  # predicts 1 iff x > 0
    bad = np.array([10.0, -10.0, 0.0, 0.0])
    aux_data = Dataset(np.array([[-1.0], [-0.5], [0.5], [1.0]]), [0, 0, 1, 1], 2)
    aux = AuxiliaryDataset(aux_data, 0.9, 1.0, np.arange(4))
    return arch, good, bad, aux


def test_validate_models_scores(toy_models):
    arch, good, bad, aux = toy_models
    s = validate_models(arch, [good, bad], aux, client_ids=[4, 9])
    assert s.client_ids == [4, 9]
    assert s.f1.tolist() == [1.0, 0.0]
    with pytest.raises(ValueError):
        validate_models(arch, [good], None)


def test_weibull_filter_and_aggregate(toy_models):
    arch, good, bad, aux = toy_models
    rng = np.random.default_rng(0)
    models = [good + rng.normal(scale=0.01, size=4) for _ in range(5)] + [bad, bad]
    sel = weibull_filter(arch, models, aux, T=5, client_ids=list(range(10, 17)))
    assert sorted(sel.rejected_ids) == [15, 16]
    agg = aggregate_selected(models, sel, client_ids=list(range(10, 17)))
    assert np.array_equal(agg, fedavg(models[:5]))
    rec = sel.log_record()
    assert rec["rejected"] == sel.rejected_ids and set(rec["f1"]) == {str(i) for i in range(10, 17)}


def test_full_selection_equals_fedavg(toy_models):
    arch, good, bad, aux = toy_models
    models = [good * k for k in (0.5, 1.0, 2.0)] + [bad]
    sel = weibull_filter(arch, models, aux, T=len(models))
    assert aggregate_selected(models, sel).tobytes() == fedavg(models).tobytes()
