import os

import pytest

from bdlab.misc import ConfigurationError
from bdlab.util.profile import (
    cost,
    fit_cost_model,
    is_decreasing,
    profile,
    scaled_exits,
)


def test_scaled_exits():
    assert scaled_exits(32) == [9, 14, 19, 24]
    assert scaled_exits(12) == [3, 5, 7, 9]
    assert scaled_exits(2) == [2]


def test_cost_model_recovers_parameters():
    alpha, beta = 2e-4, 3e-6
    t0 = cost(12, 20.0, alpha, beta)
    t1 = cost(12, 40.0, alpha, beta)
    fitted = fit_cost_model(12, 20.0, t0, t1)
    assert fitted["alpha"] == pytest.approx(alpha)
    assert fitted["beta"] == pytest.approx(beta)


def test_is_decreasing():
    assert is_decreasing([3.0, 2.0, 1.0])
    assert not is_decreasing([3.0, 3.0])


@pytest.fixture
def profile_config(make_config):
    return make_config(**{"profile.warmup": 0, "profile.repetitions": 1})


def test_profile(profile_config, model, dataset, tmp_path):
    result = profile(profile_config, model, dataset, exits=[2, 4], reps=[0, 1])
    assert list(result.speedup.index) == [2, 4]
    assert list(result.speedup.columns) == ["r=0", "r=1"]
    assert (result.times.to_numpy() > 0).all()
    predicted = result.predicted_speedup
    # fewer active layers are cheaper for every r
    assert (predicted.loc[2] > predicted.loc[4]).all()
    assert model.exit_layer is None
    summary = result.summary()
    assert summary["exits"] == [2, 4] and summary["n_layers"] == model.n_layers
    files = result.save(str(tmp_path / "profile"))
    assert all(os.path.exists(f) for f in files)


def test_profile_errors(profile_config, model, dataset):
    with pytest.raises(ConfigurationError):
        profile(profile_config, model, dataset, exits=[1], reps=[0])
    with pytest.raises(ConfigurationError):
        profile(profile_config, model, dataset, exits=[2], reps=[-1])
