import numpy as np
import pytest

import config
from ml_replan_predictor.model import (AdamOptimizer, ModelFormatError, MlpModel, ScalerParams,
                                       TrainConfig, TrainingError, backward, fit_scaler, forward,
                                       init_params, kfold_cv, load_model, mae_gradient,
                                       permutation_importance, predict, save_model, train,
                                       write_history)

QUICK = TrainConfig(batch_size=32, max_epochs=80, patience=30)


def linear_data(n=400, features=5, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, features)) * np.arange(1, features + 1) + 10.0
    y = 3.0 * X[:, 0] - 0.5 * X[:, 1] + rng.normal(scale=noise, size=n)
    return X, y


def handmade_model(n_features=3, seed=0):
    model = MlpModel()
    model.x_scaler_ = ScalerParams(np.zeros(n_features), np.ones(n_features))
    model.y_scaler_ = ScalerParams(np.array([10.0]), np.array([2.0]))
    model.params_ = init_params([n_features, 4, 1], np.random.default_rng(seed))
    model.n_features_in_ = n_features
    return model


def batch_loss(params, x, t):
    pred, _ = forward(params, x)
    return float(np.mean(np.abs(pred - t)))


@pytest.fixture(scope='module')
def fitted():
    X, y = linear_data()
    return train(X[:300], y[:300], QUICK), (X[300:], y[300:])


@pytest.mark.parametrize('step, rate', [(0, 0.001), (99, 0.001), (100, 0.00096), (250, 0.0009216)])
def test_learning_rate_schedule(step, rate):
    assert config.get_learning_rate(step) == pytest.approx(rate)


def test_scaler():
    params = fit_scaler(np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
    assert params.center[0] == 3.0
    assert params.scale[0] == 2.0
    constant = fit_scaler(np.full((4, 2), 7.0))
    assert list(constant.scale) == [1e-9, 1e-9]
    data = np.array([[1.0, 10.0], [2.0, 30.0], [5.0, 20.0]])
    scaler = fit_scaler(data)
    np.testing.assert_allclose(scaler.inverse_transform(scaler.transform(data)), data)
    with pytest.raises(ValueError):
        fit_scaler(np.array([1.0]))


def test_init_is_he_uniform():
    params = init_params([42, 64, 32, 16, 1], np.random.default_rng(3))
    assert [w.shape for w, _ in params] == [(42, 64), (64, 32), (32, 16), (16, 1)]
    for w, b in params:
        assert np.all(np.abs(w) <= np.sqrt(6.0 / w.shape[0]))
        assert not b.any()


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    params = init_params([3, 5, 4, 1], rng)
    params = [(w, rng.normal(scale=0.1, size=b.shape)) for w, b in params]
    x = rng.normal(size=(8, 3))
    t = rng.normal(size=(8, 1))
    pred, cache = forward(params, x)
    grads = backward(params, cache, mae_gradient(pred, t))
    h = 1e-6
    for layer in range(len(params)):
        for which in (0, 1):
            array = params[layer][which]
            for index in list(np.ndindex(array.shape))[:6]:
                original = array[index]
                array[index] = original + h
                up = batch_loss(params, x, t)
                array[index] = original - h
                down = batch_loss(params, x, t)
                array[index] = original
                numeric = (up - down) / (2 * h)
                assert grads[layer][which][index] == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_adam_step_descends():
    improved = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        params = init_params([4, 8, 1], rng)
        x = rng.normal(size=(16, 4))
        t = rng.normal(size=(16, 1))
        before = batch_loss(params, x, t)
        pred, cache = forward(params, x)
        optimizer = AdamOptimizer(params, TrainConfig(learning_rate=1e-4))
        params = optimizer.update(params, backward(params, cache, mae_gradient(pred, t)))
        improved += batch_loss(params, x, t) < before
        assert optimizer.step == 1
    assert improved >= 95


def test_zero_network_predicts_output_bias():
    model = handmade_model()
    model.params_ = [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.params_]
    model.params_[-1] = (model.params_[-1][0], np.array([1.5]))
    assert list(model.predict(np.ones((2, 3)))) == [1.5 * 2.0 + 10.0] * 2


def test_training_beats_median(fitted):
    (model, history), (X_test, y_test) = fitted
    mae = np.mean(np.abs(model.predict(X_test) - y_test))
    baseline = np.mean(np.abs(np.median(y_test) - y_test))
    assert mae < 0.6 * baseline
    assert len(history) <= QUICK.max_epochs


def test_best_epoch_is_first_validation_minimum(fitted):
    (model, history), _ = fitted
    val = [record.val_mae_scaled for record in history]
    assert model.best_epoch_ == int(np.argmin(val))
    if len(history) < QUICK.max_epochs:
        assert len(history) - 1 - model.best_epoch_ == QUICK.patience
    assert history[0].learning_rate == QUICK.learning_rate
    assert all(r.val_mae_seconds == pytest.approx(r.val_mae_scaled * model.y_scaler_.scale[0]) for r in history)


def test_training_is_deterministic():
    X, y = linear_data(n=120)
    cfg = TrainConfig(batch_size=16, max_epochs=10, patience=5)
    first, _ = train(X, y, cfg)
    second, _ = train(X, y, cfg)
    np.testing.assert_array_equal(first.predict(X), second.predict(X))


def test_affine_feature_rescaling_is_invisible():
    X, y = linear_data(n=120)
    cfg = TrainConfig(batch_size=16, max_epochs=10, patience=5)
    base, _ = train(X, y, cfg)
    shifted, _ = train(4.0 * X + 10.0, y, cfg)
    np.testing.assert_allclose(base.predict(X), shifted.predict(4.0 * X + 10.0), rtol=1e-6, atol=1e-6)


def test_scalers_ignore_validation_rows():
    X, y = linear_data(n=200)
    cfg = TrainConfig(batch_size=32, max_epochs=3, patience=2)
    model, _ = train(X, y, cfg)
    held_out = model.validation_index_
    fitting = np.setdiff1d(np.arange(len(X)), held_out)
    assert len(held_out) == 40
    np.testing.assert_allclose(model.x_scaler_.center, fit_scaler(X[fitting]).center)
    np.testing.assert_allclose(model.x_scaler_.scale, fit_scaler(X[fitting]).scale)
    np.testing.assert_allclose(model.y_scaler_.scale, fit_scaler(y[fitting]).scale)

    X_far, y_far = X.copy(), y.copy()
    X_far[held_out] += 1e6
    y_far[held_out] -= 1e6
    far, _ = train(X_far, y_far, cfg)
    np.testing.assert_array_equal(far.validation_index_, held_out)
    np.testing.assert_array_equal(far.x_scaler_.center, model.x_scaler_.center)
    np.testing.assert_array_equal(far.y_scaler_.center, model.y_scaler_.center)


def test_too_few_records():
    X, y = linear_data(n=10)
    with pytest.raises(TrainingError):
        train(X, y, TrainConfig(batch_size=16, max_epochs=5, patience=2))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=10, patience=10)
    with pytest.raises(ValueError):
        TrainConfig(validation_split=1.0)
    values = config.parse_config('batch_size = 8\nmax_epochs = 30\npatience = 4\ntrain_seed = 9\n')
    cfg = TrainConfig.from_values(values)
    assert (cfg.batch_size, cfg.max_epochs, cfg.patience, cfg.seed) == (8, 30, 4, 9)


def test_single_prediction(fitted):
    (model, _), (X_test, _) = fitted
    assert predict(model, X_test[0]) == model.predict(X_test[:1])[0]
    with pytest.raises(ValueError):
        predict(model, X_test[0][:3])
    with pytest.raises(ValueError):
        model.predict(np.zeros((2, 4)))


def test_save_and_load_predict_identically(tmp_path, fitted):
    (model, history), (X_test, _) = fitted
    path = tmp_path / 'model.txt'
    save_model(model, str(path))
    assert path.read_text().splitlines()[0] == 'mlp-replan-predictor v1'
    assert path.read_text().splitlines()[1] == 'layers 5 64 32 16 1'
    loaded = load_model(str(path))
    np.testing.assert_array_equal(loaded.predict(X_test), model.predict(X_test))
    write_history(history, str(tmp_path / 'history.csv'))
    rows = (tmp_path / 'history.csv').read_text().splitlines()
    assert rows[0] == 'epoch,train_mae_scaled,val_mae_scaled,val_mae_seconds,learning_rate'
    assert len(rows) == len(history) + 1


def test_load_rejects_bad_files(tmp_path, fitted):
    (model, _), _ = fitted
    path = tmp_path / 'model.txt'
    save_model(model, str(path))
    lines = path.read_text().splitlines()
    path.write_text('\n'.join(['mlp-replan-predictor v2'] + lines[1:]) + '\n')
    with pytest.raises(ModelFormatError):
        load_model(str(path))
    path.write_text('\n'.join(lines[:9]) + '\n')
    with pytest.raises(ModelFormatError):
        load_model(str(path))


def test_kfold_cv():
    X, y = linear_data(n=150)
    result = kfold_cv(X, y, k=3, cfg=TrainConfig(batch_size=16, max_epochs=6, patience=3))
    assert len(result.fold_mae) == 3
    assert all(mae >= 0 for mae in result.fold_mae)
    assert result.std >= 0
    with pytest.raises(ValueError):
        kfold_cv(X[:2], y[:2], k=3)


def test_permutation_importance_of_unused_feature():
    model = handmade_model()
    w, b = model.params_[0]
    w[1, :] = 0.0
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 3))
    y = model.predict(X) + rng.normal(scale=0.1, size=50)
    mean, raw = permutation_importance(model, X, y, repeats=4, seed=0)
    assert mean.shape == (3,)
    assert raw.shape == (3, 4)
    assert mean[1] == 0.0
    assert np.all(raw[1] == 0.0)
    with pytest.raises(ValueError):
        permutation_importance(model, X[:0], y[:0])


def test_permutation_importance_is_seeded(fitted):
    (model, _), (X_test, y_test) = fitted
    first = permutation_importance(model, X_test, y_test, repeats=3, seed=7)
    second = permutation_importance(model, X_test, y_test, repeats=3, seed=7)
    np.testing.assert_array_equal(first[1], second[1])
    assert np.argmax(first[0]) == 0
