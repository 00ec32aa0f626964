import numpy as np
import pytest

from lifi_po.dataset import DatasetMeta, normalize_features, split
from lifi_po.lstm import (TrainConfig, TrainingDivergedError, _PARAM_ORDER,
                          evaluate, init_model, load_model, lstm_backward,
                          lstm_forward, persistence_predict, predict_pose,
                          save_model, train)
from lifi_po.geometry import Pose
from lifi_po.mobility import MobilityConfig, sample_trajectory


def tiny_meta(m=4, n=3, l_max=2):
    return DatasetMeta(
        m_aps=m, n_prior=n, l_max=l_max, n_samples=100, snr_floor_db=-30.0,
        train_fraction=0.9, uplink_users=1, feature_mode="db",
        yaw_mode="sincos", master_seed=0, config_fingerprint="test",
        feature_mean=np.zeros(m), feature_scale=np.ones(m),
        label_offset=np.zeros(7), label_scale=np.ones(7))


def randomized_model(meta, hidden, seed):
    model = init_model(meta, hidden_size=hidden, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for name in _PARAM_ORDER:
        getattr(model, name)[...] = rng.normal(0.0, 0.5,
                                               getattr(model, name).shape)
    return model


def test_zero_parameter_fixed_point():
    model = init_model(tiny_meta(), hidden_size=5, seed=0)
    for name in _PARAM_ORDER:
        getattr(model, name)[...] = 0.0
    model.b_head[...] = 1.5
    out = lstm_forward(model, np.ones((3, 4)))
    np.testing.assert_allclose(out, 1.5)


def test_output_shape_for_any_window_length():
    meta = tiny_meta()
    model = randomized_model(meta, 5, 2)
    for n in (1, 3, 6):
        out = lstm_forward(model, np.random.default_rng(n).normal(size=(n, 4)))
        assert out.shape == (14,)


def test_leading_input_order_sensitivity():
    model = randomized_model(tiny_meta(), 5, 9)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 4))
    x_swapped = x.copy()
    x_swapped[[0, 1]] = x_swapped[[1, 0]]
    assert not np.allclose(lstm_forward(model, x), lstm_forward(model, x_swapped))


def test_non_finite_input_rejected():
    model = randomized_model(tiny_meta(), 5, 1)
    bad = np.ones((3, 4))
    bad[1, 2] = np.nan
    with pytest.raises(ValueError):
        lstm_forward(model, bad)


def test_gradients_match_finite_differences():
    meta = tiny_meta()
    model = randomized_model(meta, 5, 3)
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(6, 3, 4))
    targets = rng.normal(size=(6, 14))
    grads, _ = lstm_backward(model, feats, targets)

    def loss_at():
        out = lstm_forward(model, feats)
        return float(np.mean((out - targets) ** 2))

    h = 1e-5
    rng_pick = np.random.default_rng(7)
    for name in _PARAM_ORDER:
        arr = getattr(model, name)
        flat = arr.reshape(-1)
        picks = rng_pick.choice(flat.size, size=min(25, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_at()
            flat[i] = orig - h
            lm = loss_at()
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            g = grads[name].reshape(-1)[i]
            assert abs(fd - g) / max(abs(fd), abs(g), 1e-8) < 1e-4


def test_zero_residual_batch():
    model = randomized_model(tiny_meta(), 5, 4)
    rng = np.random.default_rng(2)
    feats = rng.normal(size=(4, 3, 4))
    targets = lstm_forward(model, feats)
    grads, loss = lstm_backward(model, feats, targets)
    assert loss == 0.0
    for g in grads.values():
        np.testing.assert_allclose(g, 0.0, atol=1e-15)


def test_gradient_linearity_in_residual_scale():
    # scaling the residuals by c scales the quadratic loss gradients by c
    model = randomized_model(tiny_meta(), 5, 6)
    rng = np.random.default_rng(3)
    feats = rng.normal(size=(4, 3, 4))
    out = lstm_forward(model, feats)
    resid = rng.normal(size=out.shape)
    g1, l1 = lstm_backward(model, feats, out - resid)
    g3, l3 = lstm_backward(model, feats, out - 3.0 * resid)
    assert l3 == pytest.approx(9.0 * l1, rel=1e-12)
    for name in _PARAM_ORDER:
        np.testing.assert_allclose(g3[name], 3.0 * g1[name], rtol=1e-9,
                                   atol=1e-12)


def test_training_improves_and_is_deterministic(small_dataset):
    train_set, _ = split(small_dataset)
    config = TrainConfig(epochs=4, batch_size=64, seed=5,
                         validation_fraction=0.15)
    model_a, hist_a = train(train_set, config, hidden_size=24)
    model_b, hist_b = train(train_set, config, hidden_size=24)
    assert hist_a.val_mse[-1] < hist_a.val_mse[0]
    assert hist_a.val_mse == hist_b.val_mse  # bit-identical history
    for name in _PARAM_ORDER:
        np.testing.assert_array_equal(getattr(model_a, name),
                                      getattr(model_b, name))
    assert len(hist_a.epochs) == 5  # untrained row plus one per epoch
    assert min(hist_a.val_mse) == hist_a.val_mse[hist_a.best_epoch]


def test_training_divergence_raises(small_dataset):
    train_set, _ = split(small_dataset)
    # adaptive moments bound each update by the learning rate, so only an
    # astronomically large rate can push the loss out of float range
    config = TrainConfig(epochs=3, learning_rate=1e200, clip_norm=1e300, seed=0)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDivergedError) as err:
            train(train_set, config, hidden_size=8)
    assert err.value.epoch >= 1


def test_predict_pose_contract(small_dataset, layout):
    train_set, _ = split(small_dataset)
    model, _ = train(train_set, TrainConfig(epochs=2, seed=1), hidden_size=16)
    window = small_dataset.features[0]
    with pytest.raises(ValueError):
        predict_pose(model, window, 0, layout)
    with pytest.raises(ValueError):
        predict_pose(model, window, 5, layout)
    for step in range(1, 5):
        pose = predict_pose(model, window, step, layout)
        assert 0.0 <= pose.x <= layout.length
        assert 0.0 <= pose.y <= layout.width
        assert 0.0 <= pose.z <= layout.height
        assert 0.0 <= pose.alpha < 360.0
        # sanity: anywhere inside the room is closer than the diagonal
        true = small_dataset.labels[0, step - 1, :3]
        err = np.linalg.norm(pose.position - true)
        assert err < np.linalg.norm([layout.length, layout.width, layout.height])


def test_predict_pose_selects_requested_block(small_dataset, layout):
    train_set, _ = split(small_dataset)
    model, _ = train(train_set, TrainConfig(epochs=1, seed=2), hidden_size=12)
    meta = model.meta
    window = small_dataset.features[3]
    out = lstm_forward(model, normalize_features(window, meta))
    blocks = out.reshape(meta.l_max, meta.pose_dim)
    from lifi_po.dataset import decode_pose, denormalize_labels
    expected = decode_pose(denormalize_labels(blocks, meta)[meta.l_max - 1])
    got = predict_pose(model, window, meta.l_max, layout)
    assert got.alpha == pytest.approx(expected.alpha)
    assert got.beta == pytest.approx(expected.beta)


def test_persistence_baseline(layout, mobility):
    pose = Pose(1.0, 2.0, 1.2, 10.0, 40.0, 0.0)
    for step in (1, 2, 4):
        assert persistence_predict(pose, step) == pose
    with pytest.raises(ValueError):
        persistence_predict(pose, 0)
    # average persistence position error grows with the look-ahead
    rng_err = {1: [], 2: [], 4: []}
    for seed in range(300):
        traj = sample_trajectory(seed, 6, mobility, layout)
        p0 = traj.poses[0].position
        for step in rng_err:
            rng_err[step].append(np.linalg.norm(traj.poses[step].position - p0))
    means = {step: np.mean(v) for step, v in rng_err.items()}
    assert means[1] < means[2] < means[4]


def test_evaluate_perfect_predictor_zero_error(small_dataset, layout):
    # head weights zeroed and bias set to one sample's normalized labels:
    # the network then reproduces that sample exactly
    from lifi_po.dataset import Dataset, normalize_labels

    meta = small_dataset.meta
    model = init_model(meta, hidden_size=6, seed=0)
    target = normalize_labels(small_dataset.labels[5], meta).reshape(-1)
    model.w_head[...] = 0.0
    model.b_head[...] = target
    single = Dataset(small_dataset.features[5:6], small_dataset.labels[5:6],
                     meta, small_dataset.anchors[5:6])
    report = evaluate(model, single, layout)
    np.testing.assert_allclose(report.position_error_mean, 0.0, atol=1e-9)
    np.testing.assert_allclose(report.angle_error_mean, 0.0, atol=1e-7)


def test_evaluate_report_shapes(small_dataset, layout):
    train_set, test_set = split(small_dataset)
    model, _ = train(train_set, TrainConfig(epochs=1, seed=3), hidden_size=12)
    report = evaluate(model, test_set, layout)
    assert report.position_error_samples.shape == (4, len(test_set))
    assert report.angle_error_mean.shape == (4, 3)
    assert report.persistence_error_mean is not None


def test_model_save_load_roundtrip(tmp_path, small_dataset):
    train_set, _ = split(small_dataset)
    model, _ = train(train_set, TrainConfig(epochs=1, seed=6), hidden_size=10)
    stem = str(tmp_path / "model")
    save_model(model, stem)
    loaded = load_model(stem)
    for name in _PARAM_ORDER:
        np.testing.assert_array_equal(getattr(loaded, name),
                                      getattr(model, name))
    np.testing.assert_array_equal(loaded.meta.feature_mean,
                                  model.meta.feature_mean)
    feats = small_dataset.features[:5]
    np.testing.assert_array_equal(
        lstm_forward(loaded, normalize_features(feats, loaded.meta)),
        lstm_forward(model, normalize_features(feats, model.meta)))
