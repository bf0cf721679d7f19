import math
import struct

import numpy as np
import pytest

from polystep.objectives import (
    DatasetHandle,
    IdxFormatError,
    TinyMLP,
    cross_entropy,
    load_idx,
    load_idx_images,
    make_blobs,
    mlp_loss,
    quadratic,
    sphere_indicator,
    staircase1d,
)


def test_quadratic_value_and_minimum():
    obj = quadratic(3, minimum=[1.0, -2.0, 0.5])
    assert obj(np.array([1.0, -2.0, 0.5])) == 0.0
    assert obj(np.array([2.0, -2.0, 0.5])) == 0.5
    batch = np.array([[1.0, -2.0, 0.5], [3.0, -2.0, 0.5]])
    assert np.array_equal(obj.eval_many(batch), [0.0, 2.0])


def test_sphere_indicator_closed_ball():
    obj = sphere_indicator(2, center=[1.0, 0.0], radius=2.0)
    assert obj(np.array([1.0, 0.0])) == 0.0
    assert obj(np.array([3.0, 0.0])) == 0.0  # boundary counts as inside
    assert obj(np.array([3.0, 0.1])) == 1.0
    assert obj(np.array([10.0, 10.0])) == 1.0
    with pytest.raises(ValueError):
        sphere_indicator(2, [0.0, 0.0], radius=0.0)


def test_staircase_plateaus():
    obj = staircase1d(step_width=1.0)
    assert obj(np.array([2.5])) == 2.0
    assert obj(np.array([-2.5])) == 2.0
    assert obj(np.array([0.0])) == 0.0
    assert obj(np.array([0.999])) == 0.0
    got = obj.eval_many(np.array([[0.25], [1.75], [3.0]]))
    assert np.array_equal(got, [0.0, 1.0, 3.0])
    with pytest.raises(ValueError):
        staircase1d(0.0)


def _naive_relu_forward(theta, inputs, n_features, n_hidden, n_classes):
    """Loop-based reference forward pass, no shared code with TinyMLP."""
    pos = 0
    w1 = [[theta[pos + i * n_features + j] for j in range(n_features)]
          for i in range(n_hidden)]
    pos += n_hidden * n_features
    b1 = [theta[pos + i] for i in range(n_hidden)]
    pos += n_hidden
    w2 = [[theta[pos + i * n_hidden + j] for j in range(n_hidden)]
          for i in range(n_classes)]
    pos += n_classes * n_hidden
    b2 = [theta[pos + i] for i in range(n_classes)]
    logits = []
    for row in inputs:
        hidden = []
        for i in range(n_hidden):
            pre = b1[i] + sum(w1[i][j] * row[j] for j in range(n_features))
            hidden.append(max(pre, 0.0))
        logits.append([
            b2[i] + sum(w2[i][j] * hidden[j] for j in range(n_hidden))
            for i in range(n_classes)
        ])
    return np.array(logits)


def test_relu_logits_match_naive_loops():
    rng = np.random.default_rng(7)
    model = TinyMLP(2, 16, 3, activation="relu")
    theta = rng.standard_normal(model.n_params)
    inputs = rng.standard_normal((9, 2))
    fast = model.logits(theta, inputs)
    slow = _naive_relu_forward(theta, inputs, 2, 16, 3)
    assert np.max(np.abs(fast - slow)) < 1e-12


def test_param_counts():
    assert TinyMLP(2, 16, 3).n_params == 99
    assert TinyMLP(64, 32, 10).n_params == 64 * 32 + 32 + 10 * 32 + 10
    route = TinyMLP(2, 16, 3, activation="argmax_route")
    assert route.n_params == 48 + 68 + 4 * 51
    assert sum(s.size for s in route.layer_shapes) == route.n_params
    with pytest.raises(ValueError):
        TinyMLP(2, 16, 3, activation="gelu")


def test_zero_params_give_log_classes():
    rng = np.random.default_rng(0)
    data = make_blobs(3, 20, spread=0.5, rng=rng)
    for act in ("relu", "sign", "int8_round", "staircase_floor", "argmax_route"):
        model = TinyMLP(2, 16, 3, activation=act)
        obj = mlp_loss(model, data)
        assert abs(obj(np.zeros(model.n_params)) - math.log(3)) < 1e-9
    big = TinyMLP(64, 32, 10)
    fake = DatasetHandle(rng.standard_normal((11, 64)), rng.integers(0, 10, 11))
    assert abs(mlp_loss(big, fake)(np.zeros(big.n_params)) - math.log(10)) < 1e-9


def test_sign_activation_scale_invariant():
    rng = np.random.default_rng(3)
    model = TinyMLP(2, 16, 3, activation="sign")
    data = make_blobs(3, 15, spread=0.8, rng=rng)
    obj = mlp_loss(model, data)
    theta = rng.standard_normal(model.n_params)
    scaled = theta.copy()
    scaled[:48] *= 7.5  # first-layer weights and biases only
    assert obj(theta) == obj(scaled)


def test_int8_unit_scale_is_plain_rounding():
    model = TinyMLP(1, 3, 2, activation="int8_round")
    theta = np.zeros(model.n_params)
    theta[0:3] = [127.0, 3.4, -2.6]      # W1 column: pre-activations for x=1
    theta[6:12] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]  # W2 picks hidden units
    logits = model.logits(theta, np.array([[1.0]]))
    # max|pre| = 127 so s = 1: hidden = round([127, 3.4, -2.6]) = [127, 3, -3]
    assert np.array_equal(logits, [[127.0, 3.0]])


def test_argmax_route_is_exclusive_and_ties_go_low():
    model = TinyMLP(2, 4, 3, activation="argmax_route")
    theta = np.zeros(model.n_params)
    base = 8 + 4  # after W1, b1
    gate_w_at = base
    expert_bias = []
    pos = base + 4 * 4 + 4
    for e in range(4):
        pos += 3 * 4
        expert_bias.append(pos)
        pos += 3
    # all-zero gate ties every expert: lowest index must win
    for e, at in enumerate(expert_bias):
        theta[at] = 100.0 + e  # expert e writes a distinctive logit 0
    logits = model.logits(theta, np.array([[0.3, -0.2]]))
    assert logits[0, 0] == 100.0  # expert 0 chosen on the 4-way tie
    # steer the gate toward expert 2 via its bias
    theta[gate_w_at + 4 * 4 + 2] = 5.0
    logits = model.logits(theta, np.array([[0.3, -0.2]]))
    assert logits[0, 0] == 102.0


def _zero_fd_count(obj, theta, coords, eps_fd=1e-6):
    zeros = 0
    for j in coords:
        lo, hi = theta.copy(), theta.copy()
        lo[j] -= eps_fd
        hi[j] += eps_fd
        zeros += (obj(hi) - obj(lo)) == 0.0
    return zeros


def test_finite_difference_zero_rate_witness():
    # Cross-entropy depends smoothly on the output layer, so the dead-signal
    # property belongs to the parameters feeding the hard activation: probe
    # first-layer coordinates only.
    rng = np.random.default_rng(11)
    data = make_blobs(3, 30, spread=0.6, rng=rng)
    for act in ("sign", "staircase_floor"):
        model = TinyMLP(2, 16, 3, activation=act)
        obj = mlp_loss(model, data)
        theta = 0.5 * rng.standard_normal(model.n_params)
        coords = rng.choice(16 * 3, size=200, replace=True)
        zeros = _zero_fd_count(obj, theta, coords)
        assert zeros >= 198, f"{act}: only {zeros}/200 zero differences"


def test_finite_difference_zero_rate_int8():
    # The int8 scale s = max|x|/127 keeps the max-attaining column alive, so
    # the sub-1% zero-rate claim needs a hidden layer wide enough to make
    # that column a negligible fraction of the probed coordinates.
    rng = np.random.default_rng(11)
    data = make_blobs(3, 5, spread=1.0, rng=rng)
    model = TinyMLP(2, 256, 3, activation="int8_round")
    obj = mlp_loss(model, data)
    theta = 2.0 * rng.standard_normal(model.n_params)
    coords = rng.choice(256 * 3, size=200, replace=False)
    zeros = _zero_fd_count(obj, theta, coords)
    assert zeros >= 198, f"int8_round: only {zeros}/200 zero differences"


def test_relu_finite_differences_mostly_alive():
    rng = np.random.default_rng(12)
    data = make_blobs(3, 30, spread=0.6, rng=rng)
    model = TinyMLP(2, 16, 3, activation="relu")
    obj = mlp_loss(model, data)
    theta = 0.5 * rng.standard_normal(model.n_params)
    alive = 0
    for j in rng.choice(model.n_params, size=50, replace=False):
        hi, lo = theta.copy(), theta.copy()
        hi[j] += 1e-6
        lo[j] -= 1e-6
        alive += obj(hi) != obj(lo)
    assert alive > 25


def test_cross_entropy_stable_for_huge_logits():
    logits = np.array([[1e4, 0.0, -1e4], [5e3, 5e3, 5e3]])
    val = cross_entropy(logits, np.array([0, 1]))
    assert np.isfinite(val)
    assert abs(val - 0.5 * math.log(3)) < 1e-12


def test_mlp_loss_batch_subset():
    rng = np.random.default_rng(4)
    data = make_blobs(3, 10, spread=0.4, rng=rng)
    model = TinyMLP(2, 16, 3)
    theta = rng.standard_normal(model.n_params)
    sub = mlp_loss(model, data, batch=[0, 5, 7])
    manual = cross_entropy(
        model.logits(theta, data.inputs[[0, 5, 7]]), data.labels[[0, 5, 7]]
    )
    assert sub(theta) == manual


def test_eval_many_matches_scalar_path():
    rng = np.random.default_rng(5)
    data = make_blobs(3, 12, spread=0.4, rng=rng)
    obj = mlp_loss(TinyMLP(2, 16, 3), data)
    thetas = rng.standard_normal((6, obj.dim))
    many = obj.eval_many(thetas)
    one = np.array([obj(t) for t in thetas])
    assert np.array_equal(many, one)


def test_repeated_evaluation_is_bit_identical():
    rng = np.random.default_rng(6)
    data = make_blobs(3, 25, spread=0.7, rng=rng)
    for act in ("relu", "sign", "int8_round", "argmax_route"):
        obj = mlp_loss(TinyMLP(2, 16, 3, activation=act), data)
        theta = rng.standard_normal(obj.dim)
        assert obj(theta) == obj(theta)


def test_blobs_shapes_and_separable_limit():
    rng = np.random.default_rng(9)
    data = make_blobs(3, 40, spread=1e-9, rng=rng)
    assert data.inputs.shape == (120, 2)
    assert np.array_equal(np.bincount(data.labels), [40, 40, 40])
    centers = np.array(
        [data.inputs[data.labels == k].mean(axis=0) for k in range(3)]
    )
    dist = np.linalg.norm(data.inputs[:, None, :] - centers[None], axis=2)
    assert np.array_equal(np.argmin(dist, axis=1), data.labels)
    with pytest.raises(ValueError):
        make_blobs(1, 10, 0.1, rng)


def _write_idx_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", 0x00000803, n, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())


def _write_idx_labels(path, labels):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", 0x00000801, len(labels)))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def test_idx_round_trip(tmp_path):
    images = np.arange(2 * 2 * 3, dtype=np.uint8).reshape(2, 2, 3)
    img_path = tmp_path / "img.idx"
    lab_path = tmp_path / "lab.idx"
    _write_idx_images(img_path, images)
    _write_idx_labels(lab_path, [4, 9])
    data = load_idx_images(img_path, lab_path)
    assert data.inputs.shape == (2, 6)
    assert np.array_equal(data.inputs[1] * 255.0, np.arange(6, 12))
    assert data.inputs.max() <= 1.0
    assert np.array_equal(data.labels, [4, 9])
    only_one = load_idx_images(img_path, lab_path, max_items=1)
    assert only_one.inputs.shape == (1, 6)
    assert np.array_equal(only_one.labels, [4])


def test_idx_error_reports_byte_offset(tmp_path):
    bad_magic = tmp_path / "bad.idx"
    bad_magic.write_bytes(struct.pack(">i", 0x00000999))
    with pytest.raises(IdxFormatError, match="byte offset 0") as err:
        load_idx(bad_magic)
    assert err.value.offset == 0

    short_payload = tmp_path / "short.idx"
    short_payload.write_bytes(
        struct.pack(">iiii", 0x00000803, 2, 2, 2) + b"\x01" * 5
    )
    with pytest.raises(IdxFormatError, match="byte offset 16"):
        load_idx(short_payload)

    labels_as_images = tmp_path / "labels.idx"
    _write_idx_labels(labels_as_images, [1, 2])
    with pytest.raises(IdxFormatError, match="found labels"):
        load_idx_images(labels_as_images)

    count_clash = tmp_path / "clash.idx"
    _write_idx_images(count_clash, np.zeros((3, 2, 2), dtype=np.uint8))
    lab = tmp_path / "two.idx"
    _write_idx_labels(lab, [0, 1])
    with pytest.raises(IdxFormatError, match="3 images but 2 labels"):
        load_idx_images(count_clash, lab)
