"""Tests for the autodiff core: ops, gradients, GRU, Adam and parameter files."""

import json
import math
import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest

from iqreward import nncore as nn
from iqreward.errors import CorruptFileError, ShapeError, VersionMismatchError


def _make_inputs(*shapes, seed=0):
    rng = np.random.default_rng(seed)
    return [nn.Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]


def _relative_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _check_gradients(build, tensors, eps=1e-6, seed=99):
    """Compare backward() with central differences of sum(w * build(...))."""
    out = build(*tensors)
    weights = np.random.default_rng(seed).normal(size=out.shape)

    def loss_value():
        return float(np.sum(build(*tensors).data * weights))

    for t in tensors:
        t.zero_grad()
    nn.tensor_sum(nn.mul(build(*tensors), nn.Tensor(weights))).backward()
    for t in tensors:
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss_value()
            flat[i] = old - eps
            down = loss_value()
            flat[i] = old
            numeric.reshape(-1)[i] = (up - down) / (2 * eps)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        assert _relative_error(analytic, numeric) < 1e-4


# --- Gradients of every op ---


def test_elementwise_gradients():
    a, b = _make_inputs((3, 4), (3, 4))
    _check_gradients(nn.add, [a, b])
    _check_gradients(nn.sub, [a, b])
    _check_gradients(nn.mul, [a, b])
    _check_gradients(nn.one_minus, [a])
    _check_gradients(lambda x: nn.scale(x, -2.5), [a])
    _check_gradients(nn.sigmoid, [a])
    _check_gradients(nn.tanh, [a])


def test_blend_gradients():
    a, b = _make_inputs((4, 3), (4, 3), seed=1)
    mask = np.array([[1.0], [0.0], [1.0], [0.0]])
    _check_gradients(lambda x, y: nn.blend(x, y, mask), [a, b])


def test_shape_op_gradients():
    a, b = _make_inputs((2, 3), (2, 5), seed=2)
    _check_gradients(lambda x, y: nn.concat([x, y], axis=-1), [a, b])
    c, d = _make_inputs((2, 3), (2, 3), seed=3)
    _check_gradients(lambda x, y: nn.stack([x, y], axis=1), [c, d])
    _check_gradients(lambda x: nn.reshape(x, (3, 2)), [c])


def test_gather_gradients():
    (x,) = _make_inputs((5, 3), seed=4)
    _check_gradients(lambda t: nn.take_rows(t, np.array([0, 2, 2, 4])), [x])
    _check_gradients(lambda t: nn.embedding(t, np.array([[1, 1], [3, 0]])), [x])
    (y,) = _make_inputs((3, 4, 2), seed=5)
    _check_gradients(lambda t: nn.take_pairs(t, np.array([0, 2, 2]), np.array([1, 3, 3])), [y])


def test_linear_gradients():
    x1, x2, x3, w, b = _make_inputs((3,), (4, 3), (2, 4, 3), (5, 3), (5,), seed=6)
    for x in (x1, x2, x3):
        _check_gradients(lambda xx, ww, bb: nn.linear(xx, ww, bb), [x, w, b])
    _check_gradients(lambda xx, ww: nn.linear(xx, ww), [x2, w])


def test_attention_gradients():
    scores, values, vector = _make_inputs((2, 4), (2, 4, 3), (3,), seed=7)
    mask = np.array([[1.0, 1.0, 1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
    _check_gradients(lambda s: nn.masked_softmax(s, mask), [scores])
    _check_gradients(lambda s: nn.masked_softmax(s), [scores])
    _check_gradients(nn.attend, [scores, values])
    _check_gradients(lambda v, u: nn.dot_last(v, u), [values, vector])


def test_softmax_cross_entropy_gradients():
    (logits,) = _make_inputs((4, 5), seed=8)
    targets = np.array([0, 4, 2, 2])
    _check_gradients(lambda z: nn.softmax_cross_entropy(z, targets), [logits])
    (single,) = _make_inputs((5,), seed=9)
    _check_gradients(lambda z: nn.softmax_cross_entropy(z, np.array([3])), [single])


def test_dropout_gradients_with_fixed_mask():
    (x,) = _make_inputs((6, 4), seed=10)
    _check_gradients(lambda t: nn.dropout(t, 0.5, np.random.default_rng(3)), [x])


def test_gru_and_bigru_gradients():
    params = nn.ParameterSet(rng_seed=11)
    nn.init_gru(params, "f.", 3, 2, init_scale=0.5)
    nn.init_gru(params, "b.", 3, 2, init_scale=0.5)
    x, h = _make_inputs((4, 3), (4, 2), seed=12)
    _check_gradients(lambda xx, hh: nn.gru_cell_forward(xx, hh, params, "f."), [x, h])

    steps = _make_inputs((2, 3), (2, 3), (2, 3), seed=13)
    mask = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 0.0]])

    def run(*xs):
        return nn.stack(nn.bigru_sequence(list(xs), params, "f.", "b.", mask), axis=1)

    _check_gradients(run, steps)
    _check_gradients(lambda *_: run(*steps), [params["f.W_z"], params["b.U_h"], params["f.b_r"]])


def test_random_two_layer_net_gradients():
    x, w1, b1, w2, b2 = _make_inputs((5, 4), (6, 4), (6,), (3, 6), (3,), seed=14)
    targets = np.array([0, 1, 2, 1, 0])

    def net(xx, a, c, d, e):
        hidden = nn.tanh(nn.linear(xx, a, c))
        return nn.softmax_cross_entropy(nn.linear(hidden, d, e), targets)

    _check_gradients(net, [x, w1, b1, w2, b2], eps=1e-5)


# --- Backward semantics ---


def test_backward_of_sum_is_ones():
    (x,) = _make_inputs((3, 2))
    nn.tensor_sum(x).backward()
    assert np.array_equal(x.grad, np.ones((3, 2)))


def test_backward_of_zero_times_anything():
    (x,) = _make_inputs((4,))
    nn.tensor_sum(nn.scale(nn.tanh(x), 0.0)).backward()
    assert np.array_equal(x.grad, np.zeros(4))


def test_gradients_accumulate_until_zeroed():
    (x,) = _make_inputs((2,))
    nn.tensor_sum(x).backward()
    nn.tensor_sum(x).backward()
    assert np.array_equal(x.grad, np.full(2, 2.0))
    x.zero_grad()
    assert x.grad is None


def test_backward_on_non_scalar_raises():
    (x,) = _make_inputs((3,))
    with pytest.raises(ShapeError):
        nn.tanh(x).backward()


def test_no_grad_records_nothing():
    (x,) = _make_inputs((3,))
    with nn.no_grad():
        y = nn.tanh(x)
    assert not y.requires_grad
    assert nn.tanh(x).requires_grad


def test_tape_replay_is_bit_identical():
    def run():
        x, w = _make_inputs((3, 4), (2, 4), seed=21)
        loss = nn.softmax_cross_entropy(nn.linear(x, w), np.array([0, 1, 1]))
        loss.backward()
        return loss.item(), w.grad.copy()

    first, second = run(), run()
    assert first[0] == second[0]
    assert np.array_equal(first[1], second[1])


# --- Forward values ---


def test_softmax_examples():
    assert np.allclose(nn.softmax(np.zeros(5)), np.full(5, 0.2), atol=1e-15)
    assert np.allclose(nn.softmax([math.log(2.0), 0.0]), [2 / 3, 1 / 3], atol=1e-15)
    big = nn.softmax([1000.0, 0.0])
    assert big[0] == pytest.approx(1.0)
    assert big[1] < 1e-300


def test_softmax_sums_to_one_and_is_shift_invariant():
    rng = np.random.default_rng(5)
    for _ in range(100):
        logits = rng.normal(scale=10.0, size=5)
        probs = nn.softmax(logits)
        assert abs(probs.sum() - 1.0) < 1e-12
        assert np.all(probs > 0)
        assert np.array_equal(probs, nn.softmax(logits - logits.max()))


def test_softmax_rejects_bad_input():
    with pytest.raises(ValueError):
        nn.softmax([0.0, float("nan")])
    with pytest.raises(ValueError):
        nn.softmax([])


def test_cross_entropy_examples():
    assert nn.cross_entropy_loss([0.0, 1.0, 0.0], 1) == 0.0
    assert nn.cross_entropy_loss(np.full(5, 0.2), 3) == pytest.approx(math.log(5), abs=1e-12)
    assert nn.cross_entropy_loss([0.5, 0.25, 0.25], 1) == pytest.approx(math.log(4), abs=1e-12)
    assert nn.cross_entropy_loss([1.0, 0.0], 1) == pytest.approx(-math.log(1e-12))
    with pytest.raises(IndexError):
        nn.cross_entropy_loss([0.5, 0.5], 2)


def test_blend_passes_operands_bit_exactly():
    new, old = _make_inputs((3, 2), (3, 2), seed=30)
    out = nn.blend(new, old, np.array([[1.0], [0.0], [1.0]]))
    assert np.array_equal(out.data[0], new.data[0])
    assert np.array_equal(out.data[1], old.data[1])


def test_masked_softmax_zeroes_masked_positions():
    out = nn.masked_softmax(nn.Tensor([[1.0, 2.0, 3.0]]), np.array([[1.0, 1.0, 0.0]]))
    assert out.data[0, 2] == 0.0
    assert out.data[0].sum() == pytest.approx(1.0, abs=1e-15)


def test_embedding_rejects_out_of_range_ids():
    weight = nn.Tensor(np.eye(3), requires_grad=True)
    assert np.array_equal(nn.embedding(weight, np.array([2, 0])).data, np.eye(3)[[2, 0]])
    with pytest.raises(ValueError):
        nn.embedding(weight, np.array([3]))


def test_linear_shape_error_names_parameter():
    w = nn.Tensor(np.zeros((2, 3)))
    with pytest.raises(ShapeError, match="att.W"):
        nn.linear(nn.Tensor(np.zeros(4)), w, name="att.W")


# --- GRU ---


def _gru_oracle(x, h, p):
    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    z = sig(p["W_z"] @ x + p["U_z"] @ h + p["b_z"])
    r = sig(p["W_r"] @ x + p["U_r"] @ h + p["b_r"])
    cand = np.tanh(p["W_h"] @ x + p["U_h"] @ (r * h) + p["b_h"])
    return (1 - z) * h + z * cand


def _make_gru(seed, d, u, prefix=""):
    params = nn.ParameterSet(rng_seed=seed)
    nn.init_gru(params, prefix, d, u, init_scale=0.5)
    for name in list(params):
        if name.startswith(prefix + "b_"):
            params.assign(name, np.random.default_rng(seed + 100).normal(size=u))
    return params


def test_gru_zero_params():
    params = nn.ParameterSet()
    nn.init_gru(params, "", 3, 2, init_scale=0.0)
    out = nn.gru_cell_forward(nn.Tensor([1.0, -2.0, 3.0]), nn.Tensor(np.zeros(2)), params)
    assert np.array_equal(out.data, np.zeros(2))
    half = nn.gru_cell_forward(nn.Tensor(np.zeros(3)), nn.Tensor([0.4, -0.8]), params)
    assert np.allclose(half.data, [0.2, -0.4], atol=1e-15)


def test_gru_matches_gate_formulas():
    params = _make_gru(1, 3, 3)
    rng = np.random.default_rng(1)
    x, h = rng.normal(size=3), rng.normal(size=3)
    out = nn.gru_cell_forward(nn.Tensor(x), nn.Tensor(h), params)
    expected = _gru_oracle(x, h, {k: v.data for k, v in params.items()})
    assert np.allclose(out.data, expected, atol=1e-12)


def test_gru_dimension_mismatch_names_parameter():
    params = _make_gru(1, 3, 3)
    with pytest.raises(ShapeError, match="U_z"):
        nn.gru_cell_forward(nn.Tensor(np.zeros(3)), nn.Tensor(np.zeros(2)), params)


def test_bigru_matches_two_pass_oracle():
    params = _make_gru(4, 2, 2, "f.")
    for name, tensor in _make_gru(5, 2, 2, "b.").items():
        params.adopt(name, tensor.data)
    rng = np.random.default_rng(6)
    xs = [rng.normal(size=2) for _ in range(3)]
    out = nn.bigru_sequence([nn.Tensor(x) for x in xs], params, "f.", "b.")

    raw = {k: v.data for k, v in params.items()}
    fwd = {k[2:]: v for k, v in raw.items() if k.startswith("f.")}
    bwd = {k[2:]: v for k, v in raw.items() if k.startswith("b.")}
    h, forward = np.zeros(2), []
    for x in xs:
        h = _gru_oracle(x, h, fwd)
        forward.append(h)
    h, backward = np.zeros(2), [None] * 3
    for k in (2, 1, 0):
        h = _gru_oracle(xs[k], h, bwd)
        backward[k] = h
    for k in range(3):
        assert out[k].shape == (4,)
        assert np.allclose(out[k].data, np.concatenate([forward[k], backward[k]]), atol=1e-12)


def test_bigru_reversal_swaps_halves():
    params = _make_gru(7, 2, 3, "f.")
    for name, tensor in params.copy().items():
        params.adopt("b." + name[2:], tensor.data)
    rng = np.random.default_rng(8)
    xs = [nn.Tensor(rng.normal(size=2)) for _ in range(4)]
    out = nn.bigru_sequence(xs, params, "f.", "b.")
    rev = nn.bigru_sequence(xs[::-1], params, "f.", "b.")
    for k in range(4):
        assert np.allclose(out[k].data[:3], rev[3 - k].data[3:], atol=1e-14)
        assert np.allclose(out[k].data[3:], rev[3 - k].data[:3], atol=1e-14)


def test_bigru_rejects_empty_sequence():
    with pytest.raises(ValueError):
        nn.bigru_sequence([], _make_gru(1, 2, 2))


# --- Adam and clipping ---


def test_adam_zero_gradient_leaves_params():
    params = nn.ParameterSet(rng_seed=3)
    params.add("w", (2, 2))
    before = params["w"].data.copy()
    _, state = nn.adam_step(params, {"w": np.zeros((2, 2))}, nn.AdamState())
    assert np.array_equal(params["w"].data, before)
    assert state.step == 1


def test_adam_first_step_moves_about_lr():
    params = nn.ParameterSet()
    params.adopt("w", np.array([1.0]))
    state = nn.AdamState(lr=0.01)
    nn.adam_step(params, {"w": np.array([0.3])}, state)
    expected = 1.0 - 0.01 * 0.3 / (0.3 + state.epsilon)
    assert params["w"].data[0] == pytest.approx(expected, abs=1e-12)


def test_adam_constant_gradient_moves_monotonically():
    params = nn.ParameterSet()
    params.adopt("w", np.array([0.0]))
    state = nn.AdamState(lr=0.1)
    nn.adam_step(params, {"w": np.array([-2.0])}, state)
    first = params["w"].data[0]
    nn.adam_step(params, {"w": np.array([-2.0])}, state)
    assert 0.0 < first < params["w"].data[0]


def test_adam_shape_mismatch():
    params = nn.ParameterSet()
    params.adopt("w", np.zeros(3))
    with pytest.raises(ShapeError):
        nn.adam_step(params, {"w": np.zeros(2)}, nn.AdamState())


def test_clip_grad_norm_rescales():
    params = nn.ParameterSet()
    params.adopt("a", np.zeros(2))
    params["a"].accumulate(np.array([3.0, 4.0]))
    total = nn.clip_grad_norm(params, 1.0)
    assert total == pytest.approx(5.0)
    assert np.allclose(params["a"].grad, [0.6, 0.8])


# --- Parameters and files ---


def test_parameter_init_is_seeded():
    a, b = nn.ParameterSet(rng_seed=4), nn.ParameterSet(rng_seed=4)
    for p in (a, b):
        p.add("w", (3, 2))
        p.add("bias", (3,), init="zeros")
    assert np.array_equal(a["w"].data, b["w"].data)
    assert np.all(np.abs(a["w"].data) <= 0.08)
    assert list(a) == ["w", "bias"]
    with pytest.raises(KeyError):
        a.add("w", (1,))


def _make_params():
    params = nn.ParameterSet(rng_seed=9)
    params.add("embedding", (4, 3))
    params.add("out.b", (5,), init="zeros")
    params.adopt("scalar_like", np.array([np.pi]))
    return params


def test_parameter_file_round_trip():
    params = _make_params()
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "p.bin"
        nn.save_parameters(path, params, {"note": "x"})
        loaded, header = nn.load_parameters(path)
    assert header == {"note": "x", "rng_seed": 9}
    assert list(loaded) == list(params)
    for name in params:
        assert np.array_equal(loaded[name].data, params[name].data)
    assert loaded.rng_seed == 9


def test_parameter_file_truncated():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "p.bin"
        nn.save_parameters(path, _make_params())
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CorruptFileError):
            nn.load_parameters(path)


def test_parameter_file_trailing_bytes():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "p.bin"
        nn.save_parameters(path, _make_params())
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CorruptFileError):
            nn.load_parameters(path)


def test_parameter_file_version_mismatch():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "p.bin"
        nn.save_parameters(path, _make_params())
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", nn.PARAMS_FORMAT_VERSION + 1)
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatchError):
            nn.load_parameters(path)


def _container(header, entries):
    """Raw container bytes from (name bytes, float list) entries."""
    head = json.dumps(header).encode("utf-8")
    chunks = [nn.PARAMS_MAGIC, struct.pack("<II", nn.PARAMS_FORMAT_VERSION, len(head)), head]
    chunks.append(struct.pack("<I", len(entries)))
    for name, values in entries:
        chunks.append(struct.pack("<H", len(name)) + name)
        chunks.append(struct.pack("<B", 1) + struct.pack("<1I", len(values)))
        chunks.append(np.asarray(values, dtype="<f8").tobytes())
    return b"".join(chunks)


def test_parameter_file_undecodable_name():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "p.bin"
        path.write_bytes(_container({}, [(b"\xff\xfe", [1.0])]))
        with pytest.raises(CorruptFileError, match="parameter name"):
            nn.load_parameters(path)


def test_parameter_file_duplicate_name():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "p.bin"
        path.write_bytes(_container({}, [(b"w", [1.0]), (b"w", [2.0, 3.0])]))
        with pytest.raises(CorruptFileError, match="duplicate"):
            nn.load_parameters(path)


def test_parameter_file_header_not_an_object():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "p.bin"
        path.write_bytes(_container([1, 2], [(b"w", [1.0])]))
        with pytest.raises(CorruptFileError, match="JSON object"):
            nn.load_parameters(path)


def test_hand_built_container_loads():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "p.bin"
        path.write_bytes(_container({"rng_seed": 4}, [(b"w", [1.0, 2.0])]))
        params, header = nn.load_parameters(path)
    assert header == {"rng_seed": 4}
    assert params["w"].data.tolist() == [1.0, 2.0]
    assert params.rng_seed == 4
