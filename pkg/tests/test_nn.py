import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odmn.errors import DimensionError, NumericError, StateError
from odmn.nn import (Adam, AdamState, DenseLayer, Parameter, Tape, adam_step, backward, finite_diff_check, forward,
                     ops, stop_gradient)


def test_identity_layer_passes_input_through():
    layer = DenseLayer(2, 2)
    layer.weight.value[:] = np.eye(2)
    out = forward(layer, np.array([[1.0, 2.0]]))
    assert np.array_equal(out.value, [[1.0, 2.0]])


def test_softmax_of_equal_logits_is_uniform():
    out = ops.softmax(np.zeros((1, 3)))
    assert np.allclose(out.value, 1 / 3)


def test_sigmoid_layer_at_zero():
    layer = DenseLayer(1, 1, "sigmoid")
    layer.weight.value[:] = 0.0
    assert forward(layer, np.array([[7.0]])).value[0, 0] == 0.5


def test_shape_mismatch_names_both_shapes():
    layer = DenseLayer(3, 2, name="probe")
    with pytest.raises(DimensionError) as err:
        forward(layer, np.ones((4, 5)))
    assert "(4, 5)" in str(err.value) and "(3, 2)" in str(err.value)


def test_unknown_activation_rejected():
    with pytest.raises(ValueError):
        DenseLayer(2, 2, "tanh")


def test_nonfinite_output_raises():
    layer = DenseLayer(1, 1)
    layer.weight.value[:] = np.inf
    with pytest.raises(NumericError):
        forward(layer, np.array([[1.0]]))


def test_linear_gradient():
    w = Parameter([[2.0]], "w")
    with Tape() as tape:
        loss = ops.sum(ops.matmul(np.array([[3.0]]), w))
    assert tape.backward(loss)[w][0, 0] == 3.0


def test_stopped_branch_gets_no_gradient():
    w = Parameter([1.5], "w")
    with Tape() as tape:
        x = tape.watch(w)
        loss = ops.sum(ops.add(ops.mul(x, 2.0), ops.mul(stop_gradient(x), 5.0)))
    assert tape.backward(loss)[w][0] == 2.0


def test_backward_without_tape_is_state_error():
    w = Parameter([1.0], "w")
    loss = ops.sum(ops.mul(w, 2.0))
    with pytest.raises(StateError):
        backward(loss)


def test_tape_cannot_be_reused():
    w = Parameter([1.0], "w")
    with Tape() as tape:
        loss = ops.sum(ops.mul(w, 2.0))
    tape.backward(loss)
    with pytest.raises(StateError):
        tape.backward(loss)


def test_module_level_backward_uses_recording_tape():
    w = Parameter([1.0, 2.0], "w")
    with Tape():
        loss = ops.sum(ops.square(w))
    assert np.array_equal(backward(loss)[w], [2.0, 4.0])


def test_gradients_match_parameter_shapes():
    rng = np.random.default_rng(0)
    l1 = DenseLayer(3, 4, "relu", rng=rng, name="a")
    l2 = DenseLayer(4, 2, "softmax", rng=rng, name="b")
    with Tape() as tape:
        loss = ops.mean(l2(l1(rng.normal(size=(5, 3)))))
    grads = tape.backward(loss)
    for p in l1.parameters + l2.parameters:
        assert grads[p].shape == p.shape


def _two_layer(seed):
    rng = np.random.default_rng(seed)
    # (9 + 3) + (3 + 1) layer entries plus one scale: 17 scalars
    l1 = DenseLayer(3, 3, "sigmoid", rng=rng, name="l1")
    l2 = DenseLayer(3, 1, rng=rng, name="l2")
    scale = Parameter([0.7], "scale")
    x = rng.normal(size=(6, 3))
    y = rng.normal(size=(6, 1))

    def loss_fn():
        h = ops.mul(l2(l1(x)), scale)
        return ops.mean(ops.square(ops.sub(h, y)))
    return loss_fn, l1.parameters + l2.parameters + [scale]


def test_two_layer_net_gradcheck():
    loss_fn, params = _two_layer(3)
    assert sum(p.value.size for p in params) == 17
    report = finite_diff_check(loss_fn, params)
    assert report.passed, report.per_tensor


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradcheck_over_random_inits(seed):
    loss_fn, params = _two_layer(seed)
    assert finite_diff_check(loss_fn, params).passed


def test_gradcheck_of_all_ops():
    rng = np.random.default_rng(1)
    a = Parameter(rng.normal(size=(4, 3)), "a")
    b = Parameter(rng.uniform(0.1, 1.0, size=(4, 3)), "b")
    table = Parameter(rng.normal(size=(5, 2)), "table")
    ids = np.array([0, 3, 3, 1])

    def loss_fn():
        s = ops.softmax(a)
        g = ops.gather_rows(table, ids)
        c = ops.concat([s, ops.sigmoid(b), g], axis=1)
        picked = ops.take_along_rows(c, np.array([0, 4, 6, 2]))
        cols = ops.take_cols(c, [1, 5])
        r = ops.relu(ops.sub(a, 0.05))
        return ops.add(ops.sum(ops.log(ops.add(b, 0.5))), ops.add(ops.mean(ops.mul(cols, cols)),
                       ops.add(ops.sum(picked), ops.sum(ops.sum(r, axis=0, keepdims=True)))))
    assert finite_diff_check(loss_fn, [a, b, table]).passed


def test_quadratic_gradcheck_is_tight():
    w = Parameter([1.3], "w")
    report = finite_diff_check(lambda: ops.sum(ops.square(w)), [w])
    assert report.max_error < 1e-8


def test_gradcheck_flags_corrupted_gradient():
    w = Parameter([1.3, -0.4], "w")
    loss_fn = lambda: ops.sum(ops.square(w))  # noqa: E731
    report = finite_diff_check(loss_fn, [w], analytic={w: 2 * (2 * w.value)})
    assert not report.passed
    assert "w" in report.failures()


def test_adam_zero_gradient_leaves_params():
    p = Parameter([1.0, -2.0], "p")
    state = AdamState()
    adam_step([p], {p: np.zeros(2)}, state, 0.05)
    assert np.array_equal(p.value, [1.0, -2.0])
    assert state.step == 1 and state.m["p"].shape == (2,)


def test_adam_first_step_moves_by_lr():
    p = Parameter(1.0, "p")
    adam_step([p], {p: np.array(1.0)}, AdamState(), 0.05)
    assert p.value == pytest.approx(0.95, abs=1e-6)


def test_adam_clamps_nonnegative_weights():
    p = Parameter([0.01], "p", nonnegative=True)
    adam_step([p], {p: np.array([100.0])}, AdamState(), 0.05)
    assert p.value[0] == 0.0


def test_adam_rejects_nonfinite_gradient_by_name():
    p = Parameter([0.5], "tower.weight")
    with pytest.raises(NumericError, match="tower.weight"):
        adam_step([p], {p: np.array([np.nan])}, AdamState(), 0.05)
    assert p.value[0] == 0.5


def test_adam_group_rates():
    e = Parameter([1.0], "e", group="embedding")
    d = Parameter([1.0], "d")
    opt = Adam([e, d], lr=0.05, group_lr={"embedding": 0.1})
    opt.step({e: np.array([1.0]), d: np.array([1.0])})
    assert e.value[0] == pytest.approx(0.9, abs=1e-6)
    assert d.value[0] == pytest.approx(0.95, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
def test_nonnegative_after_any_step_sequence(gs):
    p = Parameter(np.full(3, 0.2), "p", nonnegative=True)
    state = AdamState()
    for g in gs:
        adam_step([p], {p: np.array([g, -g, 0.5 * g])}, state, 0.05)
        assert np.all(p.value >= 0)
    assert state.step == len(gs)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-15, 15), min_size=2, max_size=8), st.integers(1, 5))
def test_softmax_rows_valid(row, reps):
    out = ops.softmax(np.tile(row, (reps, 1))).value
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((out > 0) & (out < 1))


def test_sigmoid_stable_at_extremes():
    out = ops.sigmoid(np.array([[-800.0, 800.0]])).value
    assert np.all(np.isfinite(out)) and out[0, 0] == 0.0 and out[0, 1] == 1.0


def test_determinism_same_seed():
    def run():
        rng = np.random.default_rng(7)
        layer = DenseLayer(3, 2, rng=rng)
        opt = Adam(layer.parameters)
        x = rng.normal(size=(4, 3))
        for _ in range(5):
            with Tape() as tape:
                loss = ops.mean(ops.square(layer(x)))
            opt.step(tape.backward(loss))
        return layer.weight.value.copy()
    assert np.array_equal(run(), run())


def test_tapes_are_thread_local():
    w = Parameter([2.0], "w")
    results = {}

    def work(k):
        with Tape() as tape:
            loss = ops.sum(ops.mul(w, float(k)))
        results[k] = tape.backward(loss)[w][0]
    threads = [threading.Thread(target=work, args=(k,)) for k in range(1, 5)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == {1: 1.0, 2: 2.0, 3: 3.0, 4: 4.0}
