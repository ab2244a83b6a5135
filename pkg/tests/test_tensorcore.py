import numpy as np
import pytest

from foolhd import tensorcore as tc
from foolhd.errors import ContractViolation, DomainError


def test_elementwise_gradients(gradcheck, rng):
    a = rng.standard_normal((3, 4))
    b = rng.uniform(0.5, 2.0, size=(4,))
    assert gradcheck(lambda x, y: tc.reduce_sum(x * y + x / y - y), a, b) <= 1e-6
    assert gradcheck(lambda x: tc.reduce_sum(tc.tanh(x) * tc.sigmoid(x) + tc.exp(x)), a) <= 1e-6
    assert gradcheck(lambda y: tc.reduce_sum(tc.log(y) + tc.sqrt(y) + tc.square(y)), b) <= 1e-6


def test_elementwise_dispatch_matches_named_ops(rng):
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    np.testing.assert_array_equal(tc.elementwise("mul", a, b).values, a * b)
    np.testing.assert_array_equal(tc.elementwise("relu", a).values, np.maximum(a, 0))
    with pytest.raises(ContractViolation):
        tc.elementwise("mul", a)
    with pytest.raises(ContractViolation):
        tc.elementwise("cosh", a)


def test_log_and_sqrt_reject_non_positive_input():
    with pytest.raises(DomainError):
        tc.log(tc.Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        tc.sqrt(tc.Tensor([-1.0]))


def test_broadcast_mismatch_is_contract_violation():
    with pytest.raises(ContractViolation):
        tc.add(np.ones((2, 3)), np.ones((4,)))


def test_matmul_gradient(gradcheck, rng):
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))
    assert gradcheck(lambda x, y: tc.reduce_sum(tc.square(x @ y)), a, b) <= 1e-6


def test_index_accumulates_repeated_positions():
    x = tc.Tensor(np.arange(4.0), requires_grad=True)
    tc.backward(tc.reduce_sum(x[np.array([0, 0, 2])]))
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0, 0.0])


def test_boolean_mask_index():
    x = tc.Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    picked = x[np.array([True, False, True])]
    assert picked.shape == (2, 2)
    tc.backward(tc.reduce_sum(picked))
    np.testing.assert_array_equal(x.grad, [[1, 1], [0, 0], [1, 1]])


def test_frame_and_overlap_add_are_adjoint(rng):
    signal = rng.standard_normal(40)
    frames = tc.frame(signal, 8, 4).values
    other = rng.standard_normal(frames.shape)
    lhs = np.sum(frames * other)
    rhs = np.sum(signal * tc.overlap_add(other, 4).values)
    assert abs(lhs - rhs) <= 1e-10


def test_frame_gradient(gradcheck, rng):
    weights = rng.standard_normal((4, 6))
    assert gradcheck(lambda s: tc.reduce_sum(tc.frame(s, 6, 3) * weights), rng.standard_normal(15)) <= 1e-6


def _naive_conv2d(x, k):
    c_out, c_in, kh, kw = k.shape
    _, h, w = x.shape
    padded = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                out[o, i, j] = np.sum(padded[:, i:i + kh, j:j + kw] * k[o])
    return out


def test_conv2d_matches_loop_oracle(rng):
    for _ in range(100):
        x = rng.standard_normal((2, 5, 6))
        k = rng.standard_normal((3, 2, 3, 3))
        np.testing.assert_allclose(tc.conv2d(x, k).values, _naive_conv2d(x, k), atol=1e-8)


def test_conv2d_gradient(gradcheck, rng):
    x = rng.standard_normal((2, 4, 5))
    k = rng.standard_normal((3, 2, 3, 3))
    weights = rng.standard_normal((3, 4, 5))
    assert gradcheck(lambda a, b: tc.reduce_sum(tc.conv2d(a, b) * weights), x, k) <= 1e-6


def test_conv2d_rejects_channel_mismatch(rng):
    with pytest.raises(ContractViolation):
        tc.conv2d(rng.standard_normal((2, 4, 4)), rng.standard_normal((1, 3, 3, 3)))


def _naive_conv1d(x, k, dilation):
    c_out, c_in, taps = k.shape
    length = x.shape[1] - (taps - 1) * dilation
    out = np.zeros((c_out, length))
    for o in range(c_out):
        for t in range(length):
            for j in range(taps):
                out[o, t] += np.dot(k[o, :, j], x[:, t + j * dilation])
    return out


def test_conv1d_dilated_matches_loop_oracle(rng):
    for trial in range(100):
        dilation = 1 + trial % 3
        x = rng.standard_normal((3, 12))
        k = rng.standard_normal((2, 3, 3))
        np.testing.assert_allclose(tc.conv1d_dilated(x, k, dilation).values, _naive_conv1d(x, k, dilation), atol=1e-8)


def test_conv1d_dilated_batched_and_gradient(gradcheck, rng):
    x = rng.standard_normal((2, 3, 10))
    k = rng.standard_normal((4, 3, 3))
    batched = tc.conv1d_dilated(x, k, 2).values
    np.testing.assert_allclose(batched[1], _naive_conv1d(x[1], k, 2), atol=1e-10)
    weights = rng.standard_normal(batched.shape)
    assert gradcheck(lambda a, b: tc.reduce_sum(tc.conv1d_dilated(a, b, 2) * weights), x, k) <= 1e-6


def test_conv1d_too_short_names_minimum(rng):
    with pytest.raises(ContractViolation, match="at least 7"):
        tc.conv1d_dilated(rng.standard_normal((1, 6)), rng.standard_normal((1, 1, 3)), 3)


def test_softmax_is_shift_invariant(rng):
    z = rng.standard_normal(7)
    np.testing.assert_allclose(tc.softmax(z).values, tc.softmax(z + 123.4).values, atol=1e-12)
    np.testing.assert_allclose(np.exp(tc.log_softmax(z).values), tc.softmax(z).values, atol=1e-12)


def test_softmax_gradient(gradcheck, rng):
    weights = rng.standard_normal((2, 5))
    assert gradcheck(lambda z: tc.reduce_sum(tc.softmax(z, axis=1) * weights), rng.standard_normal((2, 5))) <= 1e-6
    assert gradcheck(lambda z: tc.reduce_sum(tc.log_softmax(z, axis=1) * weights), rng.standard_normal((2, 5))) <= 1e-6


def test_max_with_index_breaks_ties_low():
    value, index = tc.max_with_index(tc.Tensor([1.0, 3.0, 3.0]))
    assert value.item() == 3.0
    assert int(index) == 1
    values, indices = tc.max_with_index(tc.Tensor([[2.0, 2.0], [0.0, 5.0]]), axis=1)
    np.testing.assert_array_equal(values.values, [2.0, 5.0])
    np.testing.assert_array_equal(indices, [0, 1])


def test_reduce_dispatch_and_empty_reduction():
    assert tc.reduce("mean", tc.Tensor([1.0, 3.0])).item() == 2.0
    with pytest.raises(ContractViolation):
        tc.reduce_sum(tc.Tensor(np.zeros(0)))


def test_batch_norm_normalizes_and_differentiates(gradcheck, rng):
    x = rng.standard_normal((3, 4, 5)) * 4.0 + 2.0
    out = tc.batch_norm(x, np.ones(3), np.zeros(3)).values
    np.testing.assert_allclose(out.mean(axis=(1, 2)), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=(1, 2)), 1.0, atol=1e-4)
    weights = rng.standard_normal(x.shape)
    loss = lambda a, g, b: tc.reduce_sum(tc.batch_norm(a, g, b) * weights)
    assert gradcheck(loss, x, rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)) <= 1e-5


def test_batch_norm_needs_two_elements_per_channel():
    with pytest.raises(ContractViolation):
        tc.batch_norm(np.ones((1, 2)), np.ones(2), np.zeros(2), axis=1)


def test_dropout_identity_outside_training(rng):
    x = tc.Tensor(rng.standard_normal(10))
    assert tc.dropout(x, 0.5, False, None) is x
    assert tc.dropout(x, 0.0, True, rng) is x
    dropped = tc.dropout(x, 0.5, True, rng).values
    kept = dropped != 0
    np.testing.assert_allclose(dropped[kept], 2.0 * x.values[kept])


def test_no_grad_records_nothing():
    x = tc.Tensor([1.0, 2.0], requires_grad=True)
    with tc.no_grad():
        assert not tc.is_recording()
        y = x * 2.0
    assert not y.requires_grad
    assert y._parents == ()
    assert tc.is_recording()
    frozen = tc.Tensor([3.0, 4.0])
    assert (frozen * 2.0)._parents == ()
    assert (x * frozen)._parents == (x, frozen)


def test_backward_requires_scalar_with_graph():
    x = tc.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractViolation):
        tc.backward(x * 2.0)
    with pytest.raises(ContractViolation):
        tc.backward(tc.Tensor(1.0))


def test_tape_orders_inputs_before_consumers():
    x = tc.Tensor(2.0, requires_grad=True)
    y = x * x
    z = y + x
    tape = tc.backward(z)
    order = {id(node): i for i, node in enumerate(tape.nodes)}
    assert order[id(x)] < order[id(y)] < order[id(z)]
    assert x.grad == pytest.approx(5.0)


def test_adam_first_step_moves_by_learning_rate():
    p = tc.Tensor([1.0, -1.0], requires_grad=True)
    state = tc.AdamState.create([p], lr=0.1)
    p.grad = np.array([3.0, -0.5])
    tc.adam_step([p], state)
    np.testing.assert_allclose(p.values, [0.9, -0.9], atol=1e-6)


def test_adam_weight_decay_is_decoupled():
    p = tc.Tensor([2.0], requires_grad=True)
    state = tc.AdamState.create([p], lr=0.1, weight_decay=0.5)
    p.grad = np.array([0.0])
    tc.adam_step([p], state)
    np.testing.assert_allclose(p.values, [2.0 * (1 - 0.05)])


def test_adam_requires_gradients():
    p = tc.Tensor([1.0], requires_grad=True)
    state = tc.AdamState.create([p])
    with pytest.raises(ContractViolation):
        tc.adam_step([p], state)


def test_small_hand_cases():
    np.testing.assert_array_equal(tc.add([1.0, 2.0], [3.0, 4.0]).values, [4.0, 6.0])
    assert tc.sigmoid([0.0]).values[0] == 0.5
    np.testing.assert_array_equal(tc.relu([-2.0, 0.0, 3.0]).values, [0.0, 0.0, 3.0])
    np.testing.assert_array_equal(tc.matmul([[1.0, 0.0]], [[2.0], [5.0]]).values, [[2.0]])
    np.testing.assert_allclose(tc.softmax([0.0, np.log(3.0)]).values, [0.25, 0.75])
    np.testing.assert_allclose(tc.softmax([1000.0, 1000.0]).values, [0.5, 0.5])
    np.testing.assert_array_equal(tc.concat([1.0], [2.0]).values, [1.0, 2.0])
    assert tc.concat(np.ones((1, 4, 4)), np.ones((1, 4, 4))).shape == (2, 4, 4)


def test_delta_kernels_pass_input_through(rng):
    x = rng.standard_normal((1, 5, 5))
    delta = np.zeros((1, 1, 3, 3))
    delta[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(tc.conv2d(x, delta).values, x)
    assert tc.conv1d_dilated(rng.standard_normal((1, 10)), rng.standard_normal((1, 1, 5))).shape == (1, 6)
    signal = rng.standard_normal((1, 10))
    np.testing.assert_array_equal(tc.conv1d_dilated(signal, np.ones((1, 1, 1))).values, signal)


def test_backward_of_simple_sums(rng):
    a = tc.Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    tc.backward(tc.reduce_sum(a * a))
    np.testing.assert_allclose(a.grad, 2 * a.values)
    b = tc.Tensor(rng.standard_normal(2), requires_grad=True)
    c = tc.Tensor(rng.standard_normal(3), requires_grad=True)
    tc.backward(tc.reduce_sum(tc.concat(b, c)))
    np.testing.assert_array_equal(b.grad, np.ones(2))
    np.testing.assert_array_equal(c.grad, np.ones(3))


def test_batch_norm_zero_gamma_returns_beta(rng):
    out = tc.batch_norm(rng.standard_normal((2, 6)), np.zeros(2), np.array([0.3, -1.0]))
    np.testing.assert_allclose(out.values, [[0.3] * 6, [-1.0] * 6])
    with pytest.raises(ContractViolation):
        tc.dropout(np.ones(3), 1.0, True, rng)
