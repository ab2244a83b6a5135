import numpy as np
import pytest

from foolhd import losses
from foolhd import tensorcore as tc
from foolhd.errors import ContractViolation


@pytest.mark.parametrize(
    "f, f_adv, expected",
    [
        ([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 1.0),
        ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.0),
        ([1.0, 1.0], [1.0, 0.0], 1 / np.sqrt(2)),
    ],
)
def test_cosine_similarity_hand_cases(f, f_adv, expected):
    assert losses.cosine_similarity(f, f_adv).item() == pytest.approx(expected, abs=1e-5)


def test_cosine_similarity_is_scale_invariant(rng):
    f, f_adv = rng.standard_normal((5, 8)), rng.standard_normal((5, 8))
    scaled = losses.cosine_similarity(3.7 * f, 0.02 * f_adv).values
    np.testing.assert_allclose(scaled, losses.cosine_similarity(f, f_adv).values, atol=1e-10)


def test_cosine_similarity_of_zero_vector_is_finite():
    value = losses.cosine_similarity([0.0, 0.0], [1.0, 2.0]).item()
    assert np.isfinite(value)
    assert value == pytest.approx(0.0)


def test_perceptual_loss_cases(rng):
    f = rng.standard_normal((3, 4))
    assert losses.perceptual_loss(f, f).item() == pytest.approx(0.0, abs=1e-12)
    assert losses.perceptual_loss(f, -f).item() == pytest.approx(6.0)
    orthogonal = np.array([[1.0, 0.0], [0.0, 2.0]])
    rotated = np.array([[0.0, 5.0], [-1.0, 0.0]])
    assert losses.perceptual_loss(orthogonal, rotated).item() == pytest.approx(2.0)


def test_perceptual_loss_stays_in_bounds(rng):
    for _ in range(200):
        frames = int(rng.integers(1, 10))
        value = losses.perceptual_loss(rng.standard_normal((frames, 5)), rng.standard_normal((frames, 5))).item()
        assert 0.0 <= value <= 2 * frames


def test_perceptual_loss_rejects_frame_mismatch(rng):
    with pytest.raises(ContractViolation):
        losses.perceptual_loss(rng.standard_normal((3, 4)), rng.standard_normal((4, 4)))


def test_perceptual_loss_gradient(gradcheck, rng):
    assert gradcheck(losses.perceptual_loss, rng.standard_normal((3, 4)), rng.standard_normal((3, 4))) <= 1e-6


def test_adversarial_losses_hand_cases():
    assert losses.adversarial_loss_untargeted([2.0, 5.0, 1.0], 1).item() == 3.0
    assert losses.adversarial_loss_untargeted([2.0, 5.0, 1.0], 0).item() == -3.0
    assert losses.adversarial_loss_targeted([2.0, 5.0, 1.0], 0).item() == 3.0
    assert losses.adversarial_loss_targeted([9.0, 5.0, 1.0], 0).item() == -4.0


def test_adversarial_loss_sign_matches_decision(rng):
    for _ in range(10_000):
        num_classes = int(rng.integers(2, 51))
        logits = rng.standard_normal(num_classes)
        label = int(rng.integers(num_classes))
        prediction = int(np.argmax(logits))
        assert (losses.adversarial_loss_untargeted(logits, label).item() < 0) == (prediction != label)
        assert (losses.adversarial_loss_targeted(logits, label).item() < 0) == (prediction == label)


def test_adversarial_losses_ignore_a_common_logit_shift(rng):
    for _ in range(1000):
        num_classes = int(rng.integers(2, 51))
        logits = rng.standard_normal(num_classes) * 3.0
        shifted = logits + rng.uniform(-100.0, 100.0)
        label = int(rng.integers(num_classes))
        for loss in (losses.adversarial_loss_untargeted, losses.adversarial_loss_targeted):
            assert abs(loss(shifted, label).item() - loss(logits, label).item()) <= 1e-12


def test_adversarial_loss_ties_are_not_success():
    tied = [4.0, 4.0, 1.0]
    assert losses.adversarial_loss_untargeted(tied, 0).item() == 0.0
    assert losses.adversarial_loss_targeted(tied, 1).item() == 0.0


def test_adversarial_loss_contracts():
    with pytest.raises(ContractViolation):
        losses.adversarial_loss_untargeted([1.0], 0)
    with pytest.raises(ContractViolation):
        losses.adversarial_loss_targeted([1.0, 2.0], 2)


def test_total_loss_is_plain_sum(rng):
    assert losses.total_loss(0.0, 3.0).item() == 3.0
    assert losses.total_loss(2.5, -1.5).item() == 1.0
    with pytest.raises(ContractViolation):
        losses.total_loss(np.inf, 0.0)
    x = tc.Tensor(rng.standard_normal(4), requires_grad=True)
    weights = rng.standard_normal(4)
    tc.backward(losses.total_loss(tc.reduce_sum(tc.square(x)), tc.reduce_sum(x * weights)))
    np.testing.assert_allclose(x.grad, 2 * x.values + weights, atol=1e-12)


def test_mse_loss_cases(rng):
    x = rng.standard_normal(10)
    assert losses.mse_loss(x, x).item() == 0.0
    assert losses.mse_loss(np.zeros(4), np.full(4, 0.3)).item() == pytest.approx(0.09)
    x_adv = tc.Tensor(rng.standard_normal(10), requires_grad=True)
    tc.backward(losses.mse_loss(x, x_adv))
    np.testing.assert_allclose(x_adv.grad, 2 * (x_adv.values - x) / 10, atol=1e-12)
    with pytest.raises(ContractViolation):
        losses.mse_loss(np.zeros(3), np.zeros(4))


def test_cross_entropy_single_and_batch():
    assert losses.cross_entropy([0.0, 0.0], 1).item() == pytest.approx(np.log(2))
    batch = losses.cross_entropy([[0.0, 0.0], [0.0, np.log(3.0)]], [0, 1]).item()
    assert batch == pytest.approx((np.log(2) + np.log(4 / 3)) / 2)
    with pytest.raises(ContractViolation):
        losses.cross_entropy([[0.0, 0.0]], [0, 1])


def test_combined_loss_breakdown(rng):
    f, f_adv = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    total, breakdown = losses.combined_loss(f, f_adv, [2.0, 5.0, 1.0], 1)
    assert breakdown.adversarial == 3.0
    assert breakdown.perceptual == pytest.approx(losses.perceptual_loss(f, f_adv).item())
    assert total.item() == pytest.approx(breakdown.perceptual + 3.0)
    assert breakdown.cosine_similarities.shape == (4,)
    _, targeted = losses.combined_loss(f, f_adv, [2.0, 5.0, 1.0], 0, targeted=True, perceptual_term=tc.Tensor(0.5))
    assert targeted.total == pytest.approx(3.5)
