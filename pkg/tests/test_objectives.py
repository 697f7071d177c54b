import numpy as np
import pytest

from tinydreamer.autodiff import ContractError, Tensor, engine as ag
from tinydreamer.nets import TwoHotSpec, two_hot_encode, unimix
from tinydreamer.objectives import (
    STD_EPS,
    balanced_kl_losses,
    bt_loss,
    kl_categorical,
    prediction_loss,
)


def reference_bt(k: np.ndarray, e: np.ndarray, alpha: float) -> float:
    """Direct-formula double-precision oracle for the correlation objective."""
    k = np.asarray(k, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    n = k.shape[0]
    kn = (k - k.mean(0)) / (k.std(0, ddof=1) + STD_EPS)
    en = (e - e.mean(0)) / (e.std(0, ddof=1) + STD_EPS)
    corr = kn.T @ en / n
    diag = np.diag(corr)
    off = corr - np.diag(diag)
    return float(np.sum((1.0 - diag) ** 2) + alpha * np.sum(off**2))


def test_bt_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.choice([8, 16, 64]))
        d = int(rng.choice([1, 4, 16]))
        k = rng.standard_normal((n, d))
        e = rng.standard_normal((n, d))
        out = bt_loss(Tensor(k, op="leaf"), ag.constant(e), 5e-4)
        assert float(out.loss.data) == pytest.approx(reference_bt(k, e, 5e-4), abs=1e-10)


def test_bt_hand_case():
    k = np.array([[1.0], [-1.0]])
    out = bt_loss(Tensor(k.copy(), op="leaf"), ag.constant(k.copy()), 5e-4)
    assert float(out.loss.data) == pytest.approx(reference_bt(k, k, 5e-4), abs=1e-15)
    assert float(out.loss.data) == pytest.approx(0.25, abs=1e-4)


def test_bt_detaches_second_view():
    rng = np.random.default_rng(1)
    k = Tensor(rng.standard_normal((8, 4)), op="leaf")
    e = Tensor(rng.standard_normal((8, 4)), op="leaf")
    bt_loss(k, e, 5e-4).loss.backward()
    assert np.any(k.grad != 0)
    assert e.grad is None  # never reached


def test_bt_needs_two_samples():
    with pytest.raises(ContractError):
        bt_loss(Tensor(np.ones((1, 3))), ag.constant(np.ones((1, 3))), 5e-4)


def _dists(rng, scale=1.0):
    q = unimix(Tensor(scale * rng.standard_normal((5, 6)), op="leaf"), 2, 3)
    p = unimix(Tensor(scale * rng.standard_normal((5, 6)), op="leaf"), 2, 3)
    return q, p


def test_kl_nonnegative_and_zero_on_self():
    rng = np.random.default_rng(2)
    q, p = _dists(rng)
    assert np.all(kl_categorical(q, p).data >= 0)
    np.testing.assert_allclose(kl_categorical(q, q).data, np.zeros(5), atol=1e-12)


def test_kl_matches_direct_sum():
    rng = np.random.default_rng(3)
    q, p = _dists(rng)
    direct = np.sum(q.probs.data * (np.log(q.probs.data) - np.log(p.probs.data)), axis=-1)
    np.testing.assert_allclose(kl_categorical(q, p).data, direct, atol=1e-12)


def test_free_bits_floor_and_dead_zone_gradient():
    rng = np.random.default_rng(4)
    # tiny logits -> tiny KLs, all below the floor
    q, p = _dists(rng, scale=0.01)
    dyn, rep = balanced_kl_losses(q, p, free_nats=1.0)
    assert np.all(dyn.data >= 1.0) and np.all(rep.data >= 1.0)
    ag.add(ag.reduce_sum(dyn), ag.reduce_sum(rep)).backward()
    np.testing.assert_array_equal(q.logits.grad, np.zeros_like(q.logits.data))
    np.testing.assert_array_equal(p.logits.grad, np.zeros_like(p.logits.data))


def test_balanced_kl_routing_is_exact():
    rng = np.random.default_rng(5)
    q, p = _dists(rng, scale=3.0)  # large KLs, clamp inactive
    dyn, _ = balanced_kl_losses(q, p, free_nats=0.0)
    ag.reduce_sum(dyn).backward()
    assert q.logits.grad is None  # dyn never touches the live posterior
    assert np.any(p.logits.grad != 0)

    q, p = _dists(rng, scale=3.0)
    _, rep = balanced_kl_losses(q, p, free_nats=0.0)
    ag.reduce_sum(rep).backward()
    assert p.logits.grad is None
    assert np.any(q.logits.grad != 0)


def test_prediction_loss_analytic_points():
    spec = TwoHotSpec(11, 5.0)
    target = two_hot_encode(spec, np.array([0.0]))
    # a reward head that exactly reproduces the one-hot target has zero NLL
    logits = np.full((1, 11), -100.0)
    logits[0, target[0].argmax()] = 100.0
    r_nll, c_nll = prediction_loss(
        ag.constant(logits), ag.constant(np.zeros((1, 1))), np.array([0.0]), np.array([1.0]), spec
    )
    assert float(r_nll.data[0]) == pytest.approx(0.0, abs=1e-9)
    assert float(c_nll.data[0]) == pytest.approx(np.log(2.0), abs=1e-12)


def test_prediction_loss_cont_zero_target():
    spec = TwoHotSpec(11, 5.0)
    _, c_nll = prediction_loss(
        ag.constant(np.zeros((1, 11))),
        ag.constant(np.array([[10.0]])),
        np.array([0.0]),
        np.array([0.0]),
        spec,
    )
    # confident continue prediction against target 0 is heavily penalized
    assert float(c_nll.data[0]) == pytest.approx(10.0, abs=1e-4)
