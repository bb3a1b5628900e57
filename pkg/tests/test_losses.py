"""Loss-term unit tests: brute-force oracles, analytic cases, finite
differences, composite arithmetic, and purity properties.

The oracles reimplement each formula with plain Python loops over
Python floats, sharing no code path with the library implementation.
"""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from zstrans.config import LossWeights
from zstrans.losses import (COMPOSITE_KEYS, TERM_KEYS, LossReport,
                            compose_objectives, gradient_penalty, loss_cls,
                            loss_gan_d, loss_gan_s, loss_mut, loss_rec)


# ---------------------------------------------------------------- oracles

def oracle_mean(values):
    total = 0.0
    count = 0
    for v in values:
        total += float(v)
        count += 1
    return total / count


def oracle_gan_gap(real, fake):
    return oracle_mean(np.asarray(real).ravel()) - oracle_mean(np.asarray(fake).ravel())


def oracle_cross_entropy(logits, labels):
    total = 0.0
    for row, lab in zip(logits, labels):
        m = max(float(v) for v in row)
        exps = [math.exp(float(v) - m) for v in row]
        total += -math.log(exps[int(lab)] / sum(exps))
    return total / len(labels)


def oracle_l1(a, b):
    fa, fb = np.asarray(a).ravel(), np.asarray(b).ravel()
    total = 0.0
    for x, y in zip(fa, fb):
        total += abs(float(x) - float(y))
    return total / len(fa)


def oracle_compose(terms, w):
    t = {k: float(terms.get(k, 0.0)) for k in TERM_KEYS}
    translation = w.lambda_r * (t["rec_s"] + t["rec_c"]) + w.lambda_m * t["mut_f"] + t["gan_d"]
    return {
        "obj_vision_enc": t["gan_s"] + w.lambda_c * t["cls_v"],
        "obj_attr_enc": t["gan_s"] + w.lambda_c * t["cls_a"],
        "obj_classifier": t["cls_v"],
        "obj_feat_critic": -t["gan_s"] + t["gp_s"],
        "obj_content_enc": translation,
        "obj_generator": translation,
        "obj_img_critic": w.lambda_m * t["mut_r"] - t["gan_d"] + t["gp_d"],
    }


def rel_err(value, reference, floor=1e-12):
    return abs(value - reference) / max(abs(reference), floor)


# ------------------------------------------------------- arithmetic cases

def test_gan_s_constant_critic_cancels():
    s = torch.full((5,), 3.7, dtype=torch.float64)
    assert float(loss_gan_s(s, s)) == pytest.approx(0.0, abs=1e-12)


def test_gan_s_hand_case():
    v = loss_gan_s(torch.tensor([1.0, 3.0]), torch.tensor([0.0, 2.0]))
    assert float(v) == pytest.approx(1.0, abs=1e-9)


def test_gan_s_empty_batch_error():
    with pytest.raises(ValueError, match="empty"):
        loss_gan_s(torch.zeros(0), torch.zeros(3))


def test_cls_uniform_logits_is_log_m():
    v = loss_cls(torch.zeros(6, 4, dtype=torch.float64), torch.tensor([0, 1, 2, 3, 0, 1]))
    assert float(v) == pytest.approx(math.log(4), rel=1e-9)


def test_cls_perfect_logits_approach_zero():
    logits = torch.full((3, 5), -100.0, dtype=torch.float64)
    for i, lab in enumerate([0, 2, 4]):
        logits[i, lab] = 100.0
    assert float(loss_cls(logits, torch.tensor([0, 2, 4]))) < 1e-6


def test_cls_label_out_of_range_error():
    with pytest.raises(ValueError, match="out of range"):
        loss_cls(torch.zeros(2, 4), torch.tensor([0, 4]))


def test_mut_identical_is_zero():
    x = torch.randn(4, 9)
    assert float(loss_mut(x, x.clone())) == 0.0


def test_mut_constant_difference():
    v = loss_mut(torch.full((2, 5), 0.5), torch.full((2, 5), 0.25))
    assert float(v) == pytest.approx(0.25, abs=1e-9)


def test_mut_shape_mismatch_error():
    with pytest.raises(ValueError, match="mismatch"):
        loss_mut(torch.zeros(2, 5), torch.zeros(2, 6))


def test_gan_d_identical_maps_zero():
    m = torch.randn(3, 1, 4, 4)
    assert float(loss_gan_d(m, m.clone())) == pytest.approx(0.0, abs=1e-7)


def test_gan_d_hand_case():
    v = loss_gan_d(torch.full((2, 1, 3, 3), 2.0), torch.full((2, 1, 3, 3), 0.5))
    assert float(v) == pytest.approx(1.5, abs=1e-9)


def test_rec_identical_zero():
    x = torch.rand(2, 3, 8, 8)
    assert float(loss_rec(x, x.clone())) == 0.0


def test_rec_constant_difference():
    v = loss_rec(torch.full((2, 3, 4, 4), 0.9), torch.full((2, 3, 4, 4), 0.1))
    assert float(v) == pytest.approx(0.8, rel=1e-7)


# ------------------------------------------------ brute-force oracle sweep

def test_oracle_sweep_50_seeded_inputs():
    """Acceptance criterion 1 body: 50 seeded random inputs per op,
    <=1e-6 relative against loop-based oracles (runtime budget lives in
    the acceptance suite)."""
    for trial in range(50):
        g = np.random.default_rng(1000 + trial)
        n, m = int(g.integers(2, 9)), int(g.integers(2, 7))

        real = g.normal(size=n)
        fake = g.normal(size=n)
        got = float(loss_gan_s(torch.tensor(real), torch.tensor(fake)))
        assert rel_err(got, oracle_gan_gap(real, fake)) <= 1e-6

        logits = g.normal(size=(n, m)) * 3
        labels = g.integers(0, m, size=n)
        got = float(loss_cls(torch.tensor(logits), torch.tensor(labels)))
        assert rel_err(got, oracle_cross_entropy(logits, labels)) <= 1e-6

        a = g.normal(size=(n, m))
        b = g.normal(size=(n, m))
        got = float(loss_mut(torch.tensor(a), torch.tensor(b)))
        assert rel_err(got, oracle_l1(a, b)) <= 1e-6

        maps_r = g.normal(size=(n, 1, 3, 3))
        maps_f = g.normal(size=(n, 1, 3, 3))
        got = float(loss_gan_d(torch.tensor(maps_r), torch.tensor(maps_f)))
        assert rel_err(got, oracle_gan_gap(maps_r, maps_f)) <= 1e-6

        xa = g.uniform(size=(n, 3, 4, 4))
        xb = g.uniform(size=(n, 3, 4, 4))
        got = float(loss_rec(torch.tensor(xa), torch.tensor(xb)))
        assert rel_err(got, oracle_l1(xa, xb)) <= 1e-6

        terms = {k: float(g.normal()) for k in TERM_KEYS}
        w = LossWeights(lambda_c=float(g.uniform(0, 2)), lambda_r=float(g.uniform(0, 2)),
                        lambda_m=float(g.uniform(0, 100)), lambda_gp=float(g.uniform(0, 20)))
        report = compose_objectives(terms, w)
        for key, want in oracle_compose(terms, w).items():
            assert rel_err(getattr(report, key), want) <= 1e-6


def test_gradient_penalty_linear_critic_oracle():
    """Closed form: for critic(x) = w.x the gradient is w for every
    sample, so the penalty is weight*(||w|| - 1)^2 independent of eps."""
    for trial in range(50):
        g = np.random.default_rng(2000 + trial)
        dim = int(g.integers(1, 8))
        w_vec = g.normal(size=dim)
        weight = float(g.uniform(0.5, 20))
        wt = torch.tensor(w_vec)

        def critic(x):
            return x @ wt

        real = torch.tensor(g.normal(size=(5, dim)))
        fake = torch.tensor(g.normal(size=(5, dim)))
        got = float(gradient_penalty(critic, real, fake, weight=weight, rng_seed=trial).detach())
        norm = math.sqrt(sum(float(v) ** 2 for v in w_vec))
        want = weight * (norm - 1.0) ** 2
        assert rel_err(got, want, floor=1e-9) <= 1e-6


def test_gradient_penalty_quadratic_critic_oracle():
    """critic(x) = sum(x^2): gradient 2*mix per sample; the oracle
    reproduces the seeded eps draw and evaluates the closed form."""
    for trial in range(50):
        g = np.random.default_rng(3000 + trial)
        n, dim = 4, int(g.integers(2, 6))
        real = g.normal(size=(n, dim))
        fake = g.normal(size=(n, dim))
        weight = 10.0
        seed = 500 + trial

        def critic(x):
            return (x ** 2).sum(dim=1)

        got = float(gradient_penalty(critic, torch.tensor(real), torch.tensor(fake),
                                     weight=weight, rng_seed=seed).detach())

        gen = torch.Generator().manual_seed(seed % (2 ** 63))
        eps = torch.rand((n, 1), generator=gen, dtype=torch.float64).numpy()
        mix = eps * real + (1 - eps) * fake
        total = 0.0
        for i in range(n):
            norm = math.sqrt(sum((2.0 * mix[i, j]) ** 2 for j in range(dim)) + 1e-12)
            total += (norm - 1.0) ** 2
        want = weight * total / n
        assert rel_err(got, want) <= 1e-6


def test_gradient_penalty_unit_gradient_critic_zero():
    def critic(x):
        return x.reshape(x.shape[0], -1).sum(dim=1)

    gp = gradient_penalty(critic, torch.randn(6, 1, dtype=torch.float64),
                          torch.randn(6, 1, dtype=torch.float64), weight=10.0, rng_seed=1)
    assert float(gp.detach()) == pytest.approx(0.0, abs=1e-9)


def test_gradient_penalty_spatial_map_uses_mean():
    """A critic emitting maps is reduced by spatial mean before the
    gradient: map critic x -> x (identity map over k cells) has
    per-cell gradient 1/k, norm sqrt(k)/k = 1/sqrt(k)."""
    k = 4  # 2x2 map

    def critic(x):  # (B, 1, 2, 2) -> same map
        return x

    real = torch.randn(5, 1, 2, 2, dtype=torch.float64)
    fake = torch.randn(5, 1, 2, 2, dtype=torch.float64)
    got = float(gradient_penalty(critic, real, fake, weight=1.0, rng_seed=9).detach())
    want = (1.0 / math.sqrt(k) - 1.0) ** 2
    assert rel_err(got, want) <= 1e-6


def test_gradient_penalty_shape_mismatch_error():
    with pytest.raises(ValueError, match="mismatch"):
        gradient_penalty(lambda x: x.sum(dim=1), torch.zeros(2, 3), torch.zeros(2, 4))


def test_gradient_penalty_condition_not_differentiated():
    """The penalty must take gradients w.r.t. the mix only: with
    critic(f, c) = (f + 10*c).sum the conditioned part contributes
    nothing to the norm."""
    def critic(f, c):
        return (f + 10.0 * c).sum(dim=1)

    cond = torch.randn(4, 3, dtype=torch.float64)
    got = gradient_penalty(critic, torch.randn(4, 3, dtype=torch.float64),
                           torch.randn(4, 3, dtype=torch.float64),
                           condition=cond, weight=1.0, rng_seed=2)
    want = (math.sqrt(3.0) - 1.0) ** 2
    assert float(got.detach()) == pytest.approx(want, rel=1e-6)


# --------------------------------------------------- finite differences

def _central_fd(evaluate, storage, flat_index, eps=1e-6):
    """Central difference through a detached view of the input storage.

    Perturbation happens outside any no_grad block so losses that run
    autograd internally (the penalty) still work during evaluation.
    """
    flat = storage.reshape(-1)
    flat[flat_index] += eps
    plus = float(evaluate())
    flat[flat_index] -= 2 * eps
    minus = float(evaluate())
    flat[flat_index] += eps
    return (plus - minus) / (2 * eps)


def _check_grad(evaluate, tensors, n_coords=5, tol=1e-3):
    """Autodiff vs central differences on a few coordinates per input."""
    for t in tensors:
        t.requires_grad_(True)
        t.grad = None
    value = evaluate()
    value.backward()
    g = np.random.default_rng(0)
    for t in tensors:
        grad = t.grad.reshape(-1)
        for flat_index in g.choice(t.numel(), size=min(n_coords, t.numel()), replace=False):
            fd = _central_fd(lambda: evaluate().detach(), t.detach(), int(flat_index))
            auto = float(grad[int(flat_index)])
            denom = max(abs(fd), abs(auto), 1e-6)
            assert abs(fd - auto) / denom <= tol, (fd, auto)
    for t in tensors:
        t.requires_grad_(False)
        t.grad = None


def test_fd_gan_s():
    real = torch.randn(6, dtype=torch.float64)
    fake = torch.randn(6, dtype=torch.float64)
    _check_grad(lambda: loss_gan_s(real, fake), [real, fake])


def test_fd_cls():
    logits = torch.randn(5, 4, dtype=torch.float64)
    labels = torch.tensor([0, 1, 2, 3, 1])
    _check_grad(lambda: loss_cls(logits, labels), [logits])


def test_fd_mut_both_arguments():
    a = torch.randn(4, 7, dtype=torch.float64)
    b = torch.randn(4, 7, dtype=torch.float64)
    _check_grad(lambda: loss_mut(a, b), [a, b])


def test_fd_gan_d():
    r = torch.randn(3, 1, 4, 4, dtype=torch.float64)
    f = torch.randn(3, 1, 4, 4, dtype=torch.float64)
    _check_grad(lambda: loss_gan_d(r, f), [r, f])


def test_fd_rec():
    x = torch.rand(2, 3, 5, 5, dtype=torch.float64)
    y = torch.rand(2, 3, 5, 5, dtype=torch.float64)
    _check_grad(lambda: loss_rec(x, y), [x, y])


def test_fd_gradient_penalty_double_backward():
    """d(penalty)/d(critic parameters) via the double-backward path vs
    central differences on a two-layer critic."""
    torch.manual_seed(4)
    net = torch.nn.Sequential(torch.nn.Linear(5, 8), torch.nn.Tanh(),
                              torch.nn.Linear(8, 1)).double()

    def critic(x):
        return net(x).squeeze(-1)

    real = torch.randn(6, 5, dtype=torch.float64)
    fake = torch.randn(6, 5, dtype=torch.float64)

    def evaluate():
        return gradient_penalty(critic, real, fake, weight=10.0, rng_seed=21)

    for p in net.parameters():
        p.grad = None
    evaluate().backward()
    g = np.random.default_rng(1)
    for p in net.parameters():
        # the last bias shifts scores without touching d(score)/d(mix),
        # so it legitimately receives no graph: treat None as zeros and
        # let the finite differences confirm
        grad = (torch.zeros_like(p) if p.grad is None else p.grad).reshape(-1)
        for flat_index in g.choice(p.numel(), size=min(4, p.numel()), replace=False):
            i = int(flat_index)
            flat = p.data.reshape(-1)
            flat[i] += 1e-6
            plus = float(evaluate().detach())
            flat[i] -= 2e-6
            minus = float(evaluate().detach())
            flat[i] += 1e-6
            fd = (plus - minus) / 2e-6
            auto = float(grad[i])
            denom = max(abs(fd), abs(auto), 1e-6)
            assert abs(fd - auto) / denom <= 1e-3, (fd, auto)


# --------------------------------------------------------- composites

def test_compose_all_zero():
    r = compose_objectives({}, LossWeights())
    for key in COMPOSITE_KEYS:
        assert getattr(r, key) == 0.0


def test_compose_generator_hand_case():
    r = compose_objectives({"rec_s": 1.0, "rec_c": 1.0, "mut_f": 0.1, "gan_d": 2.0},
                           LossWeights(lambda_r=1.0, lambda_m=50.0))
    assert r.obj_generator == pytest.approx(9.0, abs=1e-9)
    assert r.obj_content_enc == pytest.approx(9.0, abs=1e-9)


def test_compose_unknown_key_rejected():
    with pytest.raises(ValueError, match="unknown"):
        compose_objectives({"nonsense": 1.0}, LossWeights())


def test_compose_lambda_c_zero_removes_cls_from_encoders_only():
    terms = {"gan_s": 0.5, "cls_v": 2.0, "cls_a": 3.0}
    r = compose_objectives(terms, LossWeights(lambda_c=0.0))
    assert r.obj_vision_enc == pytest.approx(0.5)
    assert r.obj_attr_enc == pytest.approx(0.5)
    assert r.obj_classifier == pytest.approx(2.0)  # classifier keeps unit weight


def test_compose_sign_structure():
    r = compose_objectives({"gan_s": 1.25, "gp_s": 0.5, "gan_d": 2.0, "mut_r": 0.1},
                           LossWeights(lambda_m=50.0))
    assert r.obj_feat_critic == pytest.approx(-1.25 + 0.5)
    assert r.obj_img_critic == pytest.approx(50.0 * 0.1 - 2.0)


def test_report_roundtrip_and_nan_detection():
    r = LossReport(gan_s=1.0, rec_s=float("nan"))
    assert "rec_s" in r.has_nan()
    d = r.as_dict()
    assert set(d) == set(TERM_KEYS) | set(COMPOSITE_KEYS)


# --------------------------------------------------------- properties

@given(st.lists(st.floats(-50, 50), min_size=1, max_size=16),
       st.lists(st.floats(-50, 50), min_size=1, max_size=16))
@settings(max_examples=50, deadline=None)
def test_property_gan_s_matches_oracle(real, fake):
    got = float(loss_gan_s(torch.tensor(real, dtype=torch.float64),
                           torch.tensor(fake, dtype=torch.float64)))
    assert got == pytest.approx(oracle_gan_gap(real, fake), rel=1e-9, abs=1e-9)


@given(st.integers(2, 6), st.integers(1, 8), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=40, deadline=None)
def test_property_cls_batch_permutation_invariant(m, n, seed):
    g = np.random.default_rng(seed)
    logits = torch.tensor(g.normal(size=(n, m)))
    labels = torch.tensor(g.integers(0, m, size=n))
    perm = torch.tensor(g.permutation(n))
    a = float(loss_cls(logits, labels))
    b = float(loss_cls(logits[perm], labels[perm]))
    assert a == pytest.approx(b, rel=1e-9)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=30, deadline=None)
def test_property_losses_pure(seed):
    g = np.random.default_rng(seed)
    a = torch.tensor(g.normal(size=(3, 5)))
    b = torch.tensor(g.normal(size=(3, 5)))
    assert float(loss_mut(a, b)) == float(loss_mut(a, b))
    assert float(loss_mut(a, b)) >= 0.0


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_property_gp_deterministic_in_seed(seed):
    def critic(x):
        return (x ** 2).sum(dim=1)

    real = torch.randn(4, 3, dtype=torch.float64)
    fake = torch.randn(4, 3, dtype=torch.float64)
    v1 = float(gradient_penalty(critic, real, fake, rng_seed=seed).detach())
    v2 = float(gradient_penalty(critic, real, fake, rng_seed=seed).detach())
    assert v1 == v2
