import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sufflab.utils.errors import DomainError
from sufflab.utils.fdivergence import CHISQ, GENERATORS, HELLINGER, KL, FGenerator, bregman, f_conjugate, f_eval

positive = st.floats(min_value=1e-3, max_value=1e3)
GRID = np.geomspace(1e-3, 1e3, 201)


@pytest.mark.parametrize("gen", GENERATORS, ids=lambda g: g.token)
def test_f_vanishes_at_one(gen):
    assert f_eval(gen, 1.0) == 0.0


def test_f_eval_examples():
    assert f_eval(CHISQ, 3.0) == pytest.approx(2.0)
    assert f_eval(HELLINGER, 4.0) == pytest.approx(-1.0)
    assert f_eval(KL, 0.0) == 0.0


def test_f_eval_rejects_negative():
    with pytest.raises(DomainError):
        f_eval(KL, -0.5)


def test_from_token():
    assert FGenerator.from_token("chisq") is not None
    assert FGenerator.from_token("kl") == KL
    with pytest.raises(DomainError):
        FGenerator.from_token("tv")


@pytest.mark.parametrize("gen", GENERATORS, ids=lambda g: g.token)
@given(a=positive, b=positive, lam=st.floats(min_value=0.01, max_value=0.99))
def test_convexity(gen, a, b, lam):
    fa, fb = f_eval(gen, a), f_eval(gen, b)
    assert f_eval(gen, lam * a + (1 - lam) * b) <= lam * fa + (1 - lam) * fb + 1e-10 * (1 + abs(fa) + abs(fb))


@pytest.mark.parametrize("gen", GENERATORS, ids=lambda g: g.token)
def test_inverse_derivative_round_trip(gen):
    back = gen.inverse_derivative(gen.derivative(GRID))
    np.testing.assert_allclose(back, GRID, rtol=1e-10)


@pytest.mark.parametrize("gen", GENERATORS, ids=lambda g: g.token)
def test_conjugate_duality(gen):
    s = gen.derivative(GRID)
    expected = GRID * s - gen.f(GRID)
    np.testing.assert_allclose(gen.conjugate(s), expected, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("gen", GENERATORS, ids=lambda g: g.token)
def test_conjugate_derivative_inverts_derivative(gen):
    np.testing.assert_allclose(gen.conjugate_derivative(gen.derivative(GRID)), GRID, rtol=1e-10)


def test_chisq_conjugate_derivative_is_clamped():
    np.testing.assert_allclose(CHISQ.conjugate_derivative([-3.0, -1.0, 0.5]), [0.0, 0.0, 1.5])


def test_conjugate_examples():
    assert f_conjugate(CHISQ, 0.0) == 0.0
    assert f_conjugate(HELLINGER, -0.5) == pytest.approx(-0.5)
    assert f_conjugate(KL, 1.0) == pytest.approx(1.0)
    assert f_conjugate(CHISQ, -3.0) == pytest.approx(-0.5)


def test_hellinger_conjugate_domain():
    with pytest.raises(DomainError):
        f_conjugate(HELLINGER, 0.0)
    with pytest.raises(DomainError):
        f_conjugate(HELLINGER, 2.0)


@pytest.mark.parametrize(
    "gen, low, high",
    [(KL, -3.0, 3.0), (CHISQ, -0.9, 3.0), (HELLINGER, -5.0, -0.2)],
    ids=["kl", "chisq", "hellinger"],
)
def test_conjugate_matches_grid_supremum(gen, low, high, rng):
    t = np.linspace(1e-4, 50.0, 2_000_001)
    ft = gen.f(t)
    for s in rng.uniform(low, high, size=100):
        assert f_conjugate(gen, s) == pytest.approx(np.max(s * t - ft), abs=1e-6)


@pytest.mark.parametrize("gen", GENERATORS, ids=lambda g: g.token)
def test_derivative_matches_finite_differences(gen):
    t = np.linspace(0.1, 10.0, 100)
    h = 1e-5 * t
    numeric = (gen.f(t + h) - gen.f(t - h)) / (2 * h)
    np.testing.assert_allclose(gen.derivative(t), numeric, rtol=1e-7, atol=1e-8)


def test_bregman_examples():
    for gen in GENERATORS:
        assert bregman(gen, 1.7, 1.7) == pytest.approx(0.0, abs=1e-15)
    assert bregman(KL, 2.0, 1.0) == pytest.approx(2 * np.log(2) - 1)
    assert bregman(CHISQ, 3.0, 1.0) == pytest.approx(2.0)
    assert bregman(KL, 0.0, 0.5) == pytest.approx(0.5)


def test_bregman_domain():
    with pytest.raises(DomainError):
        bregman(KL, 1.0, 0.0)
    with pytest.raises(DomainError):
        bregman(CHISQ, -1.0, 1.0)


@pytest.mark.parametrize("gen", GENERATORS, ids=lambda g: g.token)
@given(a=positive, b=positive)
def test_bregman_positive_off_diagonal(gen, a, b):
    value = bregman(gen, a, b)
    assert value >= 0.0
    if abs(a - b) > 1e-3:
        assert value > 0.0
