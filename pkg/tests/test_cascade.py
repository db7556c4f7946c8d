import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wienerrom.cascade import (CascadeState, cascade_run, cascade_step, gain_bound,
                               init_from_history, matrix_cascade, multistep_run, run_cascade,
                               zero_input_basis)
from wienerrom.core import CascadeCoefficients, InstabilityError, ModelOrders, expand_cascade

from conftest import random_stable_cascade


def random_problem(rng, p, r, d, n, m=3):
    c = random_stable_cascade(rng, p)
    psi = rng.standard_normal((n, d, m)) + 1j * rng.standard_normal((n, d, m))
    b = rng.standard_normal((r + 1, m)) + 1j * rng.standard_normal((r + 1, m))
    return c, psi, b


class TestEquivalence:
    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from([1, 2, 3, 4, 5, 6]), st.integers(0, 6), st.integers(1, 3),
           st.integers(0, 2 ** 31))
    def test_cascade_equals_multistep(self, p, r, d, seed):
        r = min(r, p)
        rng = np.random.default_rng(seed)
        c, psi, b = random_problem(rng, p, r, d, 400)
        init = rng.standard_normal((p, d))
        ms = multistep_run(ModelOrders(p, r), expand_cascade(c), b, psi, init).values
        cs = cascade_run(c, b, psi, init).values
        scale = np.abs(ms).max()
        assert np.abs(ms - cs).max() <= 1e-10 * scale

    def test_stepwise_equals_lfilter(self, rng):
        c, psi, b = random_problem(rng, 5, 2, 2, 300)
        init = rng.standard_normal((5, 2))
        a = cascade_run(c, b, psi, init).values
        s = cascade_run(c, b, psi, init, bound=1e8).values
        assert np.allclose(a, s, atol=1e-12)

    def test_noise_enters_like_multistep(self, rng):
        c, psi, b = random_problem(rng, 4, 2, 2, 200)
        noise = rng.standard_normal((4 + 198, 2))
        ms = multistep_run(ModelOrders(4, 2), expand_cascade(c), b, psi, None, noise).values
        cs = cascade_run(c, b, psi, None, noise).values
        assert np.allclose(ms, cs, atol=1e-10)


class TestState:
    def test_init_from_history_reproduces_outputs(self, rng):
        c = random_stable_cascade(rng, 5)
        d = 2
        u = rng.standard_normal((50, d))
        y, _ = run_cascade(c, u)
        st_ = init_from_history(c, y[:20])
        cont, _ = run_cascade(c, u[20:], st_)
        assert np.allclose(cont, y[20:], atol=1e-10)

    def test_short_history(self):
        c = CascadeCoefficients(((0.1, 0.1),))
        with pytest.raises(ValueError):
            init_from_history(c, np.zeros((1, 2)))

    def test_p1_allowed(self):
        c = CascadeCoefficients((), 0.5)
        s = init_from_history(c, np.array([[2.0]]))
        assert s.z[0, 0] == 2.0

    def test_step_matches_run(self, rng):
        c = random_stable_cascade(rng, 4)
        u = rng.standard_normal((30, 3))
        y, final = run_cascade(c, u)
        st_ = CascadeState.zeros(c, 3)
        for n in range(30):
            st_, yn = cascade_step(st_, c, u[n])
            assert np.allclose(yn, y[n])
        assert np.allclose(st_.z, final.z)
        assert np.allclose(st_.output(c), y[-1])

    def test_zero_input_superposition(self, rng):
        c = random_stable_cascade(rng, 6)
        z = rng.standard_normal((6, 2))
        basis = zero_input_basis(c, 40)
        out, _ = run_cascade(c, np.zeros((40, 2)), CascadeState(z.astype(complex)))
        assert np.allclose(out, np.einsum("hn,hd->nd", basis, z), atol=1e-12)

    def test_zero_input_decays(self, rng):
        c = random_stable_cascade(rng, 4, margin=0.2)
        basis = zero_input_basis(c, 400)
        assert np.abs(basis[:, -1]).max() < 1e-6 * max(1.0, np.abs(basis).max())


def test_matrix_cascade_commutes_with_weights(rng):
    c, psi, b = random_problem(rng, 4, 0, 2, 100)
    Y = matrix_cascade(c, psi)
    direct, _ = run_cascade(c, psi @ b[0])
    assert np.allclose(Y @ b[0], direct, atol=1e-12)


def test_instability_detected(rng):
    psi = np.ones((200, 1, 1))
    with pytest.raises(InstabilityError):
        multistep_run(ModelOrders(1, 0), np.array([-1.5]), np.ones((1, 1)), psi, np.ones((1, 1)),
                      bound=1e3)


def test_gain_bound():
    assert gain_bound(CascadeCoefficients((), 0.5)) == pytest.approx(2.0)
    assert np.isinf(gain_bound(CascadeCoefficients(((0.0, 1.0),), None, 0.0)))
