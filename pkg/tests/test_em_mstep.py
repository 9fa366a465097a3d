from dataclasses import replace

import numpy as np
import pytest

import acd.em as em
from acd.em import (
    QMatrix,
    UnboundedUpdateError,
    m_step_mu,
    m_step_pi,
    m_step_u,
    m_step_v,
    m_step_w,
    rho_tensor,
)
from acd.graph import Network
from acd.model import Hyperparams, ModelParams
from conftest import random_network, random_params
from oracles import complete_data_logpost


def q_of(values):
    return QMatrix(np.asarray(values, dtype=float))


def make_q(n, fill=0.0):
    q = np.full((n, n), float(fill))
    np.fill_diagonal(q, 0.0)
    return QMatrix(np.triu(q, 1) + np.triu(q, 1).T)


class TestUWUpdates:
    def test_all_anomalous_kills_memberships(self, rng):
        net = random_network(rng, 4, density=0.6)
        p = random_params(rng, 4, 2)
        q = make_q(4, 1.0)
        rho = rho_tensor(p.u, p.v, p.w)
        hyper = Hyperparams(k=2, a=1.0, b=1.0)
        assert np.all(m_step_u(p, net, q, rho, hyper) == 0.0)
        assert np.all(m_step_w(p, net, q, rho) == 0.0)

    def test_single_term_hand_value(self):
        # K=1, N=2, a=1, b=0, Q=0, A_12=3, v_2=1, w=2 -> u_1 = 3/(1*2) = 1.5
        net = Network(2, True, {(0, 1): 3})
        p = ModelParams(np.array([[1.0], [1.0]]), np.array([[1.0], [1.0]]),
                        np.array([2.0]), 0.0, 0.0)
        q = make_q(2, 0.0)
        rho = rho_tensor(p.u, p.v, p.w)
        hyper = Hyperparams(k=1, a=1.0, b=0.0)
        u = m_step_u(p, net, q, rho, hyper)
        assert u[0, 0] == pytest.approx(1.5, abs=1e-15)

    def test_w_hand_sum(self):
        # K=1, A_12 = A_21 = 2, u = v = 1 -> w = 4/2 = 2
        net = Network(2, False, {(0, 1): 2, (1, 0): 2})
        p = ModelParams(np.ones((2, 1)), np.ones((2, 1)), np.ones(1), 0.0, 0.0)
        q = make_q(2, 0.0)
        rho = rho_tensor(p.u, p.v, p.w)
        assert m_step_w(p, net, q, rho)[0] == pytest.approx(2.0, abs=1e-15)

    def test_w_gauge_halves_under_u_doubling(self, rng):
        net = random_network(rng, 6, density=0.5)
        p = random_params(rng, 6, 2)
        q = make_q(6, 0.2)
        rho = rho_tensor(p.u, p.v, p.w)
        w1 = m_step_w(p, net, q, rho)
        p2 = ModelParams(p.u * 2.0, p.v, p.w / 2.0, p.pi, p.mu)
        rho2 = rho_tensor(p2.u, p2.v, p2.w)
        w2 = m_step_w(p2, net, q, rho2)
        assert w2 == pytest.approx(w1 / 2.0, rel=1e-12)

    def test_unbounded_direction_raises(self):
        # b=0 and an isolated-but-active row: denominator 0, numerator > 0
        net = Network(3, True, {(0, 1): 1})
        u = np.array([[1.0], [1.0], [1.0]])
        p = ModelParams(u, np.zeros((3, 1)), np.ones(1), 0.0, 0.0)
        q = make_q(3, 0.0)
        rho = rho_tensor(p.u, p.v, p.w)
        hyper = Hyperparams(k=1, a=1.0, b=0.0)
        with pytest.raises(UnboundedUpdateError):
            m_step_u(p, net, q, rho, hyper)


class TestPiMu:
    def test_pi_plain_mean(self):
        net = Network(2, True, {(0, 1): 2, (1, 0): 4})
        assert m_step_pi(net, make_q(2, 1.0)) == pytest.approx(3.0, abs=1e-15)

    def test_pi_zero_weights(self):
        net = Network(3, False, {})
        assert m_step_pi(net, make_q(3, 0.5)) == 0.0

    def test_pi_hand_weighted_mean(self):
        net = Network(3, False, {(0, 1): 2, (1, 0): 2})
        q = q_of([[0.0, 0.5, 1.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]])
        # (0.5*2 + 0.5*2) / (0.5*2 + 1.0*2) = 2/3
        assert m_step_pi(net, q) == pytest.approx(2.0 / 3.0, abs=1e-15)

    def test_pi_sum_zero_keeps_previous(self):
        net = Network(2, True, {(0, 1): 1})
        assert m_step_pi(net, make_q(2, 0.0), prev_pi=0.7) == 0.7

    def test_mu_boundaries_and_average(self):
        assert m_step_mu(make_q(3, 0.0), 3) == 0.0
        assert m_step_mu(make_q(3, 1.0), 3) == 1.0
        q = q_of([[0.0, 0.6, 0.2], [0.6, 0.0, 0.1], [0.2, 0.1, 0.0]])
        assert m_step_mu(q, 3) == pytest.approx(0.3, abs=1e-15)

    def test_mu_pi_closed_forms_from_raw_sums(self, rng):
        net = random_network(rng, 7, density=0.4)
        qv = np.triu(rng.random((7, 7)), 1)
        q = QMatrix(qv + qv.T)
        a = net.to_dense()
        assert m_step_pi(net, q) == pytest.approx(
            (q.values * a).sum() / q.values.sum(), abs=1e-12)
        assert m_step_mu(q, 7) == pytest.approx(qv.sum() / (7 * 6 / 2), abs=1e-12)


class TestStationarity:
    """After each block update the complete-data objective gradient vanishes."""

    @staticmethod
    def _fd_max(fun, arr, scale):
        worst = 0.0
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            x0 = arr[idx]
            if x0 <= 0:
                continue  # boundary coordinate
            h = 1e-5 * (1.0 + abs(x0))
            arr[idx] = x0 + h
            up = fun()
            arr[idx] = x0 - h
            down = fun()
            arr[idx] = x0
            worst = max(worst, abs((up - down) / (2 * h)) / scale)
        return worst

    def test_block_updates_are_stationary(self, rng):
        n, k = 8, 2
        net = random_network(rng, n, density=0.5)
        a_mat = net.to_dense()
        hyper = Hyperparams(k=k, a=1.3, b=0.8)
        p = random_params(rng, n, k)
        q = em.e_step_Q(p, net)
        rho = rho_tensor(p.u, p.v, p.w)

        u1 = m_step_u(p, net, q, rho, hyper)
        p1 = replace(p, u=u1)
        v1 = m_step_v(p1, net, q, rho, hyper)
        p2 = replace(p1, v=v1)
        w1 = m_step_w(p2, net, q, rho)
        pi1 = m_step_pi(net, q, prev_pi=p.pi)
        mu1 = m_step_mu(q, n)

        state = {"u": u1.copy(), "v": v1.copy(), "w": w1.copy(),
                 "pi": np.array([pi1]), "mu": np.array([mu1])}

        def obj():
            return complete_data_logpost(
                state["u"], state["v"], state["w"], state["pi"][0], state["mu"][0],
                a_mat, q.values, rho, hyper.a, hyper.b)

        scale = 1.0 + abs(obj())
        # u is checked at the state it was updated in (old v, w)
        state_u = {"u": u1.copy(), "v": p.v.copy(), "w": p.w.copy(),
                   "pi": np.array([p.pi]), "mu": np.array([p.mu])}

        def obj_u():
            return complete_data_logpost(
                state_u["u"], state_u["v"], state_u["w"], state_u["pi"][0],
                state_u["mu"][0], a_mat, q.values, rho, hyper.a, hyper.b)

        assert self._fd_max(obj_u, state_u["u"], scale) < 1e-6

        state_v = {"u": u1.copy(), "v": v1.copy(), "w": p.w.copy()}

        def obj_v():
            return complete_data_logpost(
                state_v["u"], state_v["v"], state_v["w"], p.pi, p.mu,
                a_mat, q.values, rho, hyper.a, hyper.b)

        assert self._fd_max(obj_v, state_v["v"], scale) < 1e-6
        assert self._fd_max(obj, state["w"], scale) < 1e-6
        assert self._fd_max(obj, state["pi"], scale) < 1e-6
        assert self._fd_max(obj, state["mu"], scale) < 1e-6


class TestFitMatchesBlockUpdates:
    def test_one_fit_iteration_composes_the_m_steps(self, rng):
        n, k = 9, 3
        net = random_network(rng, n, density=0.4)
        hyper = Hyperparams(k=k, a=1.2, b=0.7)
        opts = em.FitOptions(n_seeds=1, max_iter=1, tol=1e-300, init_mu=0.3,
                             init_pi=0.8, rng_seed=5)
        res = em.fit(net, hyper, opts)

        child = np.random.SeedSequence(opts.rng_seed).spawn(1)[0]
        rng0 = np.random.default_rng(child)
        u0, v0, w0, pi0, mu0 = em.init_params(rng0, n, k, net.to_dense(), opts)
        p0 = ModelParams(u0, v0, w0, pi0, mu0)
        q0 = em.e_step_Q(p0, net)
        rho0 = rho_tensor(u0, v0, w0)
        u1 = m_step_u(p0, net, q0, rho0, hyper)
        p_mid = replace(p0, u=u1)
        v1 = m_step_v(p_mid, net, q0, rho0, hyper)
        p_mid = replace(p_mid, v=v1)
        w1 = m_step_w(p_mid, net, q0, rho0)
        pi1 = m_step_pi(net, q0, prev_pi=pi0)
        mu1 = m_step_mu(q0, n)

        assert res.n_iters == 1
        assert np.max(np.abs(res.params.u - u1)) < 1e-12
        assert np.max(np.abs(res.params.v - v1)) < 1e-12
        assert np.max(np.abs(res.params.w - w1)) < 1e-12
        assert res.params.pi == pytest.approx(pi1, abs=1e-13)
        assert res.params.mu == pytest.approx(mu1, abs=1e-13)
