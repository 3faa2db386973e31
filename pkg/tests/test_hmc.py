import numpy as np

from concordance.samplers import run_hmc
from concordance.samplers.base import SamplerConfig
from concordance.samplers.hmc import (
    _hamiltonian,
    hmc_step,
    leapfrog,
    log_target,
    log_target_grad,
)

from helpers import make_instance


def _state(data, rng):
    N, M = data.n_instruments, data.n_sources
    q = rng.normal(0.0, 0.3, N + M)
    w = rng.normal(np.log(0.05), 0.3, N)
    return np.concatenate([q, w])


def test_gradient_matches_finite_differences():
    data, prior, _ = make_instance(2, 3, seed=40)
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(20):
        q = _state(data, rng)
        g = log_target_grad(q, data, prior)
        for k in range(q.size):
            e = np.zeros_like(q)
            e[k] = h
            fd = (log_target(q + e, data, prior) - log_target(q - e, data, prior)) / (2 * h)
            assert abs(g[k] - fd) < 1e-5 * max(1.0, abs(fd))


def test_zero_steps_is_identity():
    data, prior, _ = make_instance(2, 3, seed=1)
    q = _state(data, np.random.default_rng(3))
    mass = np.ones(q.size)
    q1, alpha, div = hmc_step(q, 0.1, 0, data, prior, np.random.default_rng(0), mass)
    assert np.array_equal(q1, q)
    assert alpha == 1.0 and not div


def test_leapfrog_is_reversible():
    data, prior, _ = make_instance(2, 3, seed=7)
    rng = np.random.default_rng(11)
    q = _state(data, rng)
    p = rng.standard_normal(q.size)
    inv_mass = np.ones(q.size)
    grad = lambda x: log_target_grad(x, data, prior)
    q1, p1 = leapfrog(q, p, 0.03, 12, grad, inv_mass)
    assert np.all(np.isfinite(p1))
    q2, p2 = leapfrog(q1, -p1, 0.03, 12, grad, inv_mass)
    assert np.allclose(q2, q, atol=1e-9)
    assert np.allclose(-p2, p, atol=1e-9)


def test_energy_error_scales_quadratically_in_step_size():
    data, prior, _ = make_instance(2, 3, seed=9)
    rng = np.random.default_rng(4)
    inv_mass = np.ones(2 + 3 + 2)
    grad = lambda x: log_target_grad(x, data, prior)
    ratios = []
    for _ in range(40):
        q = _state(data, rng)
        p = rng.standard_normal(q.size)
        errs = []
        for eps, steps in ((0.02, 16), (0.01, 32)):
            h0 = _hamiltonian(q, p, data, prior, inv_mass)
            q1, p1 = leapfrog(q, p, eps, steps, grad, inv_mass)
            errs.append(abs(_hamiltonian(q1, p1, data, prior, inv_mass) - h0))
        ratios.append(errs[0] / max(errs[1], 1e-300))
    # second-order integrator: halving eps at fixed path length ~quarters |dH|
    assert 2.5 < np.median(ratios) < 6.0


def test_divergences_flagged_for_absurd_step_size():
    data, prior, _ = make_instance(2, 3, seed=5)
    cfg = SamplerConfig(iterations=120, warmup=40, chains=1, seed=2,
                        step_size=80.0, leapfrog_steps=16)
    (seq,) = run_hmc(data, prior, cfg)
    assert seq.stats["divergences"] > 0
    assert seq.stats["divergence_warning"]


def test_runner_stats_and_determinism():
    data, prior, _ = make_instance(2, 3, seed=14)
    cfg = SamplerConfig(iterations=400, warmup=200, chains=1, seed=21,
                        step_size=0.05, leapfrog_steps=12)
    (a,) = run_hmc(data, prior, cfg)
    (b,) = run_hmc(data, prior, cfg)
    assert a.method == "hmc"
    assert a.B.shape == (200, 2)
    assert np.array_equal(a.parameter_matrix(), b.parameter_matrix())
    assert a.stats["step_size"] == 0.05  # pinned, no adaptation override
    assert 0.0 <= a.stats["accept_rate"] <= 1.0
    assert len(a.stats["mass"]) == 7


def test_adapted_chain_mixes_and_accepts():
    data, prior, _ = make_instance(2, 3, seed=33)
    cfg = SamplerConfig(iterations=1500, warmup=700, chains=1, seed=8)
    (seq,) = run_hmc(data, prior, cfg)
    assert seq.stats["accept_rate"] > 0.6
    assert seq.stats["divergence_rate"] < 0.05
    # every coordinate should actually move
    assert np.all(seq.parameter_matrix().std(axis=0) > 1e-4)
