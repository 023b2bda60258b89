import json
import math

import numpy as np
import pytest

from soswall.model import (BoundaryCondition, FloorMode, HeightField,
                           ModelParams, boundary_ring, conditional_cdf,
                           conditional_distribution, equilibrium_height,
                           external_field_site, hamiltonian,
                           height_field_from_bytes, height_field_from_json,
                           height_field_to_bytes, height_field_to_json,
                           log_gibbs_weight)
from soswall import oracle as orc

ZERO = BoundaryCondition.flat(0)


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(L=0, beta=1.0)
    with pytest.raises(ValueError):
        ModelParams(L=2, beta=-0.5)
    with pytest.raises(ValueError):
        ModelParams(L=2, beta=1.0, n_plus=0)
    with pytest.raises(ValueError):
        ModelParams(L=2, beta=1.0, n_plus=2, floor_mode=FloorMode.SYMMETRIC,
                    field_enabled=True)
    p = ModelParams(L=3, beta=1.0, n_plus=2)
    assert p.m == 3 and p.field_prefactor_L == 3 and p.no_walls_window == 8


def test_height_windows():
    assert ModelParams(L=2, beta=1, n_plus=3).height_window() == (0, 3)
    assert ModelParams(L=2, beta=1, n_plus=3,
                       floor_mode=FloorMode.SYMMETRIC).height_window() == (-3, 3)
    assert ModelParams(L=2, beta=1, n_plus=3,
                       floor_mode=FloorMode.NO_WALLS).height_window() == (-12, 12)


def test_hamiltonian_flat_zero():
    eta = HeightField.constant(3, 3, 0)
    assert hamiltonian(eta, ZERO) == 0.0


def test_hamiltonian_center_bump():
    eta = HeightField.constant(3, 3, 0)
    eta.heights[1, 1] = 1
    assert hamiltonian(eta, ZERO) == 4.0


def test_hamiltonian_single_site():
    for h in (0, 1, 3, 7):
        eta = HeightField.constant(1, 1, h)
        assert hamiltonian(eta, ZERO) == 4.0 * h


def test_hamiltonian_explicit_boundary_matches_constant():
    rng = np.random.default_rng(3)
    eta = HeightField(rng.integers(0, 4, size=(3, 2)))
    explicit = BoundaryCondition.from_map({s: 2 for s in boundary_ring(3, 2)})
    assert hamiltonian(eta, explicit) == hamiltonian(eta, BoundaryCondition.flat(2))


def test_explicit_boundary_must_cover_ring():
    bad = {s: 0 for s in boundary_ring(2, 2)}
    bad.pop((2, 0))
    with pytest.raises(ValueError):
        hamiltonian(HeightField.constant(2, 2, 0), BoundaryCondition.from_map(bad))
    bad[(2, 0)] = 0
    bad[(5, 5)] = 1
    with pytest.raises(ValueError):
        hamiltonian(HeightField.constant(2, 2, 0), BoundaryCondition.from_map(bad))


def test_equilibrium_height_values():
    assert equilibrium_height(ModelParams(L=64, beta=0.9, n_plus=10)) == 1
    assert equilibrium_height(ModelParams(L=54, beta=1.0, n_plus=2)) == 0
    assert equilibrium_height(ModelParams(L=55, beta=1.0, n_plus=2)) == 1
    assert equilibrium_height(ModelParams(L=10, beta=50.0, n_plus=2)) == 0


def test_external_field_values():
    p = ModelParams(L=64, beta=0.9, n_plus=10, field_enabled=True)
    H = equilibrium_height(p)
    b = p.beta
    # top height clears only the last ledge
    assert external_field_site(p.n_plus, p) == pytest.approx(
        math.exp(-b * (p.n_plus - H)), rel=1e-12)
    # height zero collects every term
    assert external_field_site(0, p) == pytest.approx(
        sum(math.exp(-b * j) for j in range(1, p.n_plus - H + 1)), rel=1e-12)
    vals = [external_field_site(k, p) for k in range(p.n_plus + 1)]
    assert all(a >= b2 for a, b2 in zip(vals, vals[1:]))


def test_external_field_preconditions():
    p_sym = ModelParams(L=4, beta=1.0, n_plus=2, floor_mode=FloorMode.SYMMETRIC)
    with pytest.raises(ValueError):
        external_field_site(0, p_sym)
    p_off = ModelParams(L=4, beta=1.0, n_plus=2)
    with pytest.raises(ValueError):
        external_field_site(0, p_off)
    p_on = ModelParams(L=4, beta=1.0, n_plus=2, field_enabled=True)
    with pytest.raises(ValueError):
        external_field_site(3, p_on)


def test_log_weight_field_off_is_minus_beta_energy():
    rng = np.random.default_rng(0)
    p = ModelParams(L=3, m=2, beta=1.3, n_plus=3)
    for _ in range(20):
        eta = HeightField(rng.integers(0, 4, size=(3, 2)))
        assert log_gibbs_weight(eta, ZERO, p) == pytest.approx(
            -p.beta * hamiltonian(eta, ZERO), rel=1e-12)


def test_log_weight_single_raise_ratio():
    p = ModelParams(L=3, beta=0.7, n_plus=1)
    flat = HeightField.constant(3, 3, 0)
    bumped = flat.copy()
    bumped.heights[1, 1] = 1
    delta = log_gibbs_weight(bumped, ZERO, p) - log_gibbs_weight(flat, ZERO, p)
    assert delta == pytest.approx(-4 * p.beta, rel=1e-12)


def test_log_weight_field_term_nonnegative():
    rng = np.random.default_rng(1)
    p_on = ModelParams(L=3, beta=1.0, n_plus=4, field_enabled=True)
    p_off = ModelParams(L=3, beta=1.0, n_plus=4)
    for _ in range(20):
        eta = HeightField(rng.integers(0, 5, size=(3, 3)))
        diff = log_gibbs_weight(eta, ZERO, p_on) - log_gibbs_weight(eta, ZERO, p_off)
        assert diff >= 0


def test_log_weight_rejects_inadmissible():
    p = ModelParams(L=2, beta=1.0, n_plus=1)
    eta = HeightField.constant(2, 2, 2)
    with pytest.raises(ValueError):
        log_gibbs_weight(eta, ZERO, p)


def test_conditional_ratio_flat_neighbors():
    p = ModelParams(L=3, beta=1.1, n_plus=1)
    eta = HeightField.constant(3, 3, 0)
    dist = conditional_distribution((1, 1), eta, ZERO, p)
    assert dist[1] / dist[0] == pytest.approx(math.exp(-4 * p.beta), rel=1e-12)


def test_conditional_uniform_for_balanced_neighbors():
    # neighbours (0, 0, 2, 2): |k| + |k-2| is constant on {0, 1, 2}
    p = ModelParams(L=2, m=2, beta=1.6, n_plus=2)
    eta = HeightField(np.array([[0, 2], [2, 0]]))
    dist = conditional_distribution((0, 0), eta, ZERO, p)
    assert np.allclose(dist, 1.0 / 3, atol=1e-12)


def test_conditional_sums_to_one_and_positive():
    rng = np.random.default_rng(7)
    p = ModelParams(L=3, m=3, beta=2.5, n_plus=6)
    for _ in range(25):
        eta = HeightField(rng.integers(0, 7, size=(3, 3)))
        x = (int(rng.integers(0, 3)), int(rng.integers(0, 3)))
        dist = conditional_distribution(x, eta, ZERO, p)
        assert abs(dist.sum() - 1.0) < 1e-12
        assert (dist > 0).all()


def test_conditional_matches_oracle_conditional():
    p = ModelParams(L=2, m=2, beta=1.0, n_plus=2)
    chain = orc.enumerate_chain(p, ZERO)
    rng = np.random.default_rng(5)
    for _ in range(10):
        idx = int(rng.integers(0, chain.n_states))
        eta = chain.state_field(idx)
        x = (int(rng.integers(0, 2)), int(rng.integers(0, 2)))
        dist = conditional_distribution(x, eta, ZERO, p)
        # exact conditional from the stationary vector restricted to the fiber
        weights = []
        probe = eta.copy()
        for k in range(p.n_plus + 1):
            probe.heights[x] = k
            weights.append(chain.pi[chain.state_index(probe)])
        weights = np.array(weights) / sum(weights)
        assert np.abs(dist - weights).max() < 1e-12


def test_detailed_balance_of_kernel():
    for beta in (0.5, 1.0, 2.0):
        p = ModelParams(L=2, m=2, beta=beta, n_plus=1)
        chain = orc.enumerate_chain(p, ZERO)
        assert chain.reversibility_residual() < 1e-12


def test_conditional_stochastic_monotonicity():
    # pointwise-larger environments push the CDF down at every level
    rng = np.random.default_rng(11)
    p = ModelParams(L=3, beta=0.8, n_plus=4)
    for _ in range(50):
        lo_env = rng.integers(0, 5, size=4)
        hi_env = np.minimum(lo_env + rng.integers(0, 3, size=4), 4)
        eta_lo = HeightField.constant(3, 3, 0)
        eta_hi = HeightField.constant(3, 3, 0)
        for env, eta in ((lo_env, eta_lo), (hi_env, eta_hi)):
            eta.heights[0, 1], eta.heights[2, 1] = env[0], env[1]
            eta.heights[1, 0], eta.heights[1, 2] = env[2], env[3]
        cdf_lo = conditional_cdf((1, 1), eta_lo, ZERO, p)
        cdf_hi = conditional_cdf((1, 1), eta_hi, ZERO, p)
        assert (cdf_lo >= cdf_hi - 1e-15).all()


def test_sign_flip_symmetry_no_walls():
    p = ModelParams(L=3, beta=0.9, n_plus=1, floor_mode=FloorMode.NO_WALLS,
                    no_walls_window=5)
    rng = np.random.default_rng(2)
    for _ in range(20):
        eta = HeightField(rng.integers(-4, 5, size=(3, 3)))
        flipped = HeightField(-eta.heights)
        assert log_gibbs_weight(eta, ZERO, p) == pytest.approx(
            log_gibbs_weight(flipped, ZERO, p), rel=1e-12)


def test_json_roundtrip():
    rng = np.random.default_rng(4)
    eta = HeightField(rng.integers(0, 5, size=(3, 4)))
    text = height_field_to_json(eta, FloorMode.FLOOR_AT_ZERO)
    obj = json.loads(text)
    assert obj["version"] == 1 and obj["dims"] == [3, 4]
    back, mode = height_field_from_json(text)
    assert back == eta and mode is FloorMode.FLOOR_AT_ZERO


def test_binary_roundtrip():
    rng = np.random.default_rng(5)
    eta = HeightField(rng.integers(-7, 9, size=(4, 2)))
    blob = height_field_to_bytes(eta)
    assert blob[:4] == b"SOSH"
    assert len(blob) == 12 + 4 * 8
    assert height_field_from_bytes(blob) == eta
    with pytest.raises(ValueError):
        height_field_from_bytes(b"XXXX" + blob[4:])
