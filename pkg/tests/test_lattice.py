import numpy as np
import pytest

from breatherlab.lattice import (AdmissiblePair, ExponentialWeight, LatticeState,
                                 PolynomialWeight, check_skew, circle_distance,
                                 distance, from_csv, hamiltonian, is_admissible,
                                 norm, skew_symmetrize, to_csv, vector_field)
from breatherlab.potential import PotentialSpec


def random_state(rng, N=32, scale=0.3, include_site0=True):
    n = 2 * N + 1 if include_site0 else 2 * N
    return LatticeState(N, scale * rng.standard_normal(n),
                        scale * rng.standard_normal(n), include_site0)


def test_hamiltonian_zero_state(V0):
    s = LatticeState.zeros(8)
    assert hamiltonian(s, V0, 0.3) == 0.0


def test_hamiltonian_single_site(V0):
    s = LatticeState.zeros(8)
    s.q[s.index(0)] = 1.0
    # two coupling bonds contribute (eps/2)(1 + 1)
    assert hamiltonian(s, V0, 0.1) == pytest.approx(0.5 + 0.1, abs=1e-15)


def test_hamiltonian_matches_naive_sum(rng, V8):
    s = random_state(rng)
    eps = 0.17
    total = 0.0
    ks = s.sites()
    qd = {int(k): s.q[s.index(int(k))] for k in ks}
    pd = {int(k): s.p[s.index(int(k))] for k in ks}
    for k in range(-s.N, s.N + 1):
        total += 0.5 * (pd[k] ** 2 + qd[k] ** 2) + qd[k] ** 8
    for k in range(-s.N - 1, s.N + 1):  # bonds, Dirichlet ghosts
        total += 0.5 * eps * (qd.get(k + 1, 0.0) - qd.get(k, 0.0)) ** 2
    assert hamiltonian(s, V8, eps) == pytest.approx(total, rel=1e-12)


def test_vector_field_zero_and_harmonic(rng, V0):
    z = LatticeState.zeros(4)
    f = vector_field(z, V0, 0.2)
    assert np.all(f.p == 0) and np.all(f.q == 0)
    s = random_state(rng, N=4)
    f = vector_field(s, V0, 0.0)
    assert np.allclose(f.p, -s.q) and np.allclose(f.q, s.p)


def test_vector_field_is_symplectic_gradient(rng, V8):
    eps = 0.12
    h = 1e-6
    for _ in range(5):
        s = random_state(rng, N=8, scale=0.2)
        f = vector_field(s, V8, eps)
        i = rng.integers(0, 2 * s.N + 1)
        sp, sm = s.copy(), s.copy()
        sp.q[i] += h
        sm.q[i] -= h
        dHdq = (hamiltonian(sp, V8, eps) - hamiltonian(sm, V8, eps)) / (2 * h)
        assert f.p[i] == pytest.approx(-dHdq, rel=1e-5, abs=1e-8)
        sp, sm = s.copy(), s.copy()
        sp.p[i] += h
        sm.p[i] -= h
        dHdp = (hamiltonian(sp, V8, eps) - hamiltonian(sm, V8, eps)) / (2 * h)
        assert f.q[i] == pytest.approx(dHdp, rel=1e-5, abs=1e-8)


def test_norm_unit_impulse_polynomial():
    s = LatticeState.zeros(5)
    s.q[s.index(0)] = 1.0
    for r in (1.0, 2.0, np.inf):
        assert norm(s, r, PolynomialWeight(3.0)) == pytest.approx(1.0)


def test_norm_unit_impulse_exponential():
    s = LatticeState.zeros(5)
    s.q[s.index(1)] = 1.0
    beta = 0.7
    assert norm(s, 2, ExponentialWeight(beta, +1)) == pytest.approx(np.exp(beta / 2))


def test_norm_matches_direct_sum(rng):
    s = random_state(rng, N=16)
    ks = s.sites().astype(float)
    w = (1.0 + ks ** 2) ** 3.0  # (rs with r=2, s=3)
    expected = np.sqrt(np.sum(w * np.abs(s.p) ** 2) + np.sum(w * np.abs(s.q) ** 2))
    assert norm(s, 2, PolynomialWeight(3.0)) == pytest.approx(expected, rel=1e-12)


def test_lr_monotonicity(rng):
    s = random_state(rng, N=16)
    assert norm(s, np.inf) <= norm(s, 2.0) + 1e-12
    assert norm(s, 2.0) <= norm(s, 1.0) + 1e-12


def test_embedding_chain(rng):
    beta = 0.5
    N = 16
    n_sites = 2 * N + 1
    # || . ||_- <= C1 || . ||_{l^r} and || . ||_{l^r} <= C2 || . ||_+
    ks = np.arange(-N, N + 1).astype(float)
    C1 = np.sqrt(np.sum(np.exp(-beta * np.abs(ks))))
    for r in (2.0, 7.0, np.inf):
        C2 = 1.0 if np.isinf(r) else (2 * n_sites) ** (1.0 / r)
        for _ in range(20):
            s = random_state(rng, N=N)
            n_minus = norm(s, 2, ExponentialWeight(beta, -1))
            n_plus = norm(s, 2, ExponentialWeight(beta, +1))
            n_r = norm(s, r)
            assert n_minus <= np.sqrt(2) * C1 * n_r + 1e-12
            assert n_r <= C2 * n_plus + 1e-12


def test_distance(rng):
    s = random_state(rng, N=6, include_site0=False)
    z = (0.4, 1.0, s)
    assert distance(z, z) == 0.0
    z2 = (0.6, 1.0, s)
    assert distance(z, z2) == pytest.approx(0.2)
    # angle distance is modulo 2 pi
    z3 = (0.4, 1.0 + 2 * np.pi - 0.05, s)
    assert distance(z, z3) == pytest.approx(0.05)
    s2 = random_state(rng, N=6, include_site0=False)
    d = distance((0.4, 1.0, s), (0.45, 1.2, s2))
    assert d == pytest.approx(max(0.05, 0.2, norm(s - s2, 2)), rel=1e-12)


def test_circle_distance():
    assert circle_distance(0.1, 2 * np.pi - 0.1) == pytest.approx(0.2)


def test_admissible_pairs():
    assert is_admissible(AdmissiblePair(7, 14))       # equality: 1/7 + 1/42 = 1/6
    assert abs(1 / 7 + 1 / 42 - 1 / 6) < 1e-15
    assert is_admissible(AdmissiblePair(np.inf, 2))
    assert not is_admissible(AdmissiblePair(6, 14))   # 1/6 + 1/42 > 1/6
    assert not is_admissible(AdmissiblePair(5, 100))  # q < 6
    assert is_admissible(AdmissiblePair(6, np.inf))


def test_skew_symmetrize(rng):
    N = 8
    s = LatticeState.zeros(N)
    ks = s.sites()
    s.q = np.cos(0.3 * ks).astype(float)  # even
    s.p = np.cos(0.7 * ks).astype(float)
    out = skew_symmetrize(s)
    assert np.allclose(out.p, 0) and np.allclose(out.q, 0)
    s.q = np.sin(0.3 * ks)  # odd
    s.p = np.sin(0.7 * ks)
    out = skew_symmetrize(s)
    assert np.allclose(out.q, s.q) and np.allclose(out.p, s.p)
    assert check_skew(out, tol=1e-15)
    s = random_state(rng, N=N)
    out = skew_symmetrize(s)
    for k in ks:
        i, j = s.index(int(k)), s.index(int(-k))
        assert out.q[i] == pytest.approx(0.5 * (s.q[i] - s.q[j]), rel=1e-14, abs=1e-16)
    assert check_skew(out, tol=1e-15)
    assert not check_skew(s)


def test_csv_round_trip(tmp_path, rng):
    s = random_state(rng, N=5)
    path = tmp_path / "state.csv"
    to_csv(s, path)
    s2 = from_csv(path)
    assert s2.N == s.N and s2.include_site0
    assert np.array_equal(s2.p, s.p) and np.array_equal(s2.q, s.q)
    t = random_state(rng, N=4, include_site0=False)
    to_csv(t, path)
    t2 = from_csv(path)
    assert not t2.include_site0
    assert np.array_equal(t2.q, t.q)
