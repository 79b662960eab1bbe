import numpy as np
import pytest

from breatherlab.potential import (ChartRangeError, LevelSetError, PotentialSpec,
                                   action_of_energy, build_chart, eval_potential,
                                   from_cartesian, h0_of_action,
                                   nonresonance_margin, omega0, period_of_energy,
                                   sample_orbit, to_cartesian)


def test_eval_potential_zero_of_order_eight(V8):
    assert eval_potential(V8, 0.0) == 0.0
    assert eval_potential(V8, 1.0) == 1.0


def test_eval_potential_matches_direct_summation():
    V = PotentialSpec(((8, 0.5), (10, 0.1)))
    q = 0.5
    expected = 0.5 * q**8 + 0.1 * q**10  # independent direct summation
    assert eval_potential(V, q) == pytest.approx(expected, rel=0, abs=1e-16)
    # derivative against the same oracle
    expected_d = 8 * 0.5 * q**7 + 10 * 0.1 * q**9
    assert V.derivative(q) == pytest.approx(expected_d, rel=1e-15)


def test_potential_spec_rejects_low_degree():
    with pytest.raises(ValueError):
        PotentialSpec(((3, 1.0),), min_degree=4)
    with pytest.raises(ValueError):
        PotentialSpec(((6, 1.0),), min_degree=8)


def test_action_of_energy_harmonic(V0):
    assert action_of_energy(V0, 0.3) == pytest.approx(0.3, abs=1e-12)


def test_action_of_energy_harmonic_limit(V8):
    E = 1e-6
    assert action_of_energy(V8, E) / E == pytest.approx(1.0, abs=1e-4)


def test_action_of_energy_refinement_oracle(V8):
    adaptive = action_of_energy(V8, 0.5)
    frozen = action_of_energy(V8, 0.5, n_nodes=4096)
    assert adaptive == pytest.approx(frozen, abs=1e-11)


def test_action_strictly_increasing(V8):
    Es = np.linspace(0.05, 1.5, 40)
    Is = [action_of_energy(V8, e) for e in Es]
    assert np.all(np.diff(Is) > 0)


def test_level_set_rejection():
    V = PotentialSpec(((4, -0.1),), min_degree=4)
    # hump of q^2/2 - 0.1 q^4 is at q^2 = 2.5, U = 0.625
    assert action_of_energy(V, 0.3) > 0
    with pytest.raises(LevelSetError):
        action_of_energy(V, 0.7)


def test_h0_round_trip(chart8, V8):
    for I in (0.1, 0.4, 0.7):
        E = h0_of_action(chart8, I)
        assert action_of_energy(V8, E) == pytest.approx(I, abs=5e-11)


def test_h0_harmonic(chart0):
    assert h0_of_action(chart0, 0.3) == pytest.approx(0.3, abs=1e-10)
    assert omega0(chart0, 0.3) == pytest.approx(1.0, abs=1e-10)


def test_omega_matches_period_and_derivative(chart8, V8):
    I = 0.4
    E = h0_of_action(chart8, I)
    assert omega0(chart8, I) == pytest.approx(2 * np.pi / period_of_energy(V8, E), rel=1e-10)
    h = 1e-4
    fd = (h0_of_action(chart8, I + h) - h0_of_action(chart8, I - h)) / (2 * h)
    assert omega0(chart8, I) == pytest.approx(fd, rel=1e-6)


def test_omega_hard_potential_above_one(chart8):
    # q^8 stiffens the well, so the frequency exceeds the harmonic value
    assert omega0(chart8, 0.1) > 1.0
    assert omega0(chart8, 0.4) > omega0(chart8, 0.1)


def test_to_cartesian_reference_point(chart8):
    p, q = to_cartesian(chart8, 0.4, 0.0)
    assert p == 0.0
    assert q == pytest.approx(chart8.q_max(h0_of_action(chart8, 0.4)), rel=1e-12)


def test_to_cartesian_harmonic(chart0):
    I, a = 0.3, 1.1
    p, q = to_cartesian(chart0, I, a)
    assert p == pytest.approx(-np.sqrt(2 * I) * np.sin(a), abs=1e-10)
    assert q == pytest.approx(np.sqrt(2 * I) * np.cos(a), abs=1e-10)


def test_from_cartesian_harmonic(chart0):
    I, a = from_cartesian(chart0, 0.0, 1.0)
    assert I == pytest.approx(0.5, abs=1e-10)
    assert a == pytest.approx(0.0, abs=1e-10)


def test_round_trip_grid(chart8):
    Is = np.linspace(0.1, 0.7, 16)
    alphas = np.linspace(0.0, 2 * np.pi, 16, endpoint=False)
    worst = 0.0
    for I in Is:
        for a in alphas:
            p, q = to_cartesian(chart8, I, a)
            I2, a2 = from_cartesian(chart8, p, q)
            da = abs((a2 - a + np.pi) % (2 * np.pi) - np.pi)
            worst = max(worst, abs(I2 - I), da)
    assert worst < 1e-10


def test_to_cartesian_energy_consistency(chart8, V8):
    I, a = 0.55, 2.7
    p, q = to_cartesian(chart8, I, a)
    E = 0.5 * (p * p + q * q) + V8(q)
    assert E == pytest.approx(h0_of_action(chart8, I), rel=1e-11)


def test_from_cartesian_matches_orbit_samples(chart8):
    alphas, ps, qs = sample_orbit(chart8, 0.4, 8)
    for a, p, q in zip(alphas[1:], ps[1:], qs[1:]):
        I2, a2 = from_cartesian(chart8, p, q)
        assert I2 == pytest.approx(0.4, abs=1e-10)
        assert a2 == pytest.approx(a, abs=1e-9)


def test_chart_range_errors(chart8):
    with pytest.raises(ChartRangeError):
        h0_of_action(chart8, 0.9)
    with pytest.raises(ChartRangeError):
        from_cartesian(chart8, 0.0, 5.0)


def test_nonresonance_harmonic_is_resonant(chart0):
    assert nonresonance_margin(chart0, 0.1, 0.7, 8) == pytest.approx(0.0, abs=1e-12)


def test_nonresonance_margin_positive_interval(chart8):
    margin = nonresonance_margin(chart8, 0.3, 0.6, 64, n_grid=256)
    dense = nonresonance_margin(chart8, 0.3, 0.6, 64, n_grid=1024)
    assert margin > 0
    assert margin == pytest.approx(dense, rel=1e-3)
    # hard potential: omega > 1, so the margin is omega(I_lo) - 1
    assert margin == pytest.approx(omega0(chart8, 0.3) - 1.0, rel=1e-6)


def test_nonresonance_margin_vanishes_at_small_action(V8):
    chart = build_chart(V8, 1e-4, 0.1, n_grid=64)
    assert nonresonance_margin(chart, 1e-4, 1e-3, 4) < 1e-2
