"""Breather construction by Newton continuation from the uncoupled limit.

The continuation fixes the orbit period (the seed's 2 pi / omega0(I)) and
follows the periodic orbit in the coupling strength.  The phase is pinned by
the section p = 0 on the central site; the neutral direction along the flow
is removed by bordering the linearized system with the flow direction.  The
orbit map is evaluated with an adaptive high-order integrator so defects are
meaningful down to 1e-12; the monodromy comes from the splitting scheme's
exact tangent (symplectic to round-off), which is plenty for Newton and the
Floquet diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .lattice import LatticeState, norm
from .potential import (ActionAngleChart, PotentialSpec, action_of_point,
                        from_cartesian, h0_of_action, omega0)
from . import integrate as tint


class ContinuationError(RuntimeError):
    """Newton failed to converge or the bordered system became singular."""


class LocalizationError(RuntimeError):
    """Too few sites above the noise floor to fit a localization rate."""


@dataclass
class Breather:
    I_label: float
    eps: float
    period: float
    x0: LatticeState                       # section point: central p = 0, q > 0
    orbit: list[tuple[float, LatticeState]]
    beta_hat: float
    fit_residual: float
    defect: float


def _pack(state: LatticeState) -> np.ndarray:
    return np.concatenate([state.p, state.q])


def _unpack(y: np.ndarray, N: int) -> LatticeState:
    n = y.size // 2
    return LatticeState(N, y[:n], y[n:], include_site0=True)


def _rhs(V: PotentialSpec, eps: float, N: int):
    def rhs(_, y):
        n = y.size // 2
        p, q = y[:n], y[n:]
        qp = np.concatenate(([0.0], q, [0.0]))
        lap = qp[2:] + qp[:-2] - 2.0 * qp[1:-1]
        return np.concatenate([-q - V.derivative(q) + eps * lap, p])
    return rhs


def flow_map(x: LatticeState, V: PotentialSpec, eps: float, T: float,
             rtol: float = 1e-13, t_eval=None):
    sol = solve_ivp(_rhs(V, eps, x.N), (0.0, T), _pack(x), method="DOP853",
                    rtol=rtol, atol=1e-14, t_eval=t_eval, dense_output=False)
    return sol


def monodromy(x: LatticeState, V: PotentialSpec, eps: float, T: float,
              dt: float = 0.01) -> np.ndarray:
    """Tangent map of the period-T flow by the splitting scheme's exact tangent.

    Each rotation substep rotates (dp, dq) blocks; each kick adds
    tau (eps Delta - V''(q(t))) dq to dp with q(t) co-evolved, so the product
    is symplectic to round-off.
    """
    n = 2 * x.N + 1
    p, q = x.p.copy(), x.q.copy()
    Dp = np.zeros((n, 2 * n))
    Dq = np.zeros((n, 2 * n))
    Dp[:, :n] = np.eye(n)
    Dq[:, n:] = np.eye(n)
    steps = max(1, int(np.ceil(T / dt)))
    h = T / steps
    rots, kicks = tint._SCHEMES["yoshida4"]

    def lap_cols(A):
        out = -2.0 * A
        out[:-1] += A[1:]
        out[1:] += A[:-1]
        return out

    for _ in range(steps):
        for i, ck in enumerate(kicks):
            c, s = np.cos(rots[i] * h), np.sin(rots[i] * h)
            p, q = c * p - s * q, s * p + c * q
            Dp, Dq = c * Dp - s * Dq, s * Dp + c * Dq
            tau = ck * h
            qp = np.concatenate(([0.0], q, [0.0]))
            lap = qp[2:] + qp[:-2] - 2.0 * q
            p = p + tau * (eps * lap - V.derivative(q))
            Dp = Dp + tau * (eps * lap_cols(Dq) - V.second_derivative(q)[:, None] * Dq)
        c, s = np.cos(rots[-1] * h), np.sin(rots[-1] * h)
        p, q = c * p - s * q, s * p + c * q
        Dp, Dq = c * Dp - s * Dq, s * Dp + c * Dq
    return np.vstack([Dp, Dq])


def _sample_orbit_states(x: LatticeState, V: PotentialSpec, eps: float, T: float,
                         n_phases: int, rtol: float = 1e-12):
    t_eval = np.linspace(0.0, T, n_phases, endpoint=False)
    sol = flow_map(x, V, eps, float(t_eval[-1]) if n_phases > 1 else T,
                   rtol=rtol, t_eval=t_eval)
    return [(float(t), _unpack(sol.y[:, i], x.N)) for i, t in enumerate(t_eval)]


def anti_continuum_seed(chart: ActionAngleChart, I: float, N: int = 64,
                        n_phases: int = 64) -> Breather:
    """Uncoupled breather: the central oscillator on its orbit, the rest at rest."""
    E = h0_of_action(chart, I)
    T = 2.0 * np.pi / omega0(chart, I)
    x0 = LatticeState.zeros(N)
    x0.q[x0.index(0)] = chart.q_max(E)
    orbit = _sample_orbit_states(x0, chart.potential, 0.0, T, n_phases)
    return Breather(I, 0.0, T, x0, orbit, beta_hat=np.inf, fit_residual=0.0,
                    defect=0.0)


def _newton_polish(x: LatticeState, V: PotentialSpec, eps: float, T: float,
                   tol: float, max_newton: int) -> tuple[LatticeState, float, int]:
    """Newton for Phi_T(x) - x = 0 on the section p_0 = 0, bordered by the flow."""
    N = x.N
    n = 2 * N + 1
    d = 2 * n
    ip0 = N  # index of the central p component in the packed vector
    cur = x.copy()
    cur.p[cur.index(0)] = 0.0
    for it in range(max_newton + 1):
        y = _pack(cur)
        F = flow_map(cur, V, eps, T).y[:, -1] - y
        defect = float(np.linalg.norm(F))
        if defect < tol:
            return cur, defect, it
        if it == max_newton:
            break
        M = monodromy(cur, V, eps, T)
        v = _rhs(V, eps, N)(0.0, y)
        # border with the energy gradient (v_q, -v_p): the left kernel of
        # (M - I) is J v, which is orthogonal to v itself (Hamiltonian Jordan
        # block at 1) but not to grad H, so this keeps the system regular
        grad = np.concatenate([v[n:], -v[:n]])
        A = np.zeros((d + 1, d + 1))
        A[:d, :d] = M - np.eye(d)
        A[:d, d] = grad
        A[d, ip0] = 1.0
        rhs = np.concatenate([-F, [0.0]])
        try:
            sol = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise ContinuationError(
                f"singular bordered Jacobian at eps={eps} (resonance?)") from exc
        delta = sol[:d]
        cur = _unpack(y + delta, N)
        cur.p[cur.index(0)] = 0.0
    raise ContinuationError(
        f"Newton stalled at eps={eps}: defect {defect:.3e} after {max_newton} steps")


def continue_breather(seed: Breather, V: PotentialSpec, eps_target: float,
                      eps_step: float = 0.01, tol: float = 1e-11,
                      max_newton: int = 10, n_phases: int = 64,
                      chart: ActionAngleChart | None = None) -> Breather:
    """Path-follow the fixed-period breather family from the seed to eps_target."""
    T = seed.period
    x = seed.x0.copy()
    eps_values = np.arange(eps_step, eps_target + 0.5 * eps_step, eps_step)
    if eps_values.size == 0 or abs(eps_values[-1] - eps_target) > 1e-12:
        eps_values = np.append(eps_values, eps_target)
    defect = seed.defect
    for eps in eps_values:
        x, defect, _ = _newton_polish(x, V, float(eps), T, tol, max_newton)
    orbit = _sample_orbit_states(x, V, eps_target, T, n_phases)
    beta_hat, resid = localization_rate(orbit)
    I_label = seed.I_label
    if chart is not None:
        I_label = action_of_point(chart, 0.0, float(x.q[x.index(0)]))
    return Breather(I_label, eps_target, T, x, orbit, beta_hat, resid, defect)


def polish_periodic_orbit(x: LatticeState, V: PotentialSpec, eps: float, T: float,
                          tol: float = 1e-11, max_newton: int = 10):
    """Newton-polish an approximate periodic point at fixed period.

    Returns (point on section, defect, newton steps used).
    """
    return _newton_polish(x, V, eps, T, tol, max_newton)


def orbit_defect(x: LatticeState, V: PotentialSpec, eps: float, T: float,
                 rtol: float = 1e-13) -> float:
    """l^2 periodicity defect of the point under the adaptive flow."""
    F = flow_map(x, V, eps, T, rtol=rtol).y[:, -1] - _pack(x)
    return float(np.linalg.norm(F))


def localization_rate(orbit: list[tuple[float, LatticeState]],
                      floor: float = 1e-13) -> tuple[float, float]:
    """Exponential localization rate from max_t (|q_k| + |p_k|) against |k|.

    Returns (beta_hat, R^2 of the fit).  The uncoupled breather has no sites
    above the floor and reports the degenerate (inf, 0) case.
    """
    states = [s for _, s in orbit]
    amp = np.max([np.abs(s.q) + np.abs(s.p) for s in states], axis=0)
    ks = states[0].sites()
    mask = (np.abs(ks) >= 1) & (amp > floor)
    if np.count_nonzero(mask) == 0:
        return np.inf, 0.0
    if np.count_nonzero(mask) < 3:
        raise LocalizationError("fewer than 3 sites above the amplitude floor")
    xs = np.abs(ks[mask]).astype(float)
    ys = np.log(amp[mask])
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - np.mean(ys)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(-slope), float(r2)


def localization_fit(b: Breather, floor: float = 1e-13) -> tuple[float, float]:
    return localization_rate(b.orbit, floor)


def distance_to_unperturbed(b: Breather, chart: ActionAngleChart,
                            beta: float = 1.0) -> float:
    """d_+ distance from the breather orbit to the uncoupled family at the same label.

    Each orbit point is converted to (I, alpha, xi) via the central-site
    chart; the unperturbed family at the same label covers every phase with
    xi = 0, so the pointwise distance is max(|I - I_label|, ||xi||_+), and the
    orbit-to-family distance is the minimum over the sampled phases.
    """
    from .lattice import ExponentialWeight
    w = ExponentialWeight(beta, +1)
    per_point = []
    for _, s in b.orbit:
        i0 = s.index(0)
        I = action_of_point(chart, float(s.p[i0]), float(s.q[i0]))
        xi = s.drop_site0()
        per_point.append(max(abs(I - b.I_label), norm(xi, 2, w)))
    return min(per_point)


@dataclass
class FloquetResult:
    eigenvalues: np.ndarray
    trivial_pair_error: float
    max_modulus_excess: float


def floquet_spectrum(b: Breather, V: PotentialSpec, dt: float = 0.005) -> FloquetResult:
    """Monodromy spectrum with the trivial pair singled out.

    The pair at 1 sits in a Jordan block, so its numerical splitting scales
    like the square root of the monodromy error and is reported separately;
    the modulus excess is taken over the remaining (stability-relevant)
    eigenvalues.
    """
    M = monodromy(b.x0, V, b.eps, b.period, dt=dt)
    eigs = np.linalg.eigvals(M)
    order = np.argsort(np.abs(eigs - 1.0))
    trivial_err = float(np.max(np.abs(eigs[order[:2]] - 1.0)))
    rest = eigs[order[2:]]
    excess = float(np.max(np.abs(rest)) - 1.0) if rest.size else 0.0
    return FloquetResult(eigs[np.argsort(-np.abs(eigs))], trivial_err, excess)


def breather_to_csv(b: Breather, path):
    """Section point as k, p_k, q_k rows under a metadata comment header."""
    import csv
    import os
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# I_label={b.I_label!r} eps={b.eps!r} T={b.period!r} "
                 f"beta_hat={b.beta_hat!r} defect={b.defect!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["k", "p_k", "q_k"])
        for k in b.x0.sites():
            i = b.x0.index(int(k))
            writer.writerow([int(k), repr(float(b.x0.p[i])), repr(float(b.x0.q[i]))])


def breather_from_csv(path) -> tuple[dict, LatticeState]:
    """Metadata dict plus the section state from breather_to_csv output."""
    import csv
    meta = {}
    ks, ps, qs = [], [], []
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        for item in header.lstrip("# ").split():
            key, _, val = item.partition("=")
            meta[key] = float(val)
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            ks.append(int(row[0]))
            ps.append(float(row[1]))
            qs.append(float(row[2]))
    N = max(abs(k) for k in ks)
    state = LatticeState.zeros(N, include_site0=0 in ks)
    for k, p, q in zip(ks, ps, qs):
        i = state.index(k)
        state.p[i], state.q[i] = p, q
    return meta, state


def section_point(x: LatticeState, V: PotentialSpec, eps: float, T: float,
                  rtol: float = 1e-13) -> LatticeState:
    """Move a point along its orbit to the section p_0 = 0 (descending), q_0 > 0."""
    N = x.N
    ip0 = N

    def event(_, y):
        return y[ip0]
    event.direction = -1

    sol = solve_ivp(_rhs(V, eps, N), (0.0, 2.0 * T), _pack(x), method="DOP853",
                    rtol=rtol, atol=1e-14, events=event)
    if sol.y_events[0].size == 0:
        raise RuntimeError("section crossing not found")
    y = sol.y_events[0][0]
    out = _unpack(y, N)
    out.p[out.index(0)] = 0.0
    return out
