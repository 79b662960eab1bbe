"""Finite-order normal form around the uncoupled breather.

The Hamiltonian is represented as a graded sum of terms

    c(I) * e^{i n alpha} * prod_k z_k^{a_k} w_k^{b_k},

with the transverse sites k = -N..-1, 1..N carrying complex coordinates
z_k = (p_k - i q_k)/sqrt(2), w_k = (p_k + i q_k)/sqrt(2) (so w = conj(z) on
real states and the on-site energy is z_k w_k).  Coefficient functions of I
live as values on a Chebyshev grid over the configured action interval;
products are pointwise and d/dI is the spectral differentiation matrix, which
is exact on polynomial data and spectrally accurate on the chart functions.

Bracket and flow conventions (fixed once, used everywhere):

    {f,g} = dI f da g - da f dI g + i sum_k (dz_k f dw_k g - dw_k f dz_k g)

with Hamiltonian flow xdot = {H, x}, i.e. the vector field of H is

    X_I = -da H,  X_alpha = dI H,  X_z = -i dw H,  X_w = +i dz H.

With these choices the angle advances at rate dI hs(I), the cohomological
equation {hs(I) + sum z_k w_k, chi} = Psi diagonalizes in Fourier modes with
divisors i n w(I), i (n w(I) - 1), i (n w(I) + 1) on the xi^0, z and w parts,
and the identity H(graded) = H(lattice) holds on real states.

Truncation is by total transverse degree D and Fourier cutoff M; every drop
is accumulated in the result's ``dropped`` tally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import LatticeState
from .potential import ActionAngleChart, PotentialSpec, sample_orbit, to_cartesian


class ResonanceError(RuntimeError):
    """A small divisor fell below the configured floor."""

    def __init__(self, n: int, value: float):
        super().__init__(f"small divisor for Fourier mode n={n}: |den|={value:.3e}")
        self.n = n
        self.value = value


class FourierTailError(RuntimeError):
    """The central-orbit Fourier tail beyond the cutoff is not negligible."""


# ---------------------------------------------------------------------------
# Chebyshev grid utilities

def cheb_nodes(n: int, a: float, b: float) -> np.ndarray:
    """Chebyshev-Gauss-Lobatto nodes on [a, b], ascending."""
    x = np.cos(np.pi * np.arange(n) / (n - 1))
    return 0.5 * (a + b) + 0.5 * (b - a) * x[::-1]


def cheb_diff_matrix(n: int, a: float, b: float) -> np.ndarray:
    """Spectral differentiation matrix on the CGL nodes (ascending order)."""
    x = np.cos(np.pi * np.arange(n) / (n - 1))
    c = np.ones(n)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n)
    X = np.tile(x, (n, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(n))
    D -= np.diag(D.sum(axis=1))
    # permute to ascending nodes and rescale to [a, b]
    return D[::-1, ::-1] * (2.0 / (b - a))


def _bary_weights(n: int) -> np.ndarray:
    w = (-1.0) ** np.arange(n)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def bary_eval(nodes: np.ndarray, values: np.ndarray, x: float):
    """Barycentric interpolation at x for values on CGL nodes."""
    diff = x - nodes
    hit = np.where(np.abs(diff) < 1e-14)[0]
    if hit.size:
        return values[..., hit[0]]
    w = _bary_weights(nodes.size) / diff
    return (values @ w) / np.sum(w)


# ---------------------------------------------------------------------------
# context and graded terms

@dataclass
class NormalFormContext:
    chart: ActionAngleChart
    V: PotentialSpec
    N: int
    D: int
    M: int
    I_nodes: np.ndarray
    Dmat: np.ndarray
    sites: np.ndarray
    hs0: np.ndarray
    q0hat: np.ndarray          # shape (2M+1, G), row index n + M
    beta: float = 1.0

    @property
    def n_sites(self) -> int:
        return self.sites.size

    def site_index(self, k: int) -> int:
        hits = np.where(self.sites == k)[0]
        if hits.size == 0:
            raise IndexError(f"site {k} not in the transverse lattice")
        return int(hits[0])

    def z_var(self, k: int) -> int:
        return 2 * self.site_index(k)

    def w_var(self, k: int) -> int:
        return 2 * self.site_index(k) + 1

    def q0_fourier(self, n: int) -> np.ndarray:
        if abs(n) > self.M:
            return np.zeros_like(self.hs0, dtype=complex)
        return self.q0hat[n + self.M]


def make_context(chart: ActionAngleChart, V: PotentialSpec, N: int = 8,
                 D: int = 4, M: int = 32, I_span: tuple[float, float] = (0.3, 0.5),
                 n_nodes: int = 16, n_orbit_samples: int = 256,
                 tail_tol: float = 1e-12, beta: float = 1.0) -> NormalFormContext:
    """Grids plus the central-orbit Fourier data shared by all eps."""
    a, b = I_span
    nodes = cheb_nodes(n_nodes, a, b)
    Dmat = cheb_diff_matrix(n_nodes, a, b)
    hs0 = np.array([chart._E_spline(I) for I in nodes], dtype=float)
    S = n_orbit_samples
    q0hat = np.zeros((2 * M + 1, n_nodes), dtype=complex)
    for g, I in enumerate(nodes):
        _, _, qs = sample_orbit(chart, float(I), S, rtol=1e-13)
        coeffs = np.fft.fft(qs) / S       # q(alpha) = sum_n coeffs[n] e^{i n alpha}
        freqs = np.fft.fftfreq(S, d=1.0 / S).astype(int)
        tail = np.max(np.abs(coeffs[np.abs(freqs) > M]), initial=0.0)
        if tail > tail_tol:
            raise FourierTailError(
                f"central orbit Fourier tail {tail:.2e} beyond |n|={M} at I={I}")
        for n in range(-M, M + 1):
            q0hat[n + M, g] = coeffs[freqs == n][0]
    sites = np.concatenate([np.arange(-N, 0), np.arange(1, N + 1)])
    return NormalFormContext(chart, V, N, D, M, nodes, Dmat, sites, hs0, q0hat,
                             beta=beta)


def _merge_mono(m1: tuple, m2: tuple) -> tuple:
    if not m1:
        return m2
    if not m2:
        return m1
    d = dict(m1)
    for v, e in m2:
        d[v] = d.get(v, 0) + e
    return tuple(sorted(d.items()))


def _mono_degree(mono: tuple) -> int:
    return sum(e for _, e in mono)


def _conj_mono(mono: tuple) -> tuple:
    return tuple(sorted((v ^ 1, e) for v, e in mono))


class GradedHamiltonian:
    """Sparse graded polynomial-Fourier Hamiltonian over the I grid.

    Treated as immutable once built (the prepared-derivative cache relies on
    it); arithmetic returns new objects and tallies truncated mass in
    ``dropped``.
    """

    def __init__(self, ctx: NormalFormContext, dropped: float = 0.0):
        self.ctx = ctx
        self.terms: dict[tuple, np.ndarray] = {}
        self.dropped = dropped
        self._prepared = None

    # -- construction -------------------------------------------------------

    def add_term(self, mono: tuple, n: int, coeff) -> "GradedHamiltonian":
        coeff = np.asarray(coeff, dtype=complex)
        if coeff.ndim == 0:
            coeff = coeff * np.ones(self.ctx.I_nodes.size, dtype=complex)
        if abs(n) > self.ctx.M or _mono_degree(mono) > self.ctx.D:
            self.dropped += float(np.max(np.abs(coeff)))
            return self
        key = (mono, n)
        if key in self.terms:
            self.terms[key] = self.terms[key] + coeff
        else:
            self.terms[key] = coeff
        self._prepared = None
        return self

    def copy(self) -> "GradedHamiltonian":
        out = GradedHamiltonian(self.ctx, self.dropped)
        out.terms = {k: v.copy() for k, v in self.terms.items()}
        return out

    # -- linear algebra -----------------------------------------------------

    def __add__(self, other: "GradedHamiltonian") -> "GradedHamiltonian":
        out = self.copy()
        out.dropped += other.dropped
        for (mono, n), c in other.terms.items():
            out.add_term(mono, n, c)
        return out

    def __sub__(self, other: "GradedHamiltonian") -> "GradedHamiltonian":
        return self + other.scale(-1.0)

    def scale(self, a: complex) -> "GradedHamiltonian":
        out = GradedHamiltonian(self.ctx, abs(a) * self.dropped)
        out.terms = {k: a * v for k, v in self.terms.items()}
        return out

    def prune(self, floor: float) -> "GradedHamiltonian":
        out = GradedHamiltonian(self.ctx, self.dropped)
        for k, v in self.terms.items():
            m = float(np.max(np.abs(v)))
            if m > floor:
                out.terms[k] = v
            else:
                out.dropped += m
        return out

    def max_coeff(self) -> float:
        if not self.terms:
            return 0.0
        return max(float(np.max(np.abs(v))) for v in self.terms.values())

    # -- structure ----------------------------------------------------------

    def part_of_degree(self, degree: int) -> "GradedHamiltonian":
        out = GradedHamiltonian(self.ctx)
        for (mono, n), c in self.terms.items():
            if _mono_degree(mono) == degree:
                out.terms[(mono, n)] = c.copy()
        return out

    def part_degree_at_least(self, degree: int) -> "GradedHamiltonian":
        out = GradedHamiltonian(self.ctx)
        for (mono, n), c in self.terms.items():
            if _mono_degree(mono) >= degree:
                out.terms[(mono, n)] = c.copy()
        return out

    def mean_action(self) -> np.ndarray:
        """The alpha-mean of the xi-degree-0 part, as values on the I grid."""
        key = ((), 0)
        if key in self.terms:
            return self.terms[key].copy()
        return np.zeros(self.ctx.I_nodes.size, dtype=complex)

    def without_mean(self) -> "GradedHamiltonian":
        out = self.copy()
        out.terms.pop(((), 0), None)
        return out

    def conjugation_defect(self) -> float:
        """Reality defect: max |c(mono, n) - conj(c(conj mono, -n))|."""
        worst = 0.0
        for (mono, n), c in self.terms.items():
            other = self.terms.get((_conj_mono(mono), -n))
            ref = np.conj(other) if other is not None else 0.0
            worst = max(worst, float(np.max(np.abs(c - ref))))
        return worst

    # -- calculus -----------------------------------------------------------

    def d_I(self) -> "GradedHamiltonian":
        out = GradedHamiltonian(self.ctx)
        for (mono, n), c in self.terms.items():
            out.terms[(mono, n)] = self.ctx.Dmat @ c
        return out

    def d_alpha(self) -> "GradedHamiltonian":
        out = GradedHamiltonian(self.ctx)
        for (mono, n), c in self.terms.items():
            if n != 0:
                out.terms[(mono, n)] = 1j * n * c
        return out

    def multiply(self, other: "GradedHamiltonian") -> "GradedHamiltonian":
        ctx = self.ctx
        out = GradedHamiltonian(ctx, self.dropped + other.dropped)
        acc = out.terms
        M, D = ctx.M, ctx.D
        for (m1, n1), c1 in self.terms.items():
            d1 = _mono_degree(m1)
            for (m2, n2), c2 in other.terms.items():
                n = n1 + n2
                if abs(n) > M or d1 + _mono_degree(m2) > D:
                    out.dropped += float(np.max(np.abs(c1)) * np.max(np.abs(c2)))
                    continue
                key = (_merge_mono(m1, m2), n)
                prod = c1 * c2
                if key in acc:
                    acc[key] = acc[key] + prod
                else:
                    acc[key] = prod
        return out

    def poisson(self, other: "GradedHamiltonian",
                floor: float = 0.0) -> "GradedHamiltonian":
        """{self, other} in the fixed bracket convention (fused pair loop).

        Pairs whose contribution bound falls below ``floor`` are skipped and
        tallied as dropped mass; floor = 0 keeps the bracket exact.
        """
        ctx = self.ctx
        out = GradedHamiltonian(ctx, self.dropped + other.dropped)
        acc = out.terms
        M, D = ctx.M, ctx.D
        Dm = ctx.Dmat
        merge = _merge_mono

        def prep(terms):
            rows = []
            for (m, n), c in terms.items():
                dc = Dm @ c
                rows.append((m, dict(m), _mono_degree(m), n, c, dc,
                             float(np.max(np.abs(c))), float(np.max(np.abs(dc)))))
            return rows

        fprep = prep(self.terms)
        gprep = prep(other.terms)
        for m1, map1, d1, n1, c1, Dc1, a1, da1 in fprep:
            for m2, map2, d2, n2, c2, Dc2, a2, da2 in gprep:
                n = n1 + n2
                if abs(n) > M:
                    continue
                if floor > 0.0:
                    bound = (abs(n2) * da1 * a2 + abs(n1) * a1 * da2
                             + (d1 * d2) * a1 * a2)
                    if bound < floor:
                        out.dropped += bound
                        continue
                # action-angle part: dI f da g - da f dI g
                if n1 != 0 or n2 != 0:
                    if d1 + d2 <= D:
                        if n2 != 0:
                            coeff = (1j * n2) * (Dc1 * c2)
                            if n1 != 0:
                                coeff = coeff - (1j * n1) * (c1 * Dc2)
                        else:
                            coeff = -(1j * n1) * (c1 * Dc2)
                        key = (merge(m1, m2), n)
                        cur = acc.get(key)
                        acc[key] = coeff if cur is None else cur + coeff
                    else:
                        out.dropped += float(np.max(np.abs(c1)) * np.max(np.abs(c2)))
                # transverse part: i sum_k (dz f dw g - dw f dz g)
                if d1 and d2:
                    if d1 + d2 - 2 > D:
                        out.dropped += float(np.max(np.abs(c1)) * np.max(np.abs(c2)))
                        continue
                    for v1, e1 in m1:
                        e2 = map2.get(v1 ^ 1)
                        if e2 is None:
                            continue
                        v2 = v1 ^ 1
                        sign = 1.0 if (v1 & 1) == 0 else -1.0  # +i for dz f dw g
                        red1 = tuple((v, e - 1 if v == v1 else e) for v, e in m1
                                     if not (v == v1 and e == 1))
                        red2 = tuple((v, e - 1 if v == v2 else e) for v, e in m2
                                     if not (v == v2 and e == 1))
                        key = (merge(red1, red2), n)
                        val = (sign * 1j * e1 * e2) * (c1 * c2)
                        cur = acc.get(key)
                        acc[key] = val if cur is None else cur + val
        return out

    # -- evaluation ---------------------------------------------------------

    def _prepare(self):
        if self._prepared is None:
            self._prepared = [(mono, n, c, self.ctx.Dmat @ c)
                              for (mono, n), c in self.terms.items()]
        return self._prepared

    def evaluate(self, I: float, alpha: float, z: np.ndarray,
                 w: np.ndarray | None = None) -> complex:
        if w is None:
            w = np.conj(z)
        total = 0.0 + 0.0j
        for mono, n, c, _ in self._prepare():
            val = bary_eval(self.ctx.I_nodes, c, I) * np.exp(1j * n * alpha)
            for v, e in mono:
                base = w[v >> 1] if v & 1 else z[v >> 1]
                val = val * base ** e
            total += val
        return total

    def field_at(self, I: float, alpha: float, z: np.ndarray,
                 w: np.ndarray | None = None):
        """Hamiltonian vector field (X_I, X_alpha, X_z, X_w) at a phase point."""
        if w is None:
            w = np.conj(z)
        ns = self.ctx.n_sites
        X_I = 0.0 + 0.0j
        X_a = 0.0 + 0.0j
        X_z = np.zeros(ns, dtype=complex)
        X_w = np.zeros(ns, dtype=complex)
        nodes = self.ctx.I_nodes
        for mono, n, c, dc in self._prepare():
            phase = np.exp(1j * n * alpha)
            cI = bary_eval(nodes, c, I)
            mono_val = 1.0 + 0.0j
            for v, e in mono:
                base = w[v >> 1] if v & 1 else z[v >> 1]
                mono_val = mono_val * base ** e
            X_I += -1j * n * cI * phase * mono_val
            X_a += bary_eval(nodes, dc, I) * phase * mono_val
            for v, e in mono:
                s = v >> 1
                base = w[s] if v & 1 else z[s]
                dmono = e * base ** (e - 1)
                for v2, e2 in mono:
                    if v2 == v:
                        continue
                    b2 = w[v2 >> 1] if v2 & 1 else z[v2 >> 1]
                    dmono = dmono * b2 ** e2
                val = cI * phase * dmono
                if v & 1:
                    X_z[s] += -1j * val     # X_z = -i dH/dw
                else:
                    X_w[s] += 1j * val      # X_w = +i dH/dz
        return X_I, X_a, X_z, X_w


def poisson_bracket(f: GradedHamiltonian, g: GradedHamiltonian) -> GradedHamiltonian:
    return f.poisson(g)


def split_parts(f: GradedHamiltonian):
    """(xi^0 part, xi^1 part, rest, alpha-mean of the xi^0 part)."""
    f0 = f.part_of_degree(0)
    f1 = f.part_of_degree(1)
    f2 = f.part_degree_at_least(2)
    return f0, f1, f2, f.mean_action()


def constant_hamiltonian(ctx: NormalFormContext, values: np.ndarray) -> GradedHamiltonian:
    gh = GradedHamiltonian(ctx)
    gh.add_term((), 0, np.asarray(values, dtype=complex))
    return gh


def transverse_core(ctx: NormalFormContext) -> GradedHamiltonian:
    """sum_k z_k w_k."""
    gh = GradedHamiltonian(ctx)
    ones = np.ones(ctx.I_nodes.size, dtype=complex)
    for k in ctx.sites:
        mono = ((ctx.z_var(int(k)), 1), (ctx.w_var(int(k)), 1))
        gh.add_term(tuple(sorted(mono)), 0, ones)
    return gh


# ---------------------------------------------------------------------------
# initial decomposition

_SQRT2 = np.sqrt(2.0)


def _q_factors(ctx: NormalFormContext, k: int):
    """q_k = (i/sqrt2) z_k - (i/sqrt2) w_k as [(var, coefficient)]."""
    return [(ctx.z_var(k), 1j / _SQRT2), (ctx.w_var(k), -1j / _SQRT2)]


def _add_q_product(gh: GradedHamiltonian, ctx, ksites: list[int], coeff, n: int = 0):
    """Add coeff * prod q_k for the listed sites (with multiplicity)."""
    factors = [_q_factors(ctx, k) for k in ksites]
    stack = [((), coeff)]
    for fac in factors:
        stack = [(_merge_mono(m, ((v, 1),)), c * a) for m, c in stack for v, a in fac]
    for mono, c in stack:
        gh.add_term(mono, n, c)


@dataclass
class InitialDecomposition:
    """H = hs0(I) + core + Z2 + linear_residual + angular_residual."""
    ctx: NormalFormContext
    eps: float
    hs0: np.ndarray
    core: GradedHamiltonian
    Z2: GradedHamiltonian
    linear_residual: GradedHamiltonian      # -eps q0(I,alpha)(q_-1 + q_1)
    angular_residual: GradedHamiltonian     # eps q0(I,alpha)^2

    def total(self) -> GradedHamiltonian:
        return (constant_hamiltonian(self.ctx, self.hs0) + self.core + self.Z2
                + self.linear_residual + self.angular_residual)


def build_initial(ctx: NormalFormContext, eps: float) -> InitialDecomposition:
    """Assemble the graded pieces of the chain Hamiltonian at coupling eps.

    The transverse coupling keeps the bond-by-bond regrouping of the full
    Hamiltonian: bonds not touching the center, pinning terms (eps/2) q_{+-1}^2,
    and Dirichlet boundary terms (eps/2) q_{+-N}^2.
    """
    N = ctx.N
    core = transverse_core(ctx)

    Z2 = GradedHamiltonian(ctx)
    for k in range(-N, N):
        if k in (-1, 0):
            continue
        # (eps/2)(q_{k+1} - q_k)^2
        _add_q_product(Z2, ctx, [k + 1, k + 1], 0.5 * eps)
        _add_q_product(Z2, ctx, [k, k], 0.5 * eps)
        _add_q_product(Z2, ctx, [k, k + 1], -eps)
    for k in (-1, 1):          # pinning from the bonds that touched the center
        _add_q_product(Z2, ctx, [k, k], 0.5 * eps)
    for k in (-N, N):          # Dirichlet closure bonds to the zero ghosts
        _add_q_product(Z2, ctx, [k, k], 0.5 * eps)
    for m, a in ctx.V.coefficients:
        for k in ctx.sites:
            if m <= ctx.D:
                _add_q_product(Z2, ctx, [int(k)] * m, a)
            else:
                Z2.dropped += abs(a)

    lin = GradedHamiltonian(ctx)
    for n in range(-ctx.M, ctx.M + 1):
        c = ctx.q0_fourier(n)
        if np.max(np.abs(c)) < 1e-16:
            continue
        for k in (-1, 1):
            for v, a in _q_factors(ctx, k):
                lin.add_term(((v, 1),), n, -eps * a * c)

    ang = GradedHamiltonian(ctx)
    M = ctx.M
    conv = np.zeros((2 * M + 1, ctx.I_nodes.size), dtype=complex)
    for n1 in range(-M, M + 1):
        c1 = ctx.q0hat[n1 + M]
        if np.max(np.abs(c1)) < 1e-16:
            continue
        for n2 in range(-M, M + 1):
            n = n1 + n2
            if abs(n) > M:
                continue
            c2 = ctx.q0hat[n2 + M]
            conv[n + M] += c1 * c2
    for n in range(-M, M + 1):
        if np.max(np.abs(conv[n + M])) > 1e-16:
            ang.add_term((), n, eps * conv[n + M])

    return InitialDecomposition(ctx, eps, ctx.hs0.astype(float), core, Z2, lin, ang)


# ---------------------------------------------------------------------------
# cohomological equation and Lie transforms

def solve_cohomological(ctx: NormalFormContext, hs_vals: np.ndarray,
                        psi: GradedHamiltonian,
                        divisor_floor: float = 1e-3) -> GradedHamiltonian:
    """Solve {hs(I) + sum z_k w_k, chi} = psi mode by mode.

    psi must consist of a mean-free xi^0 part and a xi^1 part.  Divisors:
    i n w(I) on xi^0 modes, i (n w(I) - 1) on z terms, i (n w(I) + 1) on w
    terms, with w = d hs/dI on the grid.
    """
    omega = (ctx.Dmat @ np.asarray(hs_vals)).real
    chi = GradedHamiltonian(ctx)
    for (mono, n), c in psi.terms.items():
        deg = _mono_degree(mono)
        if deg == 0:
            if n == 0:
                if np.max(np.abs(c)) > 1e-14:
                    raise ValueError("psi has a nonzero alpha-mean at xi = 0")
                continue
            den = 1j * n * omega
        elif deg == 1:
            v = mono[0][0]
            den = 1j * (n * omega - 1.0) if (v & 1) == 0 else 1j * (n * omega + 1.0)
        else:
            raise ValueError("psi must have transverse degree <= 1")
        small = float(np.min(np.abs(den)))
        if small < divisor_floor:
            raise ResonanceError(n, small)
        chi.add_term(mono, n, c / den)
    return chi


def lie_transform(H: GradedHamiltonian, chi: GradedHamiltonian, order: int = 8,
                  stop_tol: float = 1e-15,
                  prune_floor: float | None = None) -> GradedHamiltonian:
    """Truncated Lie series H o Phi^1_chi = sum_l ad_chi^l H / l!.

    The series stops at ``order`` or once a term contributes below
    ``stop_tol`` relative to H; the estimated size of the first omitted term
    goes into the ``dropped`` tally.
    """
    scale = max(H.max_coeff(), 1.0)
    if prune_floor is None:
        # per-term truncation three decades under the series stop level keeps
        # the aggregate truncation comfortably below stop_tol
        prune_floor = max(1e-16, 1e-3 * stop_tol) * scale
    out = H.copy()
    term = H
    fact = 1.0
    for l in range(1, order + 1):
        floor = 0.02 * prune_floor * fact
        term = chi.poisson(term, floor=floor).prune(prune_floor * fact)
        fact *= l
        contrib = term.scale(1.0 / fact)
        size = contrib.max_coeff()
        out = out + contrib
        if size < stop_tol * scale:
            return out
    # crude remainder estimate: the last kept term again contracted by chi
    out.dropped += term.max_coeff() * max(chi.max_coeff(), 1e-300) / (fact * (order + 1))
    return out


def flow_generator(chi: GradedHamiltonian, I: float, alpha: float,
                   z: np.ndarray, time: float = 1.0, steps: int = 32):
    """Time-``time`` flow of the generator's vector field from a real point.

    Integrates (I, alpha, z) with w = conj(z) enforced (the real subspace is
    invariant for generators with the reality symmetry); classic RK4.
    """
    h = time / steps
    y_I, y_a, y_z = float(I), float(alpha), np.asarray(z, dtype=complex).copy()

    def rhs(cI, ca, cz):
        X_I, X_a, X_z, _ = chi.field_at(cI, ca, cz, np.conj(cz))
        return X_I.real, X_a.real, X_z

    for _ in range(steps):
        k1 = rhs(y_I, y_a, y_z)
        k2 = rhs(y_I + 0.5 * h * k1[0], y_a + 0.5 * h * k1[1], y_z + 0.5 * h * k1[2])
        k3 = rhs(y_I + 0.5 * h * k2[0], y_a + 0.5 * h * k2[1], y_z + 0.5 * h * k2[2])
        k4 = rhs(y_I + h * k3[0], y_a + h * k3[1], y_z + h * k3[2])
        y_I += (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        y_a += (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        y_z += (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return y_I, y_a, y_z


# ---------------------------------------------------------------------------
# the normalization driver

@dataclass
class StepRecord:
    step: int
    residual_norm: float
    h_norm: float
    Z_norm: float
    min_divisor: float
    dropped: float


@dataclass
class NormalFormResult:
    ctx: NormalFormContext
    eps: float
    hs: np.ndarray
    core: GradedHamiltonian
    Z: GradedHamiltonian
    residual: GradedHamiltonian
    generators: list[GradedHamiltonian]
    records: list[StepRecord]

    def omega(self, I: float) -> float:
        return float(bary_eval(self.ctx.I_nodes, (self.ctx.Dmat @ self.hs).real, I))

    def report_rows(self):
        rows = [("step", "residual_norm", "h_norm", "Z_norm", "min_divisor", "dropped")]
        for r in self.records:
            rows.append((r.step, r.residual_norm, r.h_norm, r.Z_norm,
                         r.min_divisor, r.dropped))
        return rows


def _min_divisor(ctx, hs_vals, psi) -> float:
    omega = (ctx.Dmat @ np.asarray(hs_vals)).real
    worst = np.inf
    for (mono, n), _ in psi.terms.items():
        deg = _mono_degree(mono)
        if deg == 0 and n == 0:
            continue
        if deg == 0:
            den = np.abs(n * omega)
        else:
            v = mono[0][0]
            den = np.abs(n * omega - 1.0) if (v & 1) == 0 else np.abs(n * omega + 1.0)
        worst = min(worst, float(np.min(den)))
    return worst


def _resplit(ctx, total: GradedHamiltonian):
    """(hs values, Z, R) with the unit transverse core removed from Z."""
    hs = total.mean_action().real
    R = GradedHamiltonian(ctx, 0.0)
    Z = GradedHamiltonian(ctx, total.dropped)
    ones = np.ones(ctx.I_nodes.size, dtype=complex)
    core_keys = set()
    for k in ctx.sites:
        mono = tuple(sorted(((ctx.z_var(int(k)), 1), (ctx.w_var(int(k)), 1))))
        core_keys.add((mono, 0))
    for (mono, n), c in total.terms.items():
        deg = _mono_degree(mono)
        if deg == 0:
            if n != 0:
                R.terms[(mono, n)] = c
        elif deg == 1:
            R.terms[(mono, n)] = c
        else:
            if (mono, n) in core_keys:
                c = c - ones
            if np.max(np.abs(c)) > 0.0:
                Z.terms[(mono, n)] = c
    return hs, Z, R


def measure_scaled_norm(gh: GradedHamiltonian, eps: float,
                        n_alpha: int = 6, n_dirs: int = 4, seed: int = 1234,
                        R_I: float = 1.0, R_alpha: float = 1.0) -> float:
    """Sampled vector-field norm with the sqrt(eps)-scaled transverse radius.

    max over samples of max(|X_I|/R_I, |X_alpha|/R_alpha, ||X_xi||_2/R_xi)
    with xi drawn from a fixed seeded ensemble normalized to ||xi||_2 = R_xi
    = sqrt(eps); I runs over the Chebyshev nodes, alpha over a uniform grid.
    Only eps-scaling slopes of this number are ever asserted.
    """
    ctx = gh.ctx
    R_xi = np.sqrt(max(eps, 1e-300))
    rng = np.random.default_rng(seed)
    ns = ctx.n_sites
    dirs = rng.standard_normal((n_dirs, ns)) + 1j * rng.standard_normal((n_dirs, ns))
    dirs /= np.sqrt(2.0 * np.sum(np.abs(dirs) ** 2, axis=1))[:, None]
    z = R_xi * dirs                      # (nD, ns); w = conj(z) on the real subspace
    w = np.conj(z)
    ig = np.arange(ctx.I_nodes.size)[:: max(1, ctx.I_nodes.size // 8)]
    alphas = np.linspace(0.0, 2.0 * np.pi, n_alpha, endpoint=False)
    phases = {}
    shape = (ig.size, n_alpha, n_dirs)
    X_I = np.zeros(shape, dtype=complex)
    X_a = np.zeros(shape, dtype=complex)
    X_z = np.zeros(shape + (ns,), dtype=complex)
    X_w = np.zeros(shape + (ns,), dtype=complex)
    for mono, n, c, dc in gh._prepare():
        if n not in phases:
            phases[n] = np.exp(1j * n * alphas)
        ph = phases[n]
        mono_val = np.ones(n_dirs, dtype=complex)
        for v, e in mono:
            base = w[:, v >> 1] if v & 1 else z[:, v >> 1]
            mono_val = mono_val * base ** e
        body = ph[None, :, None] * mono_val[None, None, :]
        X_I += (-1j * n) * c[ig][:, None, None] * body
        X_a += dc[ig][:, None, None] * body
        for v, e in mono:
            s = v >> 1
            base = w[:, s] if v & 1 else z[:, s]
            dmono = e * base ** (e - 1)
            for v2, e2 in mono:
                if v2 == v:
                    continue
                b2 = w[:, v2 >> 1] if v2 & 1 else z[:, v2 >> 1]
                dmono = dmono * b2 ** e2
            contrib = c[ig][:, None, None] * ph[None, :, None] * dmono[None, None, :]
            if v & 1:
                X_z[..., s] += -1j * contrib
            else:
                X_w[..., s] += 1j * contrib
    xi_norm = np.sqrt(np.sum(np.abs(X_z) ** 2 + np.abs(X_w) ** 2, axis=-1))
    return float(max(np.max(np.abs(X_I)) / R_I, np.max(np.abs(X_a)) / R_alpha,
                     np.max(xi_norm) / R_xi))


def normalize(init: InitialDecomposition, r_max: int = 2, lie_order: int = 8,
              lie_stop: float = 3e-8, divisor_floor: float = 1e-3,
              drop_threshold: float = np.inf) -> NormalFormResult:
    """Run r_max normalization steps.

    Step 1 removes the xi-linear residual (generator chi^(1)), step 2 the
    angle-dependent xi^0 residual (chi^(0)), later steps both at once; the
    frequency map is recomputed from the accumulated hs before every solve.
    After each Lie transform the full Hamiltonian is re-split exactly, so the
    residual history reflects everything not yet in normal form.  Terms below
    lie_stop relative to the Hamiltonian scale are truncated (and tallied);
    only eps-scalings far above that floor are ever measured.
    """
    ctx = init.ctx
    eps = init.eps
    total = init.total()
    scale0 = max(total.max_coeff(), 1.0)
    hs, Z, R = _resplit(ctx, total)
    generators: list[GradedHamiltonian] = []
    records: list[StepRecord] = []
    hs_start = init.hs0.copy()
    for step in range(1, r_max + 1):
        if step == 1:
            psi = R.part_of_degree(1)
        elif step == 2:
            psi = R.part_of_degree(0).without_mean()
        else:
            psi = R.without_mean()
        psi = psi.prune(0.1 * lie_stop * scale0)
        mind = _min_divisor(ctx, hs, psi)
        chi = solve_cohomological(ctx, hs, psi, divisor_floor)
        total = lie_transform(total, chi, order=lie_order, stop_tol=lie_stop)
        total = total.prune(0.01 * lie_stop * scale0)
        if total.dropped > drop_threshold:
            raise RuntimeError(f"truncation mass {total.dropped:.2e} above threshold")
        hs, Z, R = _resplit(ctx, total)
        generators.append(chi)
        # step-1 bookkeeping follows the two-step lemma: the xi-linear residue
        # regenerated at order eps^{3/2} belongs to the *next* residual, so the
        # step-1 residual is the xi^0 content awaiting step 2
        measured = R.part_of_degree(0) if step == 1 else R
        records.append(StepRecord(
            step=step,
            residual_norm=measure_scaled_norm(measured, eps),
            # cumulative action-Hamiltonian correction hs_r - hs_0 (~ eps)
            h_norm=measure_scaled_norm(
                constant_hamiltonian(ctx, hs - hs_start), eps),
            Z_norm=measure_scaled_norm(Z, eps),
            min_divisor=mind,
            dropped=total.dropped,
        ))
    return NormalFormResult(ctx, eps, hs, transverse_core(ctx), Z, R,
                            generators, records)


def invariant_manifold_check(result: NormalFormResult, n_alpha: int = 64) -> float:
    """max over the (I, alpha) grid of the transverse field magnitude at xi = 0.

    Only the xi-linear residual contributes: X_z = -i (w-coefficients),
    X_w = +i (z-coefficients) evaluated at xi = 0.
    """
    ctx = result.ctx
    lin = result.residual.part_of_degree(1)
    alphas = np.linspace(0.0, 2.0 * np.pi, n_alpha, endpoint=False)
    G = ctx.I_nodes.size
    Xz = np.zeros((ctx.n_sites, n_alpha, G), dtype=complex)
    Xw = np.zeros((ctx.n_sites, n_alpha, G), dtype=complex)
    for (mono, n), c in lin.terms.items():
        v = mono[0][0]
        s = v >> 1
        phase = np.exp(1j * n * alphas)[:, None] * c[None, :]
        if v & 1:
            Xz[s] += -1j * phase
        else:
            Xw[s] += 1j * phase
    mag = np.sqrt(np.sum(np.abs(Xz) ** 2 + np.abs(Xw) ** 2, axis=0))
    return float(np.max(mag))


def reconstruct_breather_from_nf(result: NormalFormResult, I: float,
                                 n_phases: int = 16, rk_steps: int = 32,
                                 phase: float = 0.0):
    """Push the xi = 0 circle back through the inverse transformation.

    The normalizing map is T = Phi^1_{chi_1} o ... o Phi^1_{chi_r} (new to
    old), so each circle point flows through the generators in reverse order.
    Returns (lattice states on the orbit, period 2 pi / omega_r(I)).
    """
    ctx = result.ctx
    chart = ctx.chart
    states = []
    alphas = phase + np.linspace(0.0, 2.0 * np.pi, n_phases, endpoint=False)
    for a in alphas:
        cur = (float(I), float(a), np.zeros(ctx.n_sites, dtype=complex))
        for chi in reversed(result.generators):
            cur = flow_generator(chi, *cur, time=1.0, steps=rk_steps)
        states.append(nf_point_to_state(ctx, chart, *cur))
    period = 2.0 * np.pi / result.omega(I)
    return states, period


def transformation_angle_displacement(result: NormalFormResult, I: float,
                                      n_phases: int = 16, rk_steps: int = 32) -> float:
    """max over the circle of |T_alpha(I, alpha, 0) - alpha| for the composed map."""
    worst = 0.0
    for a in np.linspace(0.0, 2.0 * np.pi, n_phases, endpoint=False):
        cur = (float(I), float(a), np.zeros(result.ctx.n_sites, dtype=complex))
        for chi in reversed(result.generators):
            cur = flow_generator(chi, *cur, time=1.0, steps=rk_steps)
        d = (cur[1] - a + np.pi) % (2.0 * np.pi) - np.pi
        worst = max(worst, abs(d))
    return worst


def nf_point_to_state(ctx: NormalFormContext, chart: ActionAngleChart,
                      I: float, alpha: float, z: np.ndarray) -> LatticeState:
    """(I, alpha, z) with w = conj(z) mapped to a real lattice state."""
    state = LatticeState.zeros(ctx.N, include_site0=True)
    p0, q0 = to_cartesian(chart, I, alpha % (2.0 * np.pi))
    state.p[state.index(0)] = p0
    state.q[state.index(0)] = q0
    p = _SQRT2 * z.real
    q = -_SQRT2 * z.imag
    for s, k in enumerate(ctx.sites):
        i = state.index(int(k))
        state.p[i] = p[s]
        state.q[i] = q[s]
    return state


def state_to_nf_point(ctx: NormalFormContext, chart: ActionAngleChart,
                      state: LatticeState):
    """Inverse of nf_point_to_state on real states."""
    from .potential import from_cartesian
    i0 = state.index(0)
    I, alpha = from_cartesian(chart, float(state.p[i0]), float(state.q[i0]))
    z = np.empty(ctx.n_sites, dtype=complex)
    for s, k in enumerate(ctx.sites):
        i = state.index(int(k))
        z[s] = (state.p[i] - 1j * state.q[i]) / _SQRT2
    return I, alpha, z
