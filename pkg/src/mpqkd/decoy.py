"""Decoy-state bounds on single-photon pairs and the finite key length.

Given the clicked-pair tallies ``M^mu`` and error tallies ``E^mu`` of one
basis, the count of pairs where each party emitted exactly one photon is
bounded by a linear program over the unknown per-photon-number counts
``M_k``:

    min M_(1,1)   s.t.   E^L[M^mu] <= sum_k Pr(mu | k) M_k <= E^U[M^mu],
                         0 <= M_k <= M.

The maximum of ``E_(1,1)`` has the same shape.  Photon numbers are
truncated at ``k_max`` per party; each lower row bound is loosened by the
most the dropped photon numbers could contribute to that row.

In finite mode the row bounds come from multiplicative Chernoff bounds
and the phase-error rate of the key pairs from a sampling-without-
replacement bound on the X-basis single-photon pairs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import poisson

from .channel import poisson_cutoff
from .keyrate import binary_entropy
from .lp import InfeasibleError, solve_lp
from .montecarlo import X, Z, ProtocolParams, TallyTable

DEFAULT_EPS = 1e-7
TAIL_TARGET = 1e-10


class EstimationError(Exception):
    """The decoy program has no solution for the observed data."""


@dataclass(frozen=True)
class SourceModel:
    """Intensity levels and selection probabilities of both sources."""

    nu: float
    mu: float
    s_0: float
    s_nu: float
    s_mu: float

    @classmethod
    def from_protocol(cls, protocol: ProtocolParams) -> "SourceModel":
        return cls(protocol.nu, protocol.mu, protocol.s_0, protocol.s_nu, protocol.s_mu)

    def levels(self, basis: str) -> np.ndarray:
        base = np.array([0.0, self.nu, self.mu])
        return base if basis == Z else 2 * base

    def party_prior(self, basis: str) -> np.ndarray:
        """Probability that one party's slot pair lands on each level of the basis table."""
        s0, sn, sm = self.s_0, self.s_nu, self.s_mu
        if basis == Z:
            return np.array([s0 * s0, 2 * s0 * sn, 2 * s0 * sm])
        return np.array([s0 * s0, sn * sn, sm * sm])

    def prior(self, basis: str) -> np.ndarray:
        """``q^mu`` over the 3x3 cells of a basis table."""
        p = self.party_prior(basis)
        return np.outer(p, p)


def photon_pair_prob(k, mu_vec) -> float:
    """``Pr(k | mu)``: product of two Poisson probabilities."""
    return float(poisson.pmf(k[0], mu_vec[0]) * poisson.pmf(k[1], mu_vec[1]))


def _poisson_table(levels: np.ndarray, k_max: int) -> np.ndarray:
    """``P[level, k]`` for one party."""
    ks = np.arange(k_max + 1)
    return np.array([poisson.pmf(ks, v) for v in levels])


def posterior_matrix(source: SourceModel, basis: str, k_max: int) -> np.ndarray:
    """``Pr(mu | k)`` as an array ``[cell_a, cell_b, k_a, k_b]``."""
    levels = source.levels(basis)
    prior = source.party_prior(basis)
    P = _poisson_table(levels, k_max)
    # the two parties are independent, so the posterior factorises
    joint = prior[:, None] * P
    norm = joint.sum(axis=0)
    if np.any(norm <= 0):
        raise EstimationError("photon number with zero probability under every setting")
    post = joint / norm
    return post[:, None, :, None] * post[None, :, None, :]


def intensity_posterior(mu_vec, k, source: SourceModel, basis: str = Z) -> float:
    """``Pr(mu | k)`` for one intensity cell given by its two level values."""
    levels = source.levels(basis)
    idx = []
    for v in mu_vec:
        hit = np.flatnonzero(np.isclose(levels, v))
        if hit.size == 0:
            raise ValueError(f"{v} is not a {basis}-basis level")
        idx.append(int(hit[0]))
    prior = source.party_prior(basis)
    out = 1.0
    for side in range(2):
        weights = prior * poisson.pmf(k[side], levels)
        total = weights.sum()
        if total <= 0:
            raise EstimationError("posterior undefined: no setting can produce this photon number")
        out *= weights[idx[side]] / total
    return float(out)


# --- Chernoff bounds ---


def chernoff_expectation_bounds(observed: float, eps: float = DEFAULT_EPS, mode: str = "finite"):
    """Interval ``(E_L, E_U)`` for the mean of a Bernoulli sum given one observation.

    Inverts the multiplicative tails ``Pr(X <= (1-d)m) <= exp(-d^2 m / 2)``
    and ``Pr(X >= (1+d)m) <= exp(-d^2 m / (2+d))`` numerically.
    """
    if mode == "asymptotic":
        return float(observed), float(observed)
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    x = float(observed)
    if x < 0:
        raise ValueError("observed count must be nonnegative")
    log_inv = math.log(1 / eps)

    def lower_tail(m):  # exponent for the mean sitting above x
        return (m - x) ** 2 / (2 * m) - log_inv

    hi_end = x + log_inv + 1.0
    while lower_tail(hi_end) < 0:
        hi_end *= 2
    upper = brentq(lower_tail, max(x, 1e-300), hi_end, xtol=1e-12, rtol=1e-14)

    if x == 0:
        return 0.0, upper

    def upper_tail(m):  # exponent for the mean sitting below x
        return (x - m) ** 2 / (x + m) - log_inv

    if upper_tail(0.0) <= 0:
        lower = 0.0
    else:
        lower = brentq(upper_tail, 0.0, x, xtol=1e-12, rtol=1e-14)
    return lower, upper


def chernoff_observed_lower(mean: float, eps: float = DEFAULT_EPS) -> float:
    """Lower bound on an observed count whose mean is at least ``mean``."""
    if mean <= 0:
        return 0.0
    return max(0.0, mean - math.sqrt(2 * mean * math.log(1 / eps)))


def sampling_deviation(n: float, k: float, eps: float = DEFAULT_EPS) -> float:
    """Serfling-type deviation between a population error rate and a random sample's.

    ``k`` items are sampled without replacement, ``n`` remain; the error
    rate of the remainder exceeds the sample's by more than the returned
    amount with probability at most ``eps``.
    """
    if n <= 0 or k <= 0:
        return math.inf
    return math.sqrt((n + k) * (k + 1) * math.log(2 / eps) / (n * k * k))


# --- linear programs ---


@dataclass
class LPOutcome:
    value: float
    gap: float
    k_max: int
    tail: float
    rows: int


def truncation(source: SourceModel, basis: str, tail: float = TAIL_TARGET) -> tuple[int, float]:
    """Photon cut-off per party and the joint tail mass beyond it at the top level."""
    top = float(source.levels(basis).max())
    k_max = max(poisson_cutoff(top, tail / 2), 2)
    single = float(poisson.sf(k_max, top))
    return k_max, 1 - (1 - single) ** 2


def _tail_allowance(source: SourceModel, basis: str, k_max: int, total: float, n_pairs: float) -> np.ndarray:
    """Largest possible share of each cell coming from photon numbers above ``k_max``.

    Two bounds, take the smaller: the dropped counts are at most ``total``
    times the largest posterior outside the box, and at most the expected
    number of emitted pairs of that cell whose photon number leaves the box.
    """
    levels = source.levels(basis)
    prior = source.party_prior(basis)
    # posterior of each level at k_max + 1; for non-top levels it only shrinks further out
    w = prior * poisson.pmf(k_max + 1, levels)
    post_out = w / w.sum() if w.sum() > 0 else np.zeros(3)
    post_out[np.argmax(levels)] = 1.0
    by_post = total * np.maximum.outer(post_out, post_out)
    by_post = np.minimum(by_post, total)
    if n_pairs <= 0:
        return by_post
    sf = poisson.sf(k_max, levels)
    leave = 1 - np.outer(1 - sf, 1 - sf)
    by_emit = n_pairs * np.outer(prior, prior) * leave
    return np.minimum(by_post, by_emit)


def _program(table: TallyTable, source: SourceModel, basis: str, counts, mode: str, eps: float,
             k_max: int | None, tail: float | None, present=None):
    levels = source.levels(basis)
    prior = source.prior(basis)
    if k_max is None:
        k_max, tau = truncation(source, basis)
    else:
        tau = float(1 - (1 - poisson.sf(k_max, levels.max())) ** 2)
    post = posterior_matrix(source, basis, k_max)
    total = float(counts.sum())
    n_pairs = float(getattr(table, "rounds", 0.0) or 0.0) / 2
    allowance = _tail_allowance(source, basis, k_max, total, n_pairs)
    if tail is not None:
        allowance = np.full((3, 3), tail * total)
    rows, lo, hi, names = [], [], [], []
    for a in range(3):
        for b in range(3):
            if present is not None and not present[a, b]:
                continue
            obs = float(counts[a, b])
            if prior[a, b] <= 0:
                if obs > 0:
                    raise EstimationError(
                        f"{basis} cell ({levels[a]:.9g},{levels[b]:.9g}) has counts but zero prior")
                continue
            e_lo, e_hi = chernoff_expectation_bounds(obs, eps, mode)
            rows.append(post[a, b].ravel())
            lo.append(e_lo - allowance[a, b])
            hi.append(e_hi)
            names.append(f"{basis}({levels[a]:.9g},{levels[b]:.9g})")
    return np.array(rows).reshape(len(rows), (k_max + 1) ** 2), np.array(lo), np.array(hi), names, k_max, tau, total


def _solve(table, source, basis, counts, sense, mode, eps, k_max, tail, present):
    A, lo, hi, names, k_max, tau, total = _program(table, source, basis, counts, mode, eps, k_max, tail, present)
    if total <= 0:
        return LPOutcome(0.0, 0.0, k_max, tau, len(names))
    n = (k_max + 1) ** 2
    target = (k_max + 1) + 1  # flat index of k = (1, 1)
    c = np.zeros(n)
    c[target] = 1.0 if sense == "min" else -1.0
    # work in units of the class total and give every row a unit-scale coefficient
    scale = np.maximum(np.abs(A).max(axis=1), 1e-300) if len(names) else np.ones(0)
    try:
        res = solve_lp(c, A / scale[:, None], lo / total / scale, hi / total / scale,
                       np.zeros(n), np.ones(n))
    except InfeasibleError as err:
        row = names[err.row] if err.row is not None and err.row < len(names) else "unknown"
        raise EstimationError(f"decoy program infeasible at constraint {row}") from err
    value = total * (res.objective if sense == "min" else -res.objective)
    return LPOutcome(max(value, 0.0), res.gap, k_max, tau, len(names))


def solve_lp_min_M11(table: TallyTable, source: SourceModel, basis: str = Z, mode: str = "asymptotic",
                     eps: float = DEFAULT_EPS, k_max: int | None = None, tail: float | None = None) -> LPOutcome:
    """Lower bound on the number of single-photon pairs in one basis table."""
    return _solve(table, source, basis, table.M[basis], "min", mode, eps, k_max, tail, _present(table, basis))


def solve_lp_max_E11(table: TallyTable, source: SourceModel, basis: str = X, mode: str = "asymptotic",
                     eps: float = DEFAULT_EPS, k_max: int | None = None, tail: float | None = None) -> LPOutcome:
    """Upper bound on the number of erroneous single-photon pairs in one basis table."""
    return _solve(table, source, basis, table.E[basis], "max", mode, eps, k_max, tail, _present(table, basis))


def _present(table: TallyTable, basis: str):
    seen = getattr(table, "seen", None)
    return None if seen is None else seen.get(basis)


# --- gain/yield view ---


@dataclass
class GainView:
    gains: np.ndarray  # Q^mu over the 3x3 cells
    prior: np.ndarray
    n_pairs: float
    levels: np.ndarray


def gains_yield_transform(table: TallyTable, source: SourceModel, n_pairs: float, basis: str = Z) -> GainView:
    """Gains ``Q^mu = M^mu / (q^mu N_p)`` for one basis table."""
    if n_pairs <= 0:
        raise ValueError("pair number must be positive")
    prior = source.prior(basis)
    counts = table.M[basis]
    if np.any((prior <= 0) & (counts > 0)):
        raise EstimationError("cell with counts but zero prior")
    gains = np.divide(counts, prior * n_pairs, out=np.zeros_like(counts, dtype=float), where=prior > 0)
    return GainView(gains, prior, float(n_pairs), source.levels(basis))


def expected_gains(yields: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """``E[Q^mu] = sum_k Pr(k | mu) Y_k`` for a yield array ``[k_a, k_b]``."""
    k_max = yields.shape[0] - 1
    P = _poisson_table(levels, k_max)
    return P @ yields @ P.T


def yield_lp(view: GainView, k_max: int, target=(1, 1), sense: str = "min", upper=None):
    """Optimise one yield ``Y_k`` subject to the gains (asymptotic rows, no tail)."""
    levels = view.levels
    P = _poisson_table(levels, k_max)
    n = (k_max + 1) ** 2
    rows, rhs = [], []
    for a in range(3):
        for b in range(3):
            if view.prior[a, b] > 0:
                rows.append(np.outer(P[a], P[b]).ravel())
                rhs.append(view.gains[a, b])
    A = np.array(rows)
    rhs = np.array(rhs)
    n_inf = view.n_pairs * np.einsum("ab,ak,bl->kl", view.prior, P, P).ravel()
    total = float(view.gains.ravel() @ (view.prior.ravel() * view.n_pairs))
    if upper is None:
        hi = np.where(n_inf > 0, total / np.maximum(n_inf, 1e-300), 0.0)
    else:
        hi = np.asarray(upper, dtype=float)
    c = np.zeros(n)
    idx = target[0] * (k_max + 1) + target[1]
    c[idx] = 1.0 if sense == "min" else -1.0
    res = solve_lp(c, A, rhs, rhs, np.zeros(n), hi)
    y = res.x.reshape(k_max + 1, k_max + 1)
    value = res.objective if sense == "min" else -res.objective
    return value, y, n_inf.reshape(k_max + 1, k_max + 1)


# --- full estimate ---


@dataclass
class YieldBounds:
    M11_lower: float
    E11_upper: float
    q11_lower: float
    e11_ph_upper: float
    mode: str
    eps: float
    M11_lower_X: float = 0.0
    M11_mumu_lower: float = 0.0
    E_ph_upper: float = 0.0
    e11_x_upper: float = 0.5
    M_mumu: float = 0.0
    E_mumu: float = 0.0
    vacuous: bool = False
    lp_gap: float = 0.0
    k_max: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def estimate_bounds(table: TallyTable, source: SourceModel, mode: str = "asymptotic",
                    eps: float = DEFAULT_EPS) -> YieldBounds:
    """Run the three decoy programs and assemble the key-pair bounds."""
    if mode not in ("asymptotic", "finite"):
        raise ValueError("mode must be 'asymptotic' or 'finite'")
    z_min = solve_lp_min_M11(table, source, Z, mode, eps)
    x_min = solve_lp_min_M11(table, source, X, mode, eps)
    x_max = solve_lp_max_E11(table, source, X, mode, eps)

    m_mumu = float(table.M[Z][2, 2])
    e_mumu = float(table.E[Z][2, 2])
    share = intensity_posterior((source.mu, source.mu), (1, 1), source, Z) if source.s_mu > 0 else 0.0
    expected = share * z_min.value
    n_key = expected if mode == "asymptotic" else chernoff_observed_lower(expected, eps)
    n_key = min(n_key, m_mumu)

    vacuous = x_min.value <= 0 or n_key <= 0
    e_x = min(x_max.value / x_min.value, 1.0) if x_min.value > 0 else 0.5
    if mode == "finite" and not vacuous:
        e_x = e_x + sampling_deviation(n_key, x_min.value, eps)
    if e_x >= 0.5:
        vacuous = True
    e_ph = min(e_x, 1.0)
    return YieldBounds(
        M11_lower=z_min.value, E11_upper=x_max.value,
        q11_lower=n_key / m_mumu if m_mumu > 0 else 0.0,
        e11_ph_upper=e_ph, mode=mode, eps=eps, M11_lower_X=x_min.value,
        M11_mumu_lower=n_key, E_ph_upper=e_ph * n_key, e11_x_upper=min(e_x, 1.0),
        M_mumu=m_mumu, E_mumu=e_mumu, vacuous=vacuous,
        lp_gap=max(z_min.gap, x_min.gap, x_max.gap),
        k_max={Z: z_min.k_max, X: x_min.k_max},
    )


def finite_key_length(m_mumu: float, e_mumu: float, bounds: YieldBounds, f: float) -> float:
    """Key bits ``M11 [1 - H(E_ph / M11)] - f M^(mu,mu) H(E^Z)``, clamped at zero."""
    n = bounds.M11_mumu_lower
    if n <= 0 or m_mumu <= 0:
        return 0.0
    ratio = bounds.E_ph_upper / n
    if ratio >= 0.5:
        return 0.0
    ez = min(max(e_mumu / m_mumu, 0.0), 1.0)
    key = n * (1 - float(binary_entropy(ratio))) - f * m_mumu * float(binary_entropy(ez))
    return max(key, 0.0)
