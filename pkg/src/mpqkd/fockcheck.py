"""Numerical checks of the source-replacement identities for phase-randomised
coherent states on truncated Fock spaces.

A coherent state whose phase is drawn from ``D`` equally spaced values is
purified with a ``D``-level ancilla.  A discrete Fourier transform on the
ancilla turns the phase label into a pseudo photon number ``k`` (photon
numbers congruent to ``k`` mod ``D``).  For two modes, the same trick on each
relative-phase subspace separates the total pseudo photon number from the
relative phase.  Every check below builds the two sides of an identity by
separate routes and reports the largest componentwise deviation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

TAIL_LIMIT = 1e-8
DEFAULT_TAIL = 1e-12


class TruncationError(ValueError):
    """The Fock cut-off leaves too much coherent-state mass outside."""


@dataclass(frozen=True)
class PseudoFockSpec:
    mu: float
    D: int
    k: int

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if int(self.D) != self.D or self.D < 1:
            raise ValueError("D must be a positive integer")
        if not 0 <= self.k < self.D:
            raise ValueError("k must lie in [0, D)")


@dataclass
class FockVector:
    amplitudes: np.ndarray
    n_trunc: int
    tail: float  # probability mass the truncation dropped

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def _log_poisson(n, mu: float):
    n = np.asarray(n, dtype=float)
    return -mu + n * math.log(mu) - gammaln(n + 1)


def poisson_tail(mu: float, n_trunc: int) -> float:
    """Mass of Poisson(mu) above ``n_trunc``."""
    from scipy.stats import poisson

    return float(poisson.sf(n_trunc, mu))


def default_truncation(mu: float, tail: float = DEFAULT_TAIL) -> int:
    """Smallest cut-off whose coherent-state tail is below ``tail``."""
    n = 0
    while poisson_tail(mu, n) >= tail:
        n += 1
    return n


def pseudo_poisson(spec: PseudoFockSpec) -> float:
    """``P_k = e^{-mu} sum_m mu^(mD+k) / (mD+k)!``.

    >>> round(pseudo_poisson(PseudoFockSpec(1.0, 2, 0)), 5)
    0.56766
    """
    mu, D, k = spec.mu, int(spec.D), spec.k
    total = 0.0
    n = k
    while True:
        term = math.exp(float(_log_poisson(n, mu)))
        total += term
        # past the Poisson peak the terms only shrink
        if n > mu and term < 1e-16 * total:
            break
        if n > mu and total == 0.0 and term == 0.0:
            break
        n += D
    return total


def pseudo_poisson_all(mu: float, D: int) -> np.ndarray:
    return np.array([pseudo_poisson(PseudoFockSpec(mu, D, k)) for k in range(D)])


def coherent_state(alpha: complex, n_trunc: int) -> np.ndarray:
    """Fock amplitudes ``e^{-|a|^2/2} a^n / sqrt(n!)`` for ``n <= n_trunc``."""
    n = np.arange(n_trunc + 1)
    mag = abs(alpha)
    if mag == 0:
        out = np.zeros(n_trunc + 1, dtype=complex)
        out[0] = 1.0
        return out
    log_amp = -mag ** 2 / 2 + n * math.log(mag) - 0.5 * gammaln(n + 1)
    return np.exp(log_amp) * np.exp(1j * n * np.angle(alpha))


def pseudo_fock_state(spec: PseudoFockSpec, n_trunc: int) -> FockVector:
    """Normalised state on photon numbers congruent to ``k`` mod ``D``."""
    p_k = pseudo_poisson(spec)
    n = np.arange(n_trunc + 1)
    amp = np.zeros(n_trunc + 1, dtype=complex)
    on = (n % spec.D) == spec.k
    amp[on] = np.exp(0.5 * _log_poisson(n[on], spec.mu)) / math.sqrt(p_k)
    kept = float(np.sum(np.abs(amp) ** 2))
    return FockVector(amp, n_trunc, max(0.0, 1.0 - kept))


def dft_reconstruction(spec: PseudoFockSpec, n_trunc: int) -> np.ndarray:
    """``(1/D) sum_j e^{-2 pi i j k / D} |sqrt(mu) e^{i phi_j}>``, summed directly."""
    D = int(spec.D)
    out = np.zeros(n_trunc + 1, dtype=complex)
    for j in range(D):
        phase = 2 * np.pi * j / D
        out += np.exp(-1j * phase * spec.k) * coherent_state(math.sqrt(spec.mu) * np.exp(1j * phase), n_trunc)
    return out / D


def fourier_basis(D: int) -> np.ndarray:
    """Columns ``|k~> = D^{-1/2} sum_j e^{2 pi i j k / D} |j>``."""
    j = np.arange(D)
    return np.exp(2j * np.pi * np.outer(j, j) / D) / math.sqrt(D)


def beam_splitter_on_first(amps: np.ndarray, n_trunc: int) -> np.ndarray:
    """Send ``sum_n c_n |n, 0>`` through the 50:50 splitter onto an ``(n_trunc+1)^2`` grid.

    ``|n,0> -> sum_m 2^{-n/2} sqrt(C(n, m)) |m, n-m>``; components that leave
    the grid are dropped.
    """
    out = np.zeros((n_trunc + 1, n_trunc + 1), dtype=complex)
    for n, c in enumerate(amps):
        if c == 0:
            continue
        m = np.arange(max(0, n - n_trunc), min(n, n_trunc) + 1)
        log_w = -0.5 * n * math.log(2) + 0.5 * (gammaln(n + 1) - gammaln(m + 1) - gammaln(n - m + 1))
        out[m, n - m] += c * np.exp(log_w)
    return out


def beam_splitter_column_norms(n_trunc: int) -> np.ndarray:
    """Norm of the image of each ``|n, 0>`` for ``n <= n_trunc`` (all fit on the grid)."""
    norms = np.empty(n_trunc + 1)
    for n in range(n_trunc + 1):
        e = np.zeros(n + 1)
        e[n] = 1.0
        norms[n] = np.linalg.norm(beam_splitter_on_first(e, n_trunc))
    return norms


def _check_tail(mu: float, n_trunc: int, modes: int) -> float:
    tail = modes * poisson_tail(mu, n_trunc)
    if tail > TAIL_LIMIT:
        raise TruncationError(
            f"cut-off {n_trunc} drops {tail:.3g} of the coherent-state mass (limit {TAIL_LIMIT:g})")
    return tail


@dataclass
class FockReport:
    mu: float
    D: int
    n_trunc: int
    tail: float
    deviations: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def max_deviation(self) -> float:
        return max(self.deviations.values()) if self.deviations else 0.0

    def as_dict(self) -> dict:
        out = asdict(self)
        out["max_deviation"] = self.max_deviation
        return out


def verify_single_mode_decomposition(mu: float, D: int, n_trunc: int | None = None) -> FockReport:
    """Compare ``D^{-1/2} sum_j |j>|alpha_j>`` with ``sum_k sqrt(P_k) |k~>|lambda(k)>``."""
    if n_trunc is None:
        n_trunc = default_truncation(mu)
    tail = _check_tail(mu, n_trunc, 1)
    D = int(D)
    phases = 2 * np.pi * np.arange(D) / D
    coh = np.array([coherent_state(math.sqrt(mu) * np.exp(1j * p), n_trunc) for p in phases])
    direct = coh / math.sqrt(D)  # [j, n]

    F = fourier_basis(D)
    probs = pseudo_poisson_all(mu, D)
    lam = np.array([pseudo_fock_state(PseudoFockSpec(mu, D, k), n_trunc).amplitudes for k in range(D)])
    rebuilt = np.einsum("jk,k,kn->jn", F, np.sqrt(probs), lam)

    recon = max(
        float(np.max(np.abs(dft_reconstruction(PseudoFockSpec(mu, D, k), n_trunc) - math.sqrt(probs[k]) * lam[k])))
        for k in range(D)
    )
    gram = F.conj().T @ F
    overlaps = lam.conj() @ lam.T
    off = overlaps - np.diag(np.diag(overlaps))
    return FockReport(
        mu, D, n_trunc, tail,
        deviations={
            "decomposition": float(np.max(np.abs(direct - rebuilt))),
            "dft_reconstruction": recon,
            "fourier_unitarity": float(np.max(np.abs(gram - np.eye(D)))),
            "pseudo_poisson_normalization": abs(float(probs.sum()) - 1.0),
            "pseudo_fock_orthogonality": float(np.max(np.abs(off))) if D > 1 else 0.0,
        },
        extras={"pseudo_poisson": probs.tolist()},
    )


def two_mode_pseudo_fock(mu: float, D: int, k: int, j_theta: int, n_trunc: int) -> np.ndarray:
    """``U_1(2 pi j_theta / D) BS (|lambda^{2mu}(k)> |0>)`` on the ``(n_trunc+1)^2`` grid."""
    wide = pseudo_fock_state(PseudoFockSpec(2 * mu, D, k), 2 * n_trunc).amplitudes
    state = beam_splitter_on_first(wide, n_trunc)
    n1 = np.arange(n_trunc + 1)
    return state * np.exp(1j * 2 * np.pi * j_theta / D * n1)[:, None]


def verify_two_mode_decomposition(mu: float, D: int, n_trunc: int | None = None,
                                  fidelity_theta: int = 1) -> FockReport:
    """Rebuild two random-phase coherent modes from ``(k, theta)`` components.

    Left side: ``(1/D) sum_{j1,j2} |j1>|j2> |alpha_{j1}>|alpha_{j2}>``.
    Right side: ``D^{-1/2} sum_{j_theta,k} sqrt(P_k^{2mu}) |k~, j_theta> |lambda_12(k), j_theta>``
    with ``|k~, j_theta> = D^{-1/2} sum_{j2} e^{2 pi i j2 k / D} |j2 + j_theta>|j2>``.
    """
    if n_trunc is None:
        n_trunc = default_truncation(mu)
    tail = _check_tail(mu, n_trunc, 2)
    D = int(D)
    phases = 2 * np.pi * np.arange(D) / D
    coh = np.array([coherent_state(math.sqrt(mu) * np.exp(1j * p), n_trunc) for p in phases])
    direct = np.einsum("an,bm->abnm", coh, coh) / D  # [j1, j2, n1, n2]

    probs2 = pseudo_poisson_all(2 * mu, D)
    lam = np.array([[two_mode_pseudo_fock(mu, D, k, jt, n_trunc) for k in range(D)] for jt in range(D)])
    rebuilt = np.zeros_like(direct)
    j2 = np.arange(D)
    for jt in range(D):
        j1 = (j2 + jt) % D
        for k in range(D):
            weight = math.sqrt(probs2[k]) / D * np.exp(2j * np.pi * j2 * k / D)
            rebuilt[j1, j2] += weight[:, None, None] * lam[jt, k][None, :, :]

    # states with different k are orthogonal for every pair of relative phases
    flat = lam.reshape(D, D, -1)
    worst_cross = 0.0
    for a in range(D):
        for b in range(D):
            g = flat[a].conj() @ flat[b].T
            g = g - np.diag(np.diag(g))
            worst_cross = max(worst_cross, float(np.max(np.abs(g))) if D > 1 else 0.0)

    # k = 1 against the one-photon dual-rail state (|01> + e^{i theta}|10>)/sqrt2
    theta = 2 * np.pi * fidelity_theta / D
    target = np.zeros((n_trunc + 1, n_trunc + 1), dtype=complex)
    target[0, 1] = 1 / math.sqrt(2)
    target[1, 0] = np.exp(1j * theta) / math.sqrt(2)
    fidelity = float(abs(np.vdot(target, lam[fidelity_theta % D, 1 % D])) ** 2) if D > 1 else float("nan")

    norms = beam_splitter_column_norms(n_trunc)
    return FockReport(
        mu, D, n_trunc, tail,
        deviations={
            "decomposition": float(np.max(np.abs(direct - rebuilt))),
            "cross_k_overlap": worst_cross,
            "beam_splitter_unitarity": float(np.max(np.abs(norms - 1.0))),
            "pseudo_poisson_normalization": abs(float(probs2.sum()) - 1.0),
        },
        extras={"k1_fidelity": fidelity},
    )


def poisson_distance(mu: float, D: int) -> float:
    """Total-variation distance between ``P_k`` (k < D) and Poisson(mu), including Poisson mass at k >= D."""
    probs = pseudo_poisson_all(mu, D)
    k = np.arange(D)
    pois = np.exp(_log_poisson(k, mu))
    return 0.5 * float(np.abs(probs - pois).sum() + max(0.0, 1.0 - pois.sum()))


def sweep_D(mu: float, Ds, n_trunc: int | None = None) -> list[dict]:
    """Single- and two-mode deviations and Poisson distance across phase counts."""
    rows = []
    for D in Ds:
        one = verify_single_mode_decomposition(mu, D, n_trunc)
        two = verify_two_mode_decomposition(mu, D, n_trunc)
        rows.append({
            "D": int(D), "single_mode": one.max_deviation, "two_mode": two.max_deviation,
            "poisson_tv": poisson_distance(mu, D), "k1_fidelity": two.extras["k1_fidelity"],
        })
    return rows
