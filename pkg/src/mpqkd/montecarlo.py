"""Round-by-round simulation of the mode-pairing protocol with decoy intensities.

Pipeline: :func:`simulate_rounds` -> :func:`pair_log` -> :func:`sift_pairs`
-> :func:`map_keys` -> :func:`tally`.  :func:`run_protocol` chains them.

Intensities are stored as level codes 0, 1, 2 for ``0, nu, mu``; phases as
slice indices in ``[0, D)``; outcomes as ``NONE, LEFT, RIGHT, DOUBLE``.

Detection model.  Behind the beam splitter the two detectors see coherent
light with means ``I_L`` and ``I_R``.  The simulator draws the emitted
photon numbers (Poisson), thins each by ``eta_s`` and routes the survivors
to the left port with probability ``I_L / (I_L + I_R)``.  The port counts
are then independent Poissons with means ``I_L`` and ``I_R``, exactly the
coherent-state statistics, and the emitted photon numbers come for free as
ground-truth tags for decoy tests.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams
from .pairing import UNLIMITED, _check_interval, pair_positions, pairing_rate_analytic

NONE, LEFT, RIGHT, DOUBLE = 0, 1, 2, 3
OUTCOME_LETTERS = "NLRD"

# per-party and joint basis labels
ZERO, Z, X, DISCARD = "0", "Z", "X", "discard"
_P_ZERO, _P_Z, _P_X, _P_DISCARD = 0, 1, 2, 3
_BASIS_NAMES = np.array([ZERO, Z, X, DISCARD])

DEFAULT_BLOCK = 1 << 20


@dataclass(frozen=True)
class ProtocolParams:
    """Source settings: three intensities, their probabilities, phase slices and pairing."""

    mu: float = 0.5
    nu: float = 0.1
    s_0: float = 0.45
    s_nu: float = 0.1
    s_mu: float = 0.45
    D: int = 16
    l: float = 1000
    N: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.nu < self.mu < 1:
            raise ValueError("intensities must satisfy 0 < nu < mu < 1")
        probs = (self.s_0, self.s_nu, self.s_mu)
        if min(probs) < 0 or abs(sum(probs) - 1) > 1e-12:
            raise ValueError("s_0, s_nu, s_mu must be nonnegative and sum to 1")
        if int(self.D) != self.D or self.D < 2:
            raise ValueError("D must be an integer >= 2")
        _check_interval(self.l)
        if int(self.N) != self.N or self.N < 0:
            raise ValueError("N must be a nonnegative integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def levels(self) -> np.ndarray:
        return np.array([0.0, self.nu, self.mu])

    @property
    def probs(self) -> np.ndarray:
        return np.array([self.s_0, self.s_nu, self.s_mu])


@dataclass(frozen=True)
class RoundRecord:
    intensity_a: float
    intensity_b: float
    phase_index_a: int
    phase_index_b: int
    outcome: str

    @property
    def clicked(self) -> bool:
        return self.outcome in ("L", "R")


@dataclass
class RoundLog:
    """Column store of emitted rounds; ``photons_*`` are the ground-truth tags."""

    levels: np.ndarray
    D: int
    int_a: np.ndarray
    int_b: np.ndarray
    phase_a: np.ndarray
    phase_b: np.ndarray
    outcome: np.ndarray
    photons_a: np.ndarray
    photons_b: np.ndarray

    def __len__(self):
        return int(self.outcome.size)

    @property
    def clicks(self) -> np.ndarray:
        return (self.outcome == LEFT) | (self.outcome == RIGHT)

    def __getitem__(self, i: int) -> RoundRecord:
        return RoundRecord(
            float(self.levels[self.int_a[i]]), float(self.levels[self.int_b[i]]),
            int(self.phase_a[i]), int(self.phase_b[i]), OUTCOME_LETTERS[self.outcome[i]],
        )

    def write_csv(self, stream) -> None:
        stream.write("index,int_a,phase_a,int_b,phase_b,outcome\n")
        lv = [f"{v:.9g}" for v in self.levels]
        for i in range(len(self)):
            stream.write(
                f"{i},{lv[self.int_a[i]]},{self.phase_a[i]},{lv[self.int_b[i]]},"
                f"{self.phase_b[i]},{OUTCOME_LETTERS[self.outcome[i]]}\n"
            )


def port_intensities(mu_a, mu_b, dphi, eta_s: float):
    """Mean photon numbers reaching the left and right detectors."""
    mu_a = np.asarray(mu_a, dtype=float)
    mu_b = np.asarray(mu_b, dtype=float)
    cross = 2.0 * np.sqrt(mu_a * mu_b) * np.cos(dphi)
    total = eta_s * (mu_a + mu_b)
    left = np.clip(eta_s * (mu_a + mu_b + cross) / 2.0, 0.0, None)
    right = np.clip(total - left, 0.0, None)
    return left, right


def outcome_probs(mu_a, mu_b, dphi, channel: ChannelParams):
    """Probabilities of (left only, right only, double, none) for one round."""
    i_l, i_r = port_intensities(mu_a, mu_b, dphi, channel.eta_s)
    stay = 1.0 - channel.dark_count_prob
    quiet_l = stay * np.exp(-i_l)
    quiet_r = stay * np.exp(-i_r)
    return (1 - quiet_l) * quiet_r, quiet_l * (1 - quiet_r), (1 - quiet_l) * (1 - quiet_r), quiet_l * quiet_r


def single_pair_probs(mu_ai, mu_aj, mu_bi, mu_bj, dphi_i, dphi_j, channel: ChannelParams) -> np.ndarray:
    """``Pr(one photon per party, outcomes)`` for a pair of rounds; shape ``[..., 2, 2]``.

    Each party's one-photon component is the two-round superposition set by
    its intensities and phases, so the photons from Alice and Bob can
    interfere across the two rounds.  Outcome axes are (left, right) for the
    front and rear round; every other detector must stay dark.
    """
    mu_ai, mu_aj, mu_bi, mu_bj, dphi_i, dphi_j = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mu_ai, mu_aj, mu_bi, mu_bj, dphi_i, dphi_j)))
    s_a = mu_ai + mu_aj
    s_b = mu_bi + mu_bj
    shape = s_a.shape + (2, 2)
    ok = (s_a > 0) & (s_b > 0)
    if not np.any(ok):
        return np.zeros(shape)
    sa = np.where(ok, s_a, 1.0)
    sb = np.where(ok, s_b, 1.0)
    # only the phase of Alice relative to Bob in each round matters
    a_i = np.sqrt(mu_ai / sa) * np.exp(1j * dphi_i)
    a_j = np.sqrt(mu_aj / sa) * np.exp(1j * dphi_j)
    b_i = np.sqrt(mu_bi / sb)
    b_j = np.sqrt(mu_bj / sb)
    eta, p_d = channel.eta_s, channel.dark_count_prob
    stay = 1 - p_d
    c_a = np.array([1.0, 1.0]) / np.sqrt(2)
    c_b = np.array([1.0, -1.0]) / np.sqrt(2)
    out = np.zeros(shape)
    for o in range(2):
        for o2 in range(2):
            amp = a_i * b_j * c_a[o] * c_b[o2] + a_j * b_i * c_b[o] * c_a[o2]
            q = eta ** 2 * stay ** 2 * np.abs(amp) ** 2
            # both photons bunch in one round, the other round clicks on a dark count
            bunched = (np.abs(a_i * b_i) ** 2 + np.abs(a_j * b_j) ** 2) / 2
            q = q + eta ** 2 * bunched * stay * p_d * stay
            # one photon lost, a dark count fills the empty round
            q = q + 2 * eta * (1 - eta) / 2 * stay * p_d * stay
            q = q + (1 - eta) ** 2 * (p_d * stay) ** 2
            out[..., o, o2] = q
    weight = np.exp(-s_a - s_b) * s_a * s_b
    return np.where(ok[..., None, None], out * weight[..., None, None], 0.0)


def detect_round(mu_a, mu_b, phase_a, phase_b, D: int, channel: ChannelParams, rng) -> np.ndarray:
    """Draw detection outcomes directly from the threshold-detector law."""
    dphi = 2 * np.pi * (np.asarray(phase_a) - np.asarray(phase_b)) / D
    i_l, i_r = port_intensities(mu_a, mu_b, dphi, channel.eta_s)
    stay = 1.0 - channel.dark_count_prob
    shape = np.broadcast(i_l, i_r).shape
    fire_l = rng.random(shape) >= stay * np.exp(-i_l)
    fire_r = rng.random(shape) >= stay * np.exp(-i_r)
    return _classify(fire_l, fire_r)


def _classify(fire_l, fire_r):
    out = np.full(np.shape(fire_l), NONE, dtype=np.int8)
    out[fire_l & ~fire_r] = LEFT
    out[fire_r & ~fire_l] = RIGHT
    out[fire_l & fire_r] = DOUBLE
    return out


def block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one simulation block (or an auxiliary stream)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(stream, block)))


def _simulate_block(protocol: ProtocolParams, channel: ChannelParams, block: int, n: int):
    rng = block_rng(protocol.seed, block)
    probs = protocol.probs
    levels = protocol.levels
    int_a = rng.choice(3, size=n, p=probs).astype(np.int8)
    int_b = rng.choice(3, size=n, p=probs).astype(np.int8)
    phase_a = rng.integers(0, protocol.D, size=n, dtype=np.int16)
    phase_b = rng.integers(0, protocol.D, size=n, dtype=np.int16)
    mu_a = levels[int_a]
    mu_b = levels[int_b]
    photons_a = rng.poisson(mu_a).astype(np.int16)
    photons_b = rng.poisson(mu_b).astype(np.int16)
    eta_s = channel.eta_s
    arrived = rng.binomial(photons_a, eta_s) + rng.binomial(photons_b, eta_s)
    dphi = 2 * np.pi * (phase_a.astype(np.int64) - phase_b) / protocol.D
    i_l, i_r = port_intensities(mu_a, mu_b, dphi, eta_s)
    total = i_l + i_r
    frac_l = np.divide(i_l, total, out=np.full(n, 0.5), where=total > 0)
    to_left = rng.binomial(arrived, frac_l)
    to_right = arrived - to_left
    p_d = channel.dark_count_prob
    fire_l = (to_left > 0) | (rng.random(n) < p_d)
    fire_r = (to_right > 0) | (rng.random(n) < p_d)
    return int_a, int_b, phase_a, phase_b, _classify(fire_l, fire_r), photons_a, photons_b


def simulate_rounds(protocol: ProtocolParams, channel: ChannelParams,
                    block_size: int = DEFAULT_BLOCK, threads: int = 1) -> RoundLog:
    """Emit ``protocol.N`` rounds; identical output for any ``threads`` value."""
    n_total = int(protocol.N)
    sizes = [block_size] * (n_total // block_size)
    if n_total % block_size:
        sizes.append(n_total % block_size)
    jobs = list(enumerate(sizes))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda job: _simulate_block(protocol, channel, *job), jobs))
    else:
        parts = [_simulate_block(protocol, channel, *job) for job in jobs]
    if parts:
        cols = [np.concatenate(c) for c in zip(*parts)]
    else:
        cols = [np.empty(0, dtype=t) for t in (np.int8, np.int8, np.int16, np.int16, np.int8, np.int16, np.int16)]
    return RoundLog(protocol.levels, int(protocol.D), *cols)


def pair_log(log: RoundLog, l=UNLIMITED) -> np.ndarray:
    """Pairs of successful rounds as an ``(K, 2)`` array of round indices."""
    return pair_positions(np.flatnonzero(log.clicks), l)


# --- sifting and key mapping ---


def party_basis(level_i, level_j):
    """Per-party basis from the two slot intensity levels (codes or values)."""
    level_i = np.asarray(level_i)
    level_j = np.asarray(level_j)
    out = np.full(np.broadcast(level_i, level_j).shape, _P_DISCARD, dtype=np.int8)
    zi, zj = level_i == 0, level_j == 0
    out[zi & zj] = _P_ZERO
    out[zi ^ zj] = _P_Z
    out[~zi & ~zj & (level_i == level_j)] = _P_X
    return out


def joint_basis(basis_a, basis_b):
    """Combine the announced party bases; '0' is a wildcard, X with Z is discarded."""
    basis_a = np.asarray(basis_a)
    basis_b = np.asarray(basis_b)
    out = np.full(np.broadcast(basis_a, basis_b).shape, _P_DISCARD, dtype=np.int8)
    out[(basis_a == _P_ZERO) & (basis_b == _P_ZERO)] = _P_ZERO
    for code in (_P_Z, _P_X):
        out[((basis_a == code) & ((basis_b == code) | (basis_b == _P_ZERO)))
            | ((basis_b == code) & (basis_a == _P_ZERO))] = code
    return out


def sift_basis(a_i, a_j, b_i, b_j) -> str:
    """Joint basis label for one pair given the four slot intensities.

    >>> sift_basis(0, 0.5, 0.1, 0)
    'Z'
    """
    code = joint_basis(party_basis(a_i, a_j), party_basis(b_i, b_j))
    return str(_BASIS_NAMES[int(code)])


def x_key(phase_i, phase_j, D: int):
    """X-basis key bit and alignment angle from two phase slices.

    Returns ``(kappa, theta_units)`` where the angle is ``theta_units * pi / D``
    and lies in ``[0, pi)``.

    >>> x_key(12, 4, 16)   # 3pi/2 then pi/2
    (1, 0)
    """
    delta = (np.asarray(phase_j, dtype=np.int64) - phase_i) % D
    kappa = (2 * delta) // D
    return kappa, 2 * delta - kappa * D


@dataclass
class SiftedPairs:
    """Column store of paired rounds after sifting and key mapping.

    ``basis`` holds codes for ``'0', Z, X, discard``.  Pairs labelled '0'
    feed both decoy tables, so they carry a Z-style and an X-style result.
    """

    i: np.ndarray
    j: np.ndarray
    basis: np.ndarray
    level_a: np.ndarray  # per-party intensity sum as a level code in its basis table
    level_b: np.ndarray
    photons_a: np.ndarray
    photons_b: np.ndarray
    z_kappa_a: np.ndarray = field(default=None)
    z_kappa_b: np.ndarray = field(default=None)
    x_kappa_a: np.ndarray = field(default=None)
    x_kappa_b: np.ndarray = field(default=None)
    theta_a: np.ndarray = field(default=None)
    theta_b: np.ndarray = field(default=None)
    x_kept: np.ndarray = field(default=None)
    outcome_i: np.ndarray = field(default=None)
    outcome_j: np.ndarray = field(default=None)
    single: np.ndarray = field(default=None)  # one photon per party, drawn by tag_single_photon_pairs

    def __len__(self):
        return int(self.i.size)

    @property
    def z_error(self):
        return self.z_kappa_a != self.z_kappa_b

    @property
    def x_error(self):
        return self.x_kappa_a != self.x_kappa_b


@dataclass(frozen=True)
class SiftedPair:
    i: int
    j: int
    basis: str
    kappa_a: int
    kappa_b: int
    theta_a: float
    theta_b: float
    intensity_vec: tuple
    outcomes: tuple


def sift_pairs(log: RoundLog, pairs: np.ndarray) -> SiftedPairs:
    """Label each pair with its joint basis; discarded pairs are kept for accounting."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    i, j = pairs[:, 0], pairs[:, 1]
    a_i, a_j = log.int_a[i], log.int_a[j]
    b_i, b_j = log.int_b[i], log.int_b[j]
    basis = joint_basis(party_basis(a_i, a_j), party_basis(b_i, b_j))
    # both tables index a party's setting by its nonzero level (0 if vacuum)
    level_a = np.maximum(a_i, a_j)
    level_b = np.maximum(b_i, b_j)
    return SiftedPairs(
        i, j, basis, level_a.astype(np.int8), level_b.astype(np.int8),
        log.photons_a[i].astype(np.int32) + log.photons_a[j],
        log.photons_b[i].astype(np.int32) + log.photons_b[j],
        outcome_i=log.outcome[i], outcome_j=log.outcome[j],
    )


def tag_single_photon_pairs(sifted: SiftedPairs, log: RoundLog, protocol: ProtocolParams,
                            channel: ChannelParams, rng: np.random.Generator) -> SiftedPairs:
    """Draw the ground-truth "one photon per party" label of every pair.

    The label follows its exact conditional law given the intensities, the
    phase gaps and the two outcomes, with the pair's overall phase between
    Alice and Bob averaged out.  Averaged over runs the tagged counts equal
    the expected single-photon-pair counts.
    """
    n = len(sifted)
    if n == 0:
        sifted.single = np.zeros(0, dtype=bool)
        return sifted
    i, j = sifted.i, sifted.j
    lv, D = protocol.levels, int(protocol.D)
    mu_ai, mu_aj = lv[log.int_a[i]], lv[log.int_a[j]]
    mu_bi, mu_bj = lv[log.int_b[i]], lv[log.int_b[j]]
    step = 2 * np.pi / D
    d_i = step * (log.phase_a[i].astype(np.int64) - log.phase_b[i])
    d_j = step * (log.phase_a[j].astype(np.int64) - log.phase_b[j])
    o_i = log.outcome[i]
    o_j = log.outcome[j]
    clicked = ((o_i == LEFT) | (o_i == RIGHT)) & ((o_j == LEFT) | (o_j == RIGHT))
    oi = np.where(o_i == RIGHT, 1, 0)
    oj = np.where(o_j == RIGHT, 1, 0)
    table = single_pair_probs(mu_ai, mu_aj, mu_bi, mu_bj, d_i, d_j, channel)
    num = table[np.arange(n), oi, oj]
    den = np.zeros(n)
    for m in range(D):
        probs_i = np.stack(outcome_probs(mu_ai, mu_bi, d_i + m * step, channel)[:2])
        probs_j = np.stack(outcome_probs(mu_aj, mu_bj, d_j + m * step, channel)[:2])
        den += probs_i[oi, np.arange(n)] * probs_j[oj, np.arange(n)]
    den /= D
    post = np.divide(num, den, out=np.zeros(n), where=den > 0)
    sifted.single = clicked & (rng.random(n) < np.clip(post, 0.0, 1.0))
    return sifted


def map_keys(sifted: SiftedPairs, log: RoundLog, rng: np.random.Generator,
             misalignment: float = 0.0, rule: str = "box") -> SiftedPairs:
    """Fill in key bits and alignment angles.

    ``rule='box'`` keeps X pairs with equal alignment angles.  ``rule='table'``
    splits each phase slice into a base phase and a pi-flip bit, announces
    the base relative phase and keeps pairs whose announced phases differ by
    0 or pi (Bob flips his bit for pi).
    """
    if rule not in ("box", "table"):
        raise ValueError("rule must be 'box' or 'table'")
    D = log.D
    n = len(sifted)
    i, j = sifted.i, sifted.j
    a_i, a_j = log.int_a[i], log.int_a[j]
    b_i, b_j = log.int_b[i], log.int_b[j]
    pa = party_basis(a_i, a_j)
    pb = party_basis(b_i, b_j)
    coin_a = rng.integers(0, 2, n, dtype=np.int8)
    coin_b = rng.integers(0, 2, n, dtype=np.int8)
    flip = (rng.random(n) < misalignment).astype(np.int8)

    # Z: Alice's bit is 0 for (0, x); Bob's is 0 for (x, 0); a vacuum party guesses
    z_a = np.where(pa == _P_Z, (a_i != 0).astype(np.int8), coin_a)
    z_b = np.where(pb == _P_Z, (b_j != 0).astype(np.int8), coin_b)

    ph_a_i, ph_a_j = log.phase_a[i], log.phase_a[j]
    ph_b_i, ph_b_j = log.phase_b[i], log.phase_b[j]
    if rule == "box":
        k_a, t_a = x_key(ph_a_i, ph_a_j, D)
        k_b, t_b = x_key(ph_b_i, ph_b_j, D)
        kept = t_a == t_b
        extra = np.zeros(n, dtype=np.int64)
    else:
        if D % 2:
            raise ValueError("the table rule needs an even number of phase slices")
        half = D // 2
        k_a = (ph_a_i // half) ^ (ph_a_j // half)
        k_b = (ph_b_i // half) ^ (ph_b_j // half)
        t_a = (ph_a_j % half - ph_a_i % half) % D
        t_b = (ph_b_j % half - ph_b_i % half) % D
        gap = (t_a - t_b) % D
        kept = (gap == 0) | (gap == half)
        extra = (gap == half).astype(np.int64)
    announced_differ = (sifted.outcome_i != sifted.outcome_j).astype(np.int64)
    x_b = (k_b + announced_differ + extra + flip) % 2

    sifted.z_kappa_a, sifted.z_kappa_b = z_a, z_b
    sifted.x_kappa_a, sifted.x_kappa_b = k_a.astype(np.int8), x_b.astype(np.int8)
    sifted.theta_a = np.pi * t_a / D
    sifted.theta_b = np.pi * t_b / D
    sifted.x_kept = kept
    return sifted


def sifted_items(sifted: SiftedPairs, log: RoundLog) -> list[SiftedPair]:
    """Per-pair view; Z and '0' pairs report Z-style bits, X pairs X-style bits."""
    out = []
    for n in range(len(sifted)):
        code = int(sifted.basis[n])
        x_style = code == _P_X
        ka = sifted.x_kappa_a if x_style else sifted.z_kappa_a
        kb = sifted.x_kappa_b if x_style else sifted.z_kappa_b
        i, j = int(sifted.i[n]), int(sifted.j[n])
        mu_a = log.levels[log.int_a[i]] + log.levels[log.int_a[j]]
        mu_b = log.levels[log.int_b[i]] + log.levels[log.int_b[j]]
        out.append(SiftedPair(
            i, j, str(_BASIS_NAMES[code]),
            int(ka[n]) if ka is not None else -1, int(kb[n]) if kb is not None else -1,
            float(sifted.theta_a[n]) if sifted.theta_a is not None else math.nan,
            float(sifted.theta_b[n]) if sifted.theta_b is not None else math.nan,
            (float(mu_a), float(mu_b)),
            (OUTCOME_LETTERS[sifted.outcome_i[n]], OUTCOME_LETTERS[sifted.outcome_j[n]]),
        ))
    return out


# --- tallies ---


@dataclass
class TallyTable:
    """Clicked-pair counts ``M`` and error counts ``E`` per basis and intensity cell.

    Cells are indexed by level codes ``0, 1, 2``; in the Z table those mean
    ``0, nu, mu`` and in the X table the per-party sums ``0, 2nu, 2mu``.
    ``M11``/``E11`` hold ground-truth single-photon-pair counts when known.
    """

    nu: float
    mu: float
    M: dict = field(default_factory=lambda: {b: np.zeros((3, 3)) for b in (Z, X)})
    E: dict = field(default_factory=lambda: {b: np.zeros((3, 3)) for b in (Z, X)})
    M11: dict = field(default_factory=lambda: {b: np.zeros((3, 3)) for b in (Z, X)})
    E11: dict = field(default_factory=lambda: {b: np.zeros((3, 3)) for b in (Z, X)})
    pairs: float = 0.0
    rounds: float = 0.0
    seen: dict | None = None  # cells present in an imported table; None means all

    def values(self, basis: str) -> np.ndarray:
        base = np.array([0.0, self.nu, self.mu])
        return base if basis == Z else 2 * base

    def merge(self, other: "TallyTable") -> "TallyTable":
        out = TallyTable(self.nu, self.mu)
        for name in ("M", "E", "M11", "E11"):
            for b in (Z, X):
                getattr(out, name)[b] = getattr(self, name)[b] + getattr(other, name)[b]
        out.pairs = self.pairs + other.pairs
        out.rounds = self.rounds + other.rounds
        return out

    def rows(self):
        for b in (Z, X):
            vals = self.values(b)
            for ia in range(3):
                for ib in range(3):
                    yield b, vals[ia], vals[ib], self.M[b][ia, ib], self.E[b][ia, ib]

    def write_csv(self, stream) -> None:
        if self.rounds > 0:
            stream.write(f"# rounds: {self.rounds:.9g}\n")
        stream.write("basis,mu_a,mu_b,M,E\n")
        for b, va, vb, m, e in self.rows():
            stream.write(f"{b},{va:.9g},{vb:.9g},{m:.9g},{e:.9g}\n")

    @classmethod
    def read_csv(cls, stream, nu: float, mu: float) -> "TallyTable":
        """Parse a ``basis,mu_a,mu_b,M,E`` table against the source levels ``nu, mu``."""
        import csv

        table = cls(nu, mu)
        table.seen = {b: np.zeros((3, 3), dtype=bool) for b in (Z, X)}
        lines = []
        for ln in stream:
            if ln.startswith("#"):
                key, _, value = ln[1:].partition(":")
                if key.strip() == "rounds":
                    table.rounds = float(value)
            elif ln.strip():
                lines.append(ln)
        reader = csv.DictReader(lines)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["basis", "mu_a", "mu_b", "M", "E"]:
            raise ValueError("tally header must be basis,mu_a,mu_b,M,E")
        for row in reader:
            b = row["basis"].strip()
            if b not in (Z, X):
                raise ValueError(f"unknown basis {b!r} in tally")
            vals = table.values(b)
            idx = []
            for key in ("mu_a", "mu_b"):
                v = float(row[key])
                hit = np.flatnonzero(np.isclose(vals, v, rtol=1e-6, atol=1e-12))
                if hit.size != 1:
                    raise ValueError(f"{key}={v} does not match a {b}-basis intensity level")
                idx.append(int(hit[0]))
            m, e = float(row["M"]), float(row["E"])
            if m < 0 or e < 0 or e > m:
                raise ValueError(f"tally cell {b},{row['mu_a']},{row['mu_b']} needs 0 <= E <= M")
            table.M[b][idx[0], idx[1]] += m
            table.E[b][idx[0], idx[1]] += e
            table.seen[b][idx[0], idx[1]] = True
        return table


def tally(sifted: SiftedPairs, protocol: ProtocolParams) -> TallyTable:
    """Count clicked and erroneous pairs per basis and intensity cell."""
    table = TallyTable(protocol.nu, protocol.mu)
    table.pairs = float(len(sifted))
    table.rounds = float(protocol.N)
    is_zero = sifted.basis == _P_ZERO
    single = sifted.single if sifted.single is not None else np.zeros(len(sifted), dtype=bool)
    for b, code, err, kept in (
        (Z, _P_Z, sifted.z_error if len(sifted) else np.zeros(0, bool), None),
        (X, _P_X, sifted.x_error if len(sifted) else np.zeros(0, bool), sifted.x_kept),
    ):
        sel = (sifted.basis == code) | is_zero
        if kept is not None:
            sel &= kept
        flat = sifted.level_a[sel].astype(np.int64) * 3 + sifted.level_b[sel]
        table.M[b] = np.bincount(flat, minlength=9).reshape(3, 3).astype(float)
        table.E[b] = np.bincount(flat, weights=err[sel], minlength=9).reshape(3, 3)
        table.M11[b] = np.bincount(flat, weights=single[sel], minlength=9).reshape(3, 3)
        table.E11[b] = np.bincount(flat, weights=(single & err)[sel], minlength=9).reshape(3, 3)
    return table


@dataclass
class ProtocolRun:
    log: RoundLog
    pairs: np.ndarray
    sifted: SiftedPairs
    table: TallyTable

    @property
    def click_fraction(self) -> float:
        return float(self.log.clicks.mean()) if len(self.log) else 0.0

    def signal_stats(self) -> dict:
        """Counts behind ``r_s``, ``E_Z`` and ``q11`` for the (mu, mu) Z cell."""
        m = self.table.M[Z][2, 2]
        return {
            "pairs": float(len(self.pairs)),
            "signal": m,
            "signal_errors": self.table.E[Z][2, 2],
            "signal_single": self.table.M11[Z][2, 2],
        }


def run_protocol(protocol: ProtocolParams, channel: ChannelParams, rule: str = "box",
                 threads: int = 1, block_size: int = DEFAULT_BLOCK) -> ProtocolRun:
    """Simulate, pair, sift, map keys and tally in one call."""
    log = simulate_rounds(protocol, channel, block_size=block_size, threads=threads)
    pairs = pair_log(log, protocol.l)
    sifted = sift_pairs(log, pairs)
    map_keys(sifted, log, block_rng(protocol.seed, 0, stream=1), channel.misalignment, rule)
    tag_single_photon_pairs(sifted, log, protocol, channel, block_rng(protocol.seed, 0, stream=2))
    return ProtocolRun(log, pairs, sifted, tally(sifted, protocol))


# --- exact expectation of the tallies ---


def expected_click_fraction(protocol: ProtocolParams, channel: ChannelParams) -> float:
    """Mean success probability over intensity settings and phase slices."""
    _, weight = _round_configs(protocol, channel)
    return float(weight.sum())


def _round_configs(protocol: ProtocolParams, channel: ChannelParams):
    """Per-round configurations ``(level_a, level_b, phase gap)`` with success weights.

    Returns ``(configs, w)`` where ``w[c, o]`` is ``Pr(config c and outcome o)``
    for ``o`` in (left, right).
    """
    D = int(protocol.D)
    la, lb, d = np.meshgrid(np.arange(3), np.arange(3), np.arange(D), indexing="ij")
    la, lb, d = la.ravel(), lb.ravel(), d.ravel()
    levels = protocol.levels
    prob = protocol.probs[la] * protocol.probs[lb] / D
    p_left, p_right, _, _ = outcome_probs(levels[la], levels[lb], 2 * np.pi * d / D, channel)
    return (la, lb, d), np.column_stack([prob * p_left, prob * p_right])


def expected_tally(protocol: ProtocolParams, channel: ChannelParams, rounds: float | None = None) -> TallyTable:
    """Expected tallies of :func:`run_protocol` (box rule), as real-valued counts.

    Clicked rounds are exchangeable given the click pattern, so a pair's
    configuration is a product of two per-round click-conditioned draws.
    """
    n_rounds = float(protocol.N if rounds is None else rounds)
    (la, lb, d), w = _round_configs(protocol, channel)
    D = int(protocol.D)
    p = float(w.sum())
    n_pairs = n_rounds * pairing_rate_analytic(p, protocol.l) if p > 0 else 0.0
    table = TallyTable(protocol.nu, protocol.mu)
    table.pairs, table.rounds = n_pairs, n_rounds
    if n_pairs == 0:
        return table
    cond = w / p  # Pr(config, outcome | success)
    e_d = channel.misalignment

    # every ordered pair of (slot-i config, slot-j config)
    A_i, A_j = np.meshgrid(la, la, indexing="ij")
    B_i, B_j = np.meshgrid(lb, lb, indexing="ij")
    d_i, d_j = np.meshgrid(d, d, indexing="ij")
    pa = party_basis(A_i, A_j)
    pb = party_basis(B_i, B_j)
    basis = joint_basis(pa, pb)
    lev_a = np.maximum(A_i, A_j)
    lev_b = np.maximum(B_i, B_j)
    same = cond[:, 0][:, None] * cond[:, 0][None, :] + cond[:, 1][:, None] * cond[:, 1][None, :]
    diff = cond[:, 0][:, None] * cond[:, 1][None, :] + cond[:, 1][:, None] * cond[:, 0][None, :]
    both = same + diff
    zero = basis == _P_ZERO

    # Z table: bits set by the lit slot; a vacuum party guesses
    z_sel = (basis == _P_Z) | zero
    guess = (pa == _P_ZERO) | (pb == _P_ZERO)
    z_wrong = ((A_i != 0) != (B_j != 0)).astype(float)
    z_err = np.where(guess, 0.5, z_wrong)

    # X table: kept when the phase gaps agree mod pi; the bits disagree for a pi gap
    gap = (d_j - d_i) % D
    x_sel = ((basis == _P_X) | zero) & ((2 * gap) % D == 0)
    parity = (gap != 0).astype(float)
    # Bob flips on differing announcements; error when parity and flip disagree
    x_err_raw = parity * same + (1 - parity) * diff
    x_err = (1 - e_d) * x_err_raw + e_d * (both - x_err_raw)

    # pairs where each party emitted exactly one photon over the two rounds
    levels = protocol.levels
    prior = protocol.probs[la] * protocol.probs[lb] / D
    step = 2 * np.pi / D
    q = single_pair_probs(levels[A_i], levels[A_j], levels[B_i], levels[B_j], step * d_i, step * d_j, channel)
    q = q * (prior[:, None] * prior[None, :] / p ** 2)[..., None, None]
    s_same = q[..., 0, 0] + q[..., 1, 1]
    s_diff = q[..., 0, 1] + q[..., 1, 0]
    s_both = s_same + s_diff
    s_err_raw = parity * s_same + (1 - parity) * s_diff
    s_err = (1 - e_d) * s_err_raw + e_d * (s_both - s_err_raw)

    cells = lev_a * 3 + lev_b
    for b, sel, err, s_mass, s_e in ((Z, z_sel, z_err * both, s_both, z_err * s_both),
                                     (X, x_sel, x_err, s_both, s_err)):
        flat = cells[sel]

        def count(weights):
            return n_pairs * np.bincount(flat, weights=weights[sel], minlength=9).reshape(3, 3)

        table.M[b] = count(both)
        table.E[b] = count(err)
        table.M11[b] = count(s_mass)
        table.E11[b] = count(s_e)
    return table
