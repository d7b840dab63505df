"""Laser frequency drift between two independent sources, strong reference
pulses, drift estimation from clicks, and error rate against pairing length.

The frequency difference drifts linearly, ``omega(t) = k t + omega0``, so the
relative phase picked up between pulses ``i`` and ``j`` is the integral
``k (t_j^2 - t_i^2) / 2 + omega0 (t_j - t_i)``, plus a slow random-walk term.
Reference pulses of equal intensity interfere at the measurement site with
the same law as the protocol simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .channel import ChannelParams
from .montecarlo import DOUBLE, LEFT, NONE, RIGHT, outcome_probs
from .pairing import pair_first_in_window

TWO_PI = 2 * np.pi
DEFAULT_SLICE = TWO_PI / 32


class EstimationUnavailable(Exception):
    """Too few clicks to estimate the drift."""


@dataclass(frozen=True)
class DriftModel:
    slope: float = 0.0  # k, rad/s^2
    omega0: float = 0.0  # rad/s
    slow_noise_std: float = 0.0  # rad per pulse, random-walk step
    rep_rate: float = 625e6  # Hz
    duration: float = 1e-3  # s

    def __post_init__(self):
        if not self.rep_rate > 0:
            raise ValueError("rep_rate must be positive")
        if self.duration < 0 or self.slow_noise_std < 0:
            raise ValueError("duration and slow_noise_std must be non-negative")

    @property
    def n_pulses(self) -> int:
        return int(round(self.rep_rate * self.duration))

    def accumulated_phase(self, t):
        """Drift phase since ``t = 0`` without the slow noise."""
        t = np.asarray(t, dtype=float)
        return self.slope * t * t / 2 + self.omega0 * t


def wrap(x):
    """Reduce angles to ``[0, 2 pi)``."""
    return np.mod(x, TWO_PI)


def relative_phase(t_i, t_j, model: DriftModel, psi_i=0.0, psi_j=0.0):
    """``theta = int_{t_i}^{t_j} omega(t) dt + psi(t_j) - psi(t_i)``, mod ``2 pi``.

    >>> round(float(relative_phase(0.0, 1 / 60e6, DriftModel(omega0=2 * math.pi * 30e6))), 12)
    3.141592653590
    """
    t_i = np.asarray(t_i, dtype=float)
    t_j = np.asarray(t_j, dtype=float)
    drift = model.slope * (t_j * t_j - t_i * t_i) / 2 + model.omega0 * (t_j - t_i)
    return wrap(drift + np.asarray(psi_j) - np.asarray(psi_i))


@dataclass
class ReferenceRecord:
    """Outcome of every reference pulse, in time order."""

    outcome: np.ndarray  # NONE / LEFT / RIGHT / DOUBLE per pulse
    rep_rate: float
    intensity: float
    dark_count_prob: float
    true_phase: np.ndarray | None = None  # relative phase at each pulse, when simulated

    def __len__(self):
        return int(self.outcome.size)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) / self.rep_rate

    @property
    def clicks(self) -> np.ndarray:
        return np.flatnonzero((self.outcome == LEFT) | (self.outcome == RIGHT))

    def site_channel(self) -> ChannelParams:
        return site_channel(self.dark_count_prob)


def site_channel(dark_count_prob: float) -> ChannelParams:
    """Lossless channel: the given intensity is what reaches the beam splitter."""
    return ChannelParams(total_distance_km=0.0, detector_efficiency=1.0, dark_count_prob=dark_count_prob)


def simulate_reference_clicks(model: DriftModel, intensity: float, dark_count_prob: float = 0.0,
                              seed: int = 0, n_pulses: int | None = None, phase0: float = 0.0) -> ReferenceRecord:
    """Both lasers send ``intensity`` per pulse; the phase gap follows the drift."""
    n = model.n_pulses if n_pulses is None else int(n_pulses)
    rng = np.random.default_rng(seed)
    t = np.arange(n) / model.rep_rate
    dphi = phase0 + model.accumulated_phase(t)
    if model.slow_noise_std > 0 and n:
        steps = rng.normal(0.0, model.slow_noise_std, size=n)
        steps[0] = 0.0
        dphi = dphi + np.cumsum(steps)
    ch = site_channel(dark_count_prob)
    p_l, p_r, p_d, _ = outcome_probs(intensity, intensity, dphi, ch)
    u = rng.random(n)
    out = np.full(n, NONE, dtype=np.int8)
    out[u < p_l] = LEFT
    out[(u >= p_l) & (u < p_l + p_r)] = RIGHT
    out[(u >= p_l + p_r) & (u < p_l + p_r + p_d)] = DOUBLE
    return ReferenceRecord(out, model.rep_rate, float(intensity), float(dark_count_prob), wrap(dphi))


# --- estimation ---


@dataclass
class DriftFit:
    slope: float
    omega0: float
    phase0: float
    track_residual_hz: float
    clicks: int
    ambiguous: bool
    aliases_hz: list = field(default_factory=list)
    window_freqs_hz: list = field(default_factory=list)

    def accumulated_phase(self, t):
        t = np.asarray(t, dtype=float)
        return self.slope * t * t / 2 + self.omega0 * t

    @property
    def beat_hz(self) -> float:
        return self.omega0 / TWO_PI


def _peak_frequency(signal: np.ndarray, rep_rate: float, pad: int = 8) -> tuple[float, float]:
    """Strongest nonzero frequency of a real signal, with parabolic refinement."""
    n = signal.size
    size = 1 << int(math.ceil(math.log2(max(n * pad, 16))))
    spec = np.abs(np.fft.rfft(signal - signal.mean(), size))
    spec[0] = 0.0
    i = int(np.argmax(spec))
    if 0 < i < spec.size - 1:
        a, b, c = np.log(spec[i - 1:i + 2] + 1e-300)
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        shift = 0.0
    df = rep_rate / size
    return (i + shift) * df, df


def _neg_log_likelihood(params, n_idx, outcome, scale_a, scale_b, intensity, ch):
    a, b, c = params
    dphi = (a / scale_a) * n_idx * n_idx / 2 + (b / scale_b) * n_idx + c
    p = np.stack(outcome_probs(intensity, intensity, dphi, ch))  # L, R, double, none
    # map outcome codes onto the stacked rows
    row = np.choose(outcome, [3, 0, 1, 2])
    picked = p[row, np.arange(outcome.size)]
    return -float(np.sum(np.log(np.maximum(picked, 1e-300))))


def estimate_drift(record: ReferenceRecord, windows: int | None = None, max_beat_hz: float | None = None,
                   min_clicks: int = 50, refine: bool = True, max_samples: int = 200_000) -> DriftFit:
    """Fit ``(k, omega0)`` from a click record.

    A zero-padded periodogram of the signed click signal (L = +1, R = -1)
    gives the beat frequency in each time window; a straight line through
    those gives the starting point, and a Nelder-Mead search on the full
    click likelihood refines it.  A real click pattern cannot tell a beat
    from its negative, so the fit is reported with ``omega0 >= 0``.  Beats
    above half the pulse rate alias; when ``max_beat_hz`` allows that, or
    the peak sits at the band edge, the fit is flagged ambiguous.
    """
    clicks = record.clicks
    if clicks.size < min_clicks:
        raise EstimationUnavailable(f"only {clicks.size} clicks, need at least {min_clicks}")
    n = len(record)
    rep = record.rep_rate
    signal = np.zeros(n)
    signal[record.outcome == LEFT] = 1.0
    signal[record.outcome == RIGHT] = -1.0
    if windows is None:
        windows = int(max(1, min(16, clicks.size // 400)))
    edges = np.linspace(0, n, windows + 1).astype(int)
    centers, freqs = [], []
    df = rep
    for lo, hi in zip(edges[:-1], edges[1:]):
        if np.count_nonzero(signal[lo:hi]) < max(10, min_clicks // windows):
            continue
        f, df = _peak_frequency(signal[lo:hi], rep)
        centers.append((lo + hi - 1) / 2 / rep)
        freqs.append(f)
    if not freqs:
        raise EstimationUnavailable("no window holds enough clicks")
    centers = np.array(centers)
    freqs = np.array(freqs)
    if freqs.size >= 2:
        slope_hz, f0 = np.polyfit(centers, freqs, 1)
        resid = freqs - (slope_hz * centers + f0)
        track = float(np.sqrt(np.mean(resid ** 2)))
    else:
        slope_hz, f0, track = 0.0, float(freqs[0]), 0.0
    k0 = TWO_PI * slope_hz
    w0 = TWO_PI * f0
    phase0 = 0.0

    if refine:
        idx = np.arange(n)
        if n > max_samples:
            # evenly spread contiguous blocks keep both the local beat and the long-range drift
            blocks = 20
            width = max_samples // blocks
            starts = np.linspace(0, n - width, blocks).astype(int)
            idx = np.concatenate([np.arange(s0, s0 + width) for s0 in starts])
        ch = record.site_channel()
        scale_b = max(n, 1.0)  # parameters become radians over the record
        scale_a = max(n * n, 1.0)
        a0 = k0 / rep ** 2 * scale_a
        b0 = w0 / rep * scale_b
        args = (idx.astype(float), record.outcome[idx].astype(np.int64), scale_a, scale_b, record.intensity, ch)
        best = min(
            ((_neg_log_likelihood((a0, b0, c), *args), c) for c in np.linspace(0, TWO_PI, 16, endpoint=False)),
            key=lambda t: t[0],
        )
        res = minimize(_neg_log_likelihood, x0=[a0, b0, best[1]], args=args, method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": 1e-6, "maxiter": 4000, "initial_simplex": [
                           [a0, b0, best[1]], [a0 + 2.0, b0, best[1]], [a0, b0 + 2.0, best[1]],
                           [a0, b0, best[1] + 0.5]]})
        a, b, c = res.x
        k0 = a / scale_a * rep ** 2
        w0 = b / scale_b * rep
        phase0 = float(c)
    if w0 < 0:
        k0, w0, phase0 = -k0, -w0, -phase0

    nyquist = rep / 2
    beat = w0 / TWO_PI
    near_edge = beat < 2 * df or beat > nyquist - 2 * df
    ambiguous = bool(near_edge or (max_beat_hz is not None and max_beat_hz > nyquist))
    limit = max_beat_hz if max_beat_hz is not None else nyquist
    aliases = sorted({abs(beat + m * rep) for m in range(-3, 4)} | {abs(-beat + m * rep) for m in range(-3, 4)})
    aliases = [float(f) for f in aliases if f <= limit + 1e-9]
    return DriftFit(float(k0), float(w0), wrap(phase0), track, int(clicks.size), ambiguous, aliases,
                    freqs.tolist())


def phase_residual(fit, model: DriftModel, record: ReferenceRecord) -> float:
    """RMS wrapped gap between predicted and true drift phases, best constant offset removed."""
    t = record.times
    gap = fit.accumulated_phase(t) - model.accumulated_phase(t)
    gap = gap - np.angle(np.mean(np.exp(1j * gap)))
    return float(np.sqrt(np.mean(np.angle(np.exp(1j * gap)) ** 2)))


# --- error rate versus pairing length ---


@dataclass
class ErrorRow:
    l_bin_lo: int
    l_bin_hi: int
    pairs: int
    errors: int

    @property
    def rate(self) -> float:
        return self.errors / self.pairs if self.pairs else float("nan")

    @property
    def std_error(self) -> float:
        if not self.pairs:
            return float("nan")
        r = self.rate
        return math.sqrt(max(r * (1 - r), 1.0 / self.pairs) / self.pairs)


def default_bins(l_max: int = 10_000, count: int = 10) -> list[tuple[int, int]]:
    edges = np.unique(np.linspace(1, l_max + 1, count + 1).astype(int))
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def score_pairs(record: ReferenceRecord, pairs: np.ndarray, predictor, slice_width: float = DEFAULT_SLICE):
    """Keep pairs whose predicted phase gap sits near 0 or pi and flag the errors.

    Near 0 the two clicks should agree, near pi they should differ.
    Returns ``(kept, error)`` boolean arrays over ``pairs``.
    """
    if len(pairs) == 0:
        return np.zeros(0, bool), np.zeros(0, bool)
    t = record.times
    i, j = pairs[:, 0], pairs[:, 1]
    theta = wrap(predictor.accumulated_phase(t[j]) - predictor.accumulated_phase(t[i]))
    half = slice_width / 2
    near0 = (theta <= half) | (theta >= TWO_PI - half)
    nearpi = np.abs(theta - np.pi) <= half
    same = record.outcome[i] == record.outcome[j]
    error = (near0 & ~same) | (nearpi & same)
    return near0 | nearpi, error & (near0 | nearpi)


def error_vs_interval(record: ReferenceRecord, predictor, bins=None,
                      slice_width: float = DEFAULT_SLICE) -> list[ErrorRow]:
    """Error rate of kept pairs, binned by pairing length.

    Each click is paired with the first later click whose distance lies in
    the bin, so long lengths are sampled as often as short ones.
    """
    bins = default_bins() if bins is None else bins
    clicks = record.clicks
    rows = []
    for lo, hi in bins:
        pairs = pair_first_in_window(clicks, lo, hi)
        kept, err = score_pairs(record, pairs, predictor, slice_width)
        rows.append(ErrorRow(int(lo), int(hi), int(kept.sum()), int(err.sum())))
    if clicks.size == 0:
        return []
    return rows


def intrinsic_error_floor(intensity: float, slice_width: float = DEFAULT_SLICE, dark_count_prob: float = 0.0,
                          grid: int = 720, sub: int = 32) -> float:
    """Error rate of perfectly predicted pairs, by enumerating click patterns.

    The absolute phase is uniform and the true gap uniform inside the slice
    around 0 (the slice around pi mirrors it by swapping L and R).
    """
    ch = site_channel(dark_count_prob)
    phi = (np.arange(grid) + 0.5) * TWO_PI / grid
    eps = (np.arange(sub) + 0.5) / sub * slice_width - slice_width / 2
    p_i = np.stack(outcome_probs(intensity, intensity, phi, ch)[:2])  # [L/R, phi]
    p_j = np.stack(outcome_probs(intensity, intensity, phi[:, None] + eps[None, :], ch)[:2])  # [L/R, phi, eps]
    same = p_i[0][:, None] * p_j[0] + p_i[1][:, None] * p_j[1]
    diff = p_i[0][:, None] * p_j[1] + p_i[1][:, None] * p_j[0]
    return float(diff.sum() / (same.sum() + diff.sum()))


def trend_test(rows: list[ErrorRow]) -> tuple[float, float]:
    """Weighted least-squares slope of rate against bin centre, and its z-score."""
    rows = [r for r in rows if r.pairs > 0]
    if len(rows) < 3:
        return 0.0, 0.0
    x = np.array([(r.l_bin_lo + r.l_bin_hi) / 2 for r in rows], dtype=float)
    y = np.array([r.rate for r in rows])
    w = 1.0 / np.array([r.std_error for r in rows]) ** 2
    xm = np.sum(w * x) / w.sum()
    ym = np.sum(w * y) / w.sum()
    sxx = np.sum(w * (x - xm) ** 2)
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    return float(slope), float(slope * math.sqrt(sxx))


def flatness_check(rows: list[ErrorRow], reference: float | None = None, k: float = 3.0) -> bool:
    """Every bin within ``k`` standard errors of the pooled rate (or ``reference``)."""
    rows = [r for r in rows if r.pairs > 0]
    if not rows:
        return True
    if reference is None:
        reference = sum(r.errors for r in rows) / sum(r.pairs for r in rows)
    return all(abs(r.rate - reference) <= k * r.std_error for r in rows)
