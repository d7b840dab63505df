"""Asymptotic key rates for mode pairing and four comparison schemes.

Each rate function returns a :class:`RateBreakdown` carrying every
intermediate quantity, so a sweep row can be traced back to its parts.
Rates are clamped at zero; ``raw`` keeps the unclamped value.

Transmittance conventions
-------------------------
``eta_s`` is the per-side transmittance including detector efficiency.
Two-party schemes (mode pairing, time-bin MDI, PM, SNS) see ``eta_s``
per arm.  Point-to-point BB84 sees one detector and the whole fibre.
The PLOB row uses the bare fibre transmittance.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import ChannelParams, avg_click_prob
from .pairing import UNLIMITED, pairing_rate_analytic

SCHEMES = ("mp", "mdi", "bb84", "pm", "sns")
PM_SLICES = 16
MU_UPPER = 1.5
MU_TOL = 1e-4


@dataclass
class RateBreakdown:
    scheme: str
    mu: float
    rate: float
    raw: float
    p: float = math.nan
    r_p: float = math.nan
    r_s: float = math.nan
    q11: float = math.nan
    e11x: float = math.nan
    ez: float = math.nan
    l: float = math.nan
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def binary_entropy(x):
    """Binary entropy in bits, ``H(0) = H(1) = 0``.

    >>> round(float(binary_entropy(0.11)), 5)
    0.49992
    """
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise ValueError("binary entropy argument must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -x * np.log2(x) - (1 - x) * np.log2(1 - x)
    h = np.where((x == 0) | (x == 1), 0.0, h)
    return h if h.ndim else float(h)


def _clamped_entropy(x) -> float:
    return float(binary_entropy(min(max(float(x), 0.0), 1.0)))


def bessel_i0(x: float, rel_tol: float = 1e-16) -> float:
    """Modified Bessel function ``I0`` from its power series.

    Terms ``(x/2)^(2m) / (m!)^2`` are added until one falls below
    ``rel_tol`` times the partial sum; every term is positive, and past
    the peak term the ratio of neighbours is below 1/4 for ``x <= 20``,
    so the remainder is bounded by a third of the last term.
    """
    if x < 0:
        x = -x
    q = (x / 2.0) ** 2
    term = 1.0
    total = 1.0
    m = 0
    while True:
        m += 1
        term *= q / (m * m)
        total += term
        if term < rel_tol * total:
            return total


def plob_bound(eta: float) -> float:
    """Repeaterless capacity ``-log2(1 - eta)``; infinite for a lossless link."""
    if not 0 <= eta <= 1:
        raise ValueError("transmittance must lie in [0, 1]")
    if eta == 1:
        return math.inf
    return -math.log1p(-eta) / math.log(2)


# --- two-mode building blocks shared by mode pairing and time-bin MDI ---


def _y11_e11(channel: ChannelParams) -> tuple[float, float]:
    """Single-photon-pair yield and its X-basis error, symmetric arms."""
    eta_a = eta_b = channel.eta_s
    p_d = channel.dark_count_prob
    e_d = channel.misalignment
    e0 = 0.5
    y11 = (1 - p_d) ** 2 * (
        eta_a * eta_b / 2
        + (2 * eta_a + 2 * eta_b - 3 * eta_a * eta_b) * p_d
        + 4 * (1 - eta_a) * (1 - eta_b) * p_d**2
    )
    if y11 <= 0:
        return 0.0, e0
    e11 = (e0 * y11 - (e0 - e_d) * (1 - p_d**2) * eta_a * eta_b / 2) / y11
    return y11, min(max(e11, 0.0), 1.0)


def _config_sums(mu: float, channel: ChannelParams) -> dict:
    """Click-probability products over the four effective configurations.

    A configuration lists the lit slots ``(z_i, z_j)`` with ``z = (z_a, z_b)``
    and ``z_i xor z_j = 11``.  ``[00,11]`` and ``[11,00]`` put both parties'
    light in the same slot and produce bit errors.
    """
    eta_s = channel.eta_s
    p_d = channel.dark_count_prob
    x = eta_s * mu
    c0 = 2 * p_d
    c1 = -math.expm1(-x) + 2 * p_d * math.exp(-x)
    c2 = -math.expm1(-2 * x) + 2 * p_d * math.exp(-2 * x)
    d0 = 2 * p_d
    d1 = 1 - (1 - 2 * p_d) * (1 - eta_s)
    d2 = 1 - (1 - 2 * p_d) * (1 - eta_s) ** 2
    return {
        "err": 2 * c0 * c2,
        "ok": 2 * c1 * c1,
        "single_photon": 2 * d0 * d2 + 2 * d1 * d1,
    }


def _two_mode_parts(mu: float, channel: ChannelParams) -> dict:
    sums = _config_sums(mu, channel)
    eff = sums["err"] + sums["ok"]
    ez = sums["err"] / eff if eff > 0 else 0.0
    p1 = mu * math.exp(-mu)
    q11 = p1 * p1 * sums["single_photon"] / eff if eff > 0 else 0.0
    y11, e11x = _y11_e11(channel)
    return {"eff": eff, "ez": ez, "q11": min(q11, 1.0), "e11x": e11x, "y11": y11}


def _bracket(q11: float, e11x: float, ez: float, f: float) -> float:
    return q11 * (1 - _clamped_entropy(e11x)) - f * _clamped_entropy(ez)


def mp_rate(mu: float, l, channel: ChannelParams) -> RateBreakdown:
    """Mode-pairing rate ``r_p r_s {q11[1 - H(e11x)] - f H(E_Z)}``."""
    if mu <= 0:
        raise ValueError("intensity must be positive")
    parts = _two_mode_parts(mu, channel)
    p = avg_click_prob(mu, channel)
    r_p = pairing_rate_analytic(p, l)
    r_s = parts["eff"] / (16 * p * p) if p > 0 else 0.0
    raw = r_p * r_s * _bracket(parts["q11"], parts["e11x"], parts["ez"], channel.error_correction_f)
    return RateBreakdown(
        "mp", mu, max(raw, 0.0), raw, p=p, r_p=r_p, r_s=r_s, q11=parts["q11"],
        e11x=parts["e11x"], ez=parts["ez"], l=l, extra={"y11": parts["y11"]},
    )


def mdi_rate(mu: float, channel: ChannelParams) -> RateBreakdown:
    """Time-bin MDI rate ``Q_uu/2 {q11[1 - H(e11x)] - f H(E_Z)}``."""
    if mu <= 0:
        raise ValueError("intensity must be positive")
    parts = _two_mode_parts(mu, channel)
    gain = parts["eff"] / 4
    raw = 0.5 * gain * _bracket(parts["q11"], parts["e11x"], parts["ez"], channel.error_correction_f)
    return RateBreakdown(
        "mdi", mu, max(raw, 0.0), raw, p=gain, q11=parts["q11"], e11x=parts["e11x"],
        ez=parts["ez"], extra={"y11": parts["y11"]},
    )


def bb84_rate(mu: float, channel: ChannelParams) -> RateBreakdown:
    """Decoy BB84 (time-bin, infinite decoys), halved for per-mode fairness."""
    if mu <= 0:
        raise ValueError("intensity must be positive")
    eta = channel.detector_efficiency * channel.fiber_transmittance
    y0 = 2 * channel.dark_count_prob
    e0, e_d = 0.5, channel.misalignment
    gain = 1 - (1 - y0) * math.exp(-eta * mu)
    y1 = 1 - (1 - y0) * (1 - eta)
    e1 = e_d + (e0 - e_d) * y0 / y1 if y1 > 0 else e0
    q1 = y1 * mu * math.exp(-mu) / gain if gain > 0 else 0.0
    ez = e0 * y0 / gain if gain > 0 else 0.0
    raw = 0.5 * gain * (q1 * (1 - _clamped_entropy(e1)) - channel.error_correction_f * _clamped_entropy(ez))
    return RateBreakdown("bb84", mu, max(raw, 0.0), raw, p=gain, q11=q1, e11x=e1, ez=ez)


def pm_slice_errors(slices: int = PM_SLICES) -> np.ndarray:
    """Phase-slice mismatch errors ``sin^2[pi/4 - |pi/4 - pi j/D|]`` for the D/2 groups."""
    j = np.arange(slices // 2)
    return np.sin(np.pi / 4 - np.abs(np.pi / 4 - np.pi * j / slices)) ** 2


def pm_rate(mu: float, channel: ChannelParams, slices: int = PM_SLICES) -> RateBreakdown:
    """Phase-matching rate averaged over phase-slice groups.

    ``mu`` is the summed intensity of both parties.  A group whose bracket
    is negative contributes nothing, since its key would be discarded.
    """
    if mu <= 0:
        raise ValueError("intensity must be positive")
    eta = channel.eta_s
    p_d = channel.dark_count_prob
    gain = 1 - (1 - 2 * p_d) * math.exp(-eta * mu)
    if gain <= 0:
        return RateBreakdown("pm", mu, 0.0, 0.0, p=gain)
    # odd-photon fraction in closed form: sum over odd k of Y_k P_mu(k)
    odd_poisson = math.exp(-mu) * math.sinh(mu)
    odd_detected = odd_poisson - (1 - 2 * p_d) * math.exp(-mu) * math.sinh(mu * (1 - eta))
    ex = 1 - odd_detected / gain
    e_slices = pm_slice_errors(slices)
    ez_j = (p_d + eta * mu * (e_slices + channel.misalignment)) * math.exp(-eta * mu) / gain
    h_ex = _clamped_entropy(ex)
    f = channel.error_correction_f
    terms = np.array([1 - h_ex - f * _clamped_entropy(e) for e in ez_j])
    raw = 2 * gain / slices * float(terms.sum())
    rate = 2 * gain / slices * float(np.clip(terms, 0, None).sum())
    return RateBreakdown(
        "pm", mu, rate, raw, p=gain, q11=odd_detected / gain, e11x=ex, ez=float(ez_j.mean()),
    )


def sns_rate(mu_z: float, p_z0: float, channel: ChannelParams) -> RateBreakdown:
    """Sending-or-not-sending twin-field rate for given signal intensity and vacuum probability."""
    if mu_z <= 0 or not 0 < p_z0 < 1:
        raise ValueError("need mu_z > 0 and p_z0 in (0, 1)")
    eta = channel.eta_s
    p_d = channel.dark_count_prob
    e_d = channel.misalignment
    s1 = (1 - eta) * 2 * p_d * (1 - p_d) + eta * (1 - p_d)
    dark_part = (1 - eta) * p_d * (1 - p_d) / s1 if s1 > 0 else 0.0
    e1ph = (1 - e_d) * dark_part + e_d * (1 - dark_part)
    x = eta * mu_z
    s00 = 2 * p_d * (1 - p_d)
    s02 = 2 * ((1 - p_d) * math.exp(-x / 2) - (1 - p_d) ** 2 * math.exp(-x))
    s22 = 2 * ((1 - p_d) * math.exp(-x) * bessel_i0(x) - (1 - p_d) ** 2 * math.exp(-2 * x))
    sz = p_z0**2 * s00 + (1 - p_z0) ** 2 * s22 + 2 * p_z0 * (1 - p_z0) * s02
    ez = (p_z0**2 * s00 + (1 - p_z0) ** 2 * s22) / sz if sz > 0 else 0.0
    single = 2 * p_z0 * (1 - p_z0) * mu_z * math.exp(-mu_z) * s1
    raw = single * (1 - _clamped_entropy(e1ph)) - channel.error_correction_f * sz * _clamped_entropy(ez)
    return RateBreakdown(
        "sns", mu_z, max(raw, 0.0), raw, p=sz, q11=single / sz if sz > 0 else 0.0,
        e11x=e1ph, ez=ez, extra={"p_z0": p_z0},
    )


# --- optimisation ---


def _golden_max(fun, lo: float, hi: float, grid: int = 48, tol: float = MU_TOL):
    """Maximise ``fun`` on ``(lo, hi]``: log grid scan, then golden section.

    Returns ``(x*, f(x*))`` or ``(nan, 0.0)`` when ``fun`` vanishes on the grid.
    """
    xs = np.geomspace(lo, hi, grid)
    vals = np.array([fun(x) for x in xs])
    i = int(np.argmax(vals))
    if not vals[i] > 0:
        return math.nan, 0.0
    if i == 0 or i == grid - 1:
        a = xs[max(i - 1, 0)]
        b = xs[min(i + 1, grid - 1)]
        res = minimize_scalar(lambda x: -fun(x), bounds=(a, b), method="bounded", options={"xatol": tol / 4})
    else:
        # interior bracket from the grid guarantees golden section converges to it
        res = minimize_scalar(
            lambda x: -fun(x), bracket=(xs[i - 1], xs[i], xs[i + 1]), method="golden",
            options={"xtol": tol / 4 / xs[i]},
        )
    x = float(res.x)
    fx = fun(x)
    if fx < vals[i]:
        return float(xs[i]), float(vals[i])
    return x, float(fx)


def rate_at(scheme: str, mu: float, l, channel: ChannelParams, **kw) -> RateBreakdown:
    if scheme == "mp":
        return mp_rate(mu, l, channel)
    if scheme == "mdi":
        return mdi_rate(mu, channel)
    if scheme == "bb84":
        return bb84_rate(mu, channel)
    if scheme == "pm":
        return pm_rate(mu, channel)
    if scheme == "sns":
        return sns_rate(mu, kw.get("p_z0", 0.5), channel)
    raise ValueError(f"unknown scheme {scheme!r}")


def optimize_intensity(scheme: str, l, channel: ChannelParams, mu_upper: float = MU_UPPER):
    """Best intensity and its rate, ``(mu*, R*)``; ``(nan, 0.0)`` if nothing is positive.

    For ``sns`` the vacuum probability is optimised in an outer search and
    the returned breakdown records it; the tuple is then
    ``(mu*, R*, p_z0*)``.
    """
    if scheme == "sns":
        def best_mu(p_z0):
            return _golden_max(lambda m: sns_rate(m, p_z0, channel).rate, 1e-4, mu_upper)

        p_best, r_best = _golden_max(lambda q: best_mu(q)[1], 1e-3, 0.999)
        if math.isnan(p_best):
            return math.nan, 0.0, math.nan
        mu_best, r_best = best_mu(p_best)
        return mu_best, r_best, p_best
    return _golden_max(lambda m: rate_at(scheme, m, l, channel).rate, 1e-4, mu_upper)


def optimized_rate(scheme: str, l, channel: ChannelParams) -> RateBreakdown:
    """Breakdown at the optimal intensity (zero-rate breakdown if none is positive)."""
    found = optimize_intensity(scheme, l, channel)
    mu = found[0]
    if math.isnan(mu):
        return RateBreakdown(scheme, math.nan, 0.0, 0.0, l=l)
    kw = {"p_z0": found[2]} if scheme == "sns" else {}
    return rate_at(scheme, mu, l, channel, **kw)


SWEEP_COLUMNS = ("scheme", "l", "distance_km", "loss_db", "mu", "p", "r_p", "r_s", "q11", "e11x", "ez", "rate")


def sweep(schemes, distances, l_values, channel: ChannelParams, optimize: bool = True,
          mu: float = 0.5, include_plob: bool = True, threads: int = 1) -> list[dict]:
    """Rate table over schemes x pairing intervals x distances.

    ``l_values`` only multiplies the ``mp`` rows.  Output order is fixed
    (scheme, l, distance) whatever the thread count.
    """
    distances = [float(d) for d in distances]
    if any(b <= a for a, b in zip(distances, distances[1:])):
        raise ValueError("distance grid must be strictly increasing")
    jobs = []
    for scheme in schemes:
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        for l in (l_values if scheme == "mp" else [math.nan]):
            for d in distances:
                jobs.append((scheme, l, d))

    def run(job):
        scheme, l, d = job
        ch = channel.at_distance(d)
        if optimize:
            br = optimized_rate(scheme, l, ch)
        else:
            br = rate_at(scheme, mu, l, ch)
        return {
            "scheme": scheme, "l": l, "distance_km": d, "loss_db": ch.loss_db, "mu": br.mu,
            "p": br.p, "r_p": br.r_p, "r_s": br.r_s, "q11": br.q11, "e11x": br.e11x,
            "ez": br.ez, "rate": br.rate,
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    if include_plob:
        for d in distances:
            ch = channel.at_distance(d)
            rows.append({
                "scheme": "plob", "l": math.nan, "distance_km": d, "loss_db": ch.loss_db,
                "mu": math.nan, "p": math.nan, "r_p": math.nan, "r_s": math.nan, "q11": math.nan,
                "e11x": math.nan, "ez": math.nan, "rate": plob_bound(ch.fiber_transmittance),
            })
    return rows


__all__ = [
    "RateBreakdown", "binary_entropy", "bessel_i0", "plob_bound", "mp_rate", "mdi_rate",
    "bb84_rate", "pm_rate", "sns_rate", "optimize_intensity", "optimized_rate", "sweep",
    "UNLIMITED", "SCHEMES", "SWEEP_COLUMNS",
]
