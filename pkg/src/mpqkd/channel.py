"""Symmetric lossy channel with threshold detectors.

Alice and Bob sit at equal fibre distance from the measurement site, so a
single per-side transmittance ``eta_s`` (fibre times detector efficiency)
describes both arms.  Everything here is a pure function of an immutable
:class:`ChannelParams`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import poisson


@dataclass(frozen=True)
class ChannelParams:
    """Fibre and detector physics shared by the analytic and simulated paths."""

    fiber_loss_db_per_km: float = 0.2
    total_distance_km: float = 0.0
    detector_efficiency: float = 0.6
    dark_count_prob: float = 1e-8
    misalignment: float = 0.03
    error_correction_f: float = 1.1

    def __post_init__(self):
        checks = [
            (self.fiber_loss_db_per_km >= 0, "fiber_loss_db_per_km must be >= 0"),
            (self.total_distance_km >= 0, "total_distance_km must be >= 0"),
            (0 <= self.detector_efficiency <= 1, "detector_efficiency must lie in [0, 1]"),
            (0 <= self.dark_count_prob < 1, "dark_count_prob must lie in [0, 1)"),
            (0 <= self.misalignment <= 0.5, "misalignment must lie in [0, 0.5]"),
            (self.error_correction_f >= 1, "error_correction_f must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def loss_db(self) -> float:
        """Total fibre loss between Alice and Bob in dB."""
        return self.fiber_loss_db_per_km * self.total_distance_km

    @property
    def eta_s(self) -> float:
        return derive_transmittance(self)

    @property
    def eta(self) -> float:
        return self.eta_s**2

    @property
    def fiber_transmittance(self) -> float:
        """End-to-end fibre transmittance, detectors excluded."""
        return 10.0 ** (-self.loss_db / 10.0)

    def at_distance(self, distance_km: float) -> "ChannelParams":
        return replace(self, total_distance_km=float(distance_km))

    def with_loss_db(self, loss_db: float) -> "ChannelParams":
        """Same channel with the distance chosen to give ``loss_db`` of fibre loss."""
        if self.fiber_loss_db_per_km == 0:
            raise ValueError("cannot set a loss on a lossless fibre")
        return self.at_distance(loss_db / self.fiber_loss_db_per_km)


def derive_transmittance(params: ChannelParams) -> float:
    """Per-side transmittance: detector efficiency times half the fibre loss."""
    half_loss_db = params.fiber_loss_db_per_km * params.total_distance_km / 2.0
    return params.detector_efficiency * 10.0 ** (-half_loss_db / 10.0)


def click_prob_given_intensity(z_a, z_b, mu, params: ChannelParams):
    """Success probability of one round when Alice/Bob send ``z * mu``.

    Interference is averaged out, so only the total arriving intensity
    matters.  Works elementwise on arrays.
    """
    eta_s = params.eta_s
    p_d = params.dark_count_prob
    return 1.0 - (1.0 - 2.0 * p_d) * np.exp(-eta_s * mu * (np.asarray(z_a) + np.asarray(z_b)))


def click_prob_given_photons(n_a, n_b, params: ChannelParams):
    """Success probability when Alice and Bob emit ``n_a`` and ``n_b`` photons."""
    eta_s = params.eta_s
    p_d = params.dark_count_prob
    n = np.asarray(n_a) + np.asarray(n_b)
    return 1.0 - (1.0 - 2.0 * p_d) * (1.0 - eta_s) ** n


def avg_click_prob(mu: float, params: ChannelParams) -> float:
    """Average success probability ``p`` with each party sending 0 or ``mu`` evenly."""
    total = 0.0
    for z_a in (0, 1):
        for z_b in (0, 1):
            total += float(click_prob_given_intensity(z_a, z_b, mu, params))
    return total / 4.0


def poisson_pmf(k, mean):
    """Poisson probabilities, stable for ``mean == 0``."""
    k = np.asarray(k)
    mean = np.asarray(mean, dtype=float)
    return poisson.pmf(k, mean)


def poisson_cutoff(mean: float, tail: float) -> int:
    """Smallest ``k_max`` with ``Pr(K > k_max) < tail`` for ``K ~ Poisson(mean)``."""
    if mean <= 0:
        return 0
    k = int(math.ceil(mean))
    while poisson.sf(k, mean) >= tail:
        k += 1
    return k
