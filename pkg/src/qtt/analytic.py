"""Closed-form performance model for the offset-recovery algorithm.

Predicts the drift-smeared correlation signal, its peak, the accidental
floor, and the probability that the true peak beats the largest accidental
peak (an order-statistic bound), plus the threshold channel efficiency that
sustains a target success probability.  Everything here is cross-validated
against numeric quadrature and Monte Carlo elsewhere in the test suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf, erfc, erfcinv

from .timetags import PS_PER_S

# Below this drift-span-to-jitter ratio the smeared signal is replaced by its
# zero-drift Gaussian limit: the residual peak shift (span/2 < 1e-5 sigma) is
# negligible and the erf difference would start to cancel in the tails.
_SMALL_DRIFT = 1e-5


@dataclass(frozen=True)
class AnalyticScenario:
    """Inputs of the closed-form model.

    ``eta_a``/``eta_b`` are the per-arm optical efficiencies *excluding*
    heralding, which enters squared on its own.  ``noise_a_cps`` and
    ``noise_b_cps`` are the observed uncorrelated singles rates at each
    receiver.  Dead-time efficiencies are measured from simulated streams;
    there is no closed form for them here.
    """

    n_pair: float
    eta_herald: float
    eta_a: float
    eta_b: float
    sigma_tau_ps: float
    acquisition_time_s: float = 1.0
    delta_u: float = 0.0
    bin_width_ps: float = 100.0
    noise_a_cps: float = 0.0
    noise_b_cps: float = 0.0
    eta_dead_a: float = 1.0
    eta_dead_b: float = 1.0
    n_order: int = 14

    def __post_init__(self):
        for name in ("eta_herald", "eta_a", "eta_b", "eta_dead_a", "eta_dead_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.n_order < 1:
            raise ValueError("n_order must be >= 1")
        if self.sigma_tau_ps <= 0:
            raise ValueError("sigma_tau_ps must be positive")

    @property
    def drift_span_ps(self) -> float:
        return self.acquisition_time_s * self.delta_u * PS_PER_S


def true_coincidences(s: AnalyticScenario) -> float:
    """Expected detected true-coincidence count for one acquisition."""
    return (
        s.n_pair * s.eta_herald**2 * s.eta_a * s.eta_b * s.eta_dead_a * s.eta_dead_b
    )


def _erf_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """erf(a) - erf(b), stable in the tails where both operands saturate."""
    both_pos = (a > 0) & (b > 0)
    both_neg = (a < 0) & (b < 0)
    out = erf(a) - erf(b)
    out = np.where(both_pos, erfc(b) - erfc(a), out)
    out = np.where(both_neg, erfc(-a) - erfc(-b), out)
    return out


def signal_curve(tau_ps, s: AnalyticScenario, n_true: float | None = None):
    """Expected true-coincidence counts per bin at difference tau.

    Integrating the drift-shifted Gaussian arrival-difference density over
    the acquisition gives an erf-difference profile; for vanishing drift it
    reduces continuously to a Gaussian of the system jitter.
    """
    n_t = true_coincidences(s) if n_true is None else n_true
    tau = np.asarray(tau_ps, dtype=np.float64)
    sigma = s.sigma_tau_ps
    span = s.drift_span_ps
    if abs(span) < _SMALL_DRIFT * sigma:
        gauss = np.exp(-0.5 * (tau / sigma) ** 2)
        out = n_t * s.bin_width_ps / (sigma * math.sqrt(2 * math.pi)) * gauss
    else:
        root2s = math.sqrt(2.0) * sigma
        diff = _erf_diff(tau / root2s, (tau - span) / root2s)
        out = n_t * s.bin_width_ps / (2.0 * span) * diff
    return float(out) if np.isscalar(tau_ps) else out


def peak(s: AnalyticScenario, n_true: float | None = None) -> tuple[float, float]:
    """Location (ps) and height (counts/bin) of the smeared signal peak."""
    n_t = true_coincidences(s) if n_true is None else n_true
    sigma = s.sigma_tau_ps
    span = s.drift_span_ps
    tau_peak = span / 2.0
    x = span / (2.0 * math.sqrt(2.0) * sigma)
    if abs(x) < 1e-8:
        s_peak = n_t * s.bin_width_ps / (sigma * math.sqrt(2.0 * math.pi))
    else:
        s_peak = n_t * s.bin_width_ps / span * erf(x)
    return tau_peak, float(s_peak)


def drift_bound(sigma_tau_ps: float, acquisition_time_s: float) -> float:
    """Largest fractional drift keeping the peak within 99% of its no-drift
    height."""
    if sigma_tau_ps <= 0 or acquisition_time_s <= 0:
        raise ValueError("inputs must be positive")
    return sigma_tau_ps / (2.0 * acquisition_time_s * PS_PER_S)


def accidental_mean(noise_a_cps: float, noise_b_cps: float, bin_width_ps: float,
                    acquisition_time_s: float) -> float:
    """Mean accidental coincidences per histogram bin.

    Product of the two uncorrelated singles counts collected over the
    acquisition, diluted by the bin-to-acquisition duration ratio.
    """
    if noise_a_cps < 0 or noise_b_cps < 0:
        raise ValueError("rates must be >= 0")
    return noise_a_cps * noise_b_cps * (bin_width_ps / PS_PER_S) * acquisition_time_s


def noise_peak_cdf(height, mu_b: float):
    """CDF of a single accidental bin height, Gaussian with sigma = sqrt(mean)."""
    sigma_b = math.sqrt(mu_b)
    return 0.5 * erfc((mu_b - np.asarray(height, dtype=np.float64)) / (math.sqrt(2.0) * sigma_b))


def prob_success(s_peak: float, mu_b: float, n_order: int) -> float:
    """Probability that the signal peak exceeds the largest of the accidental
    peaks, i.e. the n'th order statistic of the noise-height distribution
    evaluated up to the signal height."""
    if n_order < 1:
        raise ValueError("n_order must be >= 1")
    if mu_b < 0:
        raise ValueError("mu_b must be >= 0")
    if mu_b == 0.0:
        return 1.0 if s_peak > 0 else 0.0
    p = float(noise_peak_cdf(s_peak, mu_b) ** n_order - noise_peak_cdf(0.0, mu_b) ** n_order)
    return min(max(p, 0.0), 1.0)


def _peak_per_eta_b(s: AnalyticScenario) -> float:
    """Signal peak height (counts/bin) per unit of Bob channel efficiency."""
    return peak(replace(s, eta_b=1.0))[1]


def threshold_expansion_coefficients(p_target: float, s: AnalyticScenario) -> tuple[float, float]:
    """(c2, c1) of the small-noise expansion eta_b = c2*sqrt(N_b) + c1*N_b.

    Obtained by Taylor-expanding the inverted success probability in the
    accidental level and converting the required peak height into a channel
    efficiency.  Raises ValueError when the inverse-erfc argument leaves
    (0, 2), i.e. when no finite threshold exists for the requested target.
    """
    if not 0.0 < p_target < 1.0:
        raise ValueError("target probability must be in (0, 1)")
    n = s.n_order
    big_p = 1.0 + 2.0**n * p_target
    arg = big_p ** (1.0 / n)
    if not 0.0 < arg < 2.0:
        raise ValueError(
            f"erfc-inverse argument {arg:.6f} outside (0, 2): "
            f"target {p_target} unreachable at order {n}"
        )
    q0 = float(erfcinv(arg))
    k = s.noise_a_cps * (s.bin_width_ps / PS_PER_S) * s.acquisition_time_s
    s1 = _peak_per_eta_b(s)
    c2 = -math.sqrt(2.0 * k) * q0 / s1
    c1 = k * (1.0 - math.exp(q0 * q0) * arg / big_p) / s1
    return c2, c1


def threshold_attenuation(p_target: float, noise_b_cps: float, s: AnalyticScenario) -> float:
    """Bob channel efficiency sustaining the target success probability,
    from the two-term small-noise expansion."""
    c2, c1 = threshold_expansion_coefficients(p_target, s)
    return c2 * math.sqrt(noise_b_cps) + c1 * noise_b_cps


def threshold_attenuation_exact(p_target: float, noise_b_cps: float, s: AnalyticScenario) -> float:
    """Bob channel efficiency at the target success probability by direct
    numeric inversion; validates the Taylor expansion."""
    if not 0.0 < p_target < 1.0:
        raise ValueError("target probability must be in (0, 1)")
    mu_b = accidental_mean(s.noise_a_cps, noise_b_cps, s.bin_width_ps, s.acquisition_time_s)
    s1 = _peak_per_eta_b(s)

    def gap(log_eta: float) -> float:
        return prob_success(s1 * 10.0**log_eta, mu_b, s.n_order) - p_target

    lo, hi = -12.0, 0.0
    if gap(hi) < 0:
        raise ValueError("target probability unreachable even at unit efficiency")
    if gap(lo) > 0:
        return 10.0**lo
    return 10.0 ** brentq(gap, lo, hi, xtol=1e-12)
