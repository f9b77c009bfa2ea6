"""Clock-offset recovery from two time-tag streams.

The estimator histograms Alice-minus-Bob arrival-time differences inside a
search window, fits a Gaussian to the correlation peak, and validates the
fit against the expected system jitter.  Sign convention: the recovered
``tau_hat`` is the peak of (t_A - t_B), i.e. the amount to add to Bob's tags
to align him with Alice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import curve_fit

from .timetags import PS_PER_S, TimeTagSeries, affine_time_map


class FitError(RuntimeError):
    """Raised when the peak fit cannot converge or has no usable window."""


@dataclass(frozen=True)
class CorrelatorParams:
    """Tunable constants of the offset-recovery algorithm."""

    bin_width_ps: int = 100
    window_ps: tuple[int, int] = (-1_000_000, 1_000_000)
    expected_sigma_ps: float = 405.0
    width_accept_low: float = 0.5
    width_accept_high: float = 2.0
    height_min_sigmas: float = 5.0
    coincidence_sigmas: float = 3.0

    def __post_init__(self):
        lo, hi = self.window_ps
        if self.bin_width_ps <= 0:
            raise ValueError("bin width must be positive")
        if hi <= lo:
            raise ValueError("window must be a non-empty interval")
        if (hi - lo) % self.bin_width_ps != 0:
            raise ValueError("bin width must divide the window span exactly")
        if self.expected_sigma_ps <= 0:
            raise ValueError("expected sigma must be positive")


@dataclass(frozen=True)
class CorrelationHistogram:
    """Counts of arrival-time differences in uniform, left-closed bins."""

    counts: np.ndarray
    bin_width_ps: int
    window_ps: tuple[int, int]

    def __post_init__(self):
        lo, hi = self.window_ps
        if (hi - lo) % self.bin_width_ps != 0:
            raise ValueError("bin width must divide the window span exactly")
        if (hi - lo) // self.bin_width_ps != len(self.counts):
            raise ValueError("count array does not match window/bin geometry")
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    @property
    def bin_centers(self) -> np.ndarray:
        lo, _ = self.window_ps
        return lo + self.bin_width_ps * (np.arange(self.n_bins) + 0.5)

    def to_rows(self):
        """(bin_center_ps, count) rows for CSV export."""
        return zip(self.bin_centers, self.counts.tolist())


@dataclass(frozen=True)
class PeakFit:
    tau_hat_ps: float
    sigma_tau_ps: float
    amplitude: float
    baseline: float
    fit_rmse: float

    def __post_init__(self):
        if self.sigma_tau_ps <= 0:
            raise ValueError("fitted sigma must be positive")
        if self.amplitude < 0:
            raise ValueError("fitted amplitude must be non-negative")


@dataclass(frozen=True)
class CorrelationResult:
    fit: Optional[PeakFit]
    n_coincidences: float
    n_accidentals: float
    n_true: float
    sem_ps: Optional[float]
    success: bool
    failure_reason: Optional[str] = None

    def to_dict(self) -> dict:
        d = {
            "success": self.success,
            "n_coincidences": self.n_coincidences,
            "n_accidentals": self.n_accidentals,
            "n_true": self.n_true,
            "sem_ps": self.sem_ps,
            "failure_reason": self.failure_reason,
        }
        if self.fit is not None:
            d.update(
                tau_hat_ps=self.fit.tau_hat_ps,
                sigma_tau_ps=self.fit.sigma_tau_ps,
                amplitude=self.fit.amplitude,
                baseline=self.fit.baseline,
                fit_rmse=self.fit.fit_rmse,
            )
        return d


def combine_jitter(sigmas_ps) -> float:
    """Quadrature sum of independent timing-jitter contributions."""
    sigmas = list(sigmas_ps)
    if any(s < 0 for s in sigmas):
        raise ValueError("jitter contributions must be >= 0")
    return math.sqrt(sum(s * s for s in sigmas))


def neighbor_differences(
    t_a: TimeTagSeries | np.ndarray,
    t_b: TimeTagSeries | np.ndarray,
    window_ps: tuple[int, int],
    chunk: int = 1 << 20,
) -> np.ndarray:
    """All cross differences a - b that land inside the half-open window.

    Equivalent to enumerating every (a, b) pair and keeping differences in
    [lo, hi), but runs as a two-pointer window sweep over the sorted arrays.
    Bob's tags are processed in chunks; the concatenated output is identical
    for any chunk size.
    """
    a = t_a.tags if isinstance(t_a, TimeTagSeries) else np.asarray(t_a, dtype=np.int64)
    b = t_b.tags if isinstance(t_b, TimeTagSeries) else np.asarray(t_b, dtype=np.int64)
    lo, hi = window_ps
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise ValueError("window must be a finite non-empty interval")
    if a.size == 0 or b.size == 0:
        return np.empty(0, dtype=np.int64)
    out = []
    for start in range(0, b.size, chunk):
        bc = b[start:start + chunk]
        left = np.searchsorted(a, bc + lo, side="left")
        right = np.searchsorted(a, bc + hi, side="left")
        counts = right - left
        total = int(counts.sum())
        if total == 0:
            continue
        offsets = np.cumsum(counts) - counts
        flat = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts) + np.repeat(left, counts)
        out.append(a[flat] - np.repeat(bc, counts))
    if not out:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(out)


def build_histogram(diffs: np.ndarray, bin_width_ps: int, window_ps: tuple[int, int]) -> CorrelationHistogram:
    """Histogram differences into left-closed bins covering the window."""
    lo, hi = window_ps
    if bin_width_ps <= 0:
        raise ValueError("bin width must be positive")
    if (hi - lo) % bin_width_ps != 0:
        raise ValueError("bin width must divide the window span exactly")
    n_bins = (hi - lo) // bin_width_ps
    diffs = np.asarray(diffs, dtype=np.int64)
    in_range = diffs[(diffs >= lo) & (diffs < hi)]
    idx = (in_range - lo) // bin_width_ps
    counts = np.bincount(idx, minlength=n_bins)
    return CorrelationHistogram(counts, bin_width_ps, (lo, hi))


def _gauss(x, amplitude, mu, sigma, baseline):
    return baseline + amplitude * np.exp(-0.5 * ((x - mu) / sigma) ** 2)


def fit_gaussian_peak(hist: CorrelationHistogram, max_expansions: int = 3,
                      window_bins: int = 20) -> PeakFit:
    """Least-squares Gaussian + flat baseline fit around the maximum bin.

    The window starts at +-window_bins around the first maximum (default
    twenty bins, i.e. ten initial sigmas) and doubles while the fitted peak
    spills outside it.  Raises FitError if the optimizer cannot converge.
    """
    counts = hist.counts
    if counts.sum() == 0:
        raise FitError("empty histogram")
    centers = hist.bin_centers
    peak_idx = int(np.argmax(counts))  # first maximal bin: deterministic tie-break
    width = hist.bin_width_ps
    median = float(np.median(counts))
    p0 = [max(float(counts[peak_idx]) - median, 1e-3), centers[peak_idx], 2.0 * width, median]

    half = max(int(window_bins), 5)
    last_err: Exception | None = None
    for _ in range(max_expansions + 1):
        sl = slice(max(0, peak_idx - half), min(len(counts), peak_idx + half + 1))
        x = centers[sl]
        y = counts[sl].astype(np.float64)
        if x.size < 5:
            half *= 2
            continue
        try:
            popt, _ = curve_fit(
                _gauss, x, y, p0=p0,
                bounds=([0.0, x[0], width / 10.0, 0.0],
                        [np.inf, x[-1], (x[-1] - x[0]), np.inf]),
                maxfev=5000,
            )
        except (RuntimeError, ValueError) as err:
            last_err = err
            break
        amplitude, mu, sigma, baseline = popt
        if 3.0 * sigma <= half * width or half >= len(counts):
            resid = _gauss(x, *popt) - y
            rmse = float(np.sqrt(np.mean(resid**2)))
            return PeakFit(float(mu), float(abs(sigma)), float(amplitude), float(baseline), rmse)
        half *= 2
        p0 = list(popt)
    raise FitError(f"peak fit did not converge: {last_err}")


def estimate_accidentals(hist: CorrelationHistogram, peak_window_ps: tuple[float, float]) -> float:
    """Accidental count expected inside the peak window.

    Mean sideband bin count (all bins outside the window) scaled by the
    number of bins the window covers.
    """
    lo, hi = peak_window_ps
    wlo, whi = hist.window_ps
    if lo <= wlo or hi >= whi:
        raise ValueError("peak window must lie strictly inside the histogram range")
    centers = hist.bin_centers
    inside = (centers >= lo) & (centers <= hi)
    n_inside = int(inside.sum())
    if n_inside == 0 or n_inside == hist.n_bins:
        raise ValueError("peak window must cover some but not all bins")
    sideband_mean = float(hist.counts[~inside].mean())
    return sideband_mean * n_inside


def recover_offset(
    t_a: TimeTagSeries,
    t_b: TimeTagSeries,
    params: CorrelatorParams,
) -> CorrelationResult:
    """Run the full offset-recovery chain and validate the result.

    Success requires a converged fit whose width lies within the configured
    band around the expected system jitter and whose amplitude clears the
    baseline by ``height_min_sigmas`` Poisson sigmas.
    """
    diffs = neighbor_differences(t_a, t_b, params.window_ps)
    hist = build_histogram(diffs, params.bin_width_ps, params.window_ps)

    def failure(reason: str, fit: Optional[PeakFit] = None) -> CorrelationResult:
        return CorrelationResult(fit, 0.0, 0.0, 0.0, None, False, reason)

    # initial fit window always spans the expected peak width
    window_bins = max(20, math.ceil(4 * params.expected_sigma_ps / params.bin_width_ps))
    try:
        fit = fit_gaussian_peak(hist, window_bins=window_bins)
    except FitError as err:
        return failure(str(err))

    k = params.coincidence_sigmas
    window = (fit.tau_hat_ps - k * fit.sigma_tau_ps, fit.tau_hat_ps + k * fit.sigma_tau_ps)
    try:
        n_ac = estimate_accidentals(hist, window)
    except ValueError as err:
        return failure(f"peak window unusable: {err}", fit)
    centers = hist.bin_centers
    inside = (centers >= window[0]) & (centers <= window[1])
    n_c = float(hist.counts[inside].sum())
    n_t = max(n_c - n_ac, 0.0)
    sem = fit.sigma_tau_ps / math.sqrt(n_t) if n_t > 0 else None

    width_ok = (
        params.width_accept_low * params.expected_sigma_ps
        <= fit.sigma_tau_ps
        <= params.width_accept_high * params.expected_sigma_ps
    )
    # total peak height must clear the baseline by height_min_sigmas Poisson
    # sigmas of a baseline bin
    height_ok = fit.amplitude > params.height_min_sigmas * math.sqrt(max(fit.baseline, 0.0))
    reason = None
    if not width_ok:
        reason = f"fitted width {fit.sigma_tau_ps:.1f} ps outside accepted band"
    elif not height_ok:
        reason = "peak amplitude not significant above baseline"
    return CorrelationResult(fit, n_c, n_ac, n_t, sem, width_ok and height_ok, reason)


def correct_tags(t_b: TimeTagSeries, tau_ps: float, delta_u: float) -> TimeTagSeries:
    """Align Bob to Alice: t' = (t + tau) * (1 + delta_u)."""
    return TimeTagSeries(affine_time_map(t_b.tags, tau_ps, delta_u), t_b.acquisition_time_s)


def estimate_drift(tau_i_ps: float, tau_next_ps: float, acquisition_time_s: float) -> float:
    """Fractional frequency drift from successive offset measurements."""
    if acquisition_time_s <= 0:
        raise ValueError("acquisition time must be positive")
    return (tau_next_ps - tau_i_ps) / (acquisition_time_s * PS_PER_S)
