"""Monte Carlo experiment harness.

Runs end-to-end synthesize-and-recover trials, aggregates success
probabilities over (attenuation x background) grids, samples the offset
error distribution, simulates continuous tracking runs, and computes the
overlapping Allan deviation of the recovered offset series.

Trials and grid cells are embarrassingly parallel; every work unit derives
its seed from (master seed, cell index, trial index), so results are
identical for any worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .config import Scenario
from .correlator import recover_offset
from .timetags import PS_PER_S, ClockModel, build_bob_stream, derive_seed

# Namespace constants keep seed streams of different harness entry points
# disjoint under a shared master seed.
_NS_TRIAL = 101
_NS_SWEEP = 102
_NS_SEM = 103
_NS_TRACK = 104


@dataclass(frozen=True)
class TrialResult:
    """Outcome of one synthesize-and-recover trial."""

    flag_success: bool
    scored_success: bool
    tau_hat_ps: Optional[float]
    sigma_tau_ps: Optional[float]
    n_true: float
    n_coincidences: float
    n_accidentals: float
    sem_ps: Optional[float]
    expected_peak_ps: float
    truth_n_true: int
    eta_dead_alice: float
    eta_dead_bob: float
    alice_singles: int
    bob_singles: int


def run_single_trial(scenario: Scenario, seed: int) -> TrialResult:
    """One acquisition: build both streams, recover the offset, score it."""
    alice, bob, truth = build_bob_stream(scenario, seed)
    result = recover_offset(alice, bob, scenario.correlator_params())
    tolerance = scenario.success_tolerance_ps or scenario.sigma_sys_ps
    tau_hat = result.fit.tau_hat_ps if result.fit is not None else None
    scored = bool(
        result.success
        and tau_hat is not None
        and abs(tau_hat - truth.expected_peak_ps) <= tolerance
    )
    return TrialResult(
        flag_success=result.success,
        scored_success=scored,
        tau_hat_ps=tau_hat,
        sigma_tau_ps=result.fit.sigma_tau_ps if result.fit is not None else None,
        n_true=result.n_true,
        n_coincidences=result.n_coincidences,
        n_accidentals=result.n_accidentals,
        sem_ps=result.sem_ps,
        expected_peak_ps=truth.expected_peak_ps,
        truth_n_true=truth.n_true_coincidences,
        eta_dead_alice=truth.eta_dead_alice,
        eta_dead_bob=truth.eta_dead_bob,
        alice_singles=len(alice),
        bob_singles=len(bob),
    )


def _trial_star(args) -> TrialResult:
    scenario, seed = args
    return run_single_trial(scenario, seed)


def _map_jobs(fn, tasks, jobs: int):
    """Map tasks preserving order; processes when jobs > 1."""
    tasks = list(tasks)
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (jobs * 8))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def run_trials(scenario: Scenario, trials: int, seed: int, jobs: int = 1) -> list[TrialResult]:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    tasks = [(scenario, derive_seed(seed, _NS_TRIAL, t)) for t in range(trials)]
    return _map_jobs(_trial_star, tasks, jobs)


def success_probability(scenario: Scenario, trials: int, seed: int,
                        jobs: int = 1) -> tuple[float, float]:
    """Fraction of trials whose recovered offset matches the ground truth,
    plus the mean measured true-coincidence count."""
    results = run_trials(scenario, trials, seed, jobs)
    p_hat = sum(r.scored_success for r in results) / len(results)
    mean_nt = float(np.mean([r.n_true for r in results]))
    return p_hat, mean_nt


# --- 2D parameter sweep ----------------------------------------------------


@dataclass(frozen=True)
class SweepGrid:
    attenuations_db: tuple[float, ...]
    backgrounds_cps: tuple[float, ...]
    trials_per_cell: int
    success_prob: np.ndarray  # [n_attenuations, n_backgrounds]
    mean_n_true: np.ndarray

    def to_rows(self):
        """(attenuation_db, background_cps, p_success, mean_n_true) rows."""
        for i, att in enumerate(self.attenuations_db):
            for j, bg in enumerate(self.backgrounds_cps):
                yield att, bg, float(self.success_prob[i, j]), float(self.mean_n_true[i, j])


def _cell_star(args) -> tuple[float, float]:
    scenario, trials, cell_seed = args
    results = run_trials(scenario, trials, cell_seed, jobs=1)
    p_hat = sum(r.scored_success for r in results) / len(results)
    return p_hat, float(np.mean([r.n_true for r in results]))


def sweep(template: Scenario, attenuations_db: Sequence[float],
          backgrounds_cps: Sequence[float], trials: int, seed: int,
          jobs: int = 1) -> SweepGrid:
    """Cell-wise success probability over an attenuation x background grid."""
    if not attenuations_db or not backgrounds_cps:
        raise ValueError("grids must be non-empty")
    tasks = []
    for i, att in enumerate(attenuations_db):
        for j, bg in enumerate(backgrounds_cps):
            cell = template.with_bob_channel(attenuation_db=att, background_cps=bg)
            tasks.append((cell, trials, derive_seed(seed, _NS_SWEEP, i, j)))
    flat = _map_jobs(_cell_star, tasks, jobs)
    n_a, n_b = len(attenuations_db), len(backgrounds_cps)
    p = np.array([r[0] for r in flat]).reshape(n_a, n_b)
    nt = np.array([r[1] for r in flat]).reshape(n_a, n_b)
    return SweepGrid(tuple(attenuations_db), tuple(backgrounds_cps), trials, p, nt)


def threshold_attenuation_curve(grid: SweepGrid, level: float = 0.99
                                ) -> list[tuple[float, Optional[float]]]:
    """Deepest attenuation sustaining p >= level per background column.

    Interpolates linearly in dB against log(p) between the last passing cell
    and the next deeper cell; a column with no passing cell maps to None.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    order = np.argsort(grid.attenuations_db)[::-1]  # shallow -> deep
    atts = np.asarray(grid.attenuations_db)[order]
    curve: list[tuple[float, Optional[float]]] = []
    for j, bg in enumerate(grid.backgrounds_cps):
        p = np.asarray(grid.success_prob)[order, j]
        passing = np.flatnonzero(p >= level)
        if passing.size == 0:
            curve.append((bg, None))
            continue
        i = int(passing[-1])
        if i == len(atts) - 1:
            curve.append((bg, float(atts[i])))  # passes at the grid edge
            continue
        p_hi, p_lo = float(p[i]), float(max(p[i + 1], 1e-6))
        t = (math.log(level) - math.log(p_hi)) / (math.log(p_lo) - math.log(p_hi))
        curve.append((bg, float(atts[i] + t * (atts[i + 1] - atts[i]))))
    return curve


@dataclass(frozen=True)
class ThresholdFit:
    c2: float
    c1: float
    c0: float
    rms_db: float


def fit_threshold_model(curve: Sequence[tuple[float, Optional[float]]]) -> ThresholdFit:
    """Least-squares fit eta_th = c2*sqrt(N_b) + c1*N_b + c0 over a threshold
    curve, with residuals reported in dB."""
    pts = [(bg, th) for bg, th in curve if th is not None]
    if len(pts) < 3:
        raise ValueError("need at least three defined thresholds to fit")
    n_b = np.array([p[0] for p in pts])
    eta = 10.0 ** (np.array([p[1] for p in pts]) / 10.0)
    design = np.column_stack([np.sqrt(n_b), n_b, np.ones_like(n_b)])
    coef, *_ = np.linalg.lstsq(design, eta, rcond=None)
    fitted = design @ coef
    if np.any(fitted <= 0):
        raise ValueError("fitted thresholds non-positive; model inapplicable")
    rms_db = float(np.sqrt(np.mean((10.0 * np.log10(fitted / eta)) ** 2)))
    return ThresholdFit(float(coef[0]), float(coef[1]), float(coef[2]), rms_db)


# --- SEM sampling ------------------------------------------------------------


def refine_threshold(template: Scenario, background_cps: float, level: float = 0.99,
                     seed: int = 0, jobs: int = 1, start_db: float = -16.0,
                     step_db: float = 1.0, coarse_trials: int = 40,
                     refine_trials: int = 250, floor_db: float = -45.0,
                     bisections: int = 1) -> tuple[Optional[float], dict]:
    """Locate the deepest attenuation holding p >= level at one background.

    Walks the attenuation axis in coarse steps to bracket the drop, re-runs
    the bracketing cells with more trials, and interpolates in dB against
    log(p).  Returns (threshold_db, diagnostics); None if the level is never
    reached above the floor.
    """
    def p_at(att_db: float, trials: int) -> float:
        cell = template.with_bob_channel(attenuation_db=att_db,
                                         background_cps=background_cps)
        cell_seed = derive_seed(seed, _NS_SWEEP, int(round(att_db * 1000)), trials)
        p_hat, _ = success_probability(cell, trials, cell_seed, jobs=jobs)
        return p_hat

    coarse: dict[float, float] = {}
    att = start_db
    p = p_at(att, coarse_trials)
    coarse[att] = p
    while p < level:
        att += step_db
        if att > -step_db / 2:
            return None, {"coarse": coarse}
        p = p_at(att, coarse_trials)
        coarse[att] = p
    while att - step_db >= floor_db:
        p = p_at(att - step_db, coarse_trials)
        coarse[att - step_db] = p
        if p < level:
            break
        att -= step_db
    else:
        return float(att), {"coarse": coarse, "at_floor": True}

    hi_db, lo_db = att, att - step_db  # hi = shallower, still passing
    p_hi = p_lo = None
    for _ in range(6):
        p_hi = p_at(hi_db, refine_trials)
        p_lo = p_at(lo_db, refine_trials)
        if p_hi < level:
            hi_db, lo_db = hi_db + step_db, hi_db
            continue
        if p_lo >= level:
            hi_db, lo_db = lo_db, lo_db - step_db
            continue
        break
    else:
        return None, {"coarse": coarse, "bracket_failed": True}
    # bisect: the drop is steep, and a saturated p_hi = 1.0 otherwise snaps
    # the interpolation to the shallow edge of the bracket
    for _ in range(max(bisections, 0)):
        mid_db = (hi_db + lo_db) / 2.0
        p_mid = p_at(mid_db, refine_trials)
        if p_mid >= level:
            hi_db, p_hi = mid_db, p_mid
        else:
            lo_db, p_lo = mid_db, p_mid
    p_lo = max(p_lo, 1e-6)
    t = (math.log(level) - math.log(p_hi)) / (math.log(p_lo) - math.log(p_hi))
    threshold = hi_db + t * (lo_db - hi_db)
    return float(threshold), {"coarse": coarse, "bracket": (hi_db, p_hi, lo_db, p_lo)}


def calibrated_analytic_scenario(scenario: Scenario, n_order: int = 14,
                                 trials: int = 3, seed: int = 0, jobs: int = 1):
    """Analytic-model inputs for one channel condition.

    Dead-time efficiencies and the observed singles rates have no closed
    form here; they are measured from a few simulated streams.
    """
    from .analytic import AnalyticScenario

    results = run_trials(scenario, trials, seed, jobs=jobs)
    noise_a = float(np.mean([r.alice_singles for r in results])) / scenario.acquisition_time_s
    noise_b = float(np.mean([r.bob_singles for r in results])) / scenario.acquisition_time_s
    return AnalyticScenario(
        n_pair=scenario.pair_rate_cps * scenario.acquisition_time_s,
        eta_herald=scenario.eta_herald,
        eta_a=scenario.alice.eta_channel,
        eta_b=scenario.bob.eta_channel,
        sigma_tau_ps=scenario.sigma_sys_ps,
        acquisition_time_s=scenario.acquisition_time_s,
        delta_u=scenario.clock.drift,
        bin_width_ps=scenario.bin_width_ps,
        noise_a_cps=noise_a,
        noise_b_cps=noise_b,
        eta_dead_a=float(np.mean([r.eta_dead_alice for r in results])),
        eta_dead_b=float(np.mean([r.eta_dead_bob for r in results])),
        n_order=n_order,
    )


class SemSamplingError(RuntimeError):
    """Scenario too lossy/noisy for a meaningful sampling distribution."""


@dataclass(frozen=True)
class SemResult:
    sem_measured_ps: float
    sem_formula_ps: float
    n_success: int
    n_runs: int
    mean_n_true: float
    tau_hats_ps: np.ndarray


def sem_sampling(scenario: Scenario, n_runs: int = 1000, seed: int = 0,
                 jobs: int = 1, min_success_fraction: float = 0.9) -> SemResult:
    """Sampling distribution of the offset estimate at fixed channel
    conditions: measured std of tau_hat across runs versus the per-run
    sigma_tau/sqrt(N_T) prediction."""
    tasks = [(scenario, derive_seed(seed, _NS_SEM, t)) for t in range(n_runs)]
    results = _map_jobs(_trial_star, tasks, jobs)
    good = [r for r in results if r.scored_success]
    if len(good) < min_success_fraction * n_runs:
        raise SemSamplingError(
            f"only {len(good)}/{n_runs} runs succeeded; "
            "use an easier scenario (less loss or noise)")
    taus = np.array([r.tau_hat_ps for r in good])
    sems = np.array([r.sem_ps for r in good if r.sem_ps is not None])
    return SemResult(
        sem_measured_ps=float(np.std(taus, ddof=1)),
        sem_formula_ps=float(np.mean(sems)),
        n_success=len(good),
        n_runs=n_runs,
        mean_n_true=float(np.mean([r.n_true for r in good])),
        tau_hats_ps=taus,
    )


# --- continuous tracking and Allan deviation ---------------------------------


@dataclass(frozen=True)
class OffsetSeries:
    """Recovered offsets of back-to-back acquisitions; NaN marks a failed one."""

    taus_ps: np.ndarray
    acquisition_time_s: float
    true_taus_ps: np.ndarray
    delta_u_effs: np.ndarray

    def __len__(self) -> int:
        return int(self.taus_ps.size)


def continuous_tracking(scenario: Scenario, n_acquisitions: int,
                        clock: Optional[ClockModel] = None, seed: int = 0,
                        jobs: int = 1, feedback: bool = False) -> OffsetSeries:
    """Simulate successive acquisitions under an evolving clock.

    The true offset accumulates by the per-window effective drift, which is
    redrawn each window as Gaussian(drift, freq_jitter).  With ``feedback``
    the measured offset and drift estimate are fed back onto Bob's clock
    after every acquisition (runs serially in that case).
    """
    if n_acquisitions < 2:
        raise ValueError("need at least two acquisitions")
    clock = clock if clock is not None else scenario.clock
    rng = np.random.default_rng(derive_seed(seed, _NS_TRACK, 0))
    du_effs = rng.normal(clock.drift, clock.freq_jitter, size=n_acquisitions)
    span_ps = scenario.acquisition_time_s * PS_PER_S

    true_taus = np.empty(n_acquisitions)
    tau = clock.offset_ps
    for i, du in enumerate(du_effs):
        true_taus[i] = tau
        tau = tau * (1.0 + du) + du * span_ps

    def acq_scenario(i: int, offset_ps: float) -> Scenario:
        return replace(scenario, clock=ClockModel(
            offset_ps=offset_ps, drift=float(du_effs[i]), freq_jitter=0.0))

    taus_hat = np.full(n_acquisitions, np.nan)
    if not feedback:
        tasks = [(acq_scenario(i, float(true_taus[i])), derive_seed(seed, _NS_TRACK, 1, i))
                 for i in range(n_acquisitions)]
        results = _map_jobs(_trial_star, tasks, jobs)
        for i, r in enumerate(results):
            if r.flag_success and r.tau_hat_ps is not None:
                taus_hat[i] = r.tau_hat_ps
    else:
        correction = 0.0
        drift_comp = 0.0
        prev_measured: Optional[float] = None
        for i in range(n_acquisitions):
            offset = true_taus[i] + correction
            r = run_single_trial(acq_scenario(i, offset),
                                 derive_seed(seed, _NS_TRACK, 1, i))
            if r.flag_success and r.tau_hat_ps is not None:
                taus_hat[i] = r.tau_hat_ps
                # Bob adds the measured offset to his clock and feeds the
                # drift estimate forward one window.
                correction += r.tau_hat_ps + drift_comp * span_ps
                if prev_measured is not None:
                    drift_comp = (r.tau_hat_ps - prev_measured) / span_ps
                prev_measured = r.tau_hat_ps
            else:
                prev_measured = None
    return OffsetSeries(taus_hat, scenario.acquisition_time_s, true_taus, du_effs)


@dataclass(frozen=True)
class AdevCurve:
    integration_times_s: np.ndarray
    sigma_y: np.ndarray

    def to_rows(self):
        return zip(self.integration_times_s.tolist(), self.sigma_y.tolist())


def overlapping_adev(series: OffsetSeries | np.ndarray, max_m: Optional[int] = None,
                     tau0_s: Optional[float] = None) -> AdevCurve:
    """Overlapping Allan deviation of the recovered-offset phase series.

    NaN samples (failed acquisitions) drop every second-difference term that
    touches them; the normalization counts only valid terms.
    """
    if isinstance(series, OffsetSeries):
        x = series.taus_ps * 1e-12
        tau0 = series.acquisition_time_s
    else:
        x = np.asarray(series, dtype=np.float64)
        if tau0_s is None:
            raise ValueError("tau0_s required for a bare phase array")
        tau0 = tau0_s
    n = x.size
    if n < 3:
        raise ValueError("need at least three samples")
    limit = (n - 1) // 2
    if max_m is None:
        max_m = limit
    if not 1 <= max_m <= limit:
        raise ValueError(f"max_m must be in [1, {limit}] for {n} samples")
    taus, sigmas = [], []
    for m in range(1, max_m + 1):
        d = x[2 * m:] - 2.0 * x[m:n - m] + x[:n - 2 * m]
        valid = np.isfinite(d)
        n_valid = int(valid.sum())
        if n_valid == 0:
            continue
        var = float(np.sum(d[valid] ** 2)) / (2.0 * m * m * tau0 * tau0 * n_valid)
        taus.append(m * tau0)
        sigmas.append(math.sqrt(var))
    return AdevCurve(np.array(taus), np.array(sigmas))
