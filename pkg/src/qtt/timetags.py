"""Biphoton time-tag streams and the channel/clock transformations applied to them.

All detection times are signed 64-bit integer picoseconds since acquisition
start, which keeps histogram binning exact over multi-second spans.  Every
operation is a pure function of (inputs, seed): identical seeds reproduce
bit-identical streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:
    from .config import Scenario

PS_PER_S = 10**12


def derive_seed(master: int, *indices: int) -> int:
    """Derive a decorrelated 64-bit sub-seed from a master seed and index path.

    Deterministic across platforms and processes, so parallel and serial
    execution of seeded work units produce identical results.
    """
    mask = (1 << 64) - 1
    ss = np.random.SeedSequence(
        (int(master) & mask,) + tuple(int(i) & mask for i in indices))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TimeTagSeries:
    """Sorted detection timestamps (integer ps) for one party."""

    tags: np.ndarray
    acquisition_time_s: float

    def __post_init__(self):
        tags = np.asarray(self.tags, dtype=np.int64)
        object.__setattr__(self, "tags", tags)
        if tags.size > 1 and np.any(np.diff(tags) < 0):
            raise ValueError("time tags must be sorted non-decreasing")
        if self.acquisition_time_s <= 0:
            raise ValueError("acquisition time must be positive")

    def __len__(self) -> int:
        return int(self.tags.size)

    @property
    def span_ps(self) -> int:
        return int(round(self.acquisition_time_s * PS_PER_S))


@dataclass(frozen=True)
class ChannelParams:
    """Efficiency chain, noise and detector parameters for one receiver.

    ``eta_rec`` and ``eta_trans`` are 1.0 for a local (Alice-side) detector;
    the composite channel efficiency is the product of the four optical
    factors, and heralding multiplies on top for either arm.
    """

    eta_spec: float = 1.0
    eta_det: float = 1.0
    eta_rec: float = 1.0
    eta_trans: float = 1.0
    eta_herald: float = 1.0
    background_cps: float = 0.0
    dead_time_ps: float = 0.0
    jitter_det_ps: float = 0.0
    jitter_tt_ps: float = 0.0

    def __post_init__(self):
        for name in ("eta_spec", "eta_det", "eta_rec", "eta_trans", "eta_herald"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.background_cps < 0:
            raise ValueError("background_cps must be >= 0")
        if self.dead_time_ps < 0:
            raise ValueError("dead_time_ps must be >= 0")
        if self.jitter_det_ps < 0 or self.jitter_tt_ps < 0:
            raise ValueError("jitters must be >= 0")

    @property
    def eta_channel(self) -> float:
        """Optical chain without heralding (Bob's eta_ch when rec/trans are set)."""
        return self.eta_spec * self.eta_det * self.eta_rec * self.eta_trans

    @property
    def eta_total(self) -> float:
        """Per-arm detection probability including heralding."""
        return self.eta_channel * self.eta_herald

    @property
    def eta_background(self) -> float:
        """Fraction of the ambient background rate that reaches the detector.

        Background photons pass the receiver internals (spectral filter,
        detector, receiver optics) but not the path transmission, which
        applies only to the signal beam.
        """
        return self.eta_spec * self.eta_det * self.eta_rec

    @property
    def jitter_ps(self) -> float:
        """Quadrature sum of detector and tagger jitter for this receiver."""
        return math.hypot(self.jitter_det_ps, self.jitter_tt_ps)


@dataclass(frozen=True)
class ClockModel:
    """Relative clock state of Bob versus Alice.

    ``offset_ps`` is added to Bob's tags and ``drift`` scales them; the
    effective drift of one acquisition is drawn as Gaussian(drift, freq_jitter).
    """

    offset_ps: float = 0.0
    drift: float = 0.0
    freq_jitter: float = 0.0

    def __post_init__(self):
        if self.freq_jitter < 0:
            raise ValueError("freq_jitter must be >= 0")


@dataclass(frozen=True)
class GroundTruth:
    """Hidden truth record for scoring; never consumed by the correlator."""

    offset_ps: float
    delta_u_eff: float
    expected_peak_ps: float
    alice_pair_ids: np.ndarray
    bob_pair_ids: np.ndarray
    n_pairs_generated: int
    eta_dead_alice: float
    eta_dead_bob: float

    @property
    def n_true_coincidences(self) -> int:
        a = self.alice_pair_ids[self.alice_pair_ids >= 0]
        b = self.bob_pair_ids[self.bob_pair_ids >= 0]
        return int(np.intersect1d(a, b, assume_unique=True).size)


# --- elementary stream transforms ---------------------------------------


def generate_pair_stream(
    pair_rate_cps: float,
    acquisition_time_s: float,
    seed: int,
    fixed_count: bool = False,
) -> tuple[TimeTagSeries, TimeTagSeries]:
    """Generate one acquisition of ideal, identical Alice/Bob pair tags.

    Emission times are uniform over the acquisition; the pair count is
    Poisson-distributed with mean rate*T unless ``fixed_count`` pins it to
    round(rate*T) exactly.
    """
    if pair_rate_cps <= 0:
        raise ValueError("pair rate must be positive")
    if acquisition_time_s <= 0:
        raise ValueError("acquisition time must be positive")
    rng = np.random.default_rng(seed)
    mean = pair_rate_cps * acquisition_time_s
    n = int(round(mean)) if fixed_count else int(rng.poisson(mean))
    span = int(round(acquisition_time_s * PS_PER_S))
    tags = np.sort(rng.integers(0, span, size=n, dtype=np.int64))
    return (
        TimeTagSeries(tags, acquisition_time_s),
        TimeTagSeries(tags.copy(), acquisition_time_s),
    )


def _jitter_tags(tags: np.ndarray, sigma_ps: float, span_ps: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Displace tags by Gaussian noise, clip to the acquisition window, re-sort.

    Returns (sorted tags, permutation that sorts them) so callers can carry
    side arrays along.
    """
    noise = np.rint(rng.normal(0.0, sigma_ps, size=tags.size)).astype(np.int64)
    moved = np.clip(tags + noise, 0, span_ps)
    order = np.argsort(moved, kind="stable")
    return moved[order], order


def apply_jitter(series: TimeTagSeries, sigma_ps: float, seed: int) -> TimeTagSeries:
    """Add independent Gaussian timing jitter of the given std to every tag."""
    if sigma_ps < 0:
        raise ValueError("sigma must be >= 0")
    if sigma_ps == 0 or len(series) == 0:
        return series
    rng = np.random.default_rng(seed)
    tags, _ = _jitter_tags(series.tags, sigma_ps, series.span_ps, rng)
    return TimeTagSeries(tags, series.acquisition_time_s)


def apply_loss(series: TimeTagSeries, eta: float, seed: int) -> TimeTagSeries:
    """Remove each tag independently with survival probability eta."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {eta}")
    if eta == 1.0 or len(series) == 0:
        return series
    rng = np.random.default_rng(seed)
    keep = rng.random(series.tags.size) < eta
    return TimeTagSeries(series.tags[keep], series.acquisition_time_s)


def inject_background(series: TimeTagSeries, rate_cps: float, seed: int) -> TimeTagSeries:
    """Merge a uniform Poisson noise stream of the given rate into the series.

    Noise tags carry no marker; downstream processing cannot tell them from
    signal.
    """
    if rate_cps < 0:
        raise ValueError("background rate must be >= 0")
    if rate_cps == 0:
        return series
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(rate_cps * series.acquisition_time_s))
    noise = rng.integers(0, series.span_ps, size=n, dtype=np.int64)
    merged = np.concatenate([series.tags, noise])
    return TimeTagSeries(np.sort(merged, kind="stable"), series.acquisition_time_s)


def _paralyzable_keep_mask(tags: np.ndarray, dead_time_ps: float) -> np.ndarray:
    """Keep a tag only if it trails its predecessor in the ORIGINAL stream by
    at least the dead time; a suppressed arrival still restarts the window."""
    keep = np.empty(tags.size, dtype=bool)
    if tags.size == 0:
        return keep
    keep[0] = True
    keep[1:] = np.diff(tags) >= dead_time_ps
    return keep


def apply_dead_time(series: TimeTagSeries, dead_time_ps: float) -> TimeTagSeries:
    """Apply paralyzable detector dead time."""
    if dead_time_ps < 0:
        raise ValueError("dead time must be >= 0")
    if dead_time_ps == 0 or len(series) == 0:
        return series
    keep = _paralyzable_keep_mask(series.tags, dead_time_ps)
    return TimeTagSeries(series.tags[keep], series.acquisition_time_s)


def apply_dead_time_nonparalyzable(series: TimeTagSeries, dead_time_ps: float) -> TimeTagSeries:
    """Nonparalyzable variant: arrivals during a dead window are ignored and
    do not extend it.  Used for cross-checks against the paralyzable model."""
    if dead_time_ps < 0:
        raise ValueError("dead time must be >= 0")
    if dead_time_ps == 0 or len(series) == 0:
        return series
    tags = series.tags
    keep = np.zeros(tags.size, dtype=bool)
    last = -np.inf
    for i, t in enumerate(tags):
        if t - last >= dead_time_ps:
            keep[i] = True
            last = t
    return TimeTagSeries(tags[keep], series.acquisition_time_s)


def affine_time_map(tags: np.ndarray, offset_ps: float, delta_u: float) -> np.ndarray:
    """Map t -> (t + offset) * (1 + delta_u), rounded to integer ps.

    The product term is accumulated separately so delta_u = 0 is exactly a
    translation with no float rounding.
    """
    shifted = tags + np.int64(round(offset_ps))
    if delta_u == 0.0:
        return shifted
    return shifted + np.rint(shifted.astype(np.float64) * delta_u).astype(np.int64)


def apply_clock(series: TimeTagSeries, clock: ClockModel, seed: int) -> TimeTagSeries:
    """Transform tags into the local clock frame of one acquisition.

    The effective fractional frequency offset is redrawn per acquisition
    window as Gaussian(drift, freq_jitter).
    """
    rng = np.random.default_rng(seed)
    du = float(rng.normal(clock.drift, clock.freq_jitter)) if clock.freq_jitter > 0 else clock.drift
    tags = affine_time_map(series.tags, clock.offset_ps, du)
    return TimeTagSeries(tags, series.acquisition_time_s)


# --- full scenario pipeline ----------------------------------------------


def build_bob_stream(scenario: "Scenario", seed: int) -> tuple[TimeTagSeries, TimeTagSeries, GroundTruth]:
    """Synthesize one acquisition of observed Alice and Bob streams.

    Transform order is generate -> per-party jitter -> per-party loss ->
    background injection -> per-party dead time -> Bob clock transform.
    Internally the per-tag loss draw happens before the jitter draw; the two
    steps commute exactly (both act independently per tag) and thinning first
    avoids jittering tags that are then discarded.  Background rates are
    ambient rates: each party detects background_cps * eta_background.

    Returns the two observed streams plus a GroundTruth record with the true
    clock state and surviving pair identities for success scoring.
    """
    s_pairs, s_jit_a, s_jit_b, s_loss_a, s_loss_b, s_bg_a, s_bg_b, s_clock = (
        derive_seed(seed, k) for k in range(8)
    )
    alice_raw, bob_raw = generate_pair_stream(
        scenario.pair_rate_cps, scenario.acquisition_time_s, s_pairs,
        fixed_count=scenario.fixed_pair_count,
    )
    n_pairs = len(alice_raw)
    span = alice_raw.span_ps
    t_a = scenario.acquisition_time_s

    def arm(raw: TimeTagSeries, ch: ChannelParams, eta_herald: float,
            loss_seed: int, jitter_seed: int, bg_seed: int) -> tuple[np.ndarray, np.ndarray, float]:
        rng_loss = np.random.default_rng(loss_seed)
        eta = ch.eta_channel * eta_herald
        keep = rng_loss.random(n_pairs) < eta
        tags = raw.tags[keep]
        ids = np.flatnonzero(keep).astype(np.int64)
        if ch.jitter_ps > 0 and tags.size:
            rng_jit = np.random.default_rng(jitter_seed)
            tags, order = _jitter_tags(tags, ch.jitter_ps, span, rng_jit)
            ids = ids[order]
        if ch.background_cps > 0 and ch.eta_background > 0:
            rng_bg = np.random.default_rng(bg_seed)
            n_noise = int(rng_bg.poisson(ch.background_cps * ch.eta_background * t_a))
            noise = rng_bg.integers(0, span, size=n_noise, dtype=np.int64)
            tags = np.concatenate([tags, noise])
            ids = np.concatenate([ids, np.full(n_noise, -1, dtype=np.int64)])
            order = np.argsort(tags, kind="stable")
            tags, ids = tags[order], ids[order]
        n_before = tags.size
        if ch.dead_time_ps > 0 and n_before:
            keep = _paralyzable_keep_mask(tags, ch.dead_time_ps)
            tags, ids = tags[keep], ids[keep]
        eta_dead = tags.size / n_before if n_before else 1.0
        return tags, ids, eta_dead

    a_tags, a_ids, eta_dead_a = arm(
        alice_raw, scenario.alice, scenario.eta_herald, s_loss_a, s_jit_a, s_bg_a)
    b_tags, b_ids, eta_dead_b = arm(
        bob_raw, scenario.bob, scenario.eta_herald, s_loss_b, s_jit_b, s_bg_b)

    clock = scenario.clock
    rng_clock = np.random.default_rng(s_clock)
    du_eff = float(rng_clock.normal(clock.drift, clock.freq_jitter)) if clock.freq_jitter > 0 else clock.drift
    b_tags = affine_time_map(b_tags, clock.offset_ps, du_eff)

    # Peak of the (t_A - t_B) difference distribution: the applied offset is
    # scaled by the drift and the drift smear is centred mid-acquisition.
    expected_peak = -clock.offset_ps * (1.0 + du_eff) - du_eff * (t_a * PS_PER_S) / 2.0

    truth = GroundTruth(
        offset_ps=clock.offset_ps,
        delta_u_eff=du_eff,
        expected_peak_ps=expected_peak,
        alice_pair_ids=a_ids,
        bob_pair_ids=b_ids,
        n_pairs_generated=n_pairs,
        eta_dead_alice=eta_dead_a,
        eta_dead_bob=eta_dead_b,
    )
    return (
        TimeTagSeries(a_tags, t_a),
        TimeTagSeries(b_tags, t_a),
        truth,
    )
