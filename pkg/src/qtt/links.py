"""Map physical link descriptions onto (attenuation, background) inputs.

Covers telecom-fiber spans and free-space slant paths through turbulence
with tracking-only or tracking+AO receivers.  The receiver coupling uses the
extended Marechal approximation exp(-sigma_phi^2) as a stand-in for a full
focal-plane coupling model, and is labelled as such in emitted metadata.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .config import Scenario


@dataclass(frozen=True)
class FiberLink:
    length_km: float
    alpha_db_per_km: float = 0.22  # telecom fiber at 1550 nm
    background_cps: float = 1000.0

    def __post_init__(self):
        if self.length_km < 0:
            raise ValueError("length must be >= 0")
        if self.alpha_db_per_km <= 0:
            raise ValueError("attenuation coefficient must be positive")


@dataclass(frozen=True)
class FreespaceReceiver:
    """Aperture, turbulence and control-loop parameters of a ground receiver."""

    diameter_m: float
    r0_zenith_m: float
    f_tracking_greenwood_hz: float
    f_tracking_loop_hz: float
    f_greenwood_hz: float
    f_ao_loop_hz: float
    n_actuators: int = 25
    fov_multiplier: float = 1.0

    def __post_init__(self):
        for name in ("diameter_m", "r0_zenith_m", "f_tracking_loop_hz", "f_ao_loop_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.f_tracking_greenwood_hz < 0 or self.f_greenwood_hz < 0:
            raise ValueError("Greenwood frequencies must be >= 0")
        if self.n_actuators < 1:
            raise ValueError("n_actuators must be >= 1")
        if self.fov_multiplier <= 0:
            raise ValueError("fov_multiplier must be positive")

    @property
    def subaperture_m(self) -> float:
        return self.diameter_m / math.sqrt(self.n_actuators)


def fiber_attenuation_db(link: FiberLink) -> float:
    """Channel attenuation of the fiber span in dB (negative)."""
    return -link.alpha_db_per_km * link.length_km


def db_to_efficiency(db: float) -> float:
    return 10.0 ** (db / 10.0)


def efficiency_to_db(eta: float) -> float:
    if eta <= 0:
        raise ValueError("efficiency must be positive to express in dB")
    return 10.0 * math.log10(eta)


def residual_error_tracking(rx: FreespaceReceiver, r0_m: float | None = None) -> float:
    """Residual wavefront-phase variance (rad^2) with tip/tilt tracking only:
    uncorrected higher-order structure plus finite tracking bandwidth."""
    r0 = rx.r0_zenith_m if r0_m is None else r0_m
    return (
        0.582 * (rx.diameter_m / r0) ** (5.0 / 3.0)
        + (math.pi / 2.0 * rx.f_tracking_greenwood_hz / rx.f_tracking_loop_hz) ** 2
    )


def residual_error_ao(rx: FreespaceReceiver, r0_m: float | None = None,
                      f_greenwood_hz: float | None = None) -> float:
    """Residual phase variance (rad^2) with tracking plus higher-order AO.

    Fitting error (aliasing folded in as an extra 30%), tracking bandwidth
    error, and AO loop bandwidth error.
    """
    r0 = rx.r0_zenith_m if r0_m is None else r0_m
    f_g = rx.f_greenwood_hz if f_greenwood_hz is None else f_greenwood_hz
    return (
        1.3 * 0.28 * (rx.subaperture_m / r0) ** (5.0 / 3.0)
        + (math.pi / 2.0 * rx.f_tracking_greenwood_hz / rx.f_tracking_loop_hz) ** 2
        + (f_g / rx.f_ao_loop_hz) ** (5.0 / 3.0)
    )


def zenith_scaling(r0_zenith_m: float, f_greenwood_zenith_hz: float,
                   zenith_angle_deg: float) -> tuple[float, float]:
    """Scale Fried length and Greenwood frequency to a slant path.

    Standard secant air-mass convention: r0 shrinks and f_G grows as
    cos(zenith)^(3/5) and cos(zenith)^(-3/5).
    """
    if not 0.0 <= zenith_angle_deg < 90.0:
        raise ValueError("zenith angle must be in [0, 90) degrees")
    c = math.cos(math.radians(zenith_angle_deg))
    return r0_zenith_m * c ** 0.6, f_greenwood_zenith_hz * c ** -0.6


def coupling_efficiency(sigma_phi_sq: float) -> float:
    """Receiver coupling from residual phase variance (Marechal approximation)."""
    if sigma_phi_sq < 0:
        raise ValueError("phase variance must be >= 0")
    return math.exp(-sigma_phi_sq)


def fiber_scenario(template: "Scenario", length_km: float,
                   alpha_db_per_km: float = 0.22,
                   background_cps: float = 1000.0) -> "Scenario":
    """Scenario with Bob's channel replaced by a fiber span of given length."""
    eta_ch = db_to_efficiency(-alpha_db_per_km * length_km)
    bob = replace(template.bob, eta_spec=1.0, eta_det=1.0, eta_rec=1.0,
                  eta_trans=eta_ch, background_cps=background_cps)
    return replace(template, bob=bob)


def fiber_success_curve(template: "Scenario", lengths_km, trials: int, seed: int,
                        alpha_db_per_km: float = 0.22,
                        background_cps: float = 1000.0, jobs: int = 1):
    """Monte Carlo success probability versus fiber length.

    Returns a list of (length_km, attenuation_db, p_success, mean_n_true)
    rows.
    """
    from .stats import success_probability  # local import: links stays light
    from .timetags import derive_seed

    rows = []
    for i, length in enumerate(lengths_km):
        scenario = fiber_scenario(template, length, alpha_db_per_km, background_cps)
        p_hat, mean_nt = success_probability(
            scenario, trials, seed=derive_seed(seed, 105, i), jobs=jobs)
        rows.append((float(length), -alpha_db_per_km * length, p_hat, mean_nt))
    return rows
