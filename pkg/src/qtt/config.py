"""Scenario configuration: schema, validation, presets and (de)serialization.

Config files are JSON with unit-suffixed keys (``*_ps``, ``*_cps``, ``*_db``,
``*_ns``, ``*_s``); efficiencies are unitless in [0, 1] and dB values must be
negative (converted as eta = 10^(dB/10)).  Unknown keys are rejected.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

from .correlator import CorrelatorParams, combine_jitter
from .timetags import ChannelParams, ClockModel


class ConfigError(ValueError):
    """Invalid or malformed scenario configuration."""


# Reference receiver internals: spectral filter, detector, receiver optics.
# Background light reaches the detector through this chain (-5.7 dB) while
# the signal additionally passes the path transmission.
RECEIVER_CHAIN = {"eta_spec": 0.9, "eta_det": 0.6, "eta_rec": 0.5}


@dataclass(frozen=True)
class Scenario:
    """Complete description of one source/channel/receiver configuration."""

    pair_rate_cps: float = 2.0e6
    acquisition_time_s: float = 1.0
    fixed_pair_count: bool = False
    eta_herald: float = 0.4
    alice: ChannelParams = field(default_factory=lambda: ChannelParams(
        eta_spec=0.9, eta_det=0.6, dead_time_ps=84_000.0,
        jitter_det_ps=287.0, jitter_tt_ps=4.0))
    bob: ChannelParams = field(default_factory=lambda: ChannelParams(
        eta_spec=0.9, eta_det=0.6, eta_rec=0.5, eta_trans=1.0,
        background_cps=0.0, dead_time_ps=84_000.0,
        jitter_det_ps=287.0, jitter_tt_ps=4.0))
    clock: ClockModel = field(default_factory=ClockModel)
    bin_width_ps: int = 100
    window_ps: tuple[int, int] = (-1_000_000, 1_000_000)
    width_accept_low: float = 0.5
    width_accept_high: float = 2.0
    height_min_sigmas: float = 5.0
    coincidence_sigmas: float = 3.0
    success_tolerance_ps: Optional[float] = None  # defaults to sigma_sys

    @property
    def sigma_sys_ps(self) -> float:
        """Total expected system jitter (quadrature of both parties)."""
        return combine_jitter([
            self.alice.jitter_det_ps, self.alice.jitter_tt_ps,
            self.bob.jitter_det_ps, self.bob.jitter_tt_ps,
        ])

    def correlator_params(self) -> CorrelatorParams:
        return CorrelatorParams(
            bin_width_ps=self.bin_width_ps,
            window_ps=self.window_ps,
            expected_sigma_ps=self.sigma_sys_ps,
            width_accept_low=self.width_accept_low,
            width_accept_high=self.width_accept_high,
            height_min_sigmas=self.height_min_sigmas,
            coincidence_sigmas=self.coincidence_sigmas,
        )

    def with_bob_channel(self, attenuation_db: float | None = None,
                         background_cps: float | None = None) -> "Scenario":
        """Copy with Bob's total channel attenuation (dB) and/or ambient
        background replaced.

        The receiver internals are kept and the path transmission absorbs the
        remainder, so the background-detection fraction stays physical.
        """
        bob = self.bob
        if attenuation_db is not None:
            bob = replace(bob, eta_trans=_solve_eta_trans(bob, attenuation_db))
        if background_cps is not None:
            bob = replace(bob, background_cps=background_cps)
        return replace(self, bob=bob)


def _solve_eta_trans(ch: ChannelParams, attenuation_db: float) -> float:
    """Path transmission giving the requested total channel attenuation."""
    if attenuation_db > 0:
        raise ConfigError("attenuation_db must be <= 0")
    receiver = ch.eta_spec * ch.eta_det * ch.eta_rec
    eta_trans = 10.0 ** (attenuation_db / 10.0) / receiver
    if eta_trans > 1.0 + 1e-12:
        raise ConfigError(
            f"attenuation_db {attenuation_db} is shallower than the receiver "
            f"chain alone ({10 * math.log10(receiver):.2f} dB); specify the "
            "efficiency chain explicitly")
    return min(eta_trans, 1.0)


# --- presets ---------------------------------------------------------------

DETECTOR_PRESETS: dict[str, dict[str, float]] = {
    # jitter/dead-time values match the hardware the defaults were tuned on;
    # bin width pairs with the detector class.
    "SPAD": {"jitter_det_ps": 287.0, "jitter_tt_ps": 4.0,
             "dead_time_ps": 84_000.0, "bin_width_ps": 100},
    "SNSPD": {"jitter_det_ps": 50.0, "jitter_tt_ps": 4.0,
              "dead_time_ps": 50_000.0, "bin_width_ps": 10},
}

CLOCK_PRESETS: dict[str, ClockModel] = {
    "RbFS": ClockModel(offset_ps=0.0, drift=3.4e-10, freq_jitter=3e-12),
    "CsFS": ClockModel(offset_ps=0.0, drift=3.4e-10, freq_jitter=5e-13),
    "perfect": ClockModel(offset_ps=0.0, drift=0.0, freq_jitter=0.0),
}

BACKGROUND_PRESETS_CPS = {"daytime": 2.14e6, "nighttime": 1.0e5}

# Benign-channel, state-of-the-art lower-bound configuration.
SOTA_PRESET = {
    "attenuation_db": -5.7,
    "background_cps": 300.0,
    "clock": ClockModel(offset_ps=0.0, drift=3e-17, freq_jitter=2e-16),
    "detector": "SNSPD",
}


def apply_detector_preset(scenario: Scenario, name: str) -> Scenario:
    if name == "SOTA":
        s = apply_detector_preset(scenario, SOTA_PRESET["detector"])
        s = s.with_bob_channel(attenuation_db=SOTA_PRESET["attenuation_db"],
                               background_cps=SOTA_PRESET["background_cps"])
        return replace(s, clock=SOTA_PRESET["clock"])
    if name not in DETECTOR_PRESETS:
        raise ConfigError(
            f"unknown detector preset {name!r}; valid: {sorted(DETECTOR_PRESETS) + ['SOTA']}")
    p = DETECTOR_PRESETS[name]
    alice = replace(scenario.alice, jitter_det_ps=p["jitter_det_ps"],
                    jitter_tt_ps=p["jitter_tt_ps"], dead_time_ps=p["dead_time_ps"])
    bob = replace(scenario.bob, jitter_det_ps=p["jitter_det_ps"],
                  jitter_tt_ps=p["jitter_tt_ps"], dead_time_ps=p["dead_time_ps"])
    return replace(scenario, alice=alice, bob=bob, bin_width_ps=int(p["bin_width_ps"]))


def apply_clock_preset(scenario: Scenario, name: str) -> Scenario:
    if name not in CLOCK_PRESETS:
        raise ConfigError(f"unknown clock preset {name!r}; valid: {sorted(CLOCK_PRESETS)}")
    return replace(scenario, clock=CLOCK_PRESETS[name])


def default_scenario() -> Scenario:
    """Reference scenario: 2 Mcps source, -23 dB channel, daytime-adjacent
    background, SPAD detectors."""
    return Scenario().with_bob_channel(attenuation_db=-23.0, background_cps=9.0e5)


# --- config file parsing ----------------------------------------------------

_CHANNEL_KEYS = {
    "eta_spec": float, "eta_det": float, "eta_rec": float, "eta_trans": float,
    "attenuation_db": float, "background_cps": float, "dead_time_ns": float,
    "jitter_det_ps": float, "jitter_tt_ps": float,
}
_CLOCK_KEYS = {"offset_ps": float, "drift_frac": float, "freq_jitter_frac": float}
_CORRELATOR_KEYS = {
    "bin_width_ps": int, "window_ps": list, "width_accept_low": float,
    "width_accept_high": float, "height_min_sigmas": float,
    "coincidence_sigmas": float, "success_tolerance_ps": float,
}
_TOP_KEYS = {
    "pair_rate_cps": float, "acquisition_time_s": float, "fixed_pair_count": bool,
    "eta_herald": float, "alice": dict, "bob": dict, "clock": dict,
    "correlator": dict,
}


def _check_keys(section: dict, allowed: dict, where: str) -> None:
    for key, value in section.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")
        want = allowed[key]
        ok = isinstance(value, bool) if want is bool else (
            isinstance(value, (int, float)) and not isinstance(value, bool)
            if want in (int, float) else isinstance(value, want))
        if not ok:
            raise ConfigError(f"key {key!r} in {where} must be {want.__name__}")


def _channel_from_dict(section: dict, where: str) -> ChannelParams:
    _check_keys(section, _CHANNEL_KEYS, where)
    kwargs: dict[str, Any] = {}
    if "attenuation_db" in section:
        db = section["attenuation_db"]
        if db > 0:
            raise ConfigError(f"attenuation_db in {where} must be <= 0 (got {db})")
        for k in ("eta_spec", "eta_det", "eta_rec", "eta_trans"):
            if k in section:
                raise ConfigError(
                    f"{where}: attenuation_db replaces the efficiency chain; remove {k!r}")
        kwargs.update(RECEIVER_CHAIN)
        kwargs["eta_trans"] = _solve_eta_trans(ChannelParams(**RECEIVER_CHAIN), db)
    else:
        for k in ("eta_spec", "eta_det", "eta_rec", "eta_trans"):
            if k in section:
                kwargs[k] = float(section[k])
    if "background_cps" in section:
        kwargs["background_cps"] = float(section["background_cps"])
    if "dead_time_ns" in section:
        kwargs["dead_time_ps"] = float(section["dead_time_ns"]) * 1000.0
    for k in ("jitter_det_ps", "jitter_tt_ps"):
        if k in section:
            kwargs[k] = float(section[k])
    try:
        return ChannelParams(**kwargs)
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from err


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    _check_keys(data, _TOP_KEYS, "top level")
    for required in ("pair_rate_cps", "acquisition_time_s"):
        if required not in data:
            raise ConfigError(f"missing required field {required!r}")
    base = Scenario()
    alice = _channel_from_dict(data.get("alice", {}), "alice") if "alice" in data else base.alice
    bob = _channel_from_dict(data.get("bob", {}), "bob") if "bob" in data else base.bob

    clock = base.clock
    if "clock" in data:
        section = data["clock"]
        _check_keys(section, _CLOCK_KEYS, "clock")
        try:
            clock = ClockModel(
                offset_ps=float(section.get("offset_ps", 0.0)),
                drift=float(section.get("drift_frac", 0.0)),
                freq_jitter=float(section.get("freq_jitter_frac", 0.0)),
            )
        except ValueError as err:
            raise ConfigError(f"clock: {err}") from err

    kwargs: dict[str, Any] = dict(
        pair_rate_cps=float(data["pair_rate_cps"]),
        acquisition_time_s=float(data["acquisition_time_s"]),
        fixed_pair_count=bool(data.get("fixed_pair_count", False)),
        eta_herald=float(data.get("eta_herald", base.eta_herald)),
        alice=alice, bob=bob, clock=clock,
    )
    if "correlator" in data:
        section = data["correlator"]
        _check_keys(section, _CORRELATOR_KEYS, "correlator")
        if "window_ps" in section:
            window = section["window_ps"]
            if (not isinstance(window, list) or len(window) != 2
                    or not all(isinstance(v, (int, float)) for v in window)):
                raise ConfigError("correlator.window_ps must be [low, high]")
            kwargs["window_ps"] = (int(window[0]), int(window[1]))
        for k in ("bin_width_ps", "width_accept_low", "width_accept_high",
                  "height_min_sigmas", "coincidence_sigmas", "success_tolerance_ps"):
            if k in section:
                kwargs[k] = section[k]
    if kwargs["pair_rate_cps"] <= 0:
        raise ConfigError("pair_rate_cps must be positive")
    if kwargs["acquisition_time_s"] <= 0:
        raise ConfigError("acquisition_time_s must be positive")
    if not 0.0 <= kwargs["eta_herald"] <= 1.0:
        raise ConfigError("eta_herald must be in [0, 1]")
    scenario = Scenario(**kwargs)
    try:
        scenario.correlator_params()
    except ValueError as err:
        raise ConfigError(f"correlator: {err}") from err
    return scenario


def scenario_to_dict(s: Scenario) -> dict:
    """Round-trippable plain-dict form used in manifests."""
    return {
        "pair_rate_cps": s.pair_rate_cps,
        "acquisition_time_s": s.acquisition_time_s,
        "fixed_pair_count": s.fixed_pair_count,
        "eta_herald": s.eta_herald,
        "alice": _channel_to_dict(s.alice),
        "bob": _channel_to_dict(s.bob),
        "clock": {
            "offset_ps": s.clock.offset_ps,
            "drift_frac": s.clock.drift,
            "freq_jitter_frac": s.clock.freq_jitter,
        },
        "correlator": {
            "bin_width_ps": s.bin_width_ps,
            "window_ps": list(s.window_ps),
            "width_accept_low": s.width_accept_low,
            "width_accept_high": s.width_accept_high,
            "height_min_sigmas": s.height_min_sigmas,
            "coincidence_sigmas": s.coincidence_sigmas,
            **({"success_tolerance_ps": s.success_tolerance_ps}
               if s.success_tolerance_ps is not None else {}),
        },
    }


def _channel_to_dict(ch: ChannelParams) -> dict:
    return {
        "eta_spec": ch.eta_spec, "eta_det": ch.eta_det,
        "eta_rec": ch.eta_rec, "eta_trans": ch.eta_trans,
        "background_cps": ch.background_cps,
        "dead_time_ns": ch.dead_time_ps / 1000.0,
        "jitter_det_ps": ch.jitter_det_ps, "jitter_tt_ps": ch.jitter_tt_ps,
    }


def load_config(path: str | Path) -> Scenario:
    """Parse and validate a JSON scenario file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    return scenario_from_dict(data)
