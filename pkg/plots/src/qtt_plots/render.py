"""Render simulation CSV outputs into figures.

Usage: qtt-render <kind> <csv...> -o <image>

Kinds: density (success-probability map with 99% contour), threshold
(threshold attenuation vs background), sem (offset error vs true
coincidences with 1/sqrt(N) fit), adev (log-log Allan deviation with a
slope -1 guide), fiber (success vs fiber length).

Rendering is read-only over its inputs and idempotent; any fitted overlay
parameters are written to a JSON sidecar next to the image.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

EXPECTED_HEADERS = {
    "density": ["attenuation_db", "background_cps", "p_success", "mean_n_true"],
    "threshold": ["background_cps", "threshold_attenuation_db"],
    "sem": ["mean_n_true", "sem_measured_ps", "sem_formula_ps"],
    "adev": ["tau_s", "sigma_y"],
    "fiber": ["length_km", "attenuation_db", "p_success", "mean_n_true"],
}


class SchemaError(ValueError):
    """Input CSV does not match the expected header or has no data."""


def load_csv(path: str | Path, kind: str) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input CSV not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        expected = EXPECTED_HEADERS[kind]
        if header != expected:
            raise SchemaError(
                f"{path} header {header} does not match {kind} schema {expected}")
        rows = [[float(v) if v != "" else math.nan for v in row] for row in reader]
    if not rows:
        raise SchemaError(f"{path} has a header but no data rows")
    data = np.asarray(rows, dtype=float)
    return {name: data[:, i] for i, name in enumerate(expected)}


def _pivot_grid(data):
    atts = np.unique(data["attenuation_db"])
    bgs = np.unique(data["background_cps"])
    grid = np.full((atts.size, bgs.size), np.nan)
    for att, bg, p in zip(data["attenuation_db"], data["background_cps"], data["p_success"]):
        grid[np.searchsorted(atts, att), np.searchsorted(bgs, bg)] = p
    return atts, bgs, grid


def render_density(datasets, ax):
    data = datasets[0]
    atts, bgs, grid = _pivot_grid(data)
    mesh = ax.pcolormesh(bgs / 1e3, atts, grid, vmin=0.0, vmax=1.0,
                         cmap="viridis", shading="nearest")
    plt.colorbar(mesh, ax=ax, label="success probability")
    if grid.shape[0] >= 2 and grid.shape[1] >= 2 and np.nanmax(grid) >= 0.99:
        ax.contour(bgs / 1e3, atts, grid, levels=[0.99], colors="w", linewidths=1.5)
    ax.set_xlabel("background rate (kcps)")
    ax.set_ylabel("channel attenuation (dB)")
    return {}


def render_threshold(datasets, ax):
    for i, data in enumerate(datasets):
        mask = np.isfinite(data["threshold_attenuation_db"])
        ax.plot(data["background_cps"][mask] / 1e3,
                data["threshold_attenuation_db"][mask],
                marker="o", label=f"curve {i + 1}")
    ax.set_xlabel("background rate (kcps)")
    ax.set_ylabel("99% threshold attenuation (dB)")
    if len(datasets) > 1:
        ax.legend()
    return {}


def fit_inverse_sqrt(n_true: np.ndarray, sem_ps: np.ndarray) -> float:
    """Numerator of sem = a / sqrt(N): intercept-only fit in log space."""
    mask = (n_true > 0) & (sem_ps > 0)
    if not np.any(mask):
        raise SchemaError("sem fit needs positive N and sem values")
    return float(np.exp(np.mean(np.log(sem_ps[mask]) + 0.5 * np.log(n_true[mask]))))


def render_sem(datasets, ax):
    data = datasets[0]
    n_true = data["mean_n_true"]
    a = fit_inverse_sqrt(n_true, data["sem_measured_ps"])
    grid = np.linspace(n_true.min(), n_true.max(), 200)
    ax.plot(n_true, data["sem_measured_ps"], "ko", label="measured")
    ax.plot(n_true, data["sem_formula_ps"], "s", color="tab:gray",
            label="width / sqrt(N)")
    ax.plot(grid, a / np.sqrt(grid), "r--", label=f"fit {a:.0f} ps / sqrt(N)")
    ax.set_xlabel("true coincidences N")
    ax.set_ylabel("offset error (ps)")
    ax.legend()
    return {"fit_numerator_ps": a}


def render_adev(datasets, ax):
    slopes = []
    for i, data in enumerate(datasets):
        tau, sigma = data["tau_s"], data["sigma_y"]
        mask = np.isfinite(sigma) & (sigma > 0)
        ax.loglog(tau[mask], sigma[mask], marker=".", label=f"run {i + 1}")
        if mask.sum() >= 2:
            slopes.append(float(np.polyfit(np.log(tau[mask]), np.log(sigma[mask]), 1)[0]))
    data = datasets[0]
    tau0, sig0 = data["tau_s"][0], data["sigma_y"][0]
    guide = data["tau_s"]
    ax.loglog(guide, sig0 * (guide / tau0) ** -1.0, "k:", label="slope -1")
    ax.set_xlabel("integration time (s)")
    ax.set_ylabel("overlapping Allan deviation")
    ax.legend()
    return {"loglog_slopes": slopes}


def render_fiber(datasets, ax):
    for i, data in enumerate(datasets):
        ax.plot(data["length_km"], data["p_success"], marker="o", label=f"curve {i + 1}")
    ax.set_xlabel("fiber length (km)")
    ax.set_ylabel("success probability")
    ax.set_ylim(-0.02, 1.02)
    if len(datasets) > 1:
        ax.legend()
    return {}


RENDERERS = {
    "density": render_density,
    "threshold": render_threshold,
    "sem": render_sem,
    "adev": render_adev,
    "fiber": render_fiber,
}


def render(kind: str, csv_paths, out_path: str | Path) -> Path:
    """Render one figure of the given kind; returns the image path.

    Writes `<image>.fit.json` alongside when the kind computes overlay fits.
    """
    if kind not in RENDERERS:
        raise SchemaError(f"unknown figure kind {kind!r}; valid: {sorted(RENDERERS)}")
    datasets = [load_csv(p, kind) for p in csv_paths]
    if not datasets:
        raise SchemaError("at least one input CSV required")
    fig, ax = plt.subplots(figsize=(5.5, 4.0), dpi=150)
    try:
        overlays = RENDERERS[kind](datasets, ax)
        fig.tight_layout()
        out_path = Path(out_path)
        fig.savefig(out_path, metadata={"Software": "qtt-plots"})
    finally:
        plt.close(fig)
    if overlays:
        sidecar = out_path.with_suffix(out_path.suffix + ".fit.json")
        with open(sidecar, "w", encoding="utf-8") as fh:
            json.dump(overlays, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qtt-render", description=__doc__)
    parser.add_argument("kind", choices=sorted(RENDERERS))
    parser.add_argument("csvs", nargs="+", help="input CSV file(s)")
    parser.add_argument("-o", "--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        render(args.kind, args.csvs, args.out)
    except SchemaError as err:
        print(f"schema error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"render failure: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
