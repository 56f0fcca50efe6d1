import sys
from pathlib import Path

import numpy as np

sys.path.append(str(Path(__file__).resolve().parents[2]))

from cli import emit_plot_data, filter_series
from kalman_filter import (
    CONSISTENT_SCALE,
    LITERAL_SCALE,
    cavity_filter_config,
    integrate_riccati,
    run_ensemble,
    simulate_filter,
)
from plots import DPI, plot_back_action, plot_filter_trajectory, show_params
from utils import LOGGER as logger

OUTPUT = Path(__file__).parent / "output"
KAPPA = 1.0
DETUNINGS = [0.0, 0.5]
N_PATHS = 500
HORIZON = 5.0
DT = 1e-2


def trajectories():
    """One path per homodyne convention on resonance, from the unit initial covariance."""
    for name, scale in (("literal", LITERAL_SCALE), ("consistent", CONSISTENT_SCALE)):
        config = cavity_filter_config(
            KAPPA,
            0.0,
            homodyne_scale=scale,
            initial_mean=[0.5, 1.0],
            initial_cov=np.eye(2),
            dt=DT,
            horizon=HORIZON,
            seed=42,
        )
        frame = filter_series(simulate_filter(config))
        emit_plot_data(frame, OUTPUT / f"trajectory_{name}.csv")
        fig = plot_filter_trajectory(frame, title=f"{name.capitalize()} filter")
        fig.savefig(OUTPUT / f"trajectory_{name}.png", dpi=DPI, bbox_inches="tight")
        covs = integrate_riccati(config)
        logger.info(
            f"{name}: max |V12| = {np.max(np.abs(covs[:, 0, 1])):.2e}, final V = {covs[-1].tolist()}"
        )


def back_action():
    """Sample spread of π_T(p): zero on resonance, finite once the detuning mixes q into p."""
    finals = {}
    for omega in DETUNINGS:
        config = cavity_filter_config(
            KAPPA,
            omega,
            homodyne_scale=CONSISTENT_SCALE,
            initial_mean=[0.0, 1.0],
            dt=DT,
            horizon=HORIZON,
        )
        ensemble = run_ensemble(config, range(N_PATHS))
        finals[f"ω = {omega}"] = ensemble.means[:, -1, 1]
        logger.info(f"ω = {omega}: var π_T(p) = {np.var(ensemble.means[:, -1, 1]):.3e}")
    fig = plot_back_action(finals)
    fig.savefig(OUTPUT / "back_action.png", dpi=DPI, bbox_inches="tight")


if __name__ == "__main__":
    OUTPUT.mkdir(parents=True, exist_ok=True)
    show_params()
    trajectories()
    back_action()
