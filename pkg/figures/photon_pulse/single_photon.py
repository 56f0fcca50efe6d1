import sys
from pathlib import Path

import numpy as np

sys.path.append(str(Path(__file__).resolve().parents[2]))

from cli import emit_plot_data, pulse_series
from photon_response import cavity_output_oracle, gaussian_pulse, output_pulse_passive
from plots import DPI, plot_pulses, show_params
from system_model import cavity
from utils import LOGGER as logger

OUTPUT = Path(__file__).parent / "output"
KAPPA = 1.0
WIDTH = 1.0
T0, DT, LENGTH = -20.0, 0.02, 2048


def single_photon():
    """A Gaussian photon wavepacket reflected off a resonant cavity."""
    mu = gaussian_pulse(T0, DT, LENGTH, width=WIDTH)
    (nu,) = output_pulse_passive(cavity(KAPPA), [mu])
    oracle = cavity_output_oracle(nu.times, KAPPA, width=WIDTH)
    error = np.sqrt(np.sum(np.abs(nu.samples - oracle) ** 2) * DT)
    logger.info(f"L2 distance to the closed form: {error:.2e}, output norm {nu.norm():.9f}")

    frame = pulse_series([mu], [nu])
    emit_plot_data(frame, OUTPUT / "pulse.csv")
    fig = plot_pulses(frame, title=f"Cavity with κ = {KAPPA}")
    fig.savefig(OUTPUT / "pulse.png", dpi=DPI, bbox_inches="tight")


if __name__ == "__main__":
    OUTPUT.mkdir(parents=True, exist_ok=True)
    show_params()
    single_photon()
