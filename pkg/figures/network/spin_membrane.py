import sys
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

sys.path.append(str(Path(__file__).resolve().parents[2]))

from cli import parse_network_file
from feedback_network import spin_membrane_example
from plots import COLORMAP, DPI, _format_plot, get_style_context, show_params
from utils import LOGGER as logger
from utils import write_csv, write_json

OUTPUT = Path(__file__).parent / "output"
DATA = Path(__file__).resolve().parents[2] / "data"
PHIS = np.linspace(0, 2 * np.pi, 73)


def effective_couplings():
    """Spin-membrane and spin-spin terms of the loop Hamiltonian against the loop phase."""
    network = spin_membrane_example(Gamma_s=0.3, Gamma_m=0.5, kappa_ext=1.2)
    rows = []
    for phi in PHIS:
        H = network.effective_hamiltonian(phi).H
        loop = network.feedback_loop(phi)
        qs, qm = loop.index("s", "q"), loop.index("m", "q")
        rows.append({"phi": phi, "q_s q_m": H[qs, qm], "q_s^2": H[qs, qs] / 2})
    table = pd.DataFrame(rows)
    write_csv(table, OUTPUT / "couplings.csv")

    with get_style_context():
        fig, ax = plt.subplots(figsize=(10, 6), dpi=DPI)
        for k, column in enumerate(["q_s q_m", "q_s^2"]):
            ax.plot(table["phi"], table[column], lw=2, color=COLORMAP[k], label=f"${column}$")
        _format_plot(ax, xlabel=r"$\phi$", ylabel="Coefficient", title="Loop-mediated Hamiltonian", legend=True)
        fig.savefig(OUTPUT / "couplings.png", dpi=DPI, bbox_inches="tight")
    return table


def closed_loop_example():
    system = parse_network_file(DATA / "network.json").assemble()
    report = system.realizability()
    logger.info(f"Closed loop with {system.n} modes: residuals {report.residual_A:.2e}, {report.residual_B:.2e}")
    write_json(system.to_dict(), OUTPUT / "closed_loop.json")


if __name__ == "__main__":
    OUTPUT.mkdir(parents=True, exist_ok=True)
    show_params()
    effective_couplings()
    closed_loop_example()
