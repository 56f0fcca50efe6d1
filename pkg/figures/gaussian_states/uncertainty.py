import sys
from pathlib import Path

import numpy as np
import pandas as pd

sys.path.append(str(Path(__file__).resolve().parents[2]))

from cli import emit_plot_data, wigner_series
from gaussian_states import GaussianState, squeezed, uncertainty_report
from plots import DPI, plot_wigner, show_params
from utils import LOGGER as logger
from utils import write_csv

OUTPUT = Path(__file__).parent / "output"
NBARS = [0.0, 0.5, 1.0, 2.0]
SQUEEZING = [0.0, 0.4]
GRID = np.linspace(-4, 4, 161)


def squeezed_thermal(nbar, r):
    return GaussianState(np.zeros(2), (2 * nbar + 1) * squeezed(r).cov)


def uncertainty_table():
    """Heisenberg and skew-information products for squeezed thermal states."""
    rows = []
    for nbar in NBARS:
        for r in SQUEEZING:
            report = uncertainty_report(squeezed_thermal(nbar, r))
            rows.append({"nbar": nbar, "r": r, **report.to_dict()})
    table = pd.DataFrame(rows)
    write_csv(table, OUTPUT / "uncertainty.csv")
    logger.info(f"\n{table[['nbar', 'r', 'heisenberg_lhs', 'luo_lhs']].to_string(index=False)}")
    return table


def wigner_plots():
    for name, state in (("vacuum", squeezed(0.0)), ("squeezed", squeezed(0.4)), ("thermal", squeezed_thermal(1.0, 0.0))):
        frame = wigner_series(state, GRID, GRID)
        emit_plot_data(frame, OUTPUT / f"wigner_{name}.csv")
        fig = plot_wigner(frame, title=name.capitalize())
        fig.savefig(OUTPUT / f"wigner_{name}.png", dpi=DPI, bbox_inches="tight")


if __name__ == "__main__":
    OUTPUT.mkdir(parents=True, exist_ok=True)
    show_params()
    uncertainty_table()
    wigner_plots()
