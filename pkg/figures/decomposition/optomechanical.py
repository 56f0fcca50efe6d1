import sys
from pathlib import Path

import numpy as np

sys.path.append(str(Path(__file__).resolve().parents[2]))

from plots import DPI, plot_kalman_blocks, show_params
from structural_analysis import (
    BAE_DIRECTIONS,
    check_bae,
    decomposed_dynamics,
    kalman_decompose,
)
from system_model import build_state_space, optomechanical, to_quadrature
from utils import LOGGER as logger
from utils import write_json

OUTPUT = Path(__file__).parent / "output"
OMEGA, G, KAPPA = 1.0, 0.7, 2.0


def decompose():
    qs = to_quadrature(build_state_space(optomechanical(OMEGA, G, KAPPA)))
    kd = kalman_decompose(qs)
    write_json(kd.to_dict(), OUTPUT / "decomposition.json")
    fig = plot_kalman_blocks(kd, title=f"ω={OMEGA}, G={G}, κ={KAPPA}")
    fig.savefig(OUTPUT / "kalman_blocks.png", dpi=DPI, bbox_inches="tight")

    conservative = decomposed_dynamics(kd, conservative=True)
    (OUTPUT / "equations.txt").write_text("\n".join(conservative.equations()) + "\n")
    coupling = conservative.coefficient("p_co1", "p_h2")
    logger.info(f"Coefficient of p_h2 in the cavity phase derivative: {coupling:.6f} (-2√2G = {-2 * np.sqrt(2) * G:.6f})")
    logger.info(f"Largest drift of q_co1: {np.max(np.abs(conservative.matrix[4])):.2e}")

    for direction in BAE_DIRECTIONS:
        result = check_bae(kd, direction)
        logger.info(f"BAE {direction}: holds={result.holds}, residual {result.max_residual:.2e}")
    return kd


if __name__ == "__main__":
    OUTPUT.mkdir(parents=True, exist_ok=True)
    show_params()
    decompose()
