"""Command-line front end of the toolbox.

Examples:
    python cli.py decompose data/optomechanical.json --out decomposition.json
    python cli.py filter-sim data/cavity.json --seed 42 --out filter.csv
    python cli.py network data/network.json --out loop.json

Exit codes are 0 on success, 2 for invalid input, 3 for I/O failures and
4 for numerical divergence.
"""
import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from feedback_network import (
    ClosedLoopSystem,
    SLHNode,
    StaticComponent,
    beamsplitter,
    closed_loop,
    embed_static,
    phase_shifter,
    series,
)
from gaussian_states import (
    GaussianState,
    is_pure,
    is_valid,
    uncertainty_report,
    wigner_grid,
    wigner_normalization,
)
from kalman_filter import (
    CONSISTENT_SCALE,
    FilterConfig,
    FilterTrajectory,
    simulate_filter,
    trajectory_to_frame,
)
from photon_response import PulseShape, output_pulse_passive
from structural_analysis import BAE_DIRECTIONS, check_bae, kalman_decompose
from system_model import (
    PhysicalParams,
    build_state_space,
    check_realizability,
    flat_unitarity_residual,
    frequency_response,
    to_quadrature,
)
from utils import LOGGER as logger
from utils import (
    RANK_TOL,
    SCHEMA_VERSION,
    STATE_TOL,
    STRUCTURE_TOL,
    TOOL_VERSION,
    ParameterError,
    SchemaError,
    from_pairs,
    read_csv,
    read_json,
    symmetrize,
    to_pairs,
    to_real_lists,
    write_csv,
    write_json,
)

#############
# CLI SETUP #
#############
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4

VERBS = (
    "realizability",
    "quadrature",
    "transfer",
    "decompose",
    "bae",
    "gaussian",
    "filter-sim",
    "pulse",
    "network",
)
DEFAULT_GRID = "-10:10:201"
LOG_FORMAT = "%(levelname)s [%(name)s] %(message)s"

REQUIRED_BLOCKS = ("S", "C_minus", "Omega_minus")
OPTIONAL_BLOCKS = ("C_plus", "Omega_plus", "K")


##############
# FILE INPUT #
##############


def _read_document(path, kind):
    """Loads a versioned JSON document of the given kind."""
    path = Path(path)
    data = read_json(path)
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    if "schema_version" not in data:
        raise SchemaError(f"{path}: missing 'schema_version'")
    if data["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: unsupported schema_version {data['schema_version']}, expected {SCHEMA_VERSION}"
        )
    if data.get("kind", kind) != kind:
        raise SchemaError(f"{path}: expected a '{kind}' file, got '{data['kind']}'")
    return data


def _require(data, key, path):
    if key not in data:
        raise SchemaError(f"{path}: missing field '{key}'")
    return data[key]


def _validate_all(params: PhysicalParams, path, tol):
    """Raises one ParameterError listing every violated invariant."""
    violations = {
        name: residual
        for name, residual in params.residuals().items()
        if residual > tol
    }
    if violations:
        listing = ", ".join(f"'{k}' (residual {v:.3e})" for k, v in violations.items())
        first = next(iter(violations))
        raise ParameterError(
            f"{path}: invariant violated for {listing}",
            field=first,
            residual=violations[first],
        )
    return params


def parse_system_file(path, tol=STRUCTURE_TOL) -> PhysicalParams:
    """Reads and validates a system description.

    The file holds the blocks S, C_minus and Omega_minus, optionally C_plus,
    Omega_plus and K, each as nested [re, im] pairs.

    Raises:
        SchemaError: The file is not a valid system document.
        ParameterError: A block violates its invariant; ``field`` names the block.
        FileNotFoundError: The file does not exist.
    """
    data = _read_document(path, "system")
    blocks = {
        name: from_pairs(_require(data, name, path), name)
        for name in REQUIRED_BLOCKS
    }
    for name in OPTIONAL_BLOCKS:
        if name in data:
            value = from_pairs(data[name], name)
            if value.ndim == 2:
                blocks[name] = value
    params = PhysicalParams.from_blocks(**blocks)
    logger.debug(f"Parsed {path}: n={params.n}, m={params.m}, l={params.l}")
    return _validate_all(params, path, tol)


def write_system_file(params: PhysicalParams, path, name=None):
    """Writes a system description that parse_system_file reads back exactly."""
    data = {
        "schema_version": SCHEMA_VERSION,
        "kind": "system",
        "name": name or Path(path).stem,
        "n": params.n,
        "m": params.m,
        "l": params.l,
    }
    for block in REQUIRED_BLOCKS + OPTIONAL_BLOCKS:
        data[block] = to_pairs(getattr(params, block))
    return write_json(data, path)


def parse_state_file(path) -> GaussianState:
    data = _read_document(path, "state")
    return GaussianState(_require(data, "mean", path), _require(data, "cov", path))


def parse_pulse_file(path) -> List[PulseShape]:
    """Reads pulses from a CSV with columns t, re, im or t, re_k, im_k per channel."""
    frame = read_csv(path)
    if {"re", "im"} <= set(frame.columns):
        return [PulseShape.from_frame(frame)]
    pulses, k = [], 1
    while f"re_{k}" in frame.columns:
        columns = {f"re_{k}": "re", f"im_{k}": "im"}
        if f"im_{k}" not in frame.columns:
            raise SchemaError(f"{path}: column 're_{k}' has no matching 'im_{k}'")
        pulses.append(PulseShape.from_frame(frame[["t", *columns]].rename(columns=columns)))
        k += 1
    if not pulses:
        raise SchemaError(f"{path}: no pulse columns found")
    return pulses


def _parse_static(entry, m, path) -> StaticComponent:
    """Static elements: {"phase", "channel"}, {"beamsplitter", "channels"} or {"unitary", "channels"}."""
    if "phase" in entry:
        return embed_static(phase_shifter(float(entry["phase"])), m, [_require(entry, "channel", path)])
    if "beamsplitter" in entry:
        return embed_static(
            beamsplitter(float(entry["beamsplitter"])), m, _require(entry, "channels", path)
        )
    if "unitary" in entry:
        component = StaticComponent(from_pairs(entry["unitary"], "unitary"))
        return embed_static(component, m, entry.get("channels", range(m)))
    raise SchemaError(f"{path}: unknown static element {sorted(entry)}")


def _parse_node(entry, key, path, tol) -> SLHNode:
    if not isinstance(entry, dict):
        raise SchemaError(f"{path}: '{key}' must be an object")
    params = parse_system_file(Path(path).parent / _require(entry, "system", path), tol)
    node = SLHNode.from_params(params, entry.get("label", key), entry.get("modes"))
    for static in entry.get("static", []):
        node = series(_parse_static(static, node.m, path), node, label=node.label)
    partition = _require(entry, "partition", path)
    return node.with_partition(
        _require(partition, "inputs", path), _require(partition, "outputs", path)
    )


@dataclass(frozen=True)
class NetworkDescription:
    """A plant and a coherent controller with an optional direct coupling."""

    plant: SLHNode
    controller: SLHNode
    coupling: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def assemble(self, tol=STRUCTURE_TOL) -> ClosedLoopSystem:
        return closed_loop(self.plant, self.controller, self.coupling, tol=tol)


def parse_network_file(path, tol=STRUCTURE_TOL) -> NetworkDescription:
    """Reads a network description; system paths are relative to the file."""
    data = _read_document(path, "network")
    plant = _parse_node(_require(data, "plant", path), "plant", path, tol)
    controller = _parse_node(_require(data, "controller", path), "controller", path, tol)
    coupling = None
    if "direct_coupling" in data:
        entry = data["direct_coupling"]
        K_minus = from_pairs(_require(entry, "K_minus", path), "K_minus")
        K_plus = (
            from_pairs(entry["K_plus"], "K_plus")
            if "K_plus" in entry
            else np.zeros_like(K_minus)
        )
        coupling = (K_minus, K_plus)
    return NetworkDescription(plant, controller, coupling)


############
# PLOTDATA #
############


def _quadrature_names(n):
    if n == 1:
        return ["q", "p"]
    return [f"q{k + 1}" for k in range(n)] + [f"p{k + 1}" for k in range(n)]


def filter_series(trajectory: FilterTrajectory):
    """t, pi_q, pi_p, V11, V12, V22, dnu_k, dQ_k for a single mode."""
    n2 = trajectory.mean.shape[1]
    names = _quadrature_names(n2 // 2)
    sep = "" if n2 < 10 else "_"
    renames = {f"pi_{k + 1}": f"pi_{names[k]}" for k in range(n2)}
    for i in range(n2):
        for j in range(i, n2):
            renames[f"V_{i + 1}{j + 1}"] = f"V{i + 1}{sep}{j + 1}"
    return trajectory_to_frame(trajectory).rename(columns=renames)


def pulse_series(mu: List[PulseShape], nu: List[PulseShape]):
    """t, re_in, im_in, re_out, im_out; suffixed by channel when there are several."""
    columns = {"t": mu[0].times}
    for k, (pulse_in, pulse_out) in enumerate(zip(mu, nu)):
        suffix = "" if len(mu) == 1 else f"_{k + 1}"
        columns[f"re_in{suffix}"] = pulse_in.samples.real
        columns[f"im_in{suffix}"] = pulse_in.samples.imag
        columns[f"re_out{suffix}"] = pulse_out.samples.real
        columns[f"im_out{suffix}"] = pulse_out.samples.imag
    return pd.DataFrame(columns)


def wigner_series(state: GaussianState, q, p):
    """Long-format Wigner grid with columns w1, w2, W."""
    W = wigner_grid(state, q, p)
    Q, P = np.meshgrid(np.asarray(q, dtype=float), np.asarray(p, dtype=float))
    return pd.DataFrame({"w1": Q.ravel(), "w2": P.ravel(), "W": W.ravel()})


def transfer_series(omegas, residuals):
    return pd.DataFrame({"omega": omegas, "unitarity_residual": residuals})


def emit_plot_data(series: pd.DataFrame, path):
    """Writes a plot-ready table as CSV with a header row."""
    if len(series.columns) == 0:
        raise SchemaError("Plot data needs at least one column")
    logger.debug(f"Writing {len(series)} rows to {path}")
    return write_csv(series, path)


###########
# REPORTS #
###########


def make_report(verb, tolerances, residuals, **fields):
    report = {
        "tool_version": TOOL_VERSION,
        "schema_version": SCHEMA_VERSION,
        "command": verb,
        "tolerances": tolerances,
        "residuals": {k: float(v) for k, v in residuals.items() if v is not None},
    }
    report.update(fields)
    return report


class _Outputs:
    """Paths written by one run; removed again if the run fails."""

    def __init__(self):
        self.paths = []

    def _track(self, path):
        path = Path(path)
        self.paths.append(path)
        return path

    def report(self, report, path):
        if path is None:
            json.dump(report, sys.stdout, indent=2)
            sys.stdout.write("\n")
            return None
        return write_json(report, self._track(path))

    def table(self, frame, path):
        return emit_plot_data(frame, self._track(path))

    def discard(self):
        for path in self.paths:
            if path.exists():
                logger.info(f"Removing partial output {path}")
                path.unlink()


def _sidecar(path):
    return Path(path).with_suffix(".json")


def _grid(spec):
    """Parses 'start:stop:count' into a linear grid."""
    try:
        start, stop, count = spec.split(":")
        grid = np.linspace(float(start), float(stop), int(count))
    except ValueError as e:
        raise ParameterError(f"Invalid grid '{spec}', expected start:stop:count", field="grid") from e
    if grid.size < 1:
        raise ParameterError(f"Grid '{spec}' is empty", field="grid")
    return grid


############
# COMMANDS #
############


def _system(args):
    params = parse_system_file(args.system, args.tol)
    return params, build_state_space(params, args.tol)


def cmd_realizability(args, outputs):
    params, ss = _system(args)
    result = check_realizability(ss, args.tol)
    residuals = {
        "A": result.residual_A,
        "B": result.residual_B,
        "passive_A": result.passive_residual_A,
        "passive_B": result.passive_residual_B,
        **params.residuals(),
    }
    logger.info(f"Realizability of {args.system}: passes={result.passes}")
    outputs.report(
        make_report(
            args.verb,
            {"structure": args.tol},
            residuals,
            dims={"n": params.n, "m": params.m, "l": params.l},
            passes=result.passes,
            passive_variant_used=result.passive_variant_used,
        ),
        args.out,
    )


def cmd_quadrature(args, outputs):
    params, ss = _system(args)
    qs = to_quadrature(ss)
    result = check_realizability(ss, args.tol)
    outputs.report(
        make_report(
            args.verb,
            {"structure": args.tol},
            {
                "A": result.residual_A,
                "B": result.residual_B,
                "scattering": qs.scattering_residual(),
            },
            dims={"n": qs.n, "m": qs.m, "l": qs.l},
            **{name: to_real_lists(getattr(qs, name)) for name in "ABCDE"},
        ),
        args.out,
    )


def cmd_transfer(args, outputs):
    _, ss = _system(args)
    omegas = _grid(args.grid)
    residuals = np.array([flat_unitarity_residual(Xi) for Xi in frequency_response(ss, omegas)])
    worst = float(np.max(residuals))
    if worst > args.tol:
        logger.warning(f"Transfer function unitarity residual {worst:.3e} exceeds {args.tol:.1e}")
    outputs.table(transfer_series(omegas, residuals), args.out)
    outputs.report(
        make_report(
            args.verb,
            {"structure": args.tol},
            {"max_unitarity": worst},
            grid=args.grid,
            passes=worst <= args.tol,
        ),
        _sidecar(args.out),
    )


def cmd_decompose(args, outputs):
    _, ss = _system(args)
    kd = kalman_decompose(to_quadrature(ss), RANK_TOL)
    data = kd.to_dict()
    residuals = data.pop("residuals")
    outputs.report(
        make_report(args.verb, {"structure": args.tol, "rank": RANK_TOL}, residuals, **data),
        args.out,
    )


def cmd_bae(args, outputs):
    _, ss = _system(args)
    kd = kalman_decompose(to_quadrature(ss), RANK_TOL)
    results = {direction: check_bae(kd, direction) for direction in BAE_DIRECTIONS}
    residuals = {}
    for direction, result in results.items():
        residuals[f"{direction}:criterion"] = result.max_residual
        residuals[f"{direction}:direct"] = result.direct_residual
    outputs.report(
        make_report(
            args.verb,
            {"structure": args.tol, "rank": RANK_TOL},
            residuals,
            dims=kd.to_dict()["dims"],
            holds={direction: result.holds for direction, result in results.items()},
            skipped={
                direction: [to_pairs(s) for s in result.skipped]
                for direction, result in results.items()
            },
        ),
        args.out,
    )


def cmd_gaussian(args, outputs):
    state = parse_state_file(args.state)
    validity = is_valid(state, STATE_TOL)
    fields = {"n": state.n, "valid": validity.valid}
    residuals = {
        "validity_plus": validity.min_eigenvalue,
        "validity_minus": validity.min_eigenvalue_conjugate,
    }
    if validity.valid:
        fields["pure"] = bool(is_pure(state))
        residuals["wigner_normalization"] = abs(wigner_normalization(state) - 1.0)
        if state.n == 1:
            uncertainty = uncertainty_report(state)
            fields["uncertainty"] = uncertainty.to_dict()
            fields["heisenberg_holds"] = uncertainty.heisenberg_holds
            residuals["fock_moments"] = uncertainty.moment_residual
    if args.plot_data is not None:
        grid = _grid(args.grid)
        outputs.table(wigner_series(state, grid, grid), args.plot_data)
    outputs.report(make_report(args.verb, {"state": STATE_TOL}, residuals, **fields), args.out)


def cmd_filter_sim(args, outputs):
    _, ss = _system(args)
    initial = parse_state_file(args.state) if args.state else None
    config = FilterConfig(
        qs=to_quadrature(ss),
        dt=args.dt,
        horizon=args.horizon,
        seed=args.seed,
        initial_mean=None if initial is None else initial.mean,
        initial_cov=None if initial is None else initial.cov,
        homodyne_scale=CONSISTENT_SCALE,
        m_measured=args.measured,
    )
    trajectory = simulate_filter(config)
    final = is_valid(GaussianState(trajectory.mean[-1], symmetrize(trajectory.cov[-1])))
    outputs.table(filter_series(trajectory), args.out)
    outputs.report(
        make_report(
            args.verb,
            {"structure": args.tol, "state": STATE_TOL},
            {"final_validity": min(final.min_eigenvalue, final.min_eigenvalue_conjugate)},
            seed=args.seed,
            dt=args.dt,
            horizon=args.horizon,
            steps=config.steps,
            final_cov=to_real_lists(trajectory.cov[-1]),
        ),
        _sidecar(args.out),
    )


def cmd_pulse(args, outputs):
    params, _ = _system(args)
    mu = parse_pulse_file(args.pulse)
    nu = output_pulse_passive(params, mu)
    norm_in = float(np.sqrt(sum(pulse.norm() ** 2 for pulse in mu)))
    norm_out = float(np.sqrt(sum(pulse.norm() ** 2 for pulse in nu)))
    outputs.table(pulse_series(mu, nu), args.out)
    outputs.report(
        make_report(
            args.verb,
            {"structure": args.tol},
            {"norm": abs(norm_out - norm_in)},
            norm_in=norm_in,
            norm_out=norm_out,
            samples=len(mu[0]),
        ),
        _sidecar(args.out),
    )


def cmd_network(args, outputs):
    network = parse_network_file(args.network, args.tol)
    system = network.assemble(args.tol)
    result = system.realizability(args.tol)
    outputs.report(
        make_report(
            args.verb,
            {"structure": args.tol},
            {"A": result.residual_A, "B": result.residual_B},
            plant={"label": network.plant.label, **network.plant.partition.to_dict()},
            controller={"label": network.controller.label, **network.controller.partition.to_dict()},
            passes=result.passes,
            closed_loop=system.to_dict(),
        ),
        args.out,
    )


COMMANDS = {
    "realizability": cmd_realizability,
    "quadrature": cmd_quadrature,
    "transfer": cmd_transfer,
    "decompose": cmd_decompose,
    "bae": cmd_bae,
    "gaussian": cmd_gaussian,
    "filter-sim": cmd_filter_sim,
    "pulse": cmd_pulse,
    "network": cmd_network,
}


##########
# PARSER #
##########


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qlinsys", description="Analysis of linear open quantum systems and networks"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, default=STRUCTURE_TOL, help="Structural tolerance")
    common.add_argument("--out", type=Path, default=None, help="Output file, stdout for reports when omitted")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug")

    verbs = parser.add_subparsers(dest="verb", required=True)
    for verb in ("realizability", "quadrature", "decompose", "bae"):
        sub = verbs.add_parser(verb, parents=[common])
        sub.add_argument("system", type=Path, help="System description (JSON)")

    sub = verbs.add_parser("transfer", parents=[common], help="Unitarity of Ξ(iω) on a grid")
    sub.add_argument("system", type=Path)
    sub.add_argument("--grid", default=DEFAULT_GRID, help="Frequency grid start:stop:count")

    sub = verbs.add_parser("gaussian", parents=[common], help="Gaussian state diagnostics")
    sub.add_argument("state", type=Path, help="State description (JSON)")
    sub.add_argument("--grid", default="-4:4:81", help="Wigner grid start:stop:count")
    sub.add_argument("--plot-data", type=Path, default=None, help="Wigner CSV output")

    sub = verbs.add_parser("filter-sim", parents=[common], help="Simulate a homodyne Kalman filter")
    sub.add_argument("system", type=Path)
    sub.add_argument("--dt", type=float, default=1e-3)
    sub.add_argument("--horizon", type=float, default=1.0)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--measured", type=int, default=None, help="Number of measured channels")
    sub.add_argument("--state", type=Path, default=None, help="Initial state (JSON)")

    sub = verbs.add_parser("pulse", parents=[common], help="Single-photon output pulses")
    sub.add_argument("system", type=Path)
    sub.add_argument("pulse", type=Path, help="Input pulse table (CSV)")

    sub = verbs.add_parser("network", parents=[common], help="Closed-loop assembly")
    sub.add_argument("network", type=Path, help="Network description (JSON)")

    for name in ("transfer", "filter-sim", "pulse"):
        verbs.choices[name].set_defaults(requires_out=True)
    return parser


def _configure_logging(verbosity):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT)


def run(argv=None):
    """Runs one command and returns its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "requires_out", False) and args.out is None:
        parser.error(f"{args.verb} writes a CSV table and needs --out")
    _configure_logging(args.verbose)
    outputs = _Outputs()
    try:
        COMMANDS[args.verb](args, outputs)
    except OSError as e:
        code, error = EXIT_IO, e
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        code, error = EXIT_DIVERGENCE, e
    except (ValueError, MemoryError) as e:
        code, error = EXIT_VALIDATION, e
    else:
        return EXIT_OK
    logger.error(f"{args.verb} failed: {type(error).__name__}: {error}")
    outputs.discard()
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
