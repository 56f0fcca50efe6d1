import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

LOGGER = logging.getLogger("qlinsys")

###############
# TOLERANCES  #
###############
STRUCTURE_TOL = 1e-10  # doubled-up, Bogoliubov, symplectic, unitarity
RANK_TOL = 1e-9  # relative singular value threshold for subspaces
IMAG_TOL = 1e-12  # imaginary residue silently dropped below this
IMAG_ERROR_TOL = 1e-9  # imaginary residue raising above this
SINGULAR_TOL = 1e-12
DIVERGENCE_NORM = 1e12
STATE_TOL = 1e-10
FOCK_DEFAULT_N = 60
FOCK_MAX_N = 512
FOCK_MOMENT_TOL = 1e-5
FOCK_WARN_TOL = 1e-4
TENSOR_MAX_ENTRIES = 10**7
PAD_FACTOR = 4
################ Serialization
SIG_DIGITS = 17
FLOAT_FORMAT = f"%.{SIG_DIGITS}g"
SCHEMA_VERSION = 1
TOOL_VERSION = "0.1.0"
################


##########
# ERRORS #
##########


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent."""


class ParameterError(ValueError):
    """Raised when physical parameters violate their invariants."""

    def __init__(self, message, field=None, residual=None):
        super().__init__(message)
        self.field = field
        self.residual = residual


class StructureError(ValueError):
    """Raised when a matrix lacks the expected doubled-up structure."""


class PreconditionError(ValueError):
    """Raised when an operation is called outside its domain."""


class CompositionError(ValueError):
    """Raised when network components cannot be connected."""


class CausalityError(CompositionError):
    """Raised when a feedback loop would contain an algebraic loop."""


class SchemaError(ValueError):
    """Raised when a description file does not follow its schema."""


class StateError(ValueError):
    """Raised when a density matrix is not positive."""


class SingularityError(ArithmeticError):
    """Raised when a resolvent or covariance is singular."""


class DivergenceError(ArithmeticError):
    """Raised when a numerical integration blows up."""


class ResourceError(MemoryError):
    """Raised when a computation exceeds the size guardrails."""


###################
# UTILS FUNCTIONS #
###################


def norm(matrix):
    """Spectral norm, with empty matrices mapped to 0."""
    matrix = np.asarray(matrix)
    if matrix.size == 0:
        return 0.0
    if matrix.ndim == 1:
        return float(np.linalg.norm(matrix))
    return float(np.linalg.norm(matrix, 2))


def symmetrize(matrix):
    matrix = np.asarray(matrix)
    return 0.5 * (matrix + matrix.T)


def hermitize(matrix):
    matrix = np.asarray(matrix)
    return 0.5 * (matrix + matrix.conj().T)


def as_matrix(value, dtype=complex, shape=None, name="matrix"):
    """Converts scalars, vectors and nested lists to a 2-D array.

    Args:
        value: Array-like input.
        dtype: Target dtype.
        shape (tuple, optional): Expected shape. Raises DimensionError on mismatch.
        name (str): Name used in error messages.
    """
    array = np.array(value, dtype=dtype)
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1 and shape is not None and shape[0] == 1:
        array = array.reshape(1, -1)
    elif array.ndim == 1 and shape is not None:
        array = array.reshape(-1, 1)
    if array.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got {array.ndim}-D")
    if shape is not None and array.shape != tuple(shape):
        raise DimensionError(
            f"{name} has shape {array.shape}, expected {tuple(shape)}"
        )
    return array


def check_finite(array, what="state"):
    """Raises DivergenceError on non-finite or blown-up values."""
    array = np.asarray(array)
    if not np.all(np.isfinite(array)):
        raise DivergenceError(f"Non-finite values encountered in {what}")
    if array.size and np.max(np.abs(array)) > DIVERGENCE_NORM:
        raise DivergenceError(
            f"{what} exceeded {DIVERGENCE_NORM:.0e} in magnitude"
        )


###############
# FILE FORMAT #
###############


def to_pairs(array):
    """Encodes a complex array as nested lists of [re, im] pairs."""
    array = np.asarray(array, dtype=complex)
    if array.ndim == 0:
        return [float(array.real), float(array.imag)]
    return [to_pairs(item) for item in array]


def _is_pair(obj):
    return (
        isinstance(obj, (list, tuple))
        and len(obj) == 2
        and all(isinstance(v, (int, float)) for v in obj)
    )


def from_pairs(obj, name="array"):
    """Decodes nested [re, im] pairs into a complex array."""
    if _is_pair(obj):
        return np.array(complex(obj[0], obj[1]))
    if not isinstance(obj, (list, tuple)):
        raise SchemaError(f"{name}: expected nested [re, im] pairs")
    if len(obj) == 0:
        return np.zeros(0, dtype=complex)
    items = [from_pairs(item, name) for item in obj]
    try:
        return np.stack(items)
    except ValueError as e:
        raise SchemaError(f"{name}: ragged nested array") from e


def to_real_lists(array):
    return np.asarray(array, dtype=float).tolist()


def write_json(data, path):
    """Writes a JSON document; floats are written with round-trip precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    return path


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    with path.open() as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: invalid JSON ({e})") from e


def write_csv(frame: pd.DataFrame, path):
    """Writes a data frame with a header row and 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def read_csv(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    return pd.read_csv(path)
