"""Configuration constants for the Edgeworth accountant package."""
import os

from .errors import ConfigurationError

# --- Quadrature (scipy.integrate.quad) ---
QUAD_EPSABS: float = 1e-12
QUAD_EPSREL: float = 1e-10
QUAD_LIMIT: int = 200
# quad's error estimate may exceed the requested tolerance by this factor before we give up
QUAD_ERROR_SLACK: float = 100.0
GAUSSIAN_TRUNCATION_SD: float = 12.0

# --- Uniform first-order bound: leading constants ---
C_K3_SQRT_M: float = 0.1995
C_K3_SQ: float = 0.031
C_K4: float = 0.195
C_LAMBDA3_K3: float = 0.054
C_LAMBDA3_SQ: float = 0.038

# --- Remainder machinery ---
PSI_BOUND: float = 1.0253          # |Psi(t)| <= PSI_BOUND / (2 pi |t|)
CHI_1: float = 0.099162
T1_STAR: float = 0.635967
R1_LEAD_COEF: float = 14.1961 + 67.0415
R2_LEAD_COEF: float = 1.2533
R2_LAMBDA3_COEF: float = 0.3334
R2_HIGH_COEF: float = 14.1961
DEFAULT_SMOOTHING_EPS: float = 0.1
CF_LOG_GRID_POINTS: int = 4001

# --- Adaptive tail bound ---
TRUNCATION_SEARCH_MAX: float = 20.0
TRUNCATION_SCAN_POINTS: int = 401

# --- Accountant ---
EDGEWORTH_ORDERS: tuple[int, ...] = (0, 1, 2, 3)
ROOT_XTOL: float = 1e-12
DEFAULT_EPS_BRACKET: float = 1.0
EPS_BRACKET_CAP: float = 1e4
CONTAINMENT_GRID_POINTS: int = 2000

# --- Oracle ---
DEFAULT_GRID_SIZE: int = 2 ** 20
MAX_GRID_SIZE: int = 2 ** 24
ORACLE_WINDOW_SD: float = 12.0
ORACLE_EDGE_MASS: float = 1e-10
BASE_TAIL_MASS: float = 1e-16
MC_MIN_SAMPLES: int = 10_000
MC_BLOCK_ELEMENTS: int = 2 ** 22
CF_STEP_GRID_SIZE: int = 2 ** 14

# --- CLI ---
SCHEMA_VERSION: str = "1"
NUM_THREADS_ENV: str = "EA_NUM_THREADS"


def num_threads() -> int:
    """Worker threads for curve evaluation, read from EA_NUM_THREADS when called."""
    raw = os.environ.get(NUM_THREADS_ENV, "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{NUM_THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigurationError(f"{NUM_THREADS_ENV} must be a positive integer, got {raw!r}")
    return value
