import os
from dotenv import load_dotenv

load_dotenv()

# Output Configuration
OUTPUT_PATH = os.getenv("QTT_OUTPUT_PATH", "runs")
LOG_LEVEL = os.getenv("QTT_LOG_LEVEL", "INFO")
STEPS_FILE = "steps.csv"
SUMMARY_FILE = "summary.csv"
FINAL_STATE_FILE = "final_state.txt"
BENCH_FILE = "bench.csv"

# Truncation Configuration
DEFAULT_EPS = float(os.getenv("QTT_EPS", "1e-4"))
DEFAULT_EPS_IN = float(os.getenv("QTT_EPS_IN", "1e-5"))
DEFAULT_R_MAX = int(os.getenv("QTT_R_MAX", "64"))
DEFAULT_R_MIN = int(os.getenv("QTT_R_MIN", "1"))
OVERSAMPLE_FACTOR = 2  # cap of unioned row sets, in multiples of the base rank

# Index selection / linear solver
MAXVOL_DELTA = 0.01
MAXVOL_MAX_ITER = 100
CGS_TOL = float(os.getenv("QTT_CGS_TOL", "1e-10"))
CGS_MAX_ITER = int(os.getenv("QTT_CGS_MAX_ITER", "1000"))

# Canonical-form checks
CANONICAL_TOL = 1e-8
ORTHONORMAL_TOL = 1e-10

# Dense oracles
DENSE_POINT_LIMIT = 2 ** 20

# Burgers Configuration
BURGERS_L = 9
BURGERS_CFL = 0.9
BURGERS_MIN_RANK = 4

# Maxwell Configuration
MAXWELL_L = 8
MAXWELL_CFL = 0.5
MAXWELL_T_FINAL = 1.2

# Advection Configuration
ADVECTION_L = 5
ADVECTION_T_FINAL = float(os.getenv("QTT_ADVECTION_T_FINAL", "10.0"))
ADVECTION_DOMAIN_HALF_WIDTH = 12.0  # in units of v_th

# Experiment Configuration
EXPERIMENTS = {
    "burgers": "Inviscid Burgers, Godunov upwinding",
    "maxwell": "Maxwell TE cavity with a dielectric box",
    "advection": "Magnetized advection in Fourier space",
    "unit-bench": "Canonical-form and projector residuals on random TTs",
}
