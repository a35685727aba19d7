import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

PACKAGE_DIR = os.path.dirname(os.path.abspath(__file__))


class Config:
    """Configuration class for the sphericity toolkit"""

    # Application Settings
    APP_TITLE = os.getenv("APP_TITLE", "Sphericity Workbench - Deviation from Spherical Symmetry")
    APP_DESCRIPTION = os.getenv("APP_DESCRIPTION", "Estimate, bound and test the minimum-distance measure M²")
    DEBUG_MODE = os.getenv("DEBUG_MODE", "false").lower() == "true"
    LOG_LEVEL = os.getenv("SPHERICITY_LOG_LEVEL", "INFO").upper()

    # Inference Settings
    QUANTILE_TABLE = os.getenv("SPHERICITY_QUANTILE_TABLE", os.path.join(PACKAGE_DIR, "data", "w_quantiles.txt"))
    # theorem: SE 2σ̂/√n, matching the N(0, 4σ²) limit of √n(M̂² - M²); literal: σ̂/√n
    JACKKNIFE_SCALE = os.getenv("SPHERICITY_JACKKNIFE_SCALE", "theorem").lower()
    # variance: ŝ is already the standard deviation of M̂²; literal: ŝ/√n
    EXACT_SCALING = os.getenv("SPHERICITY_EXACT_SCALING", "variance").lower()
    BIAS_REDUCTION_A = float(os.getenv("SPHERICITY_BIAS_REDUCTION_A", "0.5"))

    # Execution Settings
    THREADS = max(1, int(os.getenv("SPHERICITY_THREADS", "1")))
    SEED = int(os.getenv("SPHERICITY_SEED", "20240101"))
    HISTORY_DB = os.getenv("SPHERICITY_HISTORY_DB", "")

    # Default W table generation (production size)
    W_TABLE_PATHS = int(os.getenv("SPHERICITY_W_PATHS", "1000000"))
    W_TABLE_STEPS = int(os.getenv("SPHERICITY_W_STEPS", "2000"))

    @classmethod
    def get_settings_status(cls):
        """Get status of the active settings"""
        return {
            "quantile_table": cls.QUANTILE_TABLE,
            "quantile_table_present": os.path.exists(cls.QUANTILE_TABLE),
            "jackknife_scale": cls.JACKKNIFE_SCALE,
            "exact_scaling": cls.EXACT_SCALING,
            "bias_reduction_a": cls.BIAS_REDUCTION_A,
            "threads": cls.THREADS,
            "seed": cls.SEED,
            "history_enabled": bool(cls.HISTORY_DB),
            "debug_mode": cls.DEBUG_MODE
        }
