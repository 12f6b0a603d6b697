"""
Configuration Management

Centralizes runtime settings for the pulse-injection simulator and the
measured reference values used by the reproduction driver.
Loads overrides from environment variables (or a .env file).

Usage:
    from src.config import config
    out_dir = config.OUTPUT_DIR
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Get project root directory (parent of src/)
PROJECT_ROOT = Path(__file__).parent.parent.absolute()

# Load environment variables from .env file
load_dotenv(PROJECT_ROOT / '.env')


class Config:
    """Central configuration class"""

    # ==================== Output ====================
    OUTPUT_DIR = os.getenv('QDM_OUTPUT_DIR', 'output')
    PARAMS_FILE = os.getenv('QDM_PARAMS_FILE', '')  # Empty: embedded defaults
    SCENARIOS_DIR = str(PROJECT_ROOT / "scenarios")

    # ==================== Run Settings ====================
    DEFAULT_SEED = int(os.getenv('QDM_SEED', '42'))
    SWEEP_WORKERS = int(os.getenv('QDM_WORKERS', '1'))  # >1 evaluates sweep points in a process pool
    PERIOD_THRESHOLD = float(os.getenv('QDM_PERIOD_THRESHOLD', '4.0'))  # peak / noise floor
    LOG_LEVEL = os.getenv('QDM_LOG_LEVEL', 'WARNING').upper()

    # ==================== Measured Reference Values ====================
    # Oscillation windows (ps); open intervals lo < dt < hi
    REFERENCE_WINDOWS = [(100.0, 150.0), (290.0, 340.0), (350.0, 400.0), (400.0, 450.0)]
    # Staircase plateaus: (dt ps, I_sub pA)
    REFERENCE_STAIRCASES = [(100.0, 1.30), (200.0, 2.62), (300.0, 4.76)]
    REFERENCE_DC_CURRENT = 2.0e5  # pA (0.2 uA at V = -0.7 V)
    REFERENCE_SWEEP = (0.0, 450.0, 1.0)  # dt_min, dt_max, dt_step (ps)
    WASHOUT_TEMPERATURE = 88.0  # K

    # ==================== Validation ====================
    @classmethod
    def validate(cls):
        """Validate configuration values"""
        errors = []

        if cls.SWEEP_WORKERS < 1:
            errors.append(f"QDM_WORKERS must be >= 1, got {cls.SWEEP_WORKERS}")
        if cls.PERIOD_THRESHOLD <= 0:
            errors.append(f"QDM_PERIOD_THRESHOLD must be > 0, got {cls.PERIOD_THRESHOLD}")
        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            errors.append(f"QDM_LOG_LEVEL not recognised: {cls.LOG_LEVEL}")

        # Params file is optional, but must exist when named
        if cls.PARAMS_FILE and not os.path.exists(cls.PARAMS_FILE):
            errors.append(f"Params file not found: {cls.PARAMS_FILE}")

        return errors

    @classmethod
    def print_status(cls):
        """Print configuration status (for debugging)"""
        print("="*60)
        print("Configuration Status")
        print("="*60)
        print(f"Output Dir: {cls.OUTPUT_DIR}")
        print(f"Params File: {cls.PARAMS_FILE or '(embedded defaults)'}" +
              ("" if not cls.PARAMS_FILE else
               (" (exists)" if os.path.exists(cls.PARAMS_FILE) else " (MISSING)")))
        print(f"Seed: {cls.DEFAULT_SEED}")
        print(f"Sweep Workers: {cls.SWEEP_WORKERS}")
        print(f"Period Threshold: {cls.PERIOD_THRESHOLD}")
        print(f"Log Level: {cls.LOG_LEVEL}")
        print("="*60)

        errors = cls.validate()
        if errors:
            print("\nConfiguration Errors:")
            for error in errors:
                print(f"  - {error}")
        else:
            print("\nConfiguration: OK")


# Create singleton instance
config = Config()


if __name__ == "__main__":
    # Test configuration
    config.print_status()
