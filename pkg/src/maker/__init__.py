"""Multi-modal, kinematics-guided vessel trajectory forecasting."""

__version__ = "0.1.0"
