"""Closed-loop digital twin of a SAG mill supervisory control loop.

Modules
-------
pipeline     raw data validity filtering, 6:1 median downsampling, CSV I/O
regulatory   linear state-space emulation of the MV control loops
narx         one-hidden-layer NARX model of the CVs
expert       fuzzy rule-based setpoint supervisor
twin         closed-loop rollouts, limit scoring, error reports
detection    residual fingerprints, test battery and retraining trigger
scenarios    synthetic plant and multiplicative disturbance scenarios
"""

from . import detection, expert, narx, pipeline, regulatory, scenarios, twin
from .errors import SagTwinError

__version__ = "0.1.0"

__all__ = ["detection", "expert", "narx", "pipeline", "regulatory", "scenarios", "twin", "SagTwinError"]
