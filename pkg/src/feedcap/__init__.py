"""SK(1)/SK(2) feedback-coding rates over AR(p) Gaussian noise channels."""

from .coding_sim import SimConfig, SimReport, simulate
from .noise_model import ArModel, psd, sample_noise
from .params import Sk2Params
from .rate_solver import (
    InfeasibleError,
    RateResult,
    SearchOptions,
    ar1_capacity,
    combined_rate,
    sk1_power,
    sk1_rate,
    sk2_power,
    sk2_power_repeated,
    sk2_rate,
)

__version__ = "0.1.0"

__all__ = [
    "ArModel",
    "InfeasibleError",
    "RateResult",
    "SearchOptions",
    "SimConfig",
    "SimReport",
    "Sk2Params",
    "ar1_capacity",
    "combined_rate",
    "psd",
    "sample_noise",
    "simulate",
    "sk1_power",
    "sk1_rate",
    "sk2_power",
    "sk2_power_repeated",
    "sk2_rate",
]
