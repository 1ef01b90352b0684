"""Finite-difference simulator for a Cahn-Hilliard-Keller-Segel tumor growth model."""

from .coefficients import Beta, HSpec, ModelParams, Mobility, validate
from .diagnostics import DiagnosticsRecord, DiagnosticsSeries, Subvolume, twin_metrics
from .energy import free_energy
from .errors import (
    CHKSError, ConfigError, DomainViolation, LinearSolveFailure, NegativeSigma, NewtonDivergence,
    PositivityLoss, RangeViolation, StepFailure, TimeStepError,
)
from .grid import Grid
from .potentials import PotentialSpec
from .state import State
from .stepper import Mode, SchemeConfig, advance, initial_state, step
from .truncation import Truncation

__version__ = "0.1.0"
