"""Excursion simulation and verification for spectrally positive compound
Poisson processes with negative drift."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    JumpMeasure,
    ProcessSpec,
    discrete_spec,
    mean_and_regime,
    phi,
    psi,
    recurrent_pareto_spec,
    transient_pareto_spec,
)
