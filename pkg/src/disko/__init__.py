"""Stable Koopman operator identification from snapshot data."""

from .basis import BasisDictionary, pendulum_dictionary, pendulum_lqr_dictionary
from .edmd import KoopmanModel, Stability, classify_stability, fit_least_squares
from .snapshots import AccumulatorSet, SnapshotSet
from .soc import SOCConfig, fit_stable, project_nearest_stable

__all__ = [
    "AccumulatorSet", "BasisDictionary", "KoopmanModel", "SOCConfig",
    "SnapshotSet", "Stability", "classify_stability", "fit_least_squares",
    "fit_stable", "pendulum_dictionary", "pendulum_lqr_dictionary",
    "project_nearest_stable",
]
