"""Estimate the number of active WiFi stations from channel observations.

Modules:

* :mod:`wifiload.bianchi`: saturated DCF relations ``tau(p)``, ``n = f(p)`` and its inverse
* :mod:`wifiload.dcf`: slot-level CSMA/CA simulator and window measurements
* :mod:`wifiload.cusum`: change detector shared by both estimators
* :mod:`wifiload.kalman`: extended Kalman filter baseline
* :mod:`wifiload.nn`: online unsupervised MLP estimator
* :mod:`wifiload.harness`, :mod:`wifiload.plot`, :mod:`wifiload.cli`: experiments
"""
from .bianchi import (
    ProtocolParams,
    collision_of_users,
    collision_slope,
    tau_of_p,
    users_of_p,
)
from .cusum import CusumState
from .dcf import DcfSimulator, LoadSchedule, Measurement, MeasurementMode, run_schedule
from .harness import ExperimentConfig, run_experiment
from .kalman import KfConfig, KfState, kf_run, kf_step
from .nn import NnConfig, NnState, nn_init, nn_run, nn_step

__version__ = "0.1.0"

__all__ = [
    "CusumState",
    "DcfSimulator",
    "ExperimentConfig",
    "KfConfig",
    "KfState",
    "LoadSchedule",
    "Measurement",
    "MeasurementMode",
    "NnConfig",
    "NnState",
    "ProtocolParams",
    "collision_of_users",
    "collision_slope",
    "kf_run",
    "kf_step",
    "nn_init",
    "nn_run",
    "nn_step",
    "run_experiment",
    "run_schedule",
    "tau_of_p",
    "users_of_p",
]
