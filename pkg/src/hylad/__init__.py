"""Hybrid latent dynamics toolkit.

Generates benchmark dynamical-system datasets (five rendered physics systems
plus a tracer-kinetics imaging system), trains hybrid physics+neural latent
ODE models with learn-to-identify meta-objectives, and evaluates forecasting
and identification quality.
"""

__version__ = "0.1.0"

from . import data, evaluate, models, render, simulate, systems, train  # noqa: F401
