"""Objective-aware trajectory credit assignment for GRPO on a toy flow-matching policy."""
from otca.flow_env import NoiseSchedule, Trajectories, VelocityNet, ode_sample, sde_sample
from otca.grpo import CreditConfig, otca_step
from otca.moca import moca_solve

__version__ = "0.1.0"

__all__ = ["CreditConfig", "NoiseSchedule", "Trajectories", "VelocityNet", "moca_solve",
           "ode_sample", "otca_step", "sde_sample"]
