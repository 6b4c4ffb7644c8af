"""critbrw: critical branching random walk simulation and verification on Z^d."""

__version__ = "0.1.0"

from .model import (OffspringLaw, StepLaw, geometric_half, binary, poisson1,
                    uniform_step, pgf_eval, adjoint, sample_offspring, sample_step)
from .lattice import BallSpec, in_ball, outer_boundary, srw_hit_prob, green_table
from .engine import SimSpec, RunOutcome, FrozenParticle, run, run_batch, run_wave_chain

__all__ = [
    "OffspringLaw", "StepLaw", "geometric_half", "binary", "poisson1",
    "uniform_step", "pgf_eval", "adjoint", "sample_offspring", "sample_step",
    "BallSpec", "in_ball", "outer_boundary", "srw_hit_prob", "green_table",
    "SimSpec", "RunOutcome", "FrozenParticle", "run", "run_batch", "run_wave_chain",
]
