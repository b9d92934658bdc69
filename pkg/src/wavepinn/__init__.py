"""Physics-informed neural networks for phase-resolved reconstruction and prediction of
nonlinear potential-flow water waves."""

from .wave_theory import (GRAVITY, DomainError, JonswapSpec, PredictionRegion, SeaStateSpec,
                          WaveComponent, solve_dispersion, reference_sea)
from .metrics import GridField, ssp_1d, ssp_2d
from .network import ModelConfig, PinnModel, Ranges, init_model
from .physics import CollocationCounts, ConfigError, Domain
from .trainer import SegmentConfig, TrainConfig, run_assimilation, run_prediction

__version__ = "0.1.0"
