"""Physics-informed neural network for 2-D poroelastic consolidation.

A fully-connected network maps (x, z, t) to the displacements and pore
pressure (u, v, p); training minimizes the data misfit on samples of the
Barry-Mercer analytical solution plus the mean squared residuals of the
governing equilibrium and mass-balance equations, differentiated exactly
with a built-in jet/reverse-mode engine.
"""

from .autodiff import (ACTIVATIONS, DivergedError, FdReport, Jet2, Tensor,
                       affine_combine, backward, fd_check, jet_compose,
                       loss_parameter_gradient)
from .barry_mercer import (DomainSpec, SeriesTruncation, SourceSpec,
                           generate_grid_dataset, grid_axes, lambda_n,
                           lambda_nq, lambda_q, p_hat, sine_series_delta,
                           solution_at, solution_at_points, solution_on_grid,
                           source_Q, u_hat, v_hat)
from .data import CollocationSet
from .evaluation import (FieldGrid, export_deformed_mesh, export_timeseries,
                         predict_grid, relative_l2)
from .network import (FieldJet, MlpSpec, NormalizationMaps, ParameterSet,
                      forward, forward_jet, forward_values, init_params)
from .residuals import (DimensionalScales, LossBreakdown, NondimParams,
                        PhysicalParams, ResidualTriple, constraint_loss,
                        nondimensionalize, residual_terms, residuals,
                        total_loss, training_loss)
from .trainer import (AdamState, TrainingConfig, TrainingDiverged,
                      TrainingHistory, adam_step, batch_loss_and_grad,
                      load_checkpoint, sample_training_set, save_checkpoint,
                      train)

__version__ = "0.1.0"
