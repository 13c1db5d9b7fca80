"""Stochastic primal-dual hybrid gradient toolkit.

Matrix-free operators, proximity operators, proper random samplings,
certified step-size planning with closed-form linear rates, the
stochastic/deterministic solvers, and a synthetic parallel-MRI
benchmark harness.
"""

from .spaces import COMPLEX, REAL, ProductSpace, Space
from .operators import (BlockRow, Compose, Dense, Dft2, Diagonal, DimensionError,
                        Gradient2, Identity, LinOp, NormEstimate, Scaled, Subsample,
                        SumOp, UnsupportedShapeError, Zero, dense_matrix, dense_norm,
                        operator_norm)
from .proximal import (DataFitConjugate, FistaConfig, L1Norm, ProxFn, ShiftedL2,
                       TvPlusL2, ZeroFn, prox, prox_l2conj_datafit, prox_tv_l2,
                       soft_threshold)
from .sampling import (BNiceSampling, FullSampling, Partition, PartitionSampling,
                       SamplingError, SamplingScheme, SerialSampling, b_serial_uniform,
                       consecutive_partition, count_partitions, enumerate_partitions,
                       equidistant_partition, serial_uniform)
from .problem import DualBlock, SaddleProblem
from .stepsize import (Certificate, PropernessError, RateInputs, StepPlan,
                       StepSizeError, StepSizeOperator, assemble_D, certify,
                       eso_from_D, expected_gram_norm, plan_bnice_convex,
                       plan_bserial_convex, plan_serial_convex, rate_bnice_sc,
                       rate_bserial_sc, rate_full_sc, rate_general_sc, rate_per_epoch,
                       rate_serial_optimized_sc, rate_serial_uniform_sc,
                       weighted_gram_norm)
from .solver import (ConsistencyError, DivergenceError, Reference, RunRecord,
                     SolverState, UncertifiedPlanError, compute_reference, pdhg_run,
                     relative_primal_error, spdhg_run)
from .mri import (CoilArray, InstanceSpec, MriInstance, build_instance, build_problem,
                  coil_value, load_instance, make_coil_maps, make_mask, make_phantom,
                  read_complex_array, saddle_problem, save_instance,
                  write_complex_array)

__version__ = "0.1.0"
