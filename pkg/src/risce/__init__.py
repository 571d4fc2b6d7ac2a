"""RIS-aided MIMO uplink channel estimation: synthesis, training, estimators,
and Cramer-Rao bounds for unstructured and geometric channel models."""

from .arrays import (ArraySpec, FreqGrid, SpatialFreq, build_dictionary,
                     freq_from_angles, steering, ula_steering, ura_steering,
                     wrap_freq)
from .channels import (ChannelSet, CorrelationModel, GeometricParams,
                       composite_channel, composite_covariance,
                       composite_vector, draw_geometric_params, group_channel,
                       normalize_identifiability, synth_geometric,
                       synth_unstructured)
from .crb import (CrbReport, EtaLayout, channel_jacobian, crb_structured,
                  crb_unstructured, fim_eta, mean_jacobian, noiseless_mean,
                  pack_eta, real_block, real_stack, unpack_eta)
from .doa import (AoaProblem, beamform_peaks, dml_objective, refine_paths,
                  refine_rotation, sample_covariance)
from .errors import IdentifiabilityError, PeakCountError
from .estimators import (LmmseResult, LsResult, TwoStepResult, lmmse_estimate,
                         lowrank_lmmse, ls_estimate, subblock_ls,
                         two_step_common, two_step_min_training)
from .geometry import SystemGeometry
from .training import (MeasurementOperator, TrainingPlan, assemble_measurement,
                       dft_ris_sequence, hadamard_ris_sequence,
                       one_hot_ris_sequence, orthogonal_pilots,
                       random_ris_sequence, simulate_uplink)
from .two_stage import (ReducedStage2, Stage1Result, Stage2Result,
                        composite_basis, reconstruct_composite, refit_gains,
                        stage1_angles, stage2_reduce, stage2_solve)

__version__ = "0.1.0"
