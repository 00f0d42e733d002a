"""zeroskip: predict-and-skip zero ReLU outputs on a simulated int8 accelerator."""

from .calibrate import (CalibrationTrace, PredictorParams, binarize_vector,
                        binary_dot, calibrate_model, fit_trace, linfit, pearson)
from .clustering import (AngleGraph, ClusterPlan, build_angle_graph,
                         build_clusters, cluster_layer)
from .container import (ModelBundle, bundle_from_model, deserialize_model,
                        load_model, load_tensor, model_hash, save_model,
                        save_tensor, serialize_model)
from .errors import (ConfigError, ContainerFormatError, DegenerateFitError,
                     SchedulingError, ShapeError)
from .geometry import (cosine_angle, monte_carlo_sign_probability,
                       pairwise_angles, sign_region_probability)
from .model import (BnParams, ConvGeom, LayerDesc, QuantModel, QuantTensor,
                    apply_batchnorm, dot_product, forward_batch,
                    forward_reference, relu, requantize)
from .runtime import (HybridConfig, HybridResult, Outcome, estimate_base,
                      hybrid_forward, negative_input_fraction,
                      predict_member_zero)
from .simulator import (AccelConfig, CostModel, DramConfig, LayerStats,
                        RunStats, energy_report, run_stats_from_jsonl,
                        run_stats_to_jsonl, schedule_layer, simulate)

__version__ = "0.1.0"
