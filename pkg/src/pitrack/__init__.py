"""Set-valued recurrent tracking with assignment attention.

The model keeps one embedding per tracked trajectory, matches detections to
trajectories with multi-head attention, and is invariant to the order of the
detections while being equivariant to the order of its state slots. The
package also ships a parameter-matched vector-GRU baseline, permutation-
invariant training losses, a detector simulator, and tracking metrics.
"""

from .attention import (
    AttentionWeights,
    MultiHeadParams,
    assignment_context,
    multi_head,
    scaled_dot_attention,
)
from .backend import backend_name
from .losses import fpit_loss, frame_cost, hungarian, spit_loss
from .metrics import (
    DetPoint,
    TrackReport,
    angular_error,
    det_curve,
    evaluate_scene,
    ids_count,
    match_frame,
)
from .recurrent import (
    BaselineModel,
    ModelConfig,
    PirnnModel,
    PirnnState,
    baseline_forward,
    param_match,
    pirnn_step,
    track_sequence,
)
from .sim import (
    Scene,
    SimConfig,
    Trajectory,
    generate_scene,
    load_scenes,
    make_dataset,
    save_scenes,
    simulate_detector,
)
from .tensor import ParamStore, Tensor, backward, grad_check
from .training import TrainConfig, adam_step, evaluate, train

__version__ = "0.1.0"
