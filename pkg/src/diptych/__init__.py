"""Two-panel (diptych) inpainting engine and experiment harness.

Subject-driven generation is framed as inpainting: the reference subject
occupies the left panel of a canvas, the right panel is synthesized under a
text prompt describing both panels, and attention from the synthesized
panel to the reference panel can be enhanced to carry more subject detail.
"""

from .attention import (
    AttentionPartition,
    AttentionProjections,
    EnhancementConfig,
    JointSequence,
    attend_enhanced,
    enhance_reference_attention,
    joint_attention,
    slice_reference_block,
)
from .canvas import (
    BLANK_FILL,
    FULL_RIGHT,
    DiptychCanvas,
    DiptychMask,
    DiptychPrompt,
    PromptKind,
    build_canvas,
    build_canvas_editing,
    build_mask,
    render_prompt,
)
from .adapter import AdapterTrainConfig, ConditionAdapter, train_condition_adapter
from .inpainting import CONDITIONED, ZERO_SHOT, InpaintRequest, conditioned_inpaint, zeroshot_inpaint
from .metrics import (
    AttributeMap,
    ImageEmbedder,
    ScoreReport,
    TextEmbedder,
    diptych_split_eval,
    subject_alignment,
    text_alignment,
)
from .model import DenoiserModel, ModelConfig, predict_velocity
from .numerics import (
    SeededRng,
    cosine_similarity,
    finite_difference_check,
    gaussian,
    matmul,
    softmax_rows,
    stable_seed,
)
from .sampling import SamplerConfig, sample
from .segmenter import SegmentationResult, remote_segment, segment_subject
from .stats import WilcoxonResult, wilcoxon_signed_rank
from .text import Caption, blank_caption, encode_caption
from .training import TrainConfig, TrainingHistory, train_denoiser

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
