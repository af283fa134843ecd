"""Black-box adversarial attack that learns a per-tile categorical noise
distribution, trading query count against perceptual distortion."""

from .distribution import (
    NoiseGrid,
    SampleSpace,
    Square,
    ThetaField,
    build_sample_space,
    expand_to_pixels,
    grad_step,
    init_uniform_theta,
    resample_square,
    sample_cell,
)
from .engine import (
    AttackConfig,
    AttackResult,
    dynamic_lambda_search,
    is_success,
    learning_rate_at,
    margin_loss,
    run_attack,
    total_loss,
)
from .image import (
    BoundingBox,
    ImageFormatError,
    ImageTensor,
    PixelMask,
    apply_noise,
    load_png,
    mask_from_bbox,
    save_png,
)
from .kernels import BACKEND
from .metrics import (
    MetricKind,
    SsimParams,
    ciede2000_image,
    ciede2000_pair,
    lp_normalized,
    one_minus_ssim,
    rgb_to_lab,
    ssim_index,
)
from .oracle import (
    BudgetExhausted,
    BuiltinOracle,
    ExternalOracle,
    OracleError,
    OracleProtocolError,
    OracleSpec,
    QueryCounter,
    load_weights,
    predict_logits,
    predicted_class,
    save_weights,
)

__version__ = "0.1.0"
