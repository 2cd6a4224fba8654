from .binning import (  # noqa: F401
    ActivationStack,
    BinningConfig,
    Channel,
    activation_stack,
    pi_k,
    pi_k_deriv,
    sigmoid_kernel,
)
from .colorspace import ImageYUV, read_png, rgb_to_yuv, write_png, yuv_to_rgb  # noqa: F401
from .histogram import SoftHistogram, cumulative, histogram_backward, soft_histogram  # noqa: F401
from .joint import JointHistogram, joint_backward, joint_backward_first, joint_histogram  # noqa: F401
from .metrics import (  # noqa: F401
    LossReport,
    LossWeights,
    TotalLoss,
    d_mi,
    emd,
    emd_backward,
    joint_entropy,
    mi_backward,
    mutual_information,
    reference_histograms,
    total_loss,
)
from .optim import OptimizationConfig, color_transfer, colorize, optimize  # noqa: F401
