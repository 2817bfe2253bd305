"""cakit: channel-attention mechanisms with exact accounting and a tiny trainer."""

# CAK_THREADS caps the BLAS worker pool. It must land in the environment
# before numpy first loads, which is why this sits above every import.
import os as _os

_cak_threads = _os.environ.get("CAK_THREADS")
if _cak_threads:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _cak_threads)

__version__ = "0.1.0"

from .attention import (  # noqa: E402
    ATTENTION_KINDS,
    ECA,
    ECANS,
    SE,
    SEGC,
    AttentionConfig,
    AttentionModule,
    SEVar1,
    SEVar2,
    SEVar3,
    band_matrix,
    band_matrix_oracle,
    block_diag_matvec,
    channel_mul,
    eca_forward,
    eca_ns_forward,
    make_attention,
    per_channel_conv1d,
    se_forward,
    se_gc_forward,
    se_var1_forward,
    se_var2_forward,
    se_var3_forward,
)
from .complexity import (  # noqa: E402
    RESNET50_BASELINE_GFLOPS,
    RESNET50_BLOCK_CHANNELS,
    ComplexityReport,
    count_flops,
    count_network_params,
    count_params,
    load_layout,
    transform_macs,
)
from .data import (  # noqa: E402
    Dataset,
    load_dataset,
    save_dataset,
    split_dataset,
    synth_dataset,
)
from .errors import (  # noqa: E402
    CheckpointError,
    ConfigError,
    DataFormatError,
    NumericalAbort,
)
from .kernel_policy import (  # noqa: E402
    KernelPolicy,
    adaptive_kernel_size,
    adaptive_kernel_sizes,
    phi,
)
from .net import (  # noqa: E402
    Network,
    NetworkSpec,
    StageSpec,
    build_network,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import (  # noqa: E402
    GradTape,
    Tensor,
    conv1d_channels,
    conv2d,
    gap,
    linear,
    no_grad,
    relu,
    scale_channels,
    sigmoid,
    softmax_cross_entropy,
    value_and_grad,
)
from .train import (  # noqa: E402
    SGD,
    EvalMetrics,
    TrainConfig,
    TrainReport,
    channel_weights_csv,
    evaluate,
    export_channel_weights,
    train,
)
