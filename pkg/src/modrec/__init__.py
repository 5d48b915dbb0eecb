"""modrec: a desk-scale modulation recognition laboratory.

Synthesizes labeled IQ frames over an SNR grid, trains a residual +
attention BiLSTM classifier built on a small scratch autodiff engine,
and evaluates it with per-SNR confusion matrices and an
accuracy-vs-SNR curve.
"""

from .dataset import (
    DatasetHeader,
    IQFrame,
    SplitSpec,
    batches,
    read_dataset,
    split,
    write_dataset,
)
from .layers import (
    AttentionParams,
    Conv1dParams,
    DenseParams,
    LstmParams,
    ResidualBlockParams,
    attention_pool,
    bilstm_forward,
    cross_entropy,
    dense_forward,
    lstm_cell_step,
    residual_block_forward,
)
from .model import (
    ModelConfig,
    ModelParams,
    build_model,
    forward,
    load_params,
    predict,
    save_params,
)
from .signals import (
    DatasetSpec,
    SchemeSpec,
    awgn,
    constellation,
    generate_dataset,
    generate_frame,
    modulate,
    rrc_filter,
)
from .tensor import (
    Tensor,
    apply_activation,
    backward,
    conv1d,
    grad_check,
    matmul,
    set_default_dtype,
    softmax,
    tensor_new,
)
from .training import (
    AdamState,
    SnrConfusion,
    TrainConfig,
    TrainHistory,
    adam_step,
    emit_report,
    evaluate,
    train,
)

__version__ = "0.1.0"
