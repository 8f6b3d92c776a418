"""Group-sparse input selection for dense neural networks.

Train multi-layer networks whose first-layer weights are penalized per
input-variable group, with a blockwise coordinate training loop that
zeroes entire groups exactly when disconnecting them costs nothing.
"""

from .grouping import (
    GroupPartition,
    SparsityMask,
    group_regularizer,
    total_regularizer,
    regularizer_subgradient,
    prune_group,
    load_group_manifest,
    save_group_manifest,
)
from .nn import (
    DenseLayer,
    Network,
    Gradients,
    ForwardPass,
    init_network,
    forward,
    backward,
    apply_update,
    masked_forward,
    save_snapshot,
    load_snapshot,
)
from .losses import LossSpec, loss_and_grad, loss_value, inverse_frequency_weights
from .metrics import (
    EvalReport,
    accuracy,
    auc,
    confusion_matrix,
    evaluate,
    max_cc,
    mean_pairwise_jaccard,
)
from .data import (
    Dataset,
    gen_parity,
    load_csv_with_manifest,
    load_mnist_idx,
    load_splice,
    load_splice_pair,
    rows_as_groups,
    train_val_split,
    downsample_balanced,
    wavelet_dataset,
)
from .wavelet import haar_forward, inverse_haar, wavelet_partition
from .optim import (
    TrainConfig,
    EpochTrace,
    baseline_schedule,
    train,
    sgd_epoch,
    sbcgd_epoch,
    sbcgd_b_epoch,
    pruning_tests,
)

__version__ = "0.1.0"
