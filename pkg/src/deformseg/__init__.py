"""deformseg: deformable-attention transformer U-Net for image segmentation.

A self-contained float64 library: tape-based reverse-mode autodiff, bilinear
and trilinear grid sampling, deformable convolution and patch embedding,
deformable / neighbourhood / window multi-head attention, multi-scale
deformable positional encoding, a U-shaped segmentation network, and the
training, metric and benchmark machinery to exercise all of it on synthetic
multi-class segmentation tasks.
"""

from .attention import (DMSA, NMSA, WMSA, AttentionConfig, FullAttention,
                        NeighborhoodIndex, TransformerBlock, neighborhood_index)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SegmentationSample, gen_synthetic, make_split
from .embed import (DeformConv2d, OffsetField, PatchEmbedDown, PatchEmbedFirst,
                    deformable_conv2d)
from .errors import (CheckpointFormatError, ConfigError, ContractError,
                     DeformsegError, DimensionError, MetricUndefinedError,
                     TrainingDivergedError)
from .losses import LossConfig, combined_loss, cross_entropy, dice_loss, one_hot
from .metrics import MetricsSummary, dsc_metric, hd95_metric, summarize
from .modules import LayerNorm, Linear, Mlp, Module, Scope
from .network import Network, NetworkConfig, NetworkOutput, build, param_count
from .optim import AdamW, cosine_lr
from .posenc import CpeBaseline, MsDepe
from .rng import Rng, split
from .sampling import SampleGrid, sample
from .tensor import (Tape, Tensor, backward, concat, conv2d, depthwise_conv2d,
                     gelu, layer_norm, log_softmax, matmul, nearest_downsample,
                     permute, reshape, softmax, take_rows, tensor_mean,
                     tensor_sum, transposed_conv2d)
from .training import TrainConfig, TrainLog, evaluate, predict, train

__version__ = "0.1.0"
