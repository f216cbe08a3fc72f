"""Parameter-free channel attention (PFCA) on a small numpy autodiff engine.

The attention weights come from channel statistics of the globally pooled
feature map, so the block adds no trainable parameters. The package also
provides the CA (squeeze-excitation) and PA (pixel attention) baselines,
ResNet and MSRResNet builders, a cost analyzer, SR and classification
metrics, data pipelines and a training loop.
"""

from .attention import CA_KIND, NONE, PA_KIND, PFCA_KIND, PFCA, AttentionKind, pfca_forward
from .cost import analyze, compare, count_flops, count_params
from .models import ModelSpec, build_model, msrresnet_spec, resnet_spec
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "AttentionKind", "NONE", "PFCA_KIND", "CA_KIND", "PA_KIND", "PFCA", "pfca_forward",
    "analyze", "compare", "count_flops", "count_params",
    "ModelSpec", "build_model", "msrresnet_spec", "resnet_spec",
    "Tensor", "no_grad",
]
