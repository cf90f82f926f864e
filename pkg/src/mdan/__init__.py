"""Multi-domain attention network for unsupervised RGB-to-thermal adaptation.

A small numpy implementation: reverse-mode autodiff, SE attention and residual
adapters on a shared residual backbone, three-step adversarial training of the
target attention, discriminator-gated self-training, a synthetic cross-modal
benchmark and evaluation tools.
"""

from .autodiff import GradTape, NonFiniteError, Tensor
from .data import Dataset, GenSpec, generate_dataset, load_dataset, save_dataset
from .evaluation import EvalReport, evaluate, export_attention_maps, export_features_2d
from .gradcheck import GradCheckReport, check_network_gradients, grad_check
from .network import (Domain, Network, NetworkConfig, ParamStore, build_network, forward,
                      load_checkpoint, save_checkpoint)
from .selftrain import SelfTrainConfig, generate_pseudo_labels, selftrain_finetune
from .training import TrainConfig, TrainLog, train_ablation, train_alg1

__version__ = "0.1.0"

__all__ = [
    "GradTape", "NonFiniteError", "Tensor", "Dataset", "GenSpec", "generate_dataset",
    "load_dataset", "save_dataset", "EvalReport", "evaluate", "export_attention_maps",
    "export_features_2d", "GradCheckReport", "check_network_gradients", "grad_check",
    "Domain", "Network", "NetworkConfig", "ParamStore", "build_network", "forward",
    "load_checkpoint", "save_checkpoint", "SelfTrainConfig", "generate_pseudo_labels",
    "selftrain_finetune", "TrainConfig", "TrainLog", "train_ablation", "train_alg1",
]
