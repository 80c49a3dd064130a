from . import functional
from .checkpoint import load_tensors, save_tensors
from .layers import BatchNorm, Conv3d, ConvTranspose3d, Layer, Linear, MaxPool3d, MaxUnpool3d, ReLU, Reshape
from .optim import SGD, Adam, make_optimizer, optimizer_step

__all__ = [
    "functional", "load_tensors", "save_tensors", "Layer", "Conv3d", "ConvTranspose3d",
    "BatchNorm", "ReLU", "Linear", "MaxPool3d", "MaxUnpool3d", "Reshape",
    "SGD", "Adam", "make_optimizer", "optimizer_step",
]
