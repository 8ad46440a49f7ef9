from .layers import (BN, CONV, FC, POOL, Block, InputSpec, LayerSpec, ModelGraph, NeuronConfig, bn, conv,
                     fc, mnist_convnet, pool)
from .network import SGD, SpikingNetwork, encode_images, init_weights, rate_loss

__all__ = [
    "BN", "CONV", "FC", "POOL", "Block", "InputSpec", "LayerSpec", "ModelGraph", "NeuronConfig",
    "bn", "conv", "fc", "mnist_convnet", "pool", "SGD", "SpikingNetwork", "encode_images",
    "init_weights", "rate_loss",
]
