from .data import Dataset, iid_shards, label_shards, load_mnist, mnist_available, synthetic_digits
from .train import (ContinualResult, FederatedResult, FederationConfig, History, Trainer, TrainConfig,
                    TrainResult, fedavg, run_continual, run_federated, run_training, split_classes)

__all__ = [
    "Dataset", "iid_shards", "label_shards", "load_mnist", "mnist_available", "synthetic_digits",
    "ContinualResult", "FederatedResult", "FederationConfig", "History", "Trainer", "TrainConfig",
    "TrainResult", "fedavg", "run_continual", "run_federated", "run_training", "split_classes",
]
