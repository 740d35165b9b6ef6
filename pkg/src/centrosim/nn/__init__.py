from . import autodiff, checkpoint, layers, optim, training

__all__ = ["autodiff", "checkpoint", "layers", "optim", "training"]
