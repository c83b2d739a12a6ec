"""Selective repulsive knowledge distillation for contrastive dual encoders, at desk scale."""
__version__ = "0.1.0"

from srkd._backend import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
