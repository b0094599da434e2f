"""Self-supervised BYOL pretraining + supervised fine-tuning of a small CNN
for thermal-image fault classification, built on a from-scratch numpy
autodiff engine."""

__version__ = "0.1.0"
