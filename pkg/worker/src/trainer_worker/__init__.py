"""Trainer worker: builds child architectures received over the wire
protocol, trains them briefly on small synthetic datasets, and reports
validation accuracy as the performance signal."""

from .arch_schema import Arch, ArchError, Layer, ShapeError, UnsupportedLayer, parse_arch
from .datasets import make_dataset
from .models import build_model, parameter_count
from .train import train_and_score

__version__ = "0.1.0"
