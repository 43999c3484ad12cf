"""Resource-constrained neural architecture search: a recurrent controller
adapts architectures via scale/insert/remove actions, an analytic resource
model scores parameters/FLOPs/bytes/compute-intensity, and accumulated-return
policy gradients train the controller under soft constraint penalties."""

from .arch import (ArchGraph, BranchSpec, LayerSpec, ModuleArch, ModuleSpec,
                   TensorShape, canonical_parse, canonical_serialize,
                   infer_shapes, stack_module, validate)
from .actions import (Action, SearchSpace, image_layer_space,
                      image_module_space, kws_layer_space)
from .evaluators import EvalResult, surrogate_evaluate
from .resources import ResourceReport, count_flops, count_params, report
from .reward import Constraint, RewardConfig, reward, violation
from .search import SearchConfig, SearchOutcome, run_random_search, run_search

__version__ = "0.1.0"
