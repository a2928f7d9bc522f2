"""Desk-scale testbed for environment-adaptive CSI feedback.

Pipeline: randomized indoor scenes -> image-method ray tracing ->
spatial-frequency CSI -> angular-delay truncation and Gaussian-projection
compression -> scene-conditioned neural reconstruction, benchmarked by
NMSE against baseline, online-fine-tuned and LOS-specialist models.
"""

__version__ = "0.1.0"

from .scene import (Scene, SceneGraphMatrix, SceneParams, WallSegment,
                    generate_scene, make_empty_scene, rasterize,
                    scene_graph_to_model_input)
from .raytrace import PathComponent, TraceConfig, trace_paths
from .channel import (ChannelMatrix, OfdmConfig, UlaConfig, assemble_channel,
                      generate_dataset)
from .csi import (Codeword, NormParams, ProjectionMatrix, compress, denormalize,
                  normalize, to_angular_delay)
from .model import (GeneratedParams, HyperNet, ModelDims, ReconNet,
                    forward_adaptive, forward_baseline, generate_params)
from .training import TrainSettings, fine_tune_online, train_step1, train_step2
from .harness import MetricsRecord, nmse, run_cr_sweep, run_online_sweep, run_switch_comparison
from .config import ExperimentConfig, SplitSpec, parse_and_validate

__all__ = [
    "Scene", "SceneGraphMatrix", "SceneParams", "WallSegment", "generate_scene",
    "make_empty_scene", "rasterize", "scene_graph_to_model_input",
    "PathComponent", "TraceConfig", "trace_paths",
    "ChannelMatrix", "OfdmConfig", "UlaConfig", "assemble_channel", "generate_dataset",
    "Codeword", "NormParams", "ProjectionMatrix", "compress", "denormalize",
    "normalize", "to_angular_delay",
    "GeneratedParams", "HyperNet", "ModelDims", "ReconNet", "forward_adaptive",
    "forward_baseline", "generate_params",
    "TrainSettings", "fine_tune_online", "train_step1", "train_step2",
    "MetricsRecord", "nmse", "run_cr_sweep", "run_online_sweep", "run_switch_comparison",
    "ExperimentConfig", "SplitSpec", "parse_and_validate",
]
