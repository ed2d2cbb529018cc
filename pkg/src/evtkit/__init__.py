"""Sparse patch tokens and a latent-memory attention network for
event-camera stream classification."""

from .io import (
    Event,
    EventStream,
    MotionClass,
    StreamFormatError,
    SynthSpec,
    generate_synthetic,
    read_stream,
    write_stream,
)
from .model import (
    LatentMemory,
    ModelConfig,
    ModelParams,
    NoInformationError,
    classify,
    classify_stream,
    classify_windows,
    fresh_memory,
    memory_update,
    process_window,
)
from .representation import (
    EventFrame,
    PatchToken,
    ReprConfig,
    WindowResult,
    activated_patches,
    build_frame,
    next_window,
    window_iterator,
)

__all__ = [
    "Event",
    "EventFrame",
    "EventStream",
    "LatentMemory",
    "ModelConfig",
    "ModelParams",
    "MotionClass",
    "NoInformationError",
    "PatchToken",
    "ReprConfig",
    "StreamFormatError",
    "SynthSpec",
    "WindowResult",
    "activated_patches",
    "build_frame",
    "classify",
    "classify_stream",
    "classify_windows",
    "fresh_memory",
    "generate_synthetic",
    "memory_update",
    "next_window",
    "process_window",
    "read_stream",
    "window_iterator",
    "write_stream",
]

__version__ = "0.1.0"
