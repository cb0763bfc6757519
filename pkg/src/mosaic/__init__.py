"""Diagnostic toolkit for controlled multi-object image generation studies:
dataset synthesis, classifier-based evaluation, memorization analysis and
caption-corpus mining."""

__version__ = "0.1.0"

from .scene import (  # noqa: F401
    BROWN,
    COLOR_INDEX,
    COLOR_NAMES,
    PALETTE,
    ConditionLabel,
    SceneObject,
    SceneSpec,
    Shape,
    Task,
    Variant,
    diagonal_index,
    sector_interval,
    sector_of_angle,
)
from .sampling import (  # noqa: F401
    ClassAllocation,
    ConfigError,
    DatasetConfig,
    Distribution,
    GenerationError,
    HoldoutPlan,
    allocate_counts,
    build_dataset,
    build_holdout_plan,
    plan_dataset,
)
from .render import (  # noqa: F401
    RenderSettings,
    derive_label,
    measure_scene,
    render_scene,
)
from .metrics import (  # noqa: F401
    MemorizationConfig,
    NeighborResult,
    accuracy,
    distance_histograms,
    joint_accuracy,
    memorization_rate,
    nn_search,
)
