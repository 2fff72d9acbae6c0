"""resectsim: deterministic simulator and planner for supervised airway-tumor resection.

Subpackages:
    geometry      3D/2D types, pinhole projection, IoU, cloud subtraction
    pcd           ASCII PCD reader/writer
    phantom       procedural trachea/tumor scene, rendering, voxel cutting
    segmentation  synthetic detector, masks, cloud segmentation
    surface       polynomial fitting, model sweep, Pareto selection
    planner       pitch estimation and clearance-offset cut planning
    executor      supervised FSM workflow and run records
    evaluation    post-run metrics
    gateway       HTTP/SSE service boundary
    cli           resectsim command line
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    evaluation,
    executor,
    geometry,
    pcd,
    phantom,
    planner,
    segmentation,
    surface,
)
