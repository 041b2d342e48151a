"""Graph-cut segmentation of fiber bundles in diffusion tensor volumes.

The chain runs FA map, streamline tracking between two seed regions, a
centerline with planes orthogonal to it, ray sampling of FA, an optimal
surface cut on a layered graph, and a closed tube mesh that is voxelized
for scoring against ground truth.
"""
from .errors import FibercutError
from .pipeline import PipelineConfig, run_report, run_segment

__all__ = ["FibercutError", "PipelineConfig", "run_report", "run_segment"]
__version__ = "0.1.0"
