"""Stage orchestration, manifest persistence, configuration and statistics."""

from .config import PipelineConfig, from_mapping, load
from .manifest import STAGE_FLAGS, Manifest, ManifestEntry
from .stages import FULL_RUN, STAGES, StageContext, StageReport, run_all, run_stage

__all__ = [
    "FULL_RUN",
    "STAGES",
    "STAGE_FLAGS",
    "Manifest",
    "ManifestEntry",
    "PipelineConfig",
    "StageContext",
    "StageReport",
    "from_mapping",
    "load",
    "run_all",
    "run_stage",
]
