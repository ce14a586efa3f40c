"""
vaxnet - per-country retweet and co-sharing network analysis of the vaccine debate.
"""

from .config import ConfigError, PipelineConfig, load_config
from .pipeline import STAGES, MissingArtifactError, StageRunner

__version__ = "1.0.0"
__all__ = ["ConfigError", "PipelineConfig", "load_config", "STAGES", "MissingArtifactError", "StageRunner"]
