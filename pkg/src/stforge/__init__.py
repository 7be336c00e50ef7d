"""stforge: query curation, curriculum statistics, rubric rewards, RL
objective kernels, and a deterministic geospatial tool sandbox."""

__version__ = "0.1.0"
