"""Lifecycle-staged code generation toolkit.

Provides the artifact chain model, an SCXML parser/validator/simulator,
a verbatim prompt registry, pluggable generation backends, a resumable
pipeline orchestrator, text/code similarity metrics, a dataset factory,
an evaluation harness, and an HTTP service for review workflows.
"""

from lifegen.records import LifecycleRecord, Stage, StagePair, adjacent_pairs, stage_successor

__all__ = [
    "LifecycleRecord",
    "Stage",
    "StagePair",
    "adjacent_pairs",
    "stage_successor",
]

__version__ = "0.1.0"
