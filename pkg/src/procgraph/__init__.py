"""Entity location tracking over procedural text.

A span-extraction reader queries paragraph prefixes for where each participant
entity is located; a recurrent bipartite graph memory carries entity and
location state between sentences through soft coreference and stacked
residual update layers. Outputs are state-change grids scored with the
sentence-level and document-level protocols plus a commonsense violation
counter.
"""

from .autodiff import AdamState, ParamSet, Tensor, adam_step, backward
from .corpus import (
    EmbeddingTable,
    LocationGrid,
    LocationState,
    ProcessInstance,
    parse_corpus,
    synth_corpus,
    write_corpus,
)
from .events import EventSet, PredictionGrid, derive_events
from .evaluation import count_violations, score_task1, score_task2
from .pipeline import (
    Model,
    TrainConfig,
    TrainResult,
    load_model,
    predict_process,
    save_model,
    teacher_forced_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ParamSet", "Tensor", "adam_step", "backward",
    "EmbeddingTable", "LocationGrid", "LocationState", "ProcessInstance",
    "parse_corpus", "synth_corpus", "write_corpus",
    "EventSet", "PredictionGrid", "derive_events",
    "count_violations", "score_task1", "score_task2",
    "Model", "TrainConfig", "TrainResult", "load_model", "predict_process",
    "save_model", "teacher_forced_step", "train",
]
