"""demo-forge: mine, refine and deploy in-context-learning demonstrations.

The pipeline has three parts: harvest verified demonstrations from a
weakly labeled corpus (pool A), refine them by difficulty and one-shot
utility (pools B and C), and run multi-context majority-vote inference
with the refined pool. See README.md for a tour.
"""

__version__ = "0.1.0"

from .core import (
    Answer,
    AnswerType,
    Attempt,
    Demonstration,
    DemoForgeError,
    DifficultyScore,
    IntermediateSteps,
    LanguageTag,
    Pool,
    PoolStage,
    Provenance,
    QuestionType,
    Sample,
    SampleMeta,
    StepsKind,
    Table,
    UtilityRecord,
    Verdict,
    answers_equal,
    normalize_answer,
)

__all__ = [
    "Answer",
    "AnswerType",
    "Attempt",
    "Demonstration",
    "DemoForgeError",
    "DifficultyScore",
    "IntermediateSteps",
    "LanguageTag",
    "Pool",
    "PoolStage",
    "Provenance",
    "QuestionType",
    "Sample",
    "SampleMeta",
    "StepsKind",
    "Table",
    "UtilityRecord",
    "Verdict",
    "answers_equal",
    "normalize_answer",
    "__version__",
]
