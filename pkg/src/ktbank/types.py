"""Core domain types.

Everything here is immutable after construction and safe to share across
threads. Constructors enforce the invariants; algorithms live elsewhere.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

# Reserved cluster id for the generic (cold-start) pool. Kept as a concrete
# integer so routing always has a real target and JSON stays simple.
GENERIC: int = -1

UNIT_NORM_TOL = 1e-6


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


class DifficultyTag(enum.Enum):
    EASY = "EASY"
    MEDIUM = "MEDIUM"
    HARD = "HARD"

    @property
    def rank(self) -> int:
        return {"EASY": 0, "MEDIUM": 1, "HARD": 2}[self.value]

    def __lt__(self, other: "DifficultyTag") -> bool:
        return self.rank < other.rank

    def __le__(self, other: "DifficultyTag") -> bool:
        return self.rank <= other.rank


class KeyPattern(enum.Enum):
    """Closed label set for behavioral archetypes."""

    SOLID_MASTERY = "Solid Mastery"
    DIFFICULTY_SPIKE_FAILURE = "Difficulty Spike Failure"
    CARELESS_SLIP = "Careless Slip"
    CONCEPT_GAPS = "Concept Gaps"
    LUCKY_GUESS = "Lucky Guess"

    @classmethod
    def parse(cls, raw: str) -> "KeyPattern":
        """Match a label string case-insensitively, ignoring separators."""
        key = "".join(c for c in raw.lower() if c.isalpha())
        for pattern in cls:
            if "".join(c for c in pattern.value.lower() if c.isalpha()) == key:
                return pattern
        raise ValueError(f"unknown key pattern: {raw!r}")


class Constraint(enum.Enum):
    SPIKE_RULE = "SpikeRule"


@dataclass(frozen=True)
class Interaction:
    """One answered exercise: text, concepts, correctness, difficulty."""

    exercise_text: str
    concept_tags: tuple[str, ...] = ()
    correct: int = 0
    difficulty: float = 0.0

    def __post_init__(self):
        if not self.exercise_text.strip():
            raise ValueError("exercise_text must be non-empty")
        if self.correct not in (0, 1):
            raise ValueError(f"correct must be 0 or 1, got {self.correct!r}")
        if not (isinstance(self.difficulty, (int, float)) and math.isfinite(self.difficulty)):
            raise ValueError("difficulty must be finite")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ValueError(f"difficulty must be in [0,1], got {self.difficulty}")
        object.__setattr__(self, "concept_tags", tuple(self.concept_tags))

    def to_dict(self) -> dict[str, Any]:
        return {
            "exercise_text": self.exercise_text,
            "concept_tags": list(self.concept_tags),
            "correct": self.correct,
            "difficulty": self.difficulty,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Interaction":
        return cls(
            exercise_text=d["exercise_text"],
            concept_tags=tuple(d.get("concept_tags", ())),
            correct=int(d["correct"]),
            difficulty=float(d["difficulty"]),
        )


@dataclass(frozen=True)
class StudentSequence:
    """A student's interactions in original temporal order.

    Ingestion guarantees 5 <= len <= 50 for corpus sequences; shorter
    sequences are still legal objects (they route to the generic pool).
    """

    student_id: str
    interactions: tuple[Interaction, ...]
    split: Split = Split.TRAIN
    last_timestamp: int = 0

    def __post_init__(self):
        if not self.interactions:
            raise ValueError("sequence must contain at least one interaction")
        object.__setattr__(self, "interactions", tuple(self.interactions))
        if not isinstance(self.split, Split):
            object.__setattr__(self, "split", Split(self.split))

    def __len__(self) -> int:
        return len(self.interactions)

    def with_split(self, split: Split) -> "StudentSequence":
        return replace(self, split=split)

    def to_dict(self) -> dict[str, Any]:
        return {
            "student_id": self.student_id,
            "split": self.split.value,
            "last_timestamp": self.last_timestamp,
            "interactions": [it.to_dict() for it in self.interactions],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StudentSequence":
        return cls(
            student_id=d["student_id"],
            interactions=tuple(Interaction.from_dict(x) for x in d["interactions"]),
            split=Split(d.get("split", "train")),
            last_timestamp=int(d.get("last_timestamp", 0)),
        )


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length unit vector. `values` is a read-only float64 array."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("embedding must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding components must be finite")
        norm = float(np.linalg.norm(arr))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"embedding must be unit-norm, got ||v||={norm:.8f}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def normalized(cls, values: Iterable[float] | np.ndarray) -> "EmbeddingVector":
        arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                         dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if not math.isfinite(norm) or norm == 0.0:
            raise ValueError("cannot normalize a zero or non-finite vector")
        return cls(arr / norm)

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    def to_list(self) -> list[float]:
        return [float(x) for x in self.values]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "EmbeddingVector":
        return cls(np.asarray(values, dtype=np.float64))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class Annotation:
    """Structured explanation of one stored outcome."""

    knowledge_state: str
    key_pattern: KeyPattern
    difficulty_context: str
    causal_reasoning: str
    summary: str
    fallback: bool = False

    def __post_init__(self):
        for name in ("knowledge_state", "difficulty_context", "causal_reasoning", "summary"):
            if not getattr(self, name).strip():
                raise ValueError(f"annotation field {name} must be non-empty")
        if not isinstance(self.key_pattern, KeyPattern):
            object.__setattr__(self, "key_pattern", KeyPattern.parse(str(self.key_pattern)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "knowledge_state": self.knowledge_state,
            "key_pattern": self.key_pattern.value,
            "difficulty_context": self.difficulty_context,
            "causal_reasoning": self.causal_reasoning,
            "summary": self.summary,
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Annotation":
        return cls(
            knowledge_state=d["knowledge_state"],
            key_pattern=KeyPattern.parse(d["key_pattern"]),
            difficulty_context=d["difficulty_context"],
            causal_reasoning=d["causal_reasoning"],
            summary=d["summary"],
            fallback=bool(d.get("fallback", False)),
        )


@dataclass(frozen=True)
class MemoryEntry:
    """One stored paradigm: a history, the observed next outcome, and why.

    `sequence` is the history only; `target` is the question whose outcome
    is stored; `embedding` indexes the history's denoised serialization.
    """

    entry_id: str
    sequence: StudentSequence
    target: Interaction
    outcome: int
    annotation: Annotation
    embedding: EmbeddingVector
    cluster_id: int = GENERIC

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise ValueError("outcome must be 0 or 1")
        if self.sequence.split is not Split.TRAIN:
            raise ValueError("memory entries are built from the train split only")

    @property
    def student_id(self) -> str:
        return self.sequence.student_id

    def to_dict(self) -> dict[str, Any]:
        return {
            "entry_id": self.entry_id,
            "student_id": self.sequence.student_id,
            "cluster_id": self.cluster_id,
            "last_timestamp": self.sequence.last_timestamp,
            "history": [it.to_dict() for it in self.sequence.interactions],
            "target": self.target.to_dict(),
            "outcome": self.outcome,
            "annotation": self.annotation.to_dict(),
            "embedding": self.embedding.to_list(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MemoryEntry":
        seq = StudentSequence(
            student_id=d["student_id"],
            interactions=tuple(Interaction.from_dict(x) for x in d["history"]),
            split=Split.TRAIN,
            last_timestamp=int(d.get("last_timestamp", 0)),
        )
        return cls(
            entry_id=d["entry_id"],
            sequence=seq,
            target=Interaction.from_dict(d["target"]),
            outcome=int(d["outcome"]),
            annotation=Annotation.from_dict(d["annotation"]),
            embedding=EmbeddingVector.from_list(d["embedding"]),
            cluster_id=int(d["cluster_id"]),
        )


@dataclass(frozen=True)
class SchemaModel:
    """Fitted schema space: reduced-space centroids plus keyword labels."""

    centroids: tuple[EmbeddingVector, ...]
    reducer_params: Mapping[str, Any]
    cluster_keywords: Mapping[int, tuple[tuple[str, float], ...]]
    cluster_params: Mapping[str, Any]
    seed: int
    provider_name: str
    dimension: int
    generic_pool_id: int = GENERIC

    def __post_init__(self):
        dims = {c.dimension for c in self.centroids}
        if len(dims) > 1:
            raise ValueError("centroid dimensions must all be equal")
        for words in self.cluster_keywords.values():
            for word, weight in words:
                if not (word.isalpha() and len(word) >= 2 and word == word.lower()):
                    raise ValueError(f"keyword {word!r} did not survive the denoise filter")
                if weight < 0:
                    raise ValueError("keyword weights must be >= 0")

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "provider_name": self.provider_name,
            "dimension": self.dimension,
            "generic_pool_id": self.generic_pool_id,
            "reducer_params": dict(self.reducer_params),
            "cluster_params": dict(self.cluster_params),
            "centroids": [c.to_list() for c in self.centroids],
            "keywords": {
                str(k): [[w, wt] for w, wt in words]
                for k, words in sorted(self.cluster_keywords.items())
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SchemaModel":
        return cls(
            centroids=tuple(EmbeddingVector.from_list(c) for c in d["centroids"]),
            reducer_params=dict(d["reducer_params"]),
            cluster_keywords={
                int(k): tuple((w, float(wt)) for w, wt in words)
                for k, words in d["keywords"].items()
            },
            cluster_params=dict(d["cluster_params"]),
            seed=int(d["seed"]),
            provider_name=d["provider_name"],
            dimension=int(d["dimension"]),
            generic_pool_id=int(d.get("generic_pool_id", GENERIC)),
        )


@dataclass(frozen=True)
class RetrievalCandidate:
    """A memory entry with normalized dense, sparse, and fused scores."""

    entry_id: str
    dense_score: float
    sparse_score: float
    fused_score: float
    entry: MemoryEntry | None = None

    def __post_init__(self):
        for name in ("dense_score", "sparse_score", "fused_score"):
            v = getattr(self, name)
            if not (math.isfinite(v) and -1e-12 <= v <= 1.0 + 1e-12):
                raise ValueError(f"{name} must lie in [0,1], got {v}")


@dataclass(frozen=True)
class SpikeConfig:
    """Parameters of the spike constraint and the retrieval quality filter.

    delta=None means the threshold is derived per query from the filtered
    candidates (mean outcome of hard-target entries, clamped).
    """

    streak_len: int = 3
    delta: float | None = None
    tau: float = 0.3
    length_ratio_low: float = 0.5
    length_ratio_high: float = 2.0
    delta_floor: float = 0.2
    delta_ceiling: float = 0.6
    delta_fallback: float = 0.5

    def __post_init__(self):
        if self.streak_len < 1:
            raise ValueError("streak_len must be >= 1")
        if self.delta is not None and not 0.0 < self.delta < 1.0:
            raise ValueError("fixed delta must lie in (0,1)")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0,1]")
        if not (0.0 < self.length_ratio_low <= 1.0 <= self.length_ratio_high):
            raise ValueError("length ratio bounds must satisfy 0 < low <= 1 <= high")
        if not (0.0 <= self.delta_floor < self.delta_ceiling <= 1.0):
            raise ValueError("delta clamp bounds must satisfy 0 <= floor < ceiling <= 1")


@dataclass(frozen=True)
class PredictionRecord:
    """Final probability, the raw backend output, and what fired."""

    probability: float
    raw_probability: float
    label: int
    reasoning_trace: str
    constraints_fired: frozenset[Constraint] = frozenset()
    retrieved_ids: tuple[str, ...] = ()
    student_id: str = ""
    delta: float | None = None
    fallback: bool = False

    def __post_init__(self):
        for name in ("probability", "raw_probability"):
            v = getattr(self, name)
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be finite in [0,1], got {v}")
        expected = 1 if self.probability >= 0.5 else 0
        if self.label != expected:
            raise ValueError("label must equal (probability >= 0.5)")
        object.__setattr__(self, "constraints_fired", frozenset(self.constraints_fired))
        object.__setattr__(self, "retrieved_ids", tuple(self.retrieved_ids))

    def to_dict(self) -> dict[str, Any]:
        return {
            "student_id": self.student_id,
            "probability": self.probability,
            "raw_probability": self.raw_probability,
            "label": self.label,
            "reasoning_trace": self.reasoning_trace,
            "constraints_fired": sorted(c.value for c in self.constraints_fired),
            "retrieved_ids": list(self.retrieved_ids),
            "delta": self.delta,
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PredictionRecord":
        return cls(
            probability=float(d["probability"]),
            raw_probability=float(d["raw_probability"]),
            label=int(d["label"]),
            reasoning_trace=d["reasoning_trace"],
            constraints_fired=frozenset(Constraint(c) for c in d.get("constraints_fired", [])),
            retrieved_ids=tuple(d.get("retrieved_ids", ())),
            student_id=d.get("student_id", ""),
            delta=d.get("delta"),
            fallback=bool(d.get("fallback", False)),
        )
