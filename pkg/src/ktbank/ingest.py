"""Interaction-log ingestion: CSV parsing, difficulty estimation,
length filtering/truncation, and the temporal train/test split.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DegenerateSplit, EmptyCorpus, MalformedRowLimitExceeded, MissingColumn
from .types import Interaction, Split, StudentSequence

REQUIRED_COLUMNS = ("student_id", "timestamp", "item_id", "exercise_text", "concept_tags", "correct")

MIN_SEQ_LEN = 5
MAX_SEQ_LEN = 50


@dataclass(frozen=True)
class RawRecord:
    student_id: str
    timestamp: int
    item_id: str
    exercise_text: str
    concept_tags: str  # semicolon-joined
    correct: int
    difficulty: float | None = None

    def tags(self) -> tuple[str, ...]:
        return tuple(t.strip() for t in self.concept_tags.split(";") if t.strip())


@dataclass(frozen=True)
class CsvFormat:
    """Column mapping for corpora whose headers differ from the canonical names."""

    delimiter: str = ","
    columns: Mapping[str, str] = field(default_factory=dict)

    def header_for(self, canonical: str) -> str:
        return self.columns.get(canonical, canonical)


@dataclass
class CorpusParse:
    records: list[RawRecord]
    malformed: list[str]  # one message per bad row

    @property
    def n_malformed(self) -> int:
        return len(self.malformed)


def _parse_row(row: Mapping[str, str], fmt: CsvFormat, line_no: int) -> RawRecord:
    def cell(name: str) -> str:
        return (row.get(fmt.header_for(name)) or "").strip()

    text = cell("exercise_text")
    if not text:
        raise ValueError(f"line {line_no}: empty exercise_text")
    raw_correct = cell("correct")
    if raw_correct not in ("0", "1"):
        raise ValueError(f"line {line_no}: correct must be 0 or 1, got {raw_correct!r}")
    raw_ts = cell("timestamp")
    try:
        ts = int(raw_ts)
    except ValueError:
        try:
            f = float(raw_ts)
        except ValueError:
            raise ValueError(f"line {line_no}: bad timestamp {raw_ts!r}") from None
        if not f.is_integer():
            raise ValueError(f"line {line_no}: bad timestamp {raw_ts!r}") from None
        ts = int(f)
    difficulty: float | None = None
    raw_d = (row.get(fmt.header_for("difficulty")) or "").strip()
    if raw_d:
        difficulty = float(raw_d)
        if not (math.isfinite(difficulty) and 0.0 <= difficulty <= 1.0):
            raise ValueError(f"line {line_no}: difficulty out of [0,1]: {raw_d!r}")
    student = cell("student_id")
    if not student:
        raise ValueError(f"line {line_no}: empty student_id")
    return RawRecord(
        student_id=student,
        timestamp=ts,
        item_id=cell("item_id"),
        exercise_text=text,
        concept_tags=cell("concept_tags"),
        correct=int(raw_correct),
        difficulty=difficulty,
    )


def parse_corpus(path: str | Path, fmt: CsvFormat | None = None,
                 malformed_limit: float = 0.01) -> CorpusParse:
    """Read a UTF-8 CSV of interactions, in file order.

    Malformed rows are skipped and reported; more than `malformed_limit`
    (fraction of data rows) aborts the parse.
    """
    fmt = fmt or CsvFormat()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=fmt.delimiter)
        header = reader.fieldnames or []
        for canonical in REQUIRED_COLUMNS:
            if fmt.header_for(canonical) not in header:
                raise MissingColumn(fmt.header_for(canonical))
        records: list[RawRecord] = []
        malformed: list[str] = []
        n_rows = 0
        for line_no, row in enumerate(reader, start=2):
            n_rows += 1
            try:
                records.append(_parse_row(row, fmt, line_no))
            except ValueError as err:
                malformed.append(str(err))
    if n_rows == 0:
        raise EmptyCorpus(f"no data rows in {path}")
    if len(malformed) > malformed_limit * n_rows:
        raise MalformedRowLimitExceeded(
            f"{len(malformed)}/{n_rows} malformed rows exceeds {malformed_limit:.0%}: "
            + "; ".join(malformed[:5])
        )
    return CorpusParse(records=records, malformed=malformed)


def estimate_difficulty(records: Sequence[RawRecord], smoothing: float = 1.0) -> dict[str, float]:
    """Laplace-smoothed error rate per item: 1 - (c + s) / (n + 2s).

    Call with train-split records only so difficulty never leaks from test
    data.
    """
    if not records:
        raise ValueError("cannot estimate difficulty from zero records")
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    attempts: dict[str, int] = {}
    corrects: dict[str, int] = {}
    for rec in records:
        attempts[rec.item_id] = attempts.get(rec.item_id, 0) + 1
        corrects[rec.item_id] = corrects.get(rec.item_id, 0) + rec.correct
    return {
        item: 1.0 - (corrects[item] + smoothing) / (attempts[item] + 2.0 * smoothing)
        for item in attempts
    }


def lookup_difficulty(table: Mapping[str, float], item_id: str) -> float:
    """Item difficulty with a global-mean fallback for unseen items."""
    if item_id in table:
        return table[item_id]
    if not table:
        return 0.5
    return sum(table.values()) / len(table)


def _student_windows(records: Iterable[RawRecord], min_len: int = MIN_SEQ_LEN,
                     max_len: int = MAX_SEQ_LEN) -> tuple[list[tuple[str, list[RawRecord]]], dict]:
    """Group per student, sort by timestamp, drop short, keep the most
    recent `max_len`. Returns (windows, stats). Window order follows first
    appearance in the input.
    """
    by_student: dict[str, list[tuple[int, int, RawRecord]]] = {}
    for idx, rec in enumerate(records):
        by_student.setdefault(rec.student_id, []).append((rec.timestamp, idx, rec))
    windows: list[tuple[str, list[RawRecord]]] = []
    dropped_short = 0
    truncated = 0
    for student, rows in by_student.items():
        rows.sort(key=lambda t: (t[0], t[1]))  # stable on timestamp ties
        if len(rows) < min_len:
            dropped_short += 1
            continue
        if len(rows) > max_len:
            truncated += 1
            rows = rows[-max_len:]
        windows.append((student, [r for _, _, r in rows]))
    stats = {"dropped_short": dropped_short, "truncated": truncated}
    return windows, stats


def preprocess(
    records: Sequence[RawRecord],
    difficulty: Mapping[str, float] | None = None,
    min_len: int = MIN_SEQ_LEN,
    max_len: int = MAX_SEQ_LEN,
) -> list[StudentSequence]:
    """Build per-student sequences in temporal order.

    Sequences shorter than `min_len` are dropped; longer than `max_len`
    keep the most recent `max_len` interactions. Records lacking a
    difficulty value fall back to the `difficulty` table (with a
    global-mean fallback for unknown items).
    """
    windows, _ = _student_windows(records, min_len, max_len)
    sequences = []
    for student, rows in windows:
        interactions = []
        for rec in rows:
            d = rec.difficulty
            if d is None:
                if difficulty is None:
                    raise ValueError(
                        f"record for student {student!r} lacks difficulty and no "
                        "estimate table was provided"
                    )
                d = lookup_difficulty(difficulty, rec.item_id)
            interactions.append(
                Interaction(
                    exercise_text=rec.exercise_text,
                    concept_tags=rec.tags(),
                    correct=rec.correct,
                    difficulty=d,
                )
            )
        sequences.append(
            StudentSequence(
                student_id=student,
                interactions=tuple(interactions),
                split=Split.TRAIN,
                last_timestamp=rows[-1].timestamp,
            )
        )
    return sequences


def temporal_split(
    sequences: Sequence[StudentSequence], ratio: float = 0.8
) -> tuple[list[StudentSequence], list[StudentSequence]]:
    """Leak-free split: earliest ceil(ratio*n) sequences by last timestamp
    go to train, the rest to test. Timestamp ties break by student_id.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    ordered = sorted(sequences, key=lambda s: (s.last_timestamp, s.student_id))
    n_train = math.ceil(ratio * len(ordered))
    train = [s.with_split(Split.TRAIN) for s in ordered[:n_train]]
    test = [s.with_split(Split.TEST) for s in ordered[n_train:]]
    if not train or not test:
        raise DegenerateSplit(
            f"split of {len(ordered)} sequences at ratio {ratio} leaves an empty side"
        )
    return train, test


@dataclass
class IngestReport:
    responses: int
    sequences: int
    questions: int
    concepts: int
    dropped_short: int
    truncated: int
    train_sequences: int
    test_sequences: int
    malformed_rows: int
    difficulty_estimated: bool

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class IngestResult:
    train: list[StudentSequence]
    test: list[StudentSequence]
    report: IngestReport
    difficulty_table: dict[str, float]


def ingest_corpus(
    path: str | Path,
    fmt: CsvFormat | None = None,
    ratio: float = 0.8,
    smoothing: float = 1.0,
    min_len: int = MIN_SEQ_LEN,
    max_len: int = MAX_SEQ_LEN,
) -> IngestResult:
    """Full ingestion: parse, estimate difficulty where absent (from the
    train side only), build sequences, split temporally, report counts.
    """
    parse = parse_corpus(path, fmt)
    records = parse.records
    windows, stats = _student_windows(records, min_len, max_len)
    if len(windows) < 2:
        raise DegenerateSplit(f"only {len(windows)} usable sequences in {path}")

    # Decide the split on the windows themselves (same ordering rule as
    # temporal_split) so difficulty can be estimated on train data only.
    ordered = sorted(windows, key=lambda w: (w[1][-1].timestamp, w[0]))
    n_train = math.ceil(ratio * len(ordered))
    train_records = [rec for _, rows in ordered[:n_train] for rec in rows]

    table: dict[str, float] = {}
    needs_estimate = any(rec.difficulty is None for rec in records)
    if needs_estimate:
        table = estimate_difficulty(train_records, smoothing)

    sequences = preprocess(records, difficulty=table if needs_estimate else None,
                           min_len=min_len, max_len=max_len)
    train, test = temporal_split(sequences, ratio)

    surviving = [rec for _, rows in windows for rec in rows]
    report = IngestReport(
        responses=len(surviving),
        sequences=len(windows),
        questions=len({rec.item_id for rec in surviving}),
        concepts=len({t for rec in surviving for t in rec.tags()}),
        dropped_short=stats["dropped_short"],
        truncated=stats["truncated"],
        train_sequences=len(train),
        test_sequences=len(test),
        malformed_rows=parse.n_malformed,
        difficulty_estimated=needs_estimate,
    )
    return IngestResult(train=train, test=test, report=report, difficulty_table=table)


def write_sequences(path: str | Path, sequences: Iterable[StudentSequence]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(json.dumps(seq.to_dict(), sort_keys=True) + "\n")


def read_sequences(path: str | Path) -> list[StudentSequence]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(StudentSequence.from_dict(json.loads(line)))
    return out
