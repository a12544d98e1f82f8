"""Click-log data model: TSV ingestion, feature hashing, snapshot labeling.

A click log row is ``click_ts <TAB> conv_ts <TAB> feature columns...`` where an
empty conversion column means the click never converted (as far as the log
knows). Labels are assigned relative to a snapshot time ``T``: a click counts
as positive only if its conversion was already observable at ``T``.
"""

from __future__ import annotations

import hashlib
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_HASH_DIM = 2**17
DEFAULT_HASH_SEED = 0

SECONDS_PER_HOUR = 3600
SECONDS_PER_DAY = 86400


class ParseError(ValueError):
    """A TSV line could not be turned into a ClickRecord."""

    def __init__(self, message: str, *, line_no: int | None = None, column: int | None = None):
        where = []
        if line_no is not None:
            where.append(f"line {line_no}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line_no = line_no
        self.column = column


@dataclass(frozen=True)
class FieldSpec:
    """One feature column: categorical tokens pass through, numeric values
    are binned into categorical tokens using the declared ascending edges."""

    name: str
    kind: str = "categorical"
    bins: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind == "numeric":
            if not self.bins:
                raise ValueError(f"numeric field {self.name!r} needs bin edges")
            if list(self.bins) != sorted(self.bins):
                raise ValueError(f"bin edges for {self.name!r} must be ascending")

    def tokenize(self, raw: str) -> str:
        if self.kind == "categorical":
            return raw
        try:
            value = float(raw)
        except ValueError:
            raise ValueError(f"non-numeric value {raw!r} for field {self.name!r}") from None
        return f"b{bisect_right(self.bins, value)}"


def categorical_schema(n_fields: int, prefix: str = "f") -> list[FieldSpec]:
    """All-categorical schema with generated names, used for simulator output
    and for logs whose numeric columns were binned upstream."""
    return [FieldSpec(name=f"{prefix}{i}") for i in range(n_fields)]


@dataclass(frozen=True)
class ClickRecord:
    """One click event. ``conv_ts`` is None when no conversion was logged."""

    click_ts: int
    conv_ts: int | None
    raw_features: tuple[tuple[int, str], ...]

    def __post_init__(self):
        if self.conv_ts is not None and self.conv_ts < self.click_ts:
            raise ValueError(
                f"conversion at {self.conv_ts} precedes click at {self.click_ts}"
            )
        field_ids = [fid for fid, _ in self.raw_features]
        if len(set(field_ids)) != len(field_ids):
            raise ValueError("duplicate field ids in record")

    @property
    def delay(self) -> int | None:
        """Click-to-conversion gap in seconds; None when no conversion."""
        if self.conv_ts is None:
            return None
        return self.conv_ts - self.click_ts


@dataclass(frozen=True)
class FeatureVector:
    """Sparse binary feature vector: sorted hashed indices into [0, dim)."""

    indices: tuple[int, ...]
    dim: int

    def __post_init__(self):
        if self.dim < 2 or (self.dim & (self.dim - 1)) != 0:
            raise ValueError(f"dim must be a power of two >= 2, got {self.dim}")
        prev = -1
        for idx in self.indices:
            if idx <= prev:
                raise ValueError("indices must be strictly increasing")
            if idx >= self.dim:
                raise ValueError(f"index {idx} out of range for dim {self.dim}")
            prev = idx


@dataclass(frozen=True)
class LabeledSample:
    """Snapshot-labeled training sample.

    ``y`` is the label as of the snapshot, ``e`` the elapsed seconds between
    the click and the snapshot, and ``d`` the observed delay (present iff the
    conversion happened before the snapshot).
    """

    x: FeatureVector
    y: int
    e: int
    d: int | None
    click_ts: int

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValueError(f"y must be 0 or 1, got {self.y}")
        if self.e <= 0:
            raise ValueError(f"elapsed time must be positive, got {self.e}")
        if self.y == 1:
            if self.d is None:
                raise ValueError("positive sample is missing its delay")
            if self.d > self.e:
                raise ValueError(f"delay {self.d} exceeds elapsed time {self.e}")
        elif self.d is not None:
            raise ValueError("negative sample carries a delay")


@dataclass(frozen=True)
class TestSample:
    """Fully observed evaluation sample: ``c`` is the true conversion label."""

    x: FeatureVector
    c: int

    def __post_init__(self):
        if self.c not in (0, 1):
            raise ValueError(f"c must be 0 or 1, got {self.c}")


def parse_record(line: str, schema: Sequence[FieldSpec], *, line_no: int | None = None) -> ClickRecord:
    """Parse one tab-separated row into a ClickRecord.

    Columns: click timestamp, conversion timestamp (empty means none), then
    one column per schema field. Raises ParseError pointing at the offending
    line/column on malformed timestamps, wrong column counts, or a conversion
    preceding its click.
    """
    parts = line.rstrip("\n").split("\t")
    expected = 2 + len(schema)
    if len(parts) != expected:
        raise ParseError(
            f"expected {expected} columns, got {len(parts)}", line_no=line_no
        )

    try:
        click_ts = int(parts[0])
    except ValueError:
        raise ParseError(f"bad click timestamp {parts[0]!r}", line_no=line_no, column=1) from None

    conv_raw = parts[1]
    if conv_raw == "":
        conv_ts = None
    else:
        try:
            conv_ts = int(conv_raw)
        except ValueError:
            raise ParseError(
                f"bad conversion timestamp {conv_raw!r}", line_no=line_no, column=2
            ) from None
        if conv_ts < click_ts:
            raise ParseError(
                f"conversion timestamp {conv_ts} precedes click {click_ts}",
                line_no=line_no,
                column=2,
            )

    features = []
    for field_id, (spec, raw) in enumerate(zip(schema, parts[2:])):
        try:
            token = spec.tokenize(raw)
        except ValueError as exc:
            raise ParseError(str(exc), line_no=line_no, column=3 + field_id) from None
        features.append((field_id, token))

    return ClickRecord(click_ts=click_ts, conv_ts=conv_ts, raw_features=tuple(features))


def read_tsv(path: str | Path, schema: Sequence[FieldSpec]) -> list[ClickRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            records.append(parse_record(line, schema, line_no=line_no))
    return records


def write_tsv(records: Iterable[ClickRecord], path: str | Path, schema: Sequence[FieldSpec]) -> None:
    """Emit the same TSV layout the parser reads.

    Tokens are written as-is, so numeric columns that were binned on ingestion
    round-trip through an all-categorical schema.
    """
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            by_field = dict(record.raw_features)
            conv = "" if record.conv_ts is None else str(record.conv_ts)
            tokens = [by_field.get(fid, "") for fid in range(len(schema))]
            handle.write("\t".join([str(record.click_ts), conv, *tokens]) + "\n")


def stable_feature_hash(field_id: int, token: str, seed: int) -> int:
    """Platform-stable 64-bit hash of a (field_id, token) pair.

    Keyed blake2b so different seeds give independent index layouts.
    """
    if not 0 <= seed < 2**64:
        raise ValueError("hash seed must fit in an unsigned 64-bit integer")
    key = seed.to_bytes(8, "little")
    payload = f"{field_id}\x1f{token}".encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def hash_features(
    record: ClickRecord,
    dim: int = DEFAULT_HASH_DIM,
    seed: int = DEFAULT_HASH_SEED,
) -> FeatureVector:
    """Hash a record's (field_id, token) pairs into a binary FeatureVector.

    Deterministic for fixed (record, dim, seed); colliding pairs are
    deduplicated (presence encoding, no sign trick).
    """
    indices = {stable_feature_hash(fid, tok, seed) % dim for fid, tok in record.raw_features}
    return FeatureVector(indices=tuple(sorted(indices)), dim=dim)


def hash_records(
    records: Sequence[ClickRecord],
    dim: int = DEFAULT_HASH_DIM,
    seed: int = DEFAULT_HASH_SEED,
) -> list[FeatureVector]:
    """Batch hashing with a per-call token cache (logs repeat tokens heavily)."""
    cache: dict[tuple[int, str], int] = {}
    out = []
    for record in records:
        indices = set()
        for pair in record.raw_features:
            idx = cache.get(pair)
            if idx is None:
                idx = stable_feature_hash(pair[0], pair[1], seed) % dim
                cache[pair] = idx
            indices.add(idx)
        out.append(FeatureVector(indices=tuple(sorted(indices)), dim=dim))
    return out


def snapshot_labels(
    records: Sequence[ClickRecord],
    training_end: int,
    *,
    dim: int = DEFAULT_HASH_DIM,
    seed: int = DEFAULT_HASH_SEED,
) -> list[LabeledSample]:
    """Label records as of snapshot time ``training_end``.

    Clicks at or after the snapshot are dropped. A kept click is positive iff
    its conversion timestamp exists and is <= the snapshot; conversions that
    land later are (mis)labeled negative, which is exactly the censoring this
    package corrects for. Order-preserving and idempotent.
    """
    kept = [r for r in records if r.click_ts < training_end]
    features = hash_records(kept, dim=dim, seed=seed)
    samples = []
    for record, x in zip(kept, features):
        e = training_end - record.click_ts
        if record.conv_ts is not None and record.conv_ts <= training_end:
            samples.append(
                LabeledSample(x=x, y=1, e=e, d=record.conv_ts - record.click_ts, click_ts=record.click_ts)
            )
        else:
            samples.append(LabeledSample(x=x, y=0, e=e, d=None, click_ts=record.click_ts))
    return samples


def full_observation_labels(
    records: Sequence[ClickRecord],
    *,
    dim: int = DEFAULT_HASH_DIM,
    seed: int = DEFAULT_HASH_SEED,
    observational_period: int | None = None,
) -> list[TestSample]:
    """Label records with their final outcome.

    When ``observational_period`` is set, only conversions within that many
    seconds of the click count; this mirrors logs whose labels are frozen
    after a fixed tracking window.
    """
    features = hash_records(records, dim=dim, seed=seed)
    samples = []
    for record, x in zip(records, features):
        c = 0
        if record.conv_ts is not None:
            delay = record.conv_ts - record.click_ts
            if observational_period is None or delay <= observational_period:
                c = 1
        samples.append(TestSample(x=x, c=c))
    return samples
