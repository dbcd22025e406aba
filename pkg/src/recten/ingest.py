"""Event-log ingestion: delimited text to weekly-bucketed count tensors.

An event log is a header-led delimited file where each row records one
actor acting on one object at one time, optionally with a weight (e.g. a
user posting in a thread, or performing several repository actions at
once).  :func:`parse_events` reads such a file into :class:`EventRecord`
rows; :func:`build_tensor` rolls the records up into a sparse 3-mode
count tensor (actor x object x week) plus the :class:`IndexMap`
dictionaries that translate dense indices back to the original string
keys.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from recten.tensor import SparseTensor3, from_coo

__all__ = [
    "EventRecord",
    "EventSchema",
    "IndexMap",
    "WEEK_SECONDS",
    "parse_events",
    "build_tensor",
]

#: Bucket width used for the time mode: fixed seven-day spans measured
#: from the dataset's own earliest timestamp.  Fixed-width buckets (not
#: calendar weeks) keep the discretization timezone-free and
#: deterministic.
WEEK_SECONDS = 604800


@dataclass(frozen=True)
class EventRecord:
    """One actor-object interaction.

    Attributes
    ----------
    actor, object : str
        String keys naming who acted and what was acted on.
    timestamp : int
        Event time in seconds since the epoch.
    weight : float
        Positive interaction mass; several simultaneous actions can be
        folded into one record by weighting it.
    """

    actor: str
    object: str
    timestamp: int
    weight: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise ValueError(f"timestamp must be finite, got {self.timestamp!r}")
        if not (self.weight > 0) or not math.isfinite(self.weight):
            raise ValueError(f"weight must be a positive finite number, got {self.weight!r}")


@dataclass(frozen=True)
class EventSchema:
    """Names of the columns to read from a delimited event file.

    ``weight`` may be None, in which case every event gets weight 1.
    """

    actor: str = "actor"
    object: str = "object"
    time: str = "time"
    weight: str | None = None
    delimiter: str = ","


class IndexMap:
    """Bijection between string keys and dense indices 0..n-1.

    Keys are numbered in first-seen order, which makes every map built
    from the same key sequence identical.
    """

    def __init__(self):
        self.forward: dict[str, int] = {}
        self.reverse: list[str] = []

    def add(self, key: str) -> int:
        """Return the key's index, assigning the next free one if new."""
        idx = self.forward.get(key)
        if idx is None:
            idx = len(self.reverse)
            self.forward[key] = idx
            self.reverse.append(key)
        return idx

    def index_of(self, key: str) -> int:
        return self.forward[key]

    def key_of(self, idx: int) -> str:
        return self.reverse[idx]

    def __len__(self) -> int:
        return len(self.reverse)

    def __contains__(self, key: str) -> bool:
        return key in self.forward


def _parse_timestamp(text: str) -> int:
    """Epoch seconds from an integer literal or an ISO-8601 date-time.

    Naive date-times are taken as UTC; a trailing ``Z`` is accepted.
    """
    try:
        return int(text, 10)
    except ValueError:
        pass
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_events(path, schema: EventSchema = EventSchema(), skip_bad: bool = False) -> list[EventRecord]:
    """Read an event log into records.

    Parameters
    ----------
    path : str or path-like
        Delimited text file with a header row.
    schema : EventSchema
        Which columns hold the actor, object, time, and (optionally)
        weight; also the field delimiter.
    skip_bad : bool
        When True, rows that fail to parse are dropped instead of
        aborting the run; header problems still abort.

    Returns
    -------
    list of EventRecord

    Raises
    ------
    ValueError
        If the file is empty, a schema column is missing from the
        header, or (unless ``skip_bad``) a row is malformed; row errors
        carry the 1-based line number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file (a header row is required)")
        positions = {name.strip(): pos for pos, name in enumerate(header)}
        wanted = [schema.actor, schema.object, schema.time]
        if schema.weight is not None:
            wanted.append(schema.weight)
        missing = [c for c in wanted if c not in positions]
        if missing:
            raise ValueError(
                f"{path}: column(s) {', '.join(map(repr, missing))} not in header {header}"
            )
        cols = [positions[c] for c in wanted]

        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                fields = [row[c] for c in cols]
                weight = float(fields[3]) if schema.weight is not None else 1.0
                records.append(
                    EventRecord(
                        actor=fields[0],
                        object=fields[1],
                        timestamp=_parse_timestamp(fields[2]),
                        weight=weight,
                    )
                )
            except (ValueError, IndexError) as exc:
                if skip_bad:
                    continue
                raise ValueError(f"{path}: line {lineno}: bad event row: {exc}") from exc
    return records


def build_tensor(
    events: list[EventRecord], bucket: int = WEEK_SECONDS
) -> tuple[SparseTensor3, IndexMap, IndexMap, int]:
    """Roll events up into an (actor, object, week) count tensor.

    The week index of an event is ``(timestamp - t_min) // bucket`` with
    ``t_min`` the earliest timestamp present, so the time mode always
    starts at 0 and spans ``max week + 1`` buckets.  Weights of events
    landing in the same cell are summed.

    Returns
    -------
    (SparseTensor3, IndexMap, IndexMap, int)
        The tensor, the actor and object dictionaries, and ``t_min``.

    Raises
    ------
    ValueError
        If ``events`` is empty or ``bucket`` is not positive.
    """
    if not events:
        raise ValueError("cannot build a tensor from zero events")
    if bucket <= 0:
        raise ValueError(f"bucket width must be positive, got {bucket}")
    t_min = min(e.timestamp for e in events)
    actors = IndexMap()
    objects = IndexMap()
    cells: dict[tuple[int, int, int], float] = {}
    max_week = 0
    for e in events:
        key = (actors.add(e.actor), objects.add(e.object), (e.timestamp - t_min) // bucket)
        max_week = max(max_week, key[2])
        cells[key] = cells.get(key, 0.0) + e.weight
    coords = np.array(list(cells.keys()), dtype=np.int64)
    vals = np.array(list(cells.values()), dtype=np.float64)
    dims = (len(actors), len(objects), max_week + 1)
    return from_coo(dims, coords, vals), actors, objects, t_min
