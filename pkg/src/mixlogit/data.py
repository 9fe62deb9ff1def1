"""Panel discrete-choice datasets: in-memory model, CSV ingestion, splitting.

The CSV format is long: one row per alternative per choice task, with columns
``person_id, task_id, alt_id, chosen`` (0/1), an optional ``available`` (0/1,
default 1) and one column per attribute.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, IntegrityError, SchemaError
from .stats import RandomStream

STANDARD_COLUMNS = ("person_id", "task_id", "alt_id", "chosen")


@dataclass(frozen=True)
class ChoiceTask:
    task_id: str
    alt_ids: tuple[str, ...]
    attributes: np.ndarray  # (J, P)
    available: np.ndarray  # (J,) bool
    chosen: int  # zero-based row into alt_ids

    @property
    def n_alternatives(self) -> int:
        return len(self.alt_ids)


@dataclass(frozen=True)
class PersonRecord:
    person_id: str
    tasks: tuple[ChoiceTask, ...]

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class PanelArrays:
    """Dense, padded view of a dataset for vectorized likelihoods.

    Tasks with fewer than ``J`` alternatives are padded with unavailable rows.
    """

    X: np.ndarray  # (n_tasks, J, P)
    available: np.ndarray  # (n_tasks, J) bool
    chosen: np.ndarray  # (n_tasks,) int
    person: np.ndarray  # (n_tasks,) int, index into persons
    n_persons: int

    @property
    def n_tasks(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class ChoiceDataset:
    persons: tuple[PersonRecord, ...]
    attribute_names: tuple[str, ...]
    alternative_labels: tuple[str, ...] | None = None

    @property
    def n_persons(self) -> int:
        return len(self.persons)

    @property
    def n_tasks(self) -> int:
        return sum(p.n_tasks for p in self.persons)

    @property
    def person_ids(self) -> list[str]:
        return [p.person_id for p in self.persons]

    def tasks(self) -> Iterable[tuple[PersonRecord, ChoiceTask]]:
        for person in self.persons:
            for task in person.tasks:
                yield person, task

    @cached_property
    def arrays(self) -> PanelArrays:
        J = max((t.n_alternatives for _, t in self.tasks()), default=0)
        P = len(self.attribute_names)
        n = self.n_tasks
        X = np.zeros((n, J, P))
        avail = np.zeros((n, J), dtype=bool)
        chosen = np.zeros(n, dtype=np.int64)
        person = np.zeros(n, dtype=np.int64)
        i = 0
        for pi, p in enumerate(self.persons):
            for t in p.tasks:
                j = t.n_alternatives
                X[i, :j] = t.attributes
                avail[i, :j] = t.available
                chosen[i] = t.chosen
                person[i] = pi
                i += 1
        for a in (X, avail, chosen, person):
            a.flags.writeable = False
        return PanelArrays(X, avail, chosen, person, self.n_persons)

    def subset(self, indices: Sequence[int]) -> "ChoiceDataset":
        return ChoiceDataset(tuple(self.persons[i] for i in indices),
                             self.attribute_names, self.alternative_labels)

    def check(self) -> "ChoiceDataset":
        """Raise :class:`IntegrityError` listing every violation, else return self."""
        report = validate(self)
        if report:
            raise IntegrityError("; ".join(report))
        return self


def make_task(task_id, alt_ids, attributes, chosen, available=None) -> ChoiceTask:
    attributes = np.array(attributes, dtype=float, ndmin=2)
    if available is None:
        available = np.ones(attributes.shape[0], dtype=bool)
    else:
        available = np.asarray(available, dtype=bool).copy()
    attributes.flags.writeable = False
    available.flags.writeable = False
    return ChoiceTask(str(task_id), tuple(str(a) for a in alt_ids), attributes, available, int(chosen))


def validate(ds: ChoiceDataset) -> list[str]:
    """Return a list of invariant violations; empty iff the dataset is well formed."""
    report = []
    width = len(ds.attribute_names)
    for person in ds.persons:
        if person.n_tasks < 1:
            report.append(f"person {person.person_id}: no choice tasks")
        for task in person.tasks:
            where = f"person {person.person_id}, task {task.task_id}"
            J = task.n_alternatives
            if J < 2:
                report.append(f"{where}: {J} alternative(s), need at least 2")
            if task.attributes.shape != (J, width):
                report.append(f"{where}: attribute rows have shape {task.attributes.shape}, "
                              f"expected ({J}, {width})")
            if task.available.shape != (J,):
                report.append(f"{where}: availability mask has length {task.available.size}, expected {J}")
            if not 0 <= task.chosen < J:
                report.append(f"{where}: chosen index {task.chosen} outside 0..{J - 1}")
            elif task.available.shape == (J,) and not task.available[task.chosen]:
                report.append(f"{where}: chosen alternative {task.alt_ids[task.chosen]} is unavailable")
    return report


# ---------------------------------------------------------------------------
# CSV


def _schema(header: Sequence[str], schema: Mapping | None) -> dict:
    schema = dict(schema or {})
    cols = {
        "person": schema.pop("person", "person_id"),
        "task": schema.pop("task", "task_id"),
        "alternative": schema.pop("alternative", "alt_id"),
        "chosen": schema.pop("chosen", "chosen"),
        "available": schema.pop("available", "available"),
    }
    attributes = schema.pop("attributes", None)
    if schema:
        raise ConfigError(f"unknown schema keys: {sorted(schema)}")
    for key in ("person", "task", "alternative", "chosen"):
        if cols[key] not in header:
            raise SchemaError(f"missing column '{cols[key]}'")
    if attributes is None:
        used = {cols[k] for k in cols}
        attributes = [h for h in header if h not in used]
    for a in attributes:
        if a not in header:
            raise SchemaError(f"missing column '{a}'")
    cols["attributes"] = list(attributes)
    if cols["available"] not in header:
        cols["available"] = None
    return cols


def _flag(value: str, column: str, line: int) -> int:
    try:
        v = int(float(value))
    except ValueError:
        raise IntegrityError(f"line {line}: column '{column}' must be 0/1, got {value!r}") from None
    if v not in (0, 1):
        raise IntegrityError(f"line {line}: column '{column}' must be 0/1, got {value!r}")
    return v


def load_csv(path, schema: Mapping | None = None) -> ChoiceDataset:
    """Read a long-format choice CSV into a validated :class:`ChoiceDataset`.

    ``schema`` optionally maps ``person``, ``task``, ``alternative``,
    ``chosen``, ``available`` to column names and ``attributes`` to a list of
    attribute columns (default: every remaining column).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        cols = _schema(header, schema)
        pos = {h: i for i, h in enumerate(header)}
        attr_pos = [pos[a] for a in cols["attributes"]]

        # person -> task -> rows, preserving first-appearance order
        people: dict[str, dict[str, list]] = {}
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            pid = row[pos[cols["person"]]]
            tid = row[pos[cols["task"]]]
            chosen = _flag(row[pos[cols["chosen"]]], cols["chosen"], line)
            avail = 1 if cols["available"] is None else _flag(row[pos[cols["available"]]], cols["available"], line)
            try:
                attrs = [float(row[i]) for i in attr_pos]
            except ValueError as exc:
                raise IntegrityError(f"line {line}: {exc}") from None
            people.setdefault(pid, {}).setdefault(tid, []).append(
                (row[pos[cols["alternative"]]], attrs, chosen, avail))

    persons = []
    for pid, tasks in people.items():
        records = []
        for tid, rows in tasks.items():
            picks = [i for i, r in enumerate(rows) if r[2] == 1]
            if len(picks) != 1:
                raise IntegrityError(f"person {pid}, task {tid}: {len(picks)} chosen rows, expected exactly 1")
            records.append(make_task(tid, [r[0] for r in rows], [r[1] for r in rows],
                                     picks[0], [bool(r[3]) for r in rows]))
        persons.append(PersonRecord(pid, tuple(records)))
    return ChoiceDataset(tuple(persons), tuple(cols["attributes"])).check()


def format_float(x: float) -> str:
    """Shortest repr that round-trips through float()."""
    return repr(float(x))


def atomic_write(path, write) -> None:
    """Call ``write(fh)`` on a temp file next to ``path`` and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(ds: ChoiceDataset, path) -> None:
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*STANDARD_COLUMNS, "available", *ds.attribute_names])
        for person, task in ds.tasks():
            for j, alt in enumerate(task.alt_ids):
                w.writerow([person.person_id, task.task_id, alt, int(j == task.chosen),
                            int(task.available[j]), *(format_float(v) for v in task.attributes[j])])
    atomic_write(path, write)


# ---------------------------------------------------------------------------
# Splitting


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    validation_tasks_per_person: int = 1
    seed: int = 0
    validation_persons: int | None = None  # absolute count, overrides train_fraction

    def __post_init__(self):
        if self.validation_persons is not None and self.validation_persons < 1:
            raise ConfigError("validation_persons must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.validation_tasks_per_person < 1:
            raise ConfigError("validation_tasks_per_person must be positive")


def split_train_validation(ds: ChoiceDataset, spec: SplitSpec) -> tuple[ChoiceDataset, ChoiceDataset]:
    """Split by person: ``floor(train_fraction * N)`` persons (or ``N -
    validation_persons`` when given) keep all their tasks, every remaining
    person contributes ``validation_tasks_per_person`` randomly chosen tasks
    (the rest of their tasks are dropped)."""
    N = ds.n_persons
    if spec.validation_persons is not None:
        n_train = N - spec.validation_persons
    else:
        n_train = math.floor(spec.train_fraction * N)
    if n_train < 1:
        raise ConfigError(f"split leaves no training persons (N={N})")
    if N - n_train < 1:
        raise ConfigError(f"split leaves no validation persons (N={N})")
    rng = RandomStream(spec.seed)
    order = rng.generator.permutation(N)
    train_idx = sorted(order[:n_train].tolist())
    val_idx = sorted(order[n_train:].tolist())

    val_persons = []
    for i in val_idx:
        person = ds.persons[i]
        m = spec.validation_tasks_per_person
        if person.n_tasks < m:
            raise ConfigError(f"person {person.person_id} has {person.n_tasks} tasks, "
                              f"cannot hold out {m}")
        pick = sorted(rng.generator.choice(person.n_tasks, size=m, replace=False).tolist())
        val_persons.append(PersonRecord(person.person_id, tuple(person.tasks[t] for t in pick)))
    return ds.subset(train_idx), ChoiceDataset(tuple(val_persons), ds.attribute_names, ds.alternative_labels)
