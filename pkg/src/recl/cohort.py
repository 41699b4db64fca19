"""Observed recurrent-event data: subjects, cohorts and long-format CSV I/O.

A subject carries covariates, the treatment actually received (0-based arm
index), the jump times of its counting process and its censoring time.  The
long-format CSV holds one row per recurrent event (status 1) plus exactly one
censoring row (status 0) per subject.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class CohortError(ValueError):
    """Input data violates the cohort contract."""


@dataclass(frozen=True)
class Subject:
    id: str
    covariates: tuple[float, ...]
    treatment: int
    event_times: tuple[float, ...]
    censor_time: float

    def __post_init__(self):
        if not math.isfinite(self.censor_time) or self.censor_time < 0:
            raise CohortError(f"subject {self.id}: censor time must be finite and >= 0")
        if not all(math.isfinite(v) for v in self.covariates):
            raise CohortError(f"subject {self.id}: non-finite covariate")
        prev = 0.0
        for e in self.event_times:
            if not math.isfinite(e) or e <= 0:
                raise CohortError(f"subject {self.id}: event time {e} must be > 0")
            if e <= prev:
                raise CohortError(f"subject {self.id}: duplicated or unsorted event time {e}")
            if e > self.censor_time:
                raise CohortError(
                    f"subject {self.id}: event at {e} after censoring at {self.censor_time}"
                )
            prev = e


def count_at(subject: Subject, t: float) -> int:
    """Observed count N(min(t, C)); events exactly at t are included."""
    horizon = min(t, subject.censor_time)
    return int(np.searchsorted(subject.event_times, horizon, side="right"))


def at_risk(subject: Subject, t: float) -> int:
    """At-risk indicator I(C >= t)."""
    return int(subject.censor_time >= t)


class Cohort:
    """Immutable collection of subjects sharing covariate dimension and arm count.

    Array views (``X``, ``A``, ``C``, ``event_times``, ``event_owner``) are
    computed once and marked read-only.
    """

    def __init__(
        self,
        subjects: Sequence[Subject],
        p: int,
        k: int,
        tau: float | None = None,
        treatment_labels: Sequence[str] | None = None,
        covariate_names: Sequence[str] | None = None,
    ):
        subjects = tuple(subjects)
        if k < 1:
            raise CohortError("k must be >= 1")
        seen = set()
        for s in subjects:
            if s.id in seen:
                raise CohortError(f"duplicated subject id {s.id}")
            seen.add(s.id)
            if len(s.covariates) != p:
                raise CohortError(f"subject {s.id}: expected {p} covariates, got {len(s.covariates)}")
            if not 0 <= s.treatment < k:
                raise CohortError(f"subject {s.id}: treatment index {s.treatment} outside 0..{k - 1}")
        max_c = max((s.censor_time for s in subjects), default=0.0)
        if tau is None:
            tau = max_c
        if max_c > tau:
            raise CohortError(f"censoring time {max_c} exceeds tau={tau}")

        self.subjects = subjects
        self.p = int(p)
        self.k = int(k)
        self.tau = float(tau)
        self.treatment_labels = tuple(
            str(x) for x in (treatment_labels if treatment_labels is not None else range(k))
        )
        if len(self.treatment_labels) != k:
            raise CohortError("treatment_labels must have length k")
        self.covariate_names = tuple(
            covariate_names if covariate_names is not None else (f"x{j + 1}" for j in range(p))
        )
        if len(self.covariate_names) != p:
            raise CohortError("covariate_names must have length p")

        n = len(subjects)
        self.ids = tuple(s.id for s in subjects)
        self.X = _frozen(np.array([s.covariates for s in subjects], dtype=float).reshape(n, p))
        self.A = _frozen(np.array([s.treatment for s in subjects], dtype=int))
        self.C = _frozen(np.array([s.censor_time for s in subjects], dtype=float))
        counts = np.array([len(s.event_times) for s in subjects], dtype=int)
        self.n_events = _frozen(counts)
        self.event_times = _frozen(
            np.concatenate([np.asarray(s.event_times, float) for s in subjects])
            if counts.sum() else np.zeros(0)
        )
        self.event_owner = _frozen(np.repeat(np.arange(n), counts))

        present = np.bincount(self.A, minlength=k)
        if n and np.any(present == 0):
            missing = [self.treatment_labels[j] for j in np.flatnonzero(present == 0)]
            warnings.warn(f"no subjects observed in arm(s) {missing}", stacklevel=2)

    @classmethod
    def from_arrays(
        cls,
        X: np.ndarray,
        A: np.ndarray,
        C: np.ndarray,
        events: Iterable[Sequence[float]],
        k: int | None = None,
        tau: float | None = None,
        ids: Sequence[str] | None = None,
        **kwargs,
    ) -> "Cohort":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        A = np.asarray(A, dtype=int)
        n, p = X.shape
        if ids is None:
            ids = [str(i + 1) for i in range(n)]
        subjects = [
            Subject(str(ids[i]), tuple(map(float, X[i])), int(A[i]), tuple(map(float, ev)), float(C[i]))
            for i, ev in enumerate(events)
        ]
        if len(subjects) != n:
            raise CohortError("events must have one entry per subject")
        if k is None:
            k = int(A.max()) + 1 if n else 1
        return cls(subjects, p=p, k=k, tau=tau, **kwargs)

    @property
    def n(self) -> int:
        return len(self.subjects)

    def __len__(self):
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def __repr__(self):
        return (
            f"<Cohort n={self.n} p={self.p} k={self.k} tau={self.tau:g} "
            f"events={len(self.event_times)}>"
        )

    def index_of(self, ids: Iterable[str]) -> np.ndarray:
        lookup = {sid: i for i, sid in enumerate(self.ids)}
        try:
            return np.array([lookup[str(i)] for i in ids], dtype=int)
        except KeyError as exc:
            raise CohortError(f"unknown subject id {exc.args[0]}") from None

    def subset(self, ids: Iterable[str]) -> "Cohort":
        idx = self.index_of(ids)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return Cohort(
                [self.subjects[i] for i in idx],
                p=self.p,
                k=self.k,
                tau=self.tau,
                treatment_labels=self.treatment_labels,
                covariate_names=self.covariate_names,
            )

    def counts_at(self, t: float) -> np.ndarray:
        """Vector of observed counts N_i(min(t, C_i))."""
        mask = self.event_times <= t
        return np.bincount(self.event_owner[mask], minlength=self.n)

    def risk_set_size(self, t: float) -> int:
        return int(np.sum(self.C >= t))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CohortSchema:
    """Column mapping for the long-format CSV.  ``covariates=None`` takes every
    column not otherwise mapped, in file order."""

    id: str = "id"
    time: str = "time"
    status: str = "status"
    treatment: str = "treatment"
    covariates: tuple[str, ...] | None = None
    tau: float | None = None


def _label_sort_key(labels):
    try:
        return sorted(labels, key=float)
    except ValueError:
        return sorted(labels)


def _to_float(value: str, what: str, line: int) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise CohortError(f"line {line}: non-numeric {what} {value!r}") from None
    if not math.isfinite(out):
        raise CohortError(f"line {line}: non-finite {what} {value!r}")
    return out


def parse_cohort(text: str, schema: CohortSchema | None = None) -> Cohort:
    """Parse long-format CSV text into a validated :class:`Cohort`.

    Treatment labels are re-coded to 0..K-1 in ascending order of the raw
    labels (numeric order when every label is numeric); the raw labels are kept
    in ``Cohort.treatment_labels``.
    """
    schema = schema or CohortSchema()
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise CohortError("empty input: header row required")
    header = [h.strip() for h in reader.fieldnames]
    reader.fieldnames = header
    fixed = [schema.id, schema.time, schema.status, schema.treatment]
    for col in fixed:
        if col not in header:
            raise CohortError(f"missing column {col!r}")
    cov_cols = list(schema.covariates) if schema.covariates is not None else [
        h for h in header if h not in fixed
    ]
    for col in cov_cols:
        if col not in header:
            raise CohortError(f"missing covariate column {col!r}")

    order: list[str] = []
    rows: dict[str, dict] = {}
    for line, row in enumerate(reader, start=2):
        sid = (row[schema.id] or "").strip()
        if not sid:
            raise CohortError(f"line {line}: empty id")
        time = _to_float(row[schema.time], "time", line)
        status = (row[schema.status] or "").strip()
        if status not in ("0", "1", "0.0", "1.0"):
            raise CohortError(f"line {line}: status must be 0 or 1, got {status!r}")
        trt = (row[schema.treatment] or "").strip()
        if trt == "":
            raise CohortError(f"line {line}: empty treatment")
        cov = tuple(_to_float(row[c], f"covariate {c}", line) for c in cov_cols)
        rec = rows.get(sid)
        if rec is None:
            rec = rows[sid] = {"trt": trt, "cov": cov, "events": [], "censor": None}
            order.append(sid)
        elif rec["trt"] != trt or rec["cov"] != cov:
            raise CohortError(f"line {line}: treatment/covariates not constant within id {sid}")
        if float(status) == 1:
            rec["events"].append(time)
        else:
            if rec["censor"] is not None:
                raise CohortError(f"subject {sid}: more than one censoring row")
            rec["censor"] = time

    labels = _label_sort_key({rec["trt"] for rec in rows.values()})
    code = {lab: j for j, lab in enumerate(labels)}
    subjects = []
    for sid in order:
        rec = rows[sid]
        if rec["censor"] is None:
            raise CohortError(f"subject {sid}: missing censoring row")
        events = sorted(rec["events"])
        if len(set(events)) != len(events):
            raise CohortError(f"subject {sid}: duplicated event time")
        subjects.append(Subject(sid, rec["cov"], code[rec["trt"]], tuple(events), rec["censor"]))
    if not subjects:
        raise CohortError("no subjects in input")
    return Cohort(
        subjects,
        p=len(cov_cols),
        k=len(labels),
        tau=schema.tau,
        treatment_labels=labels,
        covariate_names=cov_cols,
    )


def read_cohort(path, schema: CohortSchema | None = None) -> Cohort:
    with open(path, encoding="utf-8") as fh:
        return parse_cohort(fh.read(), schema)


def serialize_cohort(cohort: Cohort) -> str:
    """Write a cohort back to long format using raw treatment labels."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "time", "status", "treatment", *cohort.covariate_names])
    for s in cohort.subjects:
        tail = [cohort.treatment_labels[s.treatment], *(repr(float(v)) for v in s.covariates)]
        for e in s.event_times:
            w.writerow([s.id, repr(float(e)), 1, *tail])
        w.writerow([s.id, repr(float(s.censor_time)), 0, *tail])
    return buf.getvalue()


def treatment_map(cohort: Cohort) -> dict[str, int]:
    """Raw label -> internal arm index."""
    return {lab: j for j, lab in enumerate(cohort.treatment_labels)}
