"""Live annotation service: batch issue, gated submission, persistence.

State model: an append-only record log on disk (the only durable store),
an in-memory assignment ledger rebuilt from the log at startup, and
in-memory batch reservations that expire after an idle timeout. All
mutating paths run under one lock, so reservation and append are atomic
and linearizable; rejected submissions never touch the log.
"""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from .annotation import (
    AnnotationRecord,
    Batch,
    Submission,
    TrustedPair,
    ValidationFailure,
    assemble_batch,
    check_trusted,
    record_from_line,
    record_to_line,
    validate_submission,
)
from .corpus import CorpusSplit, Instance
from .errors import (
    AuthorizationError,
    ConflictError,
    InsufficientWorkError,
    IntegrityError,
    NotFoundError,
)

APPROVAL_THRESHOLD = 0.90
ANNOTATIONS_PER_PAIR = 3
DEFAULT_RESERVATION_TIMEOUT = 3600.0  # seconds


@dataclass(frozen=True)
class WorkerProfile:
    worker_id: str
    approval_rate: float

    def __post_init__(self):
        if not 0.0 <= self.approval_rate <= 1.0:
            raise ValueError(f"approval_rate must be in [0, 1], got {self.approval_rate}")


def load_workers(path: str | Path) -> dict[str, WorkerProfile]:
    workers = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                raw = json.loads(line)
                profile = WorkerProfile(raw["worker_id"], float(raw["approval_rate"]))
                workers[profile.worker_id] = profile
    return workers


class RecordStore:
    """Append-only annotation log; one record line per annotation."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.records: list[AnnotationRecord] = []
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                self.records = [record_from_line(line) for line in fh if line.strip()]
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()

    def append_all(self, records: Sequence[AnnotationRecord]) -> None:
        payload = "".join(record_to_line(r) + "\n" for r in records)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(payload)
            fh.flush()
        self.records.extend(records)


@dataclass
class _OpenBatch:
    batch: Batch
    worker_id: str
    issued_at: float
    closed: bool = False


@dataclass
class AssignmentLedger:
    """Tracks who annotated and who currently holds each pair."""

    committed: dict[str, set[str]] = field(default_factory=dict)
    reservations: dict[str, dict[str, float]] = field(default_factory=dict)

    def purge_expired(self, now: float, timeout: float) -> None:
        for pair_id in list(self.reservations):
            holders = self.reservations[pair_id]
            for worker_id in list(holders):
                if now - holders[worker_id] > timeout:
                    del holders[worker_id]
            if not holders:
                del self.reservations[pair_id]

    def load(self, pair_id: str) -> int:
        return len(self.committed.get(pair_id, ())) + len(
            self.reservations.get(pair_id, ())
        )

    def eligible(self, pair_id: str, worker_id: str) -> bool:
        if worker_id in self.committed.get(pair_id, ()):
            return False
        if worker_id in self.reservations.get(pair_id, ()):
            return False
        return self.load(pair_id) < ANNOTATIONS_PER_PAIR

    def commit_allowed(self, pair_id: str, worker_id: str) -> bool:
        return (
            worker_id not in self.committed.get(pair_id, ())
            and len(self.committed.get(pair_id, ())) < ANNOTATIONS_PER_PAIR
        )

    def reserve(self, pair_id: str, worker_id: str, now: float) -> None:
        self.reservations.setdefault(pair_id, {})[worker_id] = now

    def release(self, pair_id: str, worker_id: str) -> None:
        holders = self.reservations.get(pair_id)
        if holders and worker_id in holders:
            del holders[worker_id]
            if not holders:
                del self.reservations[pair_id]

    def commit(self, pair_id: str, worker_id: str) -> None:
        self.committed.setdefault(pair_id, set()).add(worker_id)


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    reason: Optional[str] = None
    item_failures: dict[int, tuple[ValidationFailure, ...]] = field(default_factory=dict)


class AnnotationService:
    """Coordinates batches, validation, the trusted gate, and the store."""

    def __init__(
        self,
        queues: Sequence[CorpusSplit],
        trusted_pool: Sequence[TrustedPair],
        workers: dict[str, WorkerProfile],
        data_dir: str | Path,
        seed: int = 0,
        approval_threshold: float = APPROVAL_THRESHOLD,
        reservation_timeout: float = DEFAULT_RESERVATION_TIMEOUT,
        clock=time.monotonic,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.store = RecordStore(self.data_dir / "records.log")
        self.queues = list(queues)
        self.trusted_pool = list(trusted_pool)
        self.workers = dict(workers)
        self.approval_threshold = approval_threshold
        self.reservation_timeout = reservation_timeout
        self.clock = clock
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self._open_batches: dict[str, _OpenBatch] = {}

        self._queue_order: list[Instance] = []
        self._split_of: dict[str, str] = {}
        self._instance_of: dict[str, Instance] = {}
        trusted_ids = {t.instance.pair_id for t in self.trusted_pool}
        for split in self.queues:
            for inst in split:
                if inst.pair_id in self._instance_of or inst.pair_id in trusted_ids:
                    raise IntegrityError(
                        f"pair {inst.pair_id!r} appears in multiple queues or the trusted pool"
                    )
                self._queue_order.append(inst)
                self._split_of[inst.pair_id] = split.name.value
                self._instance_of[inst.pair_id] = inst

        self.ledger = AssignmentLedger()
        for record in self.store.records:
            self.ledger.commit(record.pair_id, record.worker_id)

    # -- batch issue ---------------------------------------------------

    def _check_worker(self, worker_id: str) -> WorkerProfile:
        profile = self.workers.get(worker_id)
        if profile is None:
            raise AuthorizationError(f"unknown worker {worker_id!r}")
        if profile.approval_rate < self.approval_threshold:
            raise AuthorizationError(
                f"approval rate {profile.approval_rate:.2f} below "
                f"{self.approval_threshold:.2f}"
            )
        return profile

    def get_batch(self, worker_id: str) -> Batch:
        """Reserve 9 eligible pairs for the worker and issue a 10-item batch
        with one trusted pair at a hidden position."""
        with self._lock:
            self._check_worker(worker_id)
            now = self.clock()
            self.ledger.purge_expired(now, self.reservation_timeout)
            eligible = [
                inst
                for inst in self._queue_order
                if self.ledger.eligible(inst.pair_id, worker_id)
            ]
            if len(eligible) < 9:
                raise InsufficientWorkError(
                    f"only {len(eligible)} eligible pairs for {worker_id!r}"
                )
            while True:
                seed = self._rng.randrange(2**31)
                batch = assemble_batch(eligible, self.trusted_pool, seed)
                if batch.batch_id not in self._open_batches:
                    break
            for inst in batch.work_items:
                self.ledger.reserve(inst.pair_id, worker_id, now)
            self._open_batches[batch.batch_id] = _OpenBatch(batch, worker_id, now)
            return batch

    # -- submission ----------------------------------------------------

    def submit_batch(
        self, worker_id: str, batch_id: str, submissions: Sequence[Submission]
    ) -> SubmitResult:
        """Validate all 10 items, apply the trusted gate, and on success
        atomically append the 9 work records and close the batch."""
        with self._lock:
            entry = self._open_batches.get(batch_id)
            if entry is None:
                raise NotFoundError(f"unknown batch {batch_id!r}")
            if entry.closed:
                raise ConflictError(f"batch {batch_id!r} already closed")
            if entry.worker_id != worker_id:
                raise ConflictError(f"batch {batch_id!r} was issued to another worker")
            batch = entry.batch
            if len(submissions) != len(batch.items):
                raise IntegrityError(
                    f"expected {len(batch.items)} submissions, got {len(submissions)}"
                )

            failures: dict[int, tuple[ValidationFailure, ...]] = {}
            for index, (inst, sub) in enumerate(zip(batch.items, submissions)):
                result = validate_submission(inst, sub)
                if not result.ok:
                    failures[index] = result.failures
            if failures:
                return SubmitResult(False, "validation failed", failures)

            if not check_trusted(batch, submissions):
                # Never reveal which item was the trusted one.
                return SubmitResult(False, "quality check failed")

            work = [
                (inst, sub)
                for index, (inst, sub) in enumerate(zip(batch.items, submissions))
                if index != batch.trusted_position
            ]
            for inst, _ in work:
                if not self.ledger.commit_allowed(inst.pair_id, worker_id):
                    entry.closed = True
                    self._release_batch(batch, worker_id)
                    raise ConflictError(
                        f"batch {batch_id!r} expired: pair {inst.pair_id!r} is saturated"
                    )

            timestamp = datetime.now(timezone.utc)
            records = [
                AnnotationRecord(
                    pair_id=sub.pair_id,
                    worker_id=worker_id,
                    label=sub.label,
                    highlighted=frozenset(sub.highlighted),
                    explanation=sub.explanation,
                    timestamp=timestamp,
                )
                for _, sub in work
            ]
            self.store.append_all(records)
            for inst, _ in work:
                self.ledger.commit(inst.pair_id, worker_id)
                self.ledger.release(inst.pair_id, worker_id)
            entry.closed = True
            self._write_ledger_snapshot()
            return SubmitResult(True)

    def _release_batch(self, batch: Batch, worker_id: str) -> None:
        for inst in batch.work_items:
            self.ledger.release(inst.pair_id, worker_id)

    def _write_ledger_snapshot(self) -> None:
        snapshot = {
            pair_id: sorted(workers)
            for pair_id, workers in sorted(self.ledger.committed.items())
        }
        (self.data_dir / "ledger.json").write_text(
            json.dumps(snapshot, indent=2) + "\n", encoding="utf-8"
        )

    # -- export ----------------------------------------------------------

    def export_records(self, split: Optional[str] = None) -> list[AnnotationRecord]:
        """Persisted records, optionally filtered by the split of their pair."""
        with self._lock:
            if split is None:
                return list(self.store.records)
            return [
                r for r in self.store.records if self._split_of.get(r.pair_id) == split
            ]

    def export_lines(self, split: Optional[str] = None) -> str:
        return "".join(record_to_line(r) + "\n" for r in self.export_records(split))

    def instance_for(self, pair_id: str) -> Instance:
        inst = self._instance_of.get(pair_id)
        if inst is None:
            raise NotFoundError(f"unknown pair {pair_id!r}")
        return inst
