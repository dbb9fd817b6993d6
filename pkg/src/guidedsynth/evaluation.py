"""Frame-error evaluation with a held-out oracle recognizer.

The oracle is a clean-frame phone classifier trained on healthy speakers that
are disjoint from the training corpus. The metric is the fraction of frames
whose oracle label differs from the intended phone (frame-error rate).
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .classifier import ClassifierTrainConfig, PhoneClassifier, train_classifier
from .errors import ShapeError

log = logging.getLogger(__name__)

CONDITIONS = ("recording_target", "recording_source", "unguided", "guided")
CSV_COLUMNS = ("condition", "phone", "n_frames", "n_errors", "rate", "mean_dist_canonical", "mean_dist_target")
ALL = "ALL"


def train_oracle(corpus_heldout, sched, config: ClassifierTrainConfig | None = None):
    """Clean-frame recognizer on a held-out healthy corpus."""
    config = config or ClassifierTrainConfig()
    if config.noise_conditional:
        config = dataclasses.replace(config, noise_conditional=False)
    oracle, _ = train_classifier(corpus_heldout, sched, config)
    return oracle


def oracle_classify(frames, oracle: PhoneClassifier) -> list[str]:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != oracle.dim:
        raise ShapeError(f"frames must be (L, {oracle.dim}), got {frames.shape}")
    if not np.all(np.isfinite(frames)):
        log.warning("oracle_classify: non-finite frames present")
    return oracle.predict(frames, 0.0)


@dataclass
class PhoneRow:
    condition: str
    phone: str
    n_frames: int
    n_errors: int
    mean_dist_canonical: float
    mean_dist_target: float

    @property
    def rate(self):
        return self.n_errors / self.n_frames if self.n_frames else 0.0


@dataclass
class EvalReport:
    rows: list[PhoneRow] = field(default_factory=list)

    def conditions(self):
        seen = []
        for r in self.rows:
            if r.condition not in seen:
                seen.append(r.condition)
        return seen

    def phone_rows(self, condition):
        return [r for r in self.rows if r.condition == condition]

    def counts(self, condition, phones=None):
        rows = [r for r in self.phone_rows(condition) if phones is None or r.phone in phones]
        return sum(r.n_errors for r in rows), sum(r.n_frames for r in rows)

    def rate(self, condition, phones=None) -> float:
        errors, frames = self.counts(condition, phones)
        return errors / frames if frames else 0.0

    def total_row(self, condition) -> PhoneRow:
        rows = self.phone_rows(condition)
        n = sum(r.n_frames for r in rows)

        def wmean(attr):
            return sum(getattr(r, attr) * r.n_frames for r in rows) / n if n else 0.0

        return PhoneRow(condition, ALL, n, sum(r.n_errors for r in rows),
                        wmean("mean_dist_canonical"), wmean("mean_dist_target"))

    def to_csv(self, path=None) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for cond in self.conditions():
            for r in [*self.phone_rows(cond), self.total_row(cond)]:
                lines.append(
                    f"{r.condition},{r.phone},{r.n_frames},{r.n_errors},{r.rate:.17g},"
                    f"{r.mean_dist_canonical:.17g},{r.mean_dist_target:.17g}"
                )
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        report = cls()
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != CSV_COLUMNS:
                raise ValueError(f"unexpected report header {header}")
            for line in fh:
                c, p, nf, ne, _, dc, dt = line.strip().split(",")
                if p != ALL:
                    report.rows.append(PhoneRow(c, p, int(nf), int(ne), float(dc), float(dt)))
        return report


def frame_error_rate(utterances, oracle: PhoneClassifier, phones, canonical=None, target_means=None,
                     report: EvalReport | None = None) -> EvalReport:
    """Count oracle errors per condition and phone.

    ``utterances`` is an iterable of ``(condition, frames, frame_labels)``.
    ``canonical`` and ``target_means`` are ``(K, D)`` per-phone means in
    ``phones`` order used for the distance columns; distances are NaN when not
    given. Rows are appended to ``report`` when one is passed.
    """
    report = report or EvalReport()
    phones = list(phones)
    index = {p: i for i, p in enumerate(phones)}
    acc: dict[str, dict[str, np.ndarray]] = {}
    for condition, frames, labels in utterances:
        frames = np.asarray(frames, dtype=np.float64)
        if len(labels) != frames.shape[0]:
            raise ShapeError(f"{len(labels)} labels for {frames.shape[0]} frames")
        if frames.shape[0] == 0:
            continue
        idx = np.array([index[p] for p in labels])
        pred = np.array([index[p] for p in oracle_classify(frames, oracle)])
        err = (pred != idx).astype(np.int64)
        d_can = np.linalg.norm(frames - canonical[idx], axis=1) if canonical is not None else np.full(idx.size, np.nan)
        d_tgt = np.linalg.norm(frames - target_means[idx], axis=1) if target_means is not None else np.full(idx.size, np.nan)
        k = len(phones)
        a = acc.setdefault(condition, {"n": np.zeros(k, np.int64), "e": np.zeros(k, np.int64),
                                       "dc": np.zeros(k), "dt": np.zeros(k)})
        a["n"] += np.bincount(idx, minlength=k)
        a["e"] += np.bincount(idx, weights=err, minlength=k).astype(np.int64)
        a["dc"] += np.bincount(idx, weights=d_can, minlength=k)
        a["dt"] += np.bincount(idx, weights=d_tgt, minlength=k)
    for condition, a in acc.items():
        for i, phone in enumerate(phones):
            n = int(a["n"][i])
            if n == 0:
                continue
            report.rows.append(PhoneRow(condition, phone, n, int(a["e"][i]), a["dc"][i] / n, a["dt"][i] / n))
    return report
