"""
Training run records: the per-step loss log of one run.
"""

import csv
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

from src.core.errors import ArtifactError


@dataclass
class StepLog:
    step: int
    lr: float
    total: float
    terms: Dict[str, float]


@dataclass
class TrainRunRecord:
    """Loss log of one training run plus what is needed to find its weights again."""

    stage: str
    strategy: str
    seed: int
    steps: List[StepLog] = field(default_factory=list)
    wall_time: float = 0.0
    clip_events: int = 0
    checkpoint: Optional[str] = None
    run_uid: str = field(default_factory=lambda: uuid.uuid4().hex)

    def log(self, step: int, lr: float, total: float, terms: Dict[str, float]) -> StepLog:
        expected = self.steps[-1].step + 1 if self.steps else 0
        if step != expected:
            raise ValueError(f"step {step} logged out of order, expected {expected}")
        entry = StepLog(step, lr, total, dict(terms))
        self.steps.append(entry)
        return entry

    @property
    def term_names(self) -> List[str]:
        return list(self.steps[0].terms) if self.steps else []

    @property
    def final_loss(self) -> Optional[float]:
        return self.steps[-1].total if self.steps else None

    def totals(self) -> List[float]:
        return [s.total for s in self.steps]

    def header(self) -> List[str]:
        return ["step", "lr", "total"] + self.term_names

    def rows(self) -> List[List[str]]:
        return [[str(s.step), repr(s.lr), repr(s.total)] + [repr(s.terms[name]) for name in self.term_names] for s in self.steps]

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(self.header())
                writer.writerows(self.rows())
        except OSError as e:
            raise ArtifactError(f"cannot write training log {path}: {e}")
        return path
