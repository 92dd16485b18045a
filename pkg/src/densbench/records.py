"""Persisted trial outcomes.

A TrialRecord is written once, after a training run (or its failure), and is
treated as immutable from then on. All floats survive the JSON round trip
exactly (shortest-repr encoding), so byte-identical reruns produce
byte-identical records apart from the wall_clock field.
"""

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

SCHEMA_VERSION = 1


@dataclass
class TrialRecord:
    kind: str                      # "wgan" | "gf"
    config: dict
    seed: int
    history: list = field(default_factory=list)
    best_w1: float = None
    final_w1: float = None
    failure: str = None
    wall_clock: float = 0.0
    checkpoint_path: str = None
    density_csv_path: str = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.history and self.best_w1 is not None:
            lo = min(h["true_w1"] for h in self.history if h["true_w1"] is not None)
            if abs(lo - self.best_w1) > 1e-12:
                raise ValueError("best_w1 must equal the minimum over history")

    @property
    def failed(self):
        return self.failure is not None

    def score(self):
        """Search score: best true W1, +inf for failed/empty trials."""
        if self.best_w1 is None:
            return float("inf")
        return self.best_w1

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported record schema {doc.get('schema_version')}")
        return cls(**doc)

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())
