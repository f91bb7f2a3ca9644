"""Per-trial dataset records."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .errors import InvalidDataset
from .linalg import TimeSeries

MODALITIES = ("EEG", "EOG", "GAZE", "SACC", "GAZE_V", "EOG_V")


@dataclass(frozen=True)
class TrialRecord:
    """One presentation of a video pair to one subject.

    ``features`` maps object number (1 or 2) to its ObjFlow series.
    """

    subject_id: str
    pair_id: int
    presentation: int
    attended_object: int
    modalities: Mapping[str, TimeSeries]
    features: Mapping[int, TimeSeries]
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.attended_object not in (1, 2):
            raise InvalidDataset(f"attended object must be 1 or 2, got {self.attended_object}")
        if self.presentation not in (1, 2):
            raise InvalidDataset(f"presentation must be 1 or 2, got {self.presentation}")
        if set(self.features) != {1, 2}:
            raise InvalidDataset("a trial needs features for objects 1 and 2")
        series = list(self.modalities.values()) + list(self.features.values())
        if {s.rate for s in series} != {series[0].rate} or {s.n_samples for s in series} != {series[0].n_samples}:
            raise InvalidDataset(
                f"subject {self.subject_id} pair {self.pair_id} presentation {self.presentation}: "
                "modalities and features must share rate and length"
            )

    @property
    def rate(self) -> float:
        return next(iter(self.features.values())).rate

    @property
    def n_samples(self) -> int:
        return next(iter(self.features.values())).n_samples

    @property
    def unattended_object(self) -> int:
        return 3 - self.attended_object

    @property
    def attended_feature(self) -> TimeSeries:
        return self.features[self.attended_object]

    @property
    def unattended_feature(self) -> TimeSeries:
        return self.features[self.unattended_object]


def check_attention_swap(records) -> None:
    """The two presentations of each (subject, pair) must attend opposite objects."""
    seen: dict[tuple[str, int], dict[int, int]] = {}
    for r in records:
        seen.setdefault((r.subject_id, r.pair_id), {})[r.presentation] = r.attended_object
    for (subject, pair), pres in seen.items():
        if len(pres) == 2 and pres[1] == pres[2]:
            raise InvalidDataset(f"subject {subject} pair {pair}: both presentations attend object {pres[1]}")
