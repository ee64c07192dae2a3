#  Copyright (c) 2024. VulBin Authors
"""
Evaluation Objects
------------------
"""
from typing import Dict

from vulbin.helper import percent
from vulbin.object.base import VulBinObject
from vulbin.type import CaseLabel

__all__ = ['GroundTruthEntry', 'ConfusionCounts', 'MetricsRow']


class GroundTruthEntry(VulBinObject):
    """One labeled case of an evaluation manifest"""

    case_id: str
    binary_path: str
    cwe_id: str
    label: CaseLabel


class ConfusionCounts(VulBinObject):
    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0
    missing: int = 0
    """cases without a verdict, not part of the four counts"""

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    def __add__(self, other: 'ConfusionCounts') -> 'ConfusionCounts':
        return ConfusionCounts(tp=self.tp + other.tp, fn=self.fn + other.fn, tn=self.tn + other.tn, fp=self.fp + other.fp,
                               missing=self.missing + other.missing)


class MetricsRow(VulBinObject):
    """Metrics as fractions in [0, 1]"""

    cwe_id: str
    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_percent(self) -> Dict[str, float]:
        """the four metrics as percentages rounded half-up to 2 decimals"""
        return {'accuracy': percent(self.accuracy),
                'precision': percent(self.precision),
                'recall': percent(self.recall),
                'f1': percent(self.f1)}
