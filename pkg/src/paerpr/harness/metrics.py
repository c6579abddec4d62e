"""Median pose errors, per scene and across scenes, plus CDF tables."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..pose_core import angular_error_degrees
from ..scene_sim import SampleSet


@dataclass
class MetricsReport:
    """Per-sample errors with the statistics derived from them.

    ``scene_median_*`` map scene index to median error; the aggregate is the
    mean of those medians.
    """

    scene_index: np.ndarray
    position_errors: np.ndarray
    orientation_errors: np.ndarray
    scene_median_position: dict[int, float] = field(default_factory=dict)
    scene_median_orientation: dict[int, float] = field(default_factory=dict)

    @classmethod
    def from_errors(cls, position_errors, orientation_errors, scene_index) -> MetricsReport:
        pe = np.asarray(position_errors, dtype=np.float64)
        oe = np.asarray(orientation_errors, dtype=np.float64)
        si = np.asarray(scene_index, dtype=np.int64)
        if len(pe) == 0:
            raise ValueError("cannot summarize an empty test set")
        if not (len(pe) == len(oe) == len(si)):
            raise ValueError("error arrays and scene index differ in length")
        report = cls(si, pe, oe)
        for s in np.unique(si):
            mask = si == s
            report.scene_median_position[int(s)] = float(np.median(pe[mask]))
            report.scene_median_orientation[int(s)] = float(np.median(oe[mask]))
        return report

    @property
    def median_position(self) -> float:
        return float(np.mean(list(self.scene_median_position.values())))

    @property
    def median_orientation(self) -> float:
        return float(np.mean(list(self.scene_median_orientation.values())))

    def cdf(self, position_max: float, orientation_max: float, points: int = 31, scene: int | None = None):
        """Rows (threshold, fraction <= threshold) on [0, max] for both error kinds."""
        mask = np.ones(len(self.scene_index), bool) if scene is None else self.scene_index == scene
        return (cdf_table(self.position_errors[mask], position_max, points),
                cdf_table(self.orientation_errors[mask], orientation_max, points))


def cdf_table(errors, upper: float, points: int = 31) -> np.ndarray:
    """(points, 2) array of thresholds on [0, upper] and the fraction of errors at or below each."""
    errors = np.sort(np.asarray(errors, dtype=np.float64))
    if len(errors) == 0:
        raise ValueError("cdf of an empty error list")
    grid = np.linspace(0.0, upper, points)
    frac = np.searchsorted(errors, grid, side="right") / len(errors)
    return np.column_stack([grid, frac])


def evaluate_poses(positions, orientations, test: SampleSet) -> MetricsReport:
    if len(test) == 0:
        raise ValueError("empty test set")
    pe = np.linalg.norm(np.asarray(positions) - test.positions, axis=1)
    oe = angular_error_degrees(orientations, test.orientations)
    return MetricsReport.from_errors(pe, oe, test.scene_index)


def evaluate(predict: Callable[[SampleSet], tuple[np.ndarray, np.ndarray]], test: SampleSet) -> MetricsReport:
    """Run ``predict`` (test set -> positions, quaternions) and score it."""
    if len(test) == 0:
        raise ValueError("empty test set")
    x, q = predict(test)
    return evaluate_poses(x, q, test)
