"""Slide-level inference: average patch scores, group the six classes into
{HP, NORM, HG, LG}, emit a verdict."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .annotations import TissueClass6
from .classify import ClassScores
from .errors import EmptySlide


class GroupedClass4(enum.IntEnum):
    """Dysplasia-grade view of the six tissue classes."""

    HP = 0
    NORM = 1
    HG = 2
    LG = 3

    @property
    def label(self) -> str:
        return self.name


GROUP_OF = {
    TissueClass6.HP: GroupedClass4.HP,
    TissueClass6.NORM: GroupedClass4.NORM,
    TissueClass6.TA_HG: GroupedClass4.HG,
    TissueClass6.TVA_HG: GroupedClass4.HG,
    TissueClass6.TA_LG: GroupedClass4.LG,
    TissueClass6.TVA_LG: GroupedClass4.LG,
}


def group_of(cls: TissueClass6) -> GroupedClass4:
    return GROUP_OF[cls]


def aggregate_slide(scores: Sequence[ClassScores]) -> np.ndarray:
    """Arithmetic mean per class by fixed-order Kahan summation.

    The fixed traversal order makes the result independent of how workers
    partitioned the patch list upstream.
    """
    if len(scores) == 0:
        raise EmptySlide("cannot aggregate an empty patch list")
    total = np.zeros(6)
    comp = np.zeros(6)
    for sc in scores:
        y = sc.as_array() - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total / len(scores)


def group_scores(mean6: np.ndarray) -> np.ndarray:
    """HG = TA_HG + TVA_HG, LG = TA_LG + TVA_LG; HP and NORM pass through."""
    m = np.asarray(mean6, dtype=np.float64)
    return np.array(
        [
            m[TissueClass6.HP],
            m[TissueClass6.NORM],
            m[TissueClass6.TA_HG] + m[TissueClass6.TVA_HG],
            m[TissueClass6.TA_LG] + m[TissueClass6.TVA_LG],
        ]
    )


def verdict(grouped4: np.ndarray) -> GroupedClass4:
    """Argmax with ties broken by lowest class code (HP < NORM < HG < LG)."""
    return GroupedClass4(int(np.argmax(grouped4)))


@dataclass(frozen=True)
class SlideVerdict:
    slide_id: str
    n_patches: int
    mean_scores6: tuple[float, ...]
    grouped_scores4: tuple[float, ...]
    predicted: GroupedClass4

    def __post_init__(self):
        if self.n_patches < 1:
            raise EmptySlide(f"verdict for {self.slide_id} has no patches")
        for name, vec in (("mean_scores6", self.mean_scores6), ("grouped_scores4", self.grouped_scores4)):
            total = sum(vec)
            if abs(total - 1.0) > 1e-6:
                raise ValueError(f"{name} of {self.slide_id} sums to {total}, expected 1")


def make_verdict(slide_id: str, scores: Sequence[ClassScores]) -> SlideVerdict:
    mean6 = aggregate_slide(scores)
    grouped = group_scores(mean6)
    return SlideVerdict(
        slide_id=slide_id,
        n_patches=len(scores),
        mean_scores6=tuple(float(x) for x in mean6),
        grouped_scores4=tuple(float(x) for x in grouped),
        predicted=verdict(grouped),
    )


def write_verdicts(verdicts: Iterable[SlideVerdict], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(
                json.dumps(
                    {
                        "slide_id": v.slide_id,
                        "n_patches": v.n_patches,
                        "mean_scores6": list(v.mean_scores6),
                        "grouped_scores4": list(v.grouped_scores4),
                        "predicted": v.predicted.label,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_verdicts(path: Path | str) -> list[SlideVerdict]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(
                SlideVerdict(
                    slide_id=obj["slide_id"],
                    n_patches=int(obj["n_patches"]),
                    mean_scores6=tuple(obj["mean_scores6"]),
                    grouped_scores4=tuple(obj["grouped_scores4"]),
                    predicted=GroupedClass4[obj["predicted"]],
                )
            )
    return out
