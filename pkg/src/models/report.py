"""
Run report schema: what a train/eval run predicted and how well it correlated.
"""
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

REPORT_SCHEMA_VERSION = 1


class StimulusScore(BaseModel):
    path: str
    reference_id: str
    mos: float
    predicted: float
    fold: Optional[int] = None


class FoldMetrics(BaseModel):
    fold: int
    test_references: List[str]
    plcc: float
    srocc: float
    stimuli: int


class RunReport(BaseModel):
    """Versioned JSON report; aggregate values are the means over folds."""

    schema_version: int = REPORT_SCHEMA_VERSION
    command: str
    seed: int
    wall_time_s: float = 0.0
    config: Dict[str, Any] = Field(default_factory=dict)
    stimuli: List[StimulusScore] = Field(default_factory=list)
    folds: List[FoldMetrics] = Field(default_factory=list)
    mean_plcc: Optional[float] = None
    mean_srocc: Optional[float] = None

    @classmethod
    def build(cls, command: str, seed: int, config: Dict[str, Any],
              stimuli: List[StimulusScore], folds: List[FoldMetrics],
              wall_time_s: float = 0.0) -> "RunReport":
        mean_plcc = sum(f.plcc for f in folds) / len(folds) if folds else None
        mean_srocc = sum(f.srocc for f in folds) / len(folds) if folds else None
        return cls(
            command=command,
            seed=seed,
            wall_time_s=wall_time_s,
            config=config,
            stimuli=stimuli,
            folds=folds,
            mean_plcc=mean_plcc,
            mean_srocc=mean_srocc,
        )

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)
