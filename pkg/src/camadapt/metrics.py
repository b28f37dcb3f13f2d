"""Navigation metrics: TL, NE, OR, SR, SPL."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .episodes import Episode
from .navigator import Trajectory
from .world import distance

METRIC_NAMES = ("tl", "ne", "or", "sr", "spl")


@dataclass(frozen=True)
class EpisodeMetrics:
    episode_id: int
    tl: float
    ne: float
    oracle_success: bool
    success: bool
    spl: float
    steps: int
    stopped: bool

    def row(self) -> dict:
        d = asdict(self)
        d["or"] = float(d.pop("oracle_success"))
        d["sr"] = float(d.pop("success"))
        return d


@dataclass(frozen=True)
class MetricsRecord:
    tl: float
    ne: float
    or_: float
    sr: float
    spl: float
    count: int
    episodes: tuple = ()

    def summary(self) -> dict:
        return {"tl": self.tl, "ne": self.ne, "or": self.or_, "sr": self.sr,
                "spl": self.spl, "episodes": self.count}


def compute_metrics(traj: Trajectory, episode: Episode, threshold: float = 3.0) -> EpisodeMetrics:
    """Per-episode metrics.  Success requires an explicit Stop within ``threshold``."""
    pts = traj.positions()
    tl = float(sum(distance(a, b) for a, b in zip(pts[:-1], pts[1:])))
    ne = distance(pts[-1], episode.goal)
    oracle = min(distance(p, episode.goal) for p in pts) <= threshold
    success = bool(traj.stopped and ne <= threshold)
    ref = episode.reference_length
    if not success:
        spl = 0.0
    elif tl == 0.0 and ref == 0.0:
        spl = 1.0
    else:
        spl = ref / max(tl, ref)
    return EpisodeMetrics(episode.episode_id, tl, ne, bool(oracle), success, spl,
                          len(traj), traj.stopped)


def aggregate(rows) -> MetricsRecord:
    rows = sorted(rows, key=lambda r: r.episode_id)
    if not rows:
        return MetricsRecord(0.0, 0.0, 0.0, 0.0, 0.0, 0, ())
    mean = lambda xs: float(np.mean(np.asarray(xs, dtype=np.float64)))
    return MetricsRecord(
        tl=mean([r.tl for r in rows]),
        ne=mean([r.ne for r in rows]),
        or_=mean([r.oracle_success for r in rows]),
        sr=mean([r.success for r in rows]),
        spl=mean([r.spl for r in rows]),
        count=len(rows),
        episodes=tuple(rows),
    )
