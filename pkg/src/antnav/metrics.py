"""Episode metrics: NE, SR, OSR, SPL, TL, nDTW and backtrack accounting."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

log = logging.getLogger(__name__)

D_TH = 3.0


@dataclass
class MetricBundle:
    ne: float
    sr: bool
    osr: bool
    spl: float
    tl: float
    ndtw: float | None
    backtracks: int
    steps: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricBundle":
        return cls(**d)


def _xy(path) -> np.ndarray:
    out = []
    for p in path:
        if hasattr(p, "x"):
            out.append((p.x, p.y))
        else:
            out.append((p[0], p[1]))
    return np.asarray(out, dtype=float).reshape(-1, 2)


def _xyz(path) -> np.ndarray:
    out = []
    for p in path:
        out.append((p.x, p.y, p.z) if hasattr(p, "x") else tuple(p[:3]))
    return np.asarray(out, dtype=float).reshape(-1, 3)


def dtw(a, b) -> float:
    """Dynamic time warping over xy Euclidean point distance."""
    p, q = _xy(a), _xy(b)
    n, m = len(p), len(q)
    if n == 0 or m == 0:
        raise ValueError("dtw needs two nonempty paths")
    cost = np.linalg.norm(p[:, None, :] - q[None, :, :], axis=2)
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


def ndtw(a, reference, d_th: float = D_TH) -> float:
    return math.exp(-dtw(a, reference) / (len(reference) * d_th))


def evaluate(trajectory, reference, goal, d_th: float, shortest_dist: float, decisions,
             stopped: bool = True) -> MetricBundle:
    """Metric bundle for one episode.

    ``decisions`` is a sequence of decision kinds (``"move"``, ``"backtrack"``,
    ``"stop"``) or dicts with a ``kind`` entry.
    """
    pts = _xyz(trajectory)
    if len(pts) == 0:
        raise ValueError("trajectory is empty")
    if shortest_dist <= 0:
        raise ValueError("shortest_dist must be positive")
    goal = np.asarray(goal, dtype=float)
    dists = np.linalg.norm(pts - goal, axis=1)
    ne = float(dists[-1])
    sr = bool(stopped and ne <= d_th)
    osr = bool(dists.min() <= d_th)
    tl = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    spl = float(sr) * shortest_dist / max(tl, shortest_dist)
    if reference is None or len(reference) == 0:
        log.warning("empty reference path; nDTW omitted")
        nd = None
    else:
        nd = ndtw(trajectory, reference, d_th)
    kinds = [d["kind"] if isinstance(d, dict) else d for d in decisions]
    return MetricBundle(ne, sr, osr, spl, tl, nd, sum(k == "backtrack" for k in kinds),
                        len(kinds))


@dataclass
class Summary:
    episodes: int
    ne: float
    sr: float
    osr: float
    spl: float
    tl: float
    ndtw: float | None
    steps: float
    backtracks: int
    success_backtracks: int
    successes: int

    @property
    def backtrack_share(self) -> str:
        """Backtracks in successful episodes over successes, e.g. "8 / 66 (12.1%)"."""
        pct = 100.0 * self.success_backtracks / self.successes if self.successes else 0.0
        return f"{self.success_backtracks} / {self.successes} ({pct:.1f}%)"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backtrack_share"] = self.backtrack_share
        return d


def aggregate(results) -> Summary:
    results = list(results)
    if not results:
        raise ValueError("aggregate needs at least one result")
    nd = [r.ndtw for r in results if r.ndtw is not None]
    wins = [r for r in results if r.sr]
    return Summary(
        episodes=len(results),
        ne=float(np.mean([r.ne for r in results])),
        sr=100.0 * len(wins) / len(results),
        osr=100.0 * sum(r.osr for r in results) / len(results),
        spl=float(np.mean([r.spl for r in results])),
        tl=float(np.mean([r.tl for r in results])),
        ndtw=float(np.mean(nd)) if nd else None,
        steps=float(np.mean([r.steps for r in results])),
        backtracks=sum(r.backtracks for r in results),
        success_backtracks=sum(r.backtracks for r in wins),
        successes=len(wins),
    )


COLUMNS = ("NE", "OSR", "SR", "SPL", "nDTW", "TL", "Steps", "Backtracks")


def table(rows: dict) -> str:
    """Aligned text table, one row per named summary, in the usual VLN-CE
    column order."""
    header = ["Method", *COLUMNS]
    body = []
    for name, s in rows.items():
        body.append([name, f"{s.ne:.2f}", f"{s.osr:.1f}", f"{s.sr:.1f}", f"{100 * s.spl:.1f}",
                     "-" if s.ndtw is None else f"{100 * s.ndtw:.1f}", f"{s.tl:.2f}",
                     f"{s.steps:.2f}", s.backtrack_share])
    widths = [max(len(str(r[i])) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)
                       for i, (c, w) in enumerate(zip(r, widths))) for r in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
