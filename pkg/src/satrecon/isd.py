"""Iterative saturation detection for lower-saturated, non-negative sensing.

A reading at or below the lower rail is either a genuine zero (the ray
missed the object) or a saturated one.  Starting from "everything low is
saturated", reconstruct, re-measure, and relabel low readings whose
re-measured value stays below ``s_minus / detect_fraction`` as analog zeros.
Repeat until the labels stop changing.
"""
from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .sensing import SaturatedObservations

__all__ = ["IsdConfig", "IsdRound", "IsdHistory", "IsdAbort", "run_isd", "compare_indicators"]

log = logging.getLogger(__name__)


class IsdAbort(RuntimeError):
    """Reconstructor failure; ``history`` holds the rounds completed so far."""

    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass
class IsdConfig:
    """``reconstructor(obs, x0)`` returns a signal; ``forward(x)`` re-measures it.

    ``s_minus`` may be a scalar or one threshold per measurement.
    ``warm_start`` passes the previous reconstruction as ``x0``.
    """

    s_minus: object
    reconstructor: Callable
    forward: Callable
    detect_fraction: float = 10.0
    max_rounds: int = 10
    warm_start: bool = True
    psi_true: Optional[np.ndarray] = None
    metric: Optional[Callable] = None

    def __post_init__(self):
        if not self.detect_fraction > 0:
            raise ValueError("detect_fraction must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")


@dataclass
class IsdRound:
    round: int
    psi: np.ndarray
    flips: int
    false_detections: Optional[int] = None
    missing_detections: Optional[int] = None
    metric: Optional[float] = None


@dataclass
class IsdHistory:
    rounds: list = field(default_factory=list)
    converged: bool = False
    cycle: bool = False

    def __len__(self):
        return len(self.rounds)

    @property
    def metrics(self):
        return [r.metric for r in self.rounds]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "flips", "false", "missing", "metric"])
            for r in self.rounds:
                w.writerow([
                    r.round,
                    r.flips,
                    "" if r.false_detections is None else r.false_detections,
                    "" if r.missing_detections is None else r.missing_detections,
                    "" if r.metric is None else repr(float(r.metric)),
                ])


def compare_indicators(psi_true, psi_detected) -> tuple[int, int]:
    """``(false, missing)``: detected-but-not-saturated and saturated-but-missed counts."""
    a = np.asarray(psi_true, dtype=bool)
    b = np.asarray(psi_detected, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("indicators differ in length")
    return int(np.sum(~a & b)), int(np.sum(a & ~b))


def _digest(psi):
    return hashlib.sha1(np.packbits(psi).tobytes()).hexdigest()


def run_isd(obs: SaturatedObservations, cfg: IsdConfig):
    """Returns ``(x_hat, psi_final, history)``."""
    p0 = np.asarray(obs.p, dtype=float)
    s_minus = np.broadcast_to(np.asarray(cfg.s_minus, dtype=float), p0.shape)
    low = p0 <= s_minus
    psi = low.copy()
    p = p0.copy()
    hist = IsdHistory()
    seen = {_digest(psi)}
    x = None
    y = np.where(low, -1, 0).astype(np.int8)
    s = np.where(low, s_minus, 0.0)
    for k in range(1, cfg.max_rounds + 1):
        cur = SaturatedObservations(p, psi, np.where(psi, y, 0), np.where(psi, s, 0.0), obs.s_minus, obs.s_plus)
        try:
            x = cfg.reconstructor(cur, x if cfg.warm_start else None)
        except Exception as exc:  # surfaced with the partial history
            raise IsdAbort(f"reconstruction failed in round {k}: {exc}", hist) from exc
        q = np.asarray(cfg.forward(x), dtype=float).ravel()
        new = low & (q > s_minus / cfg.detect_fraction)
        p = np.where(low & ~new, 0.0, p)
        flips = int(np.sum(new != psi))
        rnd = IsdRound(k, new.copy(), flips)
        if cfg.psi_true is not None:
            rnd.false_detections, rnd.missing_detections = compare_indicators(cfg.psi_true, new)
        if cfg.metric is not None:
            rnd.metric = float(cfg.metric(x))
        hist.rounds.append(rnd)
        log.info("isd round %d: %d flips", k, flips)
        psi = new
        if flips == 0:
            hist.converged = True
            break
        dig = _digest(psi)
        if dig in seen:
            hist.cycle = True
            break
        seen.add(dig)
    return x, psi, hist
