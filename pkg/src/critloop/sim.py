"""Monte-Carlo and analytic study of iterative-refinement success rates.

Models a generate/critique/revise process as a two-state Markov chain over
solution correctness: an initial draft is correct with probability ``p_init``,
and each revision keeps a correct solution correct with probability ``p_cc``
or fixes a wrong one with probability ``p_cw``.  A noisy verifier (``tpr`` /
``fpr``) then picks which attempt to submit.  The simulator estimates the
probability that the submitted attempt is correct as a function of the
attempt budget; the analytic helpers give exact values for the chain itself.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import IO, Iterator, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

_SEED_MAX = 2**64 - 1


def _check_prob(value: float, name: str) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value)):
        raise ValueError(f"{name} must be a finite number, got {value!r}")
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class ChainParams:
    """Correctness transition probabilities of the refinement chain.

    ``p_init`` is the probability the zero-shot draft is correct, ``p_cc``
    the probability a revision keeps a correct solution correct, and
    ``p_cw`` the probability a revision fixes an incorrect one.
    """

    p_init: float
    p_cc: float
    p_cw: float

    def __post_init__(self) -> None:
        _check_prob(self.p_init, "p_init")
        _check_prob(self.p_cc, "p_cc")
        _check_prob(self.p_cw, "p_cw")


@dataclass(frozen=True)
class DiscParams:
    """Verifier quality: true/false positive rates of the correctness call."""

    tpr: float
    fpr: float

    def __post_init__(self) -> None:
        _check_prob(self.tpr, "tpr")
        _check_prob(self.fpr, "fpr")


@dataclass(frozen=True)
class SimConfig:
    chain: ChainParams
    disc: DiscParams
    max_attempts: int
    trials: int
    seed: int

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not 0 <= self.seed <= _SEED_MAX:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True)
class CurvePoint:
    n: int
    p_correct: float
    std_err: float


@dataclass(frozen=True)
class SuccessCurve:
    """Estimated success probability per attempt budget, with Bernoulli SEs."""

    points: tuple[CurvePoint, ...]

    def __iter__(self) -> Iterator[CurvePoint]:
        return iter(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def point(self, n: int) -> CurvePoint:
        for pt in self.points:
            if pt.n == n:
                return pt
        raise KeyError(f"curve has no point for n={n}")


def select_final(truths: Sequence[bool], predictions: Sequence[bool], rng: np.random.Generator) -> int:
    """Pick which attempt to submit given the verifier's calls.

    Uniform among attempts predicted correct; if the verifier flags nothing,
    uniform over all attempts.  Returns an index into ``truths``.
    """
    if len(truths) == 0:
        raise ValueError("cannot select from an empty attempt list")
    if len(predictions) != len(truths):
        raise ValueError(
            f"predictions length {len(predictions)} != truths length {len(truths)}"
        )
    pool = [i for i, flagged in enumerate(predictions) if flagged]
    if not pool:
        pool = list(range(len(truths)))
    return int(pool[int(rng.integers(len(pool)))])


def simulate_chain(cfg: SimConfig) -> SuccessCurve:
    """Estimate submitted-attempt success probability for n = 1..max_attempts.

    Each attempt budget n gets ``cfg.trials`` independent episodes drawn from
    a stream keyed on (seed, n), so a given (seed, n) pair always reproduces
    the same point regardless of max_attempts.  Within an episode the chain
    is rolled forward, the verifier labels every attempt, and the submitted
    attempt is chosen as in :func:`select_final`.
    """
    chain, disc = cfg.chain, cfg.disc
    points = []
    for n in range(1, cfg.max_attempts + 1):
        rng = np.random.default_rng([cfg.seed, n])
        truths = _roll_chain(chain, n, cfg.trials, rng)
        flag_prob = np.where(truths, disc.tpr, disc.fpr)
        preds = rng.random((cfg.trials, n)) < flag_prob
        # Uniform selection via argmax over iid keys: restricted to flagged
        # attempts when any exist, otherwise over the whole row.
        keys = rng.random((cfg.trials, n))
        flagged_keys = np.where(preds, keys, -1.0)
        any_flagged = preds.any(axis=1)
        chosen = np.where(any_flagged, flagged_keys.argmax(axis=1), keys.argmax(axis=1))
        success = truths[np.arange(cfg.trials), chosen]
        p_hat = float(success.mean())
        std_err = math.sqrt(p_hat * (1.0 - p_hat) / cfg.trials)
        points.append(CurvePoint(n=n, p_correct=p_hat, std_err=std_err))
    return SuccessCurve(points=tuple(points))


def _roll_chain(chain: ChainParams, n: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Sample the correctness chain: boolean array of shape (trials, n)."""
    truths = np.empty((trials, n), dtype=bool)
    truths[:, 0] = rng.random(trials) < chain.p_init
    for i in range(1, n):
        roll = rng.random(trials)
        truths[:, i] = np.where(truths[:, i - 1], roll < chain.p_cc, roll < chain.p_cw)
    return truths


def simulate_state_frequencies(
    chain: ChainParams, n: int, trials: int, seed: int
) -> np.ndarray:
    """Observed per-step correctness frequency of the raw chain (no verifier).

    Returns an array of length n whose k-th entry estimates P(attempt k is
    correct).  Useful for checking long-run behaviour against
    :func:`stationary_success`.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng([seed, n])
    truths = _roll_chain(chain, n, trials, rng)
    return truths.mean(axis=0)


def analytic_curve(chain: ChainParams, n: int) -> float:
    """Exact probability that the n-th attempt (1-based) is correct.

    Iterates the two-state transition p <- p_cw + p * (p_cc - p_cw) starting
    from p_init.  This is the marginal of the chain itself, before any
    verifier-based selection.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    p = chain.p_init
    for _ in range(n - 1):
        p = chain.p_cw + p * (chain.p_cc - chain.p_cw)
    return p


def analytic_any_correct(chain: ChainParams, n: int) -> float:
    """Exact probability that at least one of the first n attempts is correct.

    Equals the success probability of the full selection protocol under a
    perfect verifier (tpr=1, fpr=0): no correct attempt is ever missed, so
    the submission succeeds iff the chain ever visits the correct state.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return 1.0 - (1.0 - chain.p_init) * (1.0 - chain.p_cw) ** (n - 1)


def stationary_success(chain: ChainParams) -> float:
    """Long-run probability of the correct state: p_cw / (1 + p_cw - p_cc)."""
    denom = 1.0 + chain.p_cw - chain.p_cc
    if denom == 0.0:
        raise ValueError(
            "chain has no unique stationary distribution (p_cc=1 and p_cw=0)"
        )
    return chain.p_cw / denom


def emit_curve(curve: SuccessCurve, destination: Union[str, os.PathLike, IO[str]]) -> None:
    """Write a curve as CSV with header ``n,p_correct,std_err``."""
    if len(curve) == 0:
        raise ValueError("refusing to emit an empty curve")
    if hasattr(destination, "write"):
        _write_curve(curve, destination)  # type: ignore[arg-type]
        return
    path = os.fspath(destination)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            _write_curve(curve, fh)
    except OSError as exc:
        raise OSError(f"cannot write curve to {path}: {exc}") from exc


def _write_curve(curve: SuccessCurve, fh: IO[str]) -> None:
    fh.write("n,p_correct,std_err\n")
    for pt in curve:
        fh.write(f"{pt.n},{pt.p_correct!r},{pt.std_err!r}\n")
