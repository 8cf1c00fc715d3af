"""
Slot-exact Monte Carlo simulator for tree collision resolution.

A trial grows the splitting tree level by level with numpy, counting slots
by the recursive law of the chosen variant:

- SIC, d groups: a collided node of size s charges the explored children
  j <= d_min (the first groups whose cumulative size reaches s - K) plus one
  slot when d_min < d.
- no SIC: every node costs one slot and every child is explored.

The trace mode replays the same tree depth-first and emits the operational
slot log (transmissions, idles, SIC skips).
"""

import logging
import math
import os
from dataclasses import dataclass
from enum import Enum
from multiprocessing import Pool
from typing import Optional, Protocol, Sequence

import numpy as np

from cri import ProtocolConfig
from errors import InputValidationError, RecursionDepthError, TraceMismatchError

logger = logging.getLogger(__name__)

DEPTH_TRAP = 10**6
MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
CI95_Z = 1.96
# Window/CRI loads above this are reported as diverged.
GATED_USER_CAP = 10**6


class SlotKind(str, Enum):
    IDLE = "Idle"
    SUCCESS = "Success"
    COLLISION = "Collision"
    SKIPPED_SIC_RESOLVED = "SkippedSicResolved"
    SKIPPED_KNOWN_RESIDUAL = "SkippedKnownResidual"


@dataclass(frozen=True)
class TrialOutcome:
    n: int
    slots: int
    resolved: int
    seed: int


@dataclass(frozen=True)
class SlotEvent:
    """One entry of the slot log; skipped events carry no slot index."""
    index: Optional[int]
    kind: SlotKind
    count: Optional[int]
    depth: int


@dataclass(frozen=True)
class MonteCarloStats:
    trials: int
    mean_slots: float
    std_dev: float
    ci95_half_width: float
    throughput: float


@dataclass(frozen=True)
class WindowedSummary:
    """Window/CRI queue statistics; a positive drift means the backlog grows."""
    windows: int
    mean_cri: float
    mean_users: float
    mean_wait: float
    drift: float
    final_backlog: float


@dataclass(frozen=True)
class GatedSummary:
    cris: int
    mean_cri: float
    mean_users: float
    max_users: int
    diverged: bool


# ============== Seeding ==============

def mix_seed(master_seed: int, index: int) -> int:
    """index-th output of a SplitMix64 stream started at master_seed."""
    z = (master_seed + GOLDEN_GAMMA * (index + 1)) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def worker_count() -> int:
    """Worker processes for Monte Carlo runs (TREESIC_THREADS, 0 or unset = all cores)."""
    raw = os.getenv("TREESIC_THREADS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise InputValidationError(f"TREESIC_THREADS must be an integer, got {raw!r}") from exc
    if value < 0:
        raise InputValidationError(f"TREESIC_THREADS must be non-negative, got {value}")
    return value or (os.cpu_count() or 1)


# ============== Splitters ==============

class Splitter(Protocol):
    def split(self, rng: np.random.Generator, sizes: np.ndarray, probs: Sequence[float]) -> np.ndarray:
        """Group counts, one row of len(probs) entries per node size."""


class MultinomialSplitter:
    """Multinomial split by sequential binomial conditioning."""

    def split(self, rng: np.random.Generator, sizes: np.ndarray, probs: Sequence[float]) -> np.ndarray:
        out = np.empty((len(sizes), len(probs)), dtype=np.int64)
        remaining = sizes.astype(np.int64)
        for j in range(len(probs) - 1):
            mass = math.fsum(probs[j:])
            out[:, j] = rng.binomial(remaining, min(1.0, probs[j] / mass))
            remaining = remaining - out[:, j]
        out[:, -1] = remaining
        return out


class ScriptedSplitter:
    """Replays fixed split outcomes, one row per expanded node in breadth-first order."""

    def __init__(self, rows: Sequence[Sequence[int]]):
        self._rows = [tuple(int(c) for c in row) for row in rows]
        self._next = 0

    def split(self, rng: np.random.Generator, sizes: np.ndarray, probs: Sequence[float]) -> np.ndarray:
        out = np.empty((len(sizes), len(probs)), dtype=np.int64)
        for k, size in enumerate(sizes):
            if self._next >= len(self._rows):
                raise InputValidationError("scripted splitter ran out of rows")
            row = self._rows[self._next]
            self._next += 1
            if len(row) != len(probs) or sum(row) != size:
                raise InputValidationError(f"scripted row {row} does not split {int(size)} users into {len(probs)} groups")
            out[k] = row
        return out


# ============== Tree growth ==============

@dataclass
class _Level:
    counts: np.ndarray
    first_child: np.ndarray


def _grow(
    config: ProtocolConfig,
    n: int,
    rng: np.random.Generator,
    splitter: Splitter,
    explore_all: bool,
    keep_levels: bool = False,
) -> tuple[int, int, list[_Level]]:
    """
    Grow the tree breadth-first.

    Returns (slot count, expanded node count, levels). With
    explore_all every child of a collided node is expanded and the count is
    the no-SIC law; otherwise only children up to d_min are expanded.
    """
    K, d = config.K, config.d
    levels: list[_Level] = []
    if n <= K:
        return 1, 0, levels

    slots = 0
    internal = 0
    level = np.array([n], dtype=np.int64)
    columns = np.arange(d)
    depth = 0
    while level.size:
        depth += 1
        if depth > DEPTH_TRAP:
            raise RecursionDepthError(f"splitting tree for n={n} passed {DEPTH_TRAP} levels")
        counts = splitter.split(rng, level, config.split_probs)
        internal += level.size
        if explore_all:
            d_min = np.full(level.size, d)
            slots += level.size
        else:
            need = level - K
            d_min = np.argmax(np.cumsum(counts, axis=1) >= need[:, None], axis=1) + 1
            slots += int(np.count_nonzero(d_min < d))
        explored = columns[None, :] < d_min[:, None]
        children = counts[explored]
        slots += int(np.count_nonzero(children <= K))
        if keep_levels:
            expanded = np.count_nonzero(explored & (counts > K), axis=1)
            first = np.concatenate(([0], np.cumsum(expanded)[:-1]))
            levels.append(_Level(counts=counts, first_child=first))
        level = children[children > K]
    return slots, internal, levels


def _check_trial(n: int) -> None:
    if n < 0:
        raise InputValidationError(f"n must be non-negative, got {n}")


def simulate_cri(
    config: ProtocolConfig,
    n: int,
    seed: int,
    splitter: Optional[Splitter] = None,
) -> TrialOutcome:
    """Slot count of one collision resolution interval with n initial users."""
    _check_trial(n)
    rng = np.random.default_rng(seed)
    slots, _, _ = _grow(config, n, rng, splitter or MultinomialSplitter(), explore_all=not config.sic)
    return TrialOutcome(n=n, slots=slots, resolved=n, seed=seed)


def _transmitted(size: int, K: int) -> SlotKind:
    if size == 0:
        return SlotKind.IDLE
    return SlotKind.SUCCESS if size <= K else SlotKind.COLLISION


def simulate_cri_trace(
    config: ProtocolConfig,
    n: int,
    seed: int,
    splitter: Optional[Splitter] = None,
) -> tuple[TrialOutcome, list[SlotEvent]]:
    """
    One trial with its operational slot log.

    Groups of a collided node go out left to right. Once the stored residual
    holds at most K packets it is decoded by cancellation without a slot;
    when only the last group is unknown its own transmission is skipped and
    resolution continues inside it. Without SIC every group is transmitted.
    """
    _check_trial(n)
    K, d = config.K, config.d
    rng = np.random.default_rng(seed)
    expected, _, levels = _grow(
        config, n, rng, splitter or MultinomialSplitter(), explore_all=not config.sic, keep_levels=True
    )

    events: list[SlotEvent] = []
    slot = 0

    def transmit(size: int, depth: int) -> None:
        nonlocal slot
        slot += 1
        events.append(SlotEvent(slot, _transmitted(size, K), size, depth))

    transmit(n, 0)
    # frame: [level, node, next group, remaining residual, next child index, depth]
    stack = [[0, 0, 0, n, 0, 0]] if n > K else []
    while stack:
        frame = stack[-1]
        lvl, node, group, remaining, child, depth = frame
        row = levels[lvl].counts[node]
        if group == d:
            stack.pop()
            continue
        if config.sic and remaining <= K:
            events.append(SlotEvent(None, SlotKind.SKIPPED_SIC_RESOLVED, int(remaining), depth + 1))
            stack.pop()
            continue
        size = int(row[group])
        frame[2] = group + 1
        if config.sic and group == d - 1:
            events.append(SlotEvent(None, SlotKind.SKIPPED_KNOWN_RESIDUAL, size, depth + 1))
            stack.pop()
            stack.append([lvl + 1, child, 0, size, int(levels[lvl + 1].first_child[child]), depth + 1])
            continue
        transmit(size, depth + 1)
        frame[3] = remaining - size
        if size > K:
            frame[4] = child + 1
            stack.append([lvl + 1, child, 0, size, int(levels[lvl + 1].first_child[child]), depth + 1])

    if slot != expected:
        raise TraceMismatchError(f"trace counted {slot} slots, recursion counted {expected}")
    return TrialOutcome(n=n, slots=slot, resolved=n, seed=seed), events


def coupled_sic_comparison(
    n: int,
    K: int,
    p: float,
    seed: int,
    splitter: Optional[Splitter] = None,
) -> tuple[int, int]:
    """
    (slots with SIC, slots without SIC) on one shared binary splitting tree.

    With SIC the count is the number of leaves; without SIC every internal
    node adds its own slot.
    """
    _check_trial(n)
    config = ProtocolConfig(K=K, d=2, split_probs=[p, 1.0 - p], sic=False)
    rng = np.random.default_rng(seed)
    no_sic, internal, _ = _grow(config, n, rng, splitter or MultinomialSplitter(), explore_all=True)
    return no_sic - internal if n > K else 1, no_sic


# ============== Monte Carlo ==============

def _run_chunk(task: tuple[ProtocolConfig, int, int, int, int]) -> tuple[int, int, int]:
    config, n, master_seed, start, stop = task
    total = 0
    squares = 0
    for index in range(start, stop):
        slots = simulate_cri(config, n, mix_seed(master_seed, index)).slots
        total += slots
        squares += slots * slots
    return stop - start, total, squares


def monte_carlo(
    config: ProtocolConfig,
    n: int,
    trials: int,
    master_seed: int,
    threads: Optional[int] = None,
) -> MonteCarloStats:
    """Mean CRI length over independent trials; trial i uses seed mix_seed(master_seed, i)."""
    _check_trial(n)
    if trials < 1:
        raise InputValidationError(f"trials must be at least 1, got {trials}")
    workers = worker_count() if threads is None else max(1, threads)
    workers = min(workers, trials)
    chunk = max(1, math.ceil(trials / (workers * 4)))
    tasks = [(config, n, master_seed, start, min(start + chunk, trials)) for start in range(0, trials, chunk)]

    if workers == 1:
        parts = [_run_chunk(task) for task in tasks]
    else:
        with Pool(processes=workers) as pool:
            parts = pool.map(_run_chunk, tasks)

    count = sum(p[0] for p in parts)
    total = sum(p[1] for p in parts)
    squares = sum(p[2] for p in parts)
    mean = total / count
    variance = (count * squares - total * total) / (count * (count - 1)) if count > 1 else 0.0
    std = math.sqrt(max(variance, 0.0))
    logger.debug("monte carlo n=%d trials=%d workers=%d mean=%.6f", n, count, workers, mean)
    return MonteCarloStats(
        trials=count,
        mean_slots=mean,
        std_dev=std,
        ci95_half_width=CI95_Z * std / math.sqrt(count),
        throughput=n / (config.K * mean),
    )


# ============== Arrival dynamics ==============

def simulate_windowed(
    config: ProtocolConfig,
    lam: float,
    delta: float,
    windows: int,
    seed: int,
) -> WindowedSummary:
    """
    Windowed access queue: window i's Poisson(lam*delta) arrivals get their
    own CRI, which starts when CRI i-1 has finished.

    The backlog is the lag of a CRI start behind the end of its window.
    """
    if lam <= 0 or delta <= 0:
        raise InputValidationError(f"lambda and delta must be positive, got {lam}, {delta}")
    if windows < 1:
        raise InputValidationError(f"windows must be at least 1, got {windows}")
    users = np.random.default_rng(seed).poisson(lam * delta, size=windows)
    lengths = np.array(
        [simulate_cri(config, int(u), mix_seed(seed, i)).slots for i, u in enumerate(users)],
        dtype=float,
    )
    backlog = 0.0
    waits = np.empty(windows)
    for i, length in enumerate(lengths):
        waits[i] = backlog
        backlog = max(0.0, backlog + length - delta)
    return WindowedSummary(
        windows=windows,
        mean_cri=float(lengths.mean()),
        mean_users=float(users.mean()),
        mean_wait=float(waits.mean()),
        drift=float(np.mean(lengths - delta)),
        final_backlog=backlog,
    )


def simulate_gated(config: ProtocolConfig, lam: float, cris: int, seed: int) -> GatedSummary:
    """
    Gated access: the users of each CRI are the arrivals during the previous
    one. Stops early once a CRI carries more than GATED_USER_CAP users.
    """
    if lam <= 0:
        raise InputValidationError(f"lambda must be positive, got {lam}")
    if cris < 1:
        raise InputValidationError(f"cris must be at least 1, got {cris}")
    rng = np.random.default_rng(seed)
    length = 1
    lengths, loads = [], []
    diverged = False
    for i in range(cris):
        users = int(rng.poisson(lam * length))
        if users > GATED_USER_CAP:
            diverged = True
            logger.warning("gated run at lambda=%g diverged after %d CRIs", lam, i)
            break
        length = simulate_cri(config, users, mix_seed(seed, i)).slots
        lengths.append(length)
        loads.append(users)
    return GatedSummary(
        cris=len(lengths),
        mean_cri=float(np.mean(lengths)) if lengths else math.inf,
        mean_users=float(np.mean(loads)) if loads else math.inf,
        max_users=max(loads, default=0),
        diverged=diverged,
    )
