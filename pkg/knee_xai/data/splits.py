"""Patient-level train/validation splits."""
from __future__ import annotations
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger("KneeXAI.Splits")

MAX_ATTEMPTS = 1000


def _train_count(n: int, train_fraction: float) -> int:
    return min(max(int(round(n * train_fraction)), 1), n - 1)


def make_split(patients: Union[int, Sequence], train_fraction: float, seed: int,
               labels: Optional[Sequence[int]] = None) -> Tuple[List, List]:
    """Split patients (a count or a list of ids) into disjoint, exhaustive train and validation lists.

    With ``labels`` the permutation is redrawn from (seed, attempt) until both
    sides hold at least one positive. Each list keeps the input order.
    """
    ids = list(range(patients)) if isinstance(patients, (int, np.integer)) else list(patients)
    n = len(ids)
    if n < 2:
        raise ValueError(f"Need at least 2 patients to split, got {n}")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(set(ids)) != n:
        raise ValueError("Patient ids must be unique")
    if labels is not None and len(labels) != n:
        raise ValueError(f"{len(labels)} labels for {n} patients")

    n_train = _train_count(n, train_fraction)
    positives = None if labels is None else np.asarray(labels) == 1
    feasible = positives is not None and positives.sum() >= 2
    if positives is not None and not feasible:
        logger.warning(f"Only {int(positives.sum())} positive patients; cannot place one on each side")

    for attempt in range(MAX_ATTEMPTS):
        order = np.random.default_rng([seed, attempt]).permutation(n)
        train_idx = np.sort(order[:n_train])
        val_idx = np.sort(order[n_train:])
        if not feasible or (positives[train_idx].any() and positives[val_idx].any()):
            if attempt:
                logger.debug(f"Split with seed {seed} accepted after {attempt + 1} draws")
            return [ids[i] for i in train_idx], [ids[i] for i in val_idx]
    raise RuntimeError(f"No split with a positive on each side after {MAX_ATTEMPTS} draws")
