"""Deterministic k-fold cross-validation plans with inner validation splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of scan ids to k test folds, plus a per-fold validation subset.

    For fold iteration f: ids assigned to fold f are the test set, the
    remaining ids split into inner_val[f] (validation) and the actual
    training set.
    """

    k: int
    assignments: dict
    inner_val: tuple[tuple[str, ...], ...]
    seed: int

    def fold_ids(self, fold: int) -> tuple[str, ...]:
        return tuple(i for i, f in self.assignments.items() if f == fold)

    def test_ids(self, fold: int) -> tuple[str, ...]:
        return self.fold_ids(fold)

    def val_ids(self, fold: int) -> tuple[str, ...]:
        return self.inner_val[fold]

    def train_ids(self, fold: int) -> tuple[str, ...]:
        held_out = set(self.fold_ids(fold)) | set(self.inner_val[fold])
        return tuple(i for i in self.assignments if i not in held_out)


def make_folds(scan_ids, k: int = 4, val_fraction: float = 1.0 / 6.0,
               seed: int = 0) -> FoldPlan:
    """Partition scan ids into k folds of near-equal size, deterministically.

    Fold sizes differ by at most one.  Each fold iteration reserves
    ``val_fraction`` of its training pool (at least one scan) for epoch
    selection; validation ids are disjoint from that iteration's test fold.
    """
    ids = [str(i) for i in scan_ids]
    if len(set(ids)) != len(ids):
        raise ValueError("scan ids must be unique")
    if len(ids) < k:
        raise ValueError(f"need at least {k} scans for {k} folds, got {len(ids)}")
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")

    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(len(ids))]
    assignments = {scan_id: idx % k for idx, scan_id in enumerate(shuffled)}

    inner_val = []
    for fold in range(k):
        pool = [i for i in shuffled if assignments[i] != fold]
        n_val = max(1, int(round(val_fraction * len(pool))))
        if n_val >= len(pool):
            raise ValueError(
                f"fold {fold}: validation fraction {val_fraction} leaves no training scans")
        sub = np.random.default_rng([seed, 9176, fold])
        chosen = [pool[i] for i in sub.permutation(len(pool))[:n_val]]
        inner_val.append(tuple(chosen))
    return FoldPlan(k=k, assignments=assignments, inner_val=tuple(inner_val), seed=seed)
