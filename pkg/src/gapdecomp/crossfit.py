"""K-fold cross-fitting of the nuisance models.

Every row's nuisance predictions come from models trained with that
row's fold held out. The nested stage's training targets are produced
inside each training set by the outcome model fitted on that same
training set, so fold k's predictions never see fold k through any
intermediate quantity. The intervention-distribution models are
low-dimensional and fitted once on the full sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .glm import EstimationError
from .nuisances import (InterventionSpec, NuisanceSet, NuisanceSpecs,
                        _assemble, fit_intervention_distributions,
                        fit_nuisance_block)
from .tabular import DataError, Dataset, RoleMap


@dataclass(frozen=True)
class CrossFitPlan:
    n: int
    k: int
    fold_of_row: np.ndarray
    seed: int
    cluster_respecting: bool = False

    def pred_rows(self, fold: int) -> np.ndarray:
        return np.nonzero(self.fold_of_row == fold)[0]

    def train_rows(self, fold: int) -> np.ndarray:
        return np.nonzero(self.fold_of_row != fold)[0]

    def fold_sizes(self) -> list:
        return [int((self.fold_of_row == k).sum()) for k in range(self.k)]

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "k": self.k, "seed": self.seed,
                           "cluster_respecting": self.cluster_respecting,
                           "fold_of_row": self.fold_of_row.tolist()})

    @staticmethod
    def from_json(text: str) -> "CrossFitPlan":
        obj = json.loads(text)
        return CrossFitPlan(obj["n"], obj["k"],
                            np.asarray(obj["fold_of_row"], dtype=np.int64),
                            obj["seed"], obj["cluster_respecting"])


def make_folds(n: int, k: int, seed: int, clusters=None) -> CrossFitPlan:
    """Random fold assignment.

    Without clusters: a uniformly shuffled partition with fold sizes
    differing by at most one row. With clusters: whole clusters are
    shuffled and assigned largest-first to the currently smallest fold,
    so fold sizes differ by at most one cluster's worth of rows.
    """
    if k < 2:
        raise DataError("cross-fitting needs k >= 2")
    if k > n:
        raise DataError(f"k={k} exceeds the number of rows {n}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    fold_of_row = np.empty(n, dtype=np.int64)
    if clusters is None:
        perm = rng.permutation(n)
        base, extra = divmod(n, k)
        start = 0
        for f in range(k):
            size = base + (1 if f < extra else 0)
            fold_of_row[perm[start:start + size]] = f
            start += size
        return CrossFitPlan(n, k, fold_of_row, seed, False)

    clusters = np.asarray(clusters)
    uniq = np.unique(clusters)
    if k > uniq.size:
        raise DataError(f"k={k} exceeds the number of clusters {uniq.size}")
    order = rng.permutation(uniq.size)
    sizes = np.array([(clusters == uniq[i]).sum() for i in order])
    stable = np.argsort(-sizes, kind="stable")
    fold_load = np.zeros(k, dtype=np.int64)
    for pos in stable:
        f = int(np.argmin(fold_load))
        cl = uniq[order[pos]]
        fold_of_row[clusters == cl] = f
        fold_load[f] += sizes[pos]
    return CrossFitPlan(n, k, fold_of_row, seed, True)


def crossfit_nuisances(ds: Dataset, roles: RoleMap, intervention: InterventionSpec,
                       specs: NuisanceSpecs, plan: CrossFitPlan) -> NuisanceSet:
    """Out-of-fold nuisance predictions for every row under the plan."""
    roles.validate(ds)
    specs.validate()
    if plan.n != ds.n:
        raise DataError("cross-fit plan was made for a different number of rows")
    int_fit = fit_intervention_distributions(ds, roles, intervention)
    blocks = []
    diags = {}
    train_rows_by_fold = {}
    for fold in range(plan.k):
        tr = plan.train_rows(fold)
        pr = plan.pred_rows(fold)
        if tr.size == 0 or pr.size == 0:
            raise EstimationError(f"fold {fold} is empty under the plan")
        arrays, models = fit_nuisance_block(ds, roles, intervention, specs,
                                            int_fit, tr, pr, fold_id=fold)
        blocks.append((pr, arrays))
        train_rows_by_fold[fold] = tr
        for name, m in models.items():
            diags.setdefault(name, []).append(m.diagnostics())
    return _assemble(ds, roles, intervention, int_fit, blocks, "out_of_fold",
                     fold_of_row=plan.fold_of_row.copy(),
                     train_rows_by_fold=train_rows_by_fold,
                     model_diags=diags)


def audit_no_leakage(nuis: NuisanceSet) -> bool:
    """Check the recorded provenance: every row's fold must be excluded
    from the training rows of the models that scored it."""
    if nuis.provenance != "out_of_fold":
        raise DataError("leakage audit applies to cross-fitted nuisance sets")
    fold = nuis.fold_of_row
    for k, train in nuis.train_rows_by_fold.items():
        if np.isin(np.nonzero(fold == k)[0], train).any():
            return False
        if (fold[train] == k).any():
            return False
    return True
