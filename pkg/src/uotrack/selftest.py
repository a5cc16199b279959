"""Numerical self-checks run by ``uotrack selftest``.

Each check compares a production routine against an independent slow
reference on seeded random fixtures and reports the worst error next to its
tolerance. ``fault`` deliberately corrupts one routine's output so the
failure path can be exercised.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .assignment import assignment_cost, hungarian
from .association import similarity_matrix
from .losses import box_loss, box_loss_grad, finite_diff_grad, reid_contrastive_grad, reid_contrastive_loss
from .geometry import Box

CHECKS = ("reid_gradient", "box_gradient", "hungarian", "similarity")


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float
    fixtures: int

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst={self.worst:.3e} tol={self.tolerance:.0e} fixtures={self.fixtures}"


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def check_reid_gradient(rng: np.random.Generator, fault: bool = False, n: int = 20) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        d = int(rng.integers(2, 17))
        e = rng.normal(size=d)
        pos = rng.normal(size=(int(rng.integers(1, 4)), d))
        neg = rng.normal(size=(int(rng.integers(1, 11)), d))
        analytic = reid_contrastive_grad(e, pos, neg) * (1.01 if fault else 1.0)
        numeric = finite_diff_grad(lambda v: reid_contrastive_loss(v, pos, neg), e, 1e-4)
        worst = max(worst, _rel(analytic, numeric))
    return CheckResult("reid_gradient", worst, 1e-3, n)


def check_box_gradient(rng: np.random.Generator, fault: bool = False, n: int = 20) -> CheckResult:
    worst, done = 0.0, 0
    image = (64.0, 48.0)
    while done < n:
        gt = np.array([10.0, 8.0, 30.0, 28.0]) + rng.uniform(-3, 3, 4)
        pred = gt + rng.uniform(-6, 6, 4)
        # skip kinks of |.|, min and max
        if np.min(np.abs(pred - gt)) < 0.05 or pred[2] - pred[0] < 2 or pred[3] - pred[1] < 2:
            continue
        analytic = box_loss_grad(pred, gt, image) * (1.01 if fault else 1.0)
        numeric = finite_diff_grad(lambda v: box_loss(Box(*v), Box(*gt), image), pred, 1e-4)
        worst = max(worst, _rel(analytic, numeric))
        done += 1
    return CheckResult("box_gradient", worst, 1e-3, n)


def brute_force_assignment(cost: np.ndarray, allowed: np.ndarray) -> tuple[int, float]:
    """(cardinality, cost) of the best partial matching by exhaustive search.

    Every partial matching embeds in a permutation of the padded square
    matrix, so scanning permutations and keeping their allowed pairs covers
    all candidates.
    """
    rows, cols = cost.shape
    n = max(rows, cols)
    c = np.zeros((n, n))
    ok = np.zeros((n, n), bool)
    c[:rows, :cols] = cost
    ok[:rows, :cols] = allowed
    perms = np.array(list(itertools.permutations(range(n))), dtype=int).reshape(-1, n)
    idx = np.arange(n)
    hit = ok[idx, perms]
    card = hit.sum(axis=1)
    total = np.where(hit, c[idx, perms], 0.0).sum(axis=1)
    best_card = card.max()
    return int(best_card), float(total[card == best_card].min())


def check_hungarian(rng: np.random.Generator, fault: bool = False, n: int = 200) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        rows, cols = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        cost = rng.uniform(0, 10, (rows, cols))
        allowed = rng.random((rows, cols)) > 0.3
        pairs = hungarian(cost, allowed)
        if fault and pairs:
            pairs = pairs[:-1]
        card, ref = brute_force_assignment(cost, allowed)
        if len(pairs) != card or any(not allowed[r, c] for r, c in pairs):
            worst = math.inf
            continue
        worst = max(worst, abs(assignment_cost(cost, pairs) - ref))
    return CheckResult("hungarian", worst, 1e-9, n)


def naive_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, n = len(a), len(b)
    dots = [[math.fsum(float(x) * float(y) for x, y in zip(a[i], b[j])) for j in range(n)] for i in range(m)]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            row = math.fsum(math.exp(dots[i][k]) for k in range(n))
            col = math.fsum(math.exp(dots[k][j]) for k in range(m))
            out[i, j] = 0.5 * (math.exp(dots[i][j]) / row + math.exp(dots[i][j]) / col)
    return out


def check_similarity(rng: np.random.Generator, fault: bool = False, n: int = 100) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        m, k, d = (int(v) for v in rng.integers(1, [9, 9, 17]))
        a, b = rng.normal(size=(m, d)), rng.normal(size=(k, d))
        s = similarity_matrix(a, b) + (1e-6 if fault else 0.0)
        worst = max(worst, float(np.max(np.abs(s - naive_similarity(a, b)))))
    return CheckResult("similarity", worst, 1e-9, n)


def run_selftest(fault: str | None = None, seed: int = 0) -> list[CheckResult]:
    if fault is not None and fault not in CHECKS:
        raise ValueError(f"unknown check {fault!r}; choose from {CHECKS}")
    runners = {
        "reid_gradient": check_reid_gradient,
        "box_gradient": check_box_gradient,
        "hungarian": check_hungarian,
        "similarity": check_similarity,
    }
    return [
        runners[name](np.random.default_rng([seed, i]), fault == name)
        for i, name in enumerate(CHECKS)
    ]
