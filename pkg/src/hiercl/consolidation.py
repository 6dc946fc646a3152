"""Second-order consolidation of local weights into a slow hierarchy.

Core update: with retention pull lambda and target displacement
dd = w_target - w_prev, the step dw* = (H + lambda*I)^(-1)(lambda*dd - g)
minimizes the quadratic surrogate

    g . dw + 0.5 dw^T H dw + 0.5 lambda ||dw - dd||^2

and the new weights are w_prev + eta*dw* (eta = 1 is the exact minimizer;
a damped eta plus norm clipping is the practical default). An L-level
hierarchy applies the same update level by level, each level chasing the
freshly updated level below it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curvature import CurvatureEstimate, materialize, quad_form, regularized_solve


@dataclass
class HierarchyState:
    """levels[0] is the fastest consolidated model; levels[-1] the slowest,
    which serves as the final predictor. group_counter counts absorbed
    groups (0 = nothing absorbed yet)."""

    levels: list[np.ndarray]
    lambdas: tuple[float, ...]
    group_counter: int = 0

    def __post_init__(self):
        if not self.levels:
            raise ValueError("hierarchy needs at least one level")
        self.levels = [np.array(w, dtype=np.float64) for w in self.levels]
        p = self.levels[0].size
        if any(w.ndim != 1 or w.size != p for w in self.levels):
            raise ValueError("level vectors must be 1-D and same length")
        self.lambdas = tuple(float(l) for l in self.lambdas)
        if len(self.lambdas) != len(self.levels):
            raise ValueError("need one lambda per level")
        if any(l <= 0 for l in self.lambdas):
            raise ValueError("lambdas must be positive")

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def top(self) -> np.ndarray:
        return self.levels[-1]

    def clone(self) -> "HierarchyState":
        return HierarchyState([w.copy() for w in self.levels], self.lambdas,
                              self.group_counter)


def lambda_schedule(base: float, num_levels: int, factor: float = 1.0) -> tuple[float, ...]:
    """Constant by default; factor != 1 gives a geometric per-level scale."""
    if base <= 0 or factor <= 0:
        raise ValueError("lambda and factor must be positive")
    return tuple(base * factor**i for i in range(num_levels))


def init_hierarchy(init: np.ndarray, lambdas) -> HierarchyState:
    return HierarchyState([np.array(init) for _ in lambdas], tuple(lambdas), 0)


def taylor_consolidate(
    w_prev: np.ndarray,
    w_target: np.ndarray,
    grad: np.ndarray,
    curv: CurvatureEstimate,
    lam: float,
    eta: float = 1.0,
    clip: float | None = None,
) -> np.ndarray:
    """One consolidation step of w_prev toward w_target."""
    w_prev = np.asarray(w_prev, dtype=np.float64)
    dd = np.asarray(w_target, dtype=np.float64) - w_prev
    if dd.size != grad.size:
        raise ValueError("weight and gradient lengths disagree")
    dw = regularized_solve(curv, lam, lam * dd - grad).x
    if clip is not None:
        norm = float(np.linalg.norm(dw))
        if norm > clip:
            dw = dw * (clip / norm)
    return w_prev + eta * dw


def surrogate_value(
    dw: np.ndarray, grad: np.ndarray, curv: CurvatureEstimate, lam: float, dd: np.ndarray
) -> float:
    """The quadratic objective the consolidation step minimizes over dw."""
    diff = dw - dd
    return float(grad @ dw) + 0.5 * quad_form(curv, dw) + 0.5 * lam * float(diff @ diff)


def descent_reference_min(
    grad: np.ndarray,
    curv: CurvatureEstimate,
    lam: float,
    dd: np.ndarray,
    tol: float = 1e-10,
    max_iters: int = 200_000,
) -> np.ndarray:
    """Minimize the surrogate by steepest descent with exact line search.

    First-order route only (never calls the regularized solver); used to
    cross-check the closed form. The surrogate gradient is
    A dw - b with A = H + lambda*I and b = lambda*dd - g.
    """
    h = materialize(curv)
    a = h + lam * np.eye(h.shape[0])
    b = lam * dd - grad
    x = np.zeros_like(b)
    scale = max(1.0, float(np.linalg.norm(b)))
    for _ in range(max_iters):
        r = b - a @ x
        rr = float(r @ r)
        if np.sqrt(rr) <= tol * scale:
            break
        x = x + (rr / float(r @ (a @ r))) * r
    return x


def initialize_from_local(state: HierarchyState, w_local: np.ndarray) -> HierarchyState:
    """First-group rule: every level copies the local model."""
    return HierarchyState([np.array(w_local) for _ in state.levels], state.lambdas,
                          state.group_counter + 1)


def multi_level_consolidate(
    state: HierarchyState,
    w_local: np.ndarray,
    grad_fn,
    curv_fn,
    eta: float = 0.9,
    clip: float | None = 1.0,
) -> tuple[HierarchyState, list[float]]:
    """Update levels in order: level 0 chases w_local, level i chases the
    freshly updated level i-1. grad_fn/curv_fn evaluate the cumulative-loss
    estimates at each level's own current weights.

    Returns the new state and the applied update norm per level.
    """
    w_local = np.asarray(w_local, dtype=np.float64)
    if w_local.size != state.levels[0].size:
        raise ValueError("local model length does not match the hierarchy")
    target = w_local
    new_levels = []
    norms = []
    for w_prev, lam in zip(state.levels, state.lambdas):
        w_new = taylor_consolidate(w_prev, target, grad_fn(w_prev), curv_fn(w_prev),
                                   lam, eta=eta, clip=clip)
        norms.append(float(np.linalg.norm(w_new - w_prev)))
        new_levels.append(w_new)
        target = w_new
    return HierarchyState(new_levels, state.lambdas, state.group_counter + 1), norms


def catch_up(
    state: HierarchyState,
    w_target: np.ndarray,
    grad_fn,
    curv_fn,
    n_catch: int,
    eta: float = 0.9,
    clip: float | None = 1.0,
) -> tuple[HierarchyState, list[list[float]]]:
    """n_catch extra consolidation passes toward a fixed target, with the
    estimates recomputed at the moving weights each pass."""
    if n_catch < 0:
        raise ValueError("n_catch must be nonnegative")
    norms_per_iter = []
    for _ in range(n_catch):
        state, norms = multi_level_consolidate(state, w_target, grad_fn, curv_fn,
                                               eta=eta, clip=clip)
        norms_per_iter.append(norms)
    return state, norms_per_iter


def two_step_recursive_check(
    w0: np.ndarray,
    targets: tuple[np.ndarray, np.ndarray],
    first: tuple[np.ndarray, CurvatureEstimate],
    second: tuple[np.ndarray, CurvatureEstimate],
    lam: float,
) -> float:
    """Max-abs difference between two chained consolidation steps and the
    unrolled two-term closed form.

    Chained route: two taylor_consolidate calls (eta=1). Closed form:
    w0 + S0(lam*dd1 - g0) + S1(lam*dd2 - g1) with each S_j applied by a
    direct dense solve, dd2 measured from the once-updated point.
    """
    t1, t2 = (np.asarray(t, dtype=np.float64) for t in targets)
    g0, c0 = first
    g1, c1 = second
    w0 = np.asarray(w0, dtype=np.float64)

    w1 = taylor_consolidate(w0, t1, g0, c0, lam, eta=1.0)
    w2 = taylor_consolidate(w1, t2, g1, c1, lam, eta=1.0)

    def dense_step(curv, rhs):
        a = materialize(curv) + lam * np.eye(curv.dim)
        return np.linalg.solve(a, rhs)

    s0 = dense_step(c0, lam * (t1 - w0) - g0)
    s1 = dense_step(c1, lam * (t2 - (w0 + s0)) - g1)
    closed = w0 + s0 + s1
    return float(np.max(np.abs(w2 - closed)))


def save_hierarchy(path: str, state: HierarchyState):
    """Flat text snapshot: first line the group counter, then one line per
    level: level index, lambda, the p weight values."""
    with open(path, "w") as fh:
        fh.write(f"{state.group_counter}\n")
        for i, (w, lam) in enumerate(zip(state.levels, state.lambdas)):
            vals = " ".join(repr(float(v)) for v in w)
            fh.write(f"{i} {lam!r} {vals}\n")


def load_hierarchy(path: str) -> HierarchyState:
    with open(path) as fh:
        counter = int(fh.readline())
        levels, lambdas = [], []
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            lambdas.append(float(parts[1]))
            levels.append(np.array([float(v) for v in parts[2:]]))
    return HierarchyState(levels, tuple(lambdas), counter)
