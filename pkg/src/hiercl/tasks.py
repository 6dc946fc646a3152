"""Synthetic task streams, group partitioning and permutation enumeration.

Tasks share one global output head (all class labels live in a single
space of size C_total and task identity is hidden at evaluation time).
Every generator is a pure function of its seed. Each task carries three
disjoint splits drawn from the same distribution: train, val (used for
permutation selection) and test (used for reporting).
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import Batch

# k! trainings per group; enumeration is refused beyond this size
MAX_GROUP_SIZE = 6
WARN_GROUP_SIZE = 4


@dataclass
class TaskDataset:
    task_id: int
    train: Batch
    val: Batch
    test: Batch
    class_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class TaskGroup:
    group_index: int
    task_ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "task_ids", tuple(int(t) for t in self.task_ids))

    @property
    def size(self) -> int:
        return len(self.task_ids)


@dataclass(frozen=True)
class Permutation:
    """An ordering of task indices; each index appears exactly once."""

    order: tuple[int, ...]

    def __post_init__(self):
        order = tuple(int(t) for t in self.order)
        object.__setattr__(self, "order", order)
        if len(set(order)) != len(order):
            raise ValueError(f"permutation repeats an index: {order}")

    def __iter__(self):
        return iter(self.order)

    def __len__(self):
        return len(self.order)

    def label(self) -> str:
        return "-".join(str(t) for t in self.order)


def _three_splits(rng, make_split, n_train, n_val, n_test):
    train = make_split(rng, n_train)
    val = make_split(rng, n_val)
    test = make_split(rng, n_test)
    return train, val, test


def _gaussian_split(means, class_ids, dim, rng, per_class):
    xs, ys = [], []
    for c in class_ids:
        xs.append(rng.normal(size=(per_class, dim)) + means[c])
        ys.append(np.full(per_class, c, dtype=np.intp))
    return Batch(np.concatenate(xs), np.concatenate(ys))


def gen_split_gaussians(
    num_classes: int,
    classes_per_task: int,
    dim: int,
    samples_per_class: int,
    spread: float,
    seed: int,
    val_per_class: int | None = None,
    test_per_class: int | None = None,
) -> list[TaskDataset]:
    """Split protocol on Gaussian clusters: one unit-covariance cluster per
    class, class means at radius `spread`, consecutive classes grouped into
    tasks. The final task absorbs any remainder classes."""
    if num_classes < 1 or classes_per_task < 1 or dim < 1 or samples_per_class < 1:
        raise ValueError("class/task/dim/sample counts must be positive")
    if spread < 0:
        raise ValueError("spread must be nonnegative")
    val_per_class = val_per_class or max(4, samples_per_class // 4)
    test_per_class = test_per_class or samples_per_class

    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(num_classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = spread * dirs

    num_tasks = num_classes // classes_per_task
    tasks = []
    for t in range(num_tasks):
        lo = t * classes_per_task
        hi = lo + classes_per_task if t < num_tasks - 1 else num_classes
        class_ids = tuple(range(lo, hi))
        make = lambda r, n: _gaussian_split(means, class_ids, dim, r, n)
        train, val, test = _three_splits(
            rng, make, samples_per_class, val_per_class, test_per_class
        )
        tasks.append(TaskDataset(t, train, val, test, class_ids))
    return tasks


def gen_permuted_features(
    num_tasks: int,
    num_classes: int,
    dim: int,
    samples_per_class: int,
    spread: float,
    seed: int,
    val_per_class: int | None = None,
    test_per_class: int | None = None,
) -> list[TaskDataset]:
    """Each task is the same Gaussian classification problem with a fixed
    random coordinate permutation applied; task 0 keeps the identity."""
    if num_tasks < 1:
        raise ValueError("need at least one task")
    base = gen_split_gaussians(
        num_classes, num_classes, dim, samples_per_class, spread, seed,
        val_per_class, test_per_class,
    )[0]
    rng = np.random.default_rng(seed)
    all_classes = tuple(range(num_classes))
    tasks = []
    for t in range(num_tasks):
        perm = np.arange(dim) if t == 0 else rng.permutation(dim)
        pick = lambda b: Batch(b.inputs[:, perm], b.targets.copy())
        tasks.append(TaskDataset(t, pick(base.train), pick(base.val), pick(base.test), all_classes))
    return tasks


def gen_sine_tasks(
    num_tasks: int,
    seed: int,
    samples_per_task: int = 100,
    noise_std: float = 0.0,
    amplitude_range: tuple[float, float] = (0.5, 2.0),
) -> list[TaskDataset]:
    """Regression stream: task i fits y = A_i sin(x + phi_i) on x in [-pi, pi].

    With the default noise_std of 0 the targets are bounded by the drawn
    amplitude exactly.
    """
    if num_tasks < 1 or samples_per_task < 1:
        raise ValueError("need positive task and sample counts")
    rng = np.random.default_rng(seed)
    tasks = []
    for t in range(num_tasks):
        amp = rng.uniform(*amplitude_range)
        phase = rng.uniform(0.0, 2.0 * math.pi)

        def make(r, n, amp=amp, phase=phase):
            x = r.uniform(-math.pi, math.pi, size=(n, 1))
            y = amp * np.sin(x + phase)
            if noise_std > 0:
                y = y + r.normal(scale=noise_std, size=y.shape)
            return Batch(x, y)

        train, val, test = _three_splits(
            rng, make, samples_per_task, max(8, samples_per_task // 4), samples_per_task
        )
        tasks.append(TaskDataset(t, train, val, test))
    return tasks


def partition_into_groups(num_tasks: int, k: int) -> list[TaskGroup]:
    """Split arrival positions 0..num_tasks-1 into floor(num_tasks/k)
    consecutive groups; the last group absorbs the remainder."""
    if k < 1:
        raise ValueError("group size must be at least 1")
    if num_tasks < 1:
        raise ValueError("need at least one task")
    k = min(k, num_tasks)
    m = num_tasks // k
    groups = []
    for j in range(m):
        lo = j * k
        hi = lo + k if j < m - 1 else num_tasks
        groups.append(TaskGroup(j, tuple(range(lo, hi))))
    return groups


def enumerate_intra_group_perms(group: TaskGroup) -> list[Permutation]:
    """All (size)! orderings of the group's task ids, lexicographically.

    Enumeration sorts the ids first, so the result depends only on the
    group's membership, never on arrival order within it.
    """
    if group.size > MAX_GROUP_SIZE:
        raise ValueError(
            f"group of size {group.size} would need {math.factorial(group.size)} "
            f"trainings; the cap is {MAX_GROUP_SIZE}"
        )
    if group.size > WARN_GROUP_SIZE:
        warnings.warn(
            f"group size {group.size} costs {math.factorial(group.size)} trainings",
            stacklevel=2,
        )
    return [Permutation(p) for p in itertools.permutations(sorted(group.task_ids))]


def sample_full_permutations(
    num_tasks: int,
    how_many: int,
    seed: int,
    exhaustive_if_possible: bool = True,
) -> list[Permutation]:
    """Full-sequence orderings: exhaustive when the budget covers all
    num_tasks! of them, otherwise distinct uniform samples."""
    if num_tasks < 1 or how_many < 1:
        raise ValueError("need positive task and permutation counts")
    total = math.factorial(num_tasks)
    if exhaustive_if_possible and total <= how_many:
        return [Permutation(p) for p in itertools.permutations(range(num_tasks))]
    rng = np.random.default_rng(seed)
    seen = set()
    out = []
    while len(out) < how_many:
        cand = tuple(int(i) for i in rng.permutation(num_tasks))
        if cand not in seen:
            seen.add(cand)
            out.append(Permutation(cand))
    return out


def dump_tasks(tasks: list[TaskDataset], path: str):
    """Columnar text dump: one sample per line (features..., label), with
    `# task <id> <split>` section markers. For reproducibility audits."""
    with open(path, "w") as fh:
        for task in tasks:
            for split_name in ("train", "val", "test"):
                batch = getattr(task, split_name)
                cls = ",".join(str(c) for c in task.class_ids)
                t = batch.targets
                t2 = t[:, None] if t.ndim == 1 else t
                fh.write(
                    f"# task {task.task_id} {split_name} classes={cls} ydim={t2.shape[1]}\n"
                )
                for x, y in zip(batch.inputs, t2):
                    feats = " ".join(repr(float(v)) for v in x)
                    labs = " ".join(
                        str(int(v)) if np.issubdtype(t.dtype, np.integer) else repr(float(v))
                        for v in y
                    )
                    fh.write(f"{feats} {labs}\n")


def load_tasks(path: str, task_kind: str = "classification") -> list[TaskDataset]:
    """Inverse of dump_tasks."""
    sections: dict[int, dict[str, tuple[list, list]]] = {}
    classes: dict[int, tuple[int, ...]] = {}
    current = None
    ydim = 1
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                fields = dict(
                    kv.split("=", 1) for kv in line[1:].split()[3:] if "=" in kv
                )
                parts = line[1:].split()
                tid, split = int(parts[1]), parts[2]
                cls = fields.get("classes", "")
                ydim = int(fields.get("ydim", 1))
                classes[tid] = tuple(int(c) for c in cls.split(",") if c)
                current = sections.setdefault(tid, {}).setdefault(split, ([], []))
                continue
            vals = [float(v) for v in line.split()]
            current[0].append(vals[: len(vals) - ydim])
            if task_kind == "classification":
                current[1].append(int(vals[-1]))
            else:
                current[1].append(vals[len(vals) - ydim :])
    tasks = []
    for tid in sorted(sections):
        splits = {}
        for name in ("train", "val", "test"):
            xs, ys = sections[tid][name]
            targets = np.asarray(ys, dtype=np.intp if task_kind == "classification" else np.float64)
            splits[name] = Batch(np.asarray(xs), targets)
        tasks.append(TaskDataset(tid, splits["train"], splits["val"], splits["test"], classes[tid]))
    return tasks
