"""Problem definition, marginal distributions and the evaluated data set.

Every input of a problem is an independent random variable described by a
:class:`Marginal`.  Marginals whose mean is a design variable move with the
optimizer; the rest keep their fixed distribution.  Lognormal marginals are
parameterized by the mean and standard deviation of the variable itself.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special
from scipy.spatial import cKDTree

FAMILIES = ("normal", "uniform", "lognormal", "degenerate")
STD_RULES = ("absolute", "proportional")
SCALARIZATIONS = ("mean", "variance", "std", "mean_plus_k_var", "mean_plus_k_std", "pf", "design")

_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class Marginal:
    """Independent marginal distribution of one input.

    Parameters
    ----------
    family : str
        One of ``normal``, ``uniform``, ``lognormal`` or ``degenerate``.
    mean, std : float
        Mean and standard deviation in problem units.
    mean_is_design : bool
        Whether the mean is a design variable.
    std_rule : str
        ``absolute`` keeps ``std`` fixed when the mean moves, ``proportional``
        keeps ``std / mean`` fixed (coefficient of variation).
    """

    family: str
    mean: float
    std: float = 0.0
    mean_is_design: bool = False
    std_rule: str = "absolute"
    coefficient: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.std_rule not in STD_RULES:
            raise ValueError(f"unknown std_rule {self.std_rule!r}")
        std = float(self.std)
        if self.std_rule == "proportional":
            coef = self.coefficient
            if coef is None:
                if self.mean == 0:
                    raise ValueError("proportional std needs a non-zero mean or an explicit coefficient")
                coef = std / abs(self.mean)
            object.__setattr__(self, "coefficient", float(coef))
            std = float(coef) * abs(float(self.mean))
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "std", std)
        if self.family == "degenerate":
            if std != 0.0:
                raise ValueError("degenerate marginal must have std == 0")
        elif not std > 0.0:
            raise ValueError(f"{self.family} marginal needs std > 0")
        if self.family == "lognormal" and not self.mean > 0:
            raise ValueError("lognormal marginal needs mean > 0")

    # constructors ---------------------------------------------------------
    @classmethod
    def normal(cls, mean, std, design=False):
        return cls("normal", mean, std, design)

    @classmethod
    def uniform(cls, mean, std, design=False):
        return cls("uniform", mean, std, design)

    @classmethod
    def uniform_between(cls, lower, upper, design=False):
        return cls("uniform", 0.5 * (lower + upper), (upper - lower) / (2 * _SQRT3), design)

    @classmethod
    def lognormal(cls, mean, std, design=False):
        return cls("lognormal", mean, std, design)

    @classmethod
    def proportional(cls, family, mean, coefficient, design=False):
        return cls(family, mean, coefficient * abs(mean), design, "proportional", coefficient)

    @classmethod
    def constant(cls, value):
        return cls("degenerate", value, 0.0)

    def with_mean(self, mean: float) -> "Marginal":
        """Copy with a new mean; proportional std follows the mean."""
        if self.std_rule == "proportional":
            return dataclasses.replace(self, mean=mean, std=self.coefficient * abs(mean))
        return dataclasses.replace(self, mean=mean)

    @property
    def lognormal_params(self):
        """Mean and std of ``log(X)``."""
        mu, sd = self.mean, self.std
        s2 = math.log1p((sd / mu) ** 2)
        return math.log(mu) - 0.5 * s2, math.sqrt(s2)

    @property
    def half_width(self):
        """Half width of the support of a uniform marginal."""
        return _SQRT3 * self.std

    # distribution functions --------------------------------------------------
    def icdf(self, u, clamp=False):
        u = np.asarray(u, dtype=float)
        if np.any((u < 0) | (u > 1)):
            raise ValueError("quantile outside [0, 1]")
        if self.family == "degenerate":
            return np.full_like(u, self.mean)[()]
        if self.family == "uniform":
            return (self.mean + self.half_width * (2.0 * u - 1.0))[()]
        if np.any((u == 0) | (u == 1)):
            if not clamp:
                raise ValueError(f"icdf of unbounded {self.family} marginal at u in {{0, 1}}")
            tiny = np.finfo(float).eps
            u = np.clip(u, tiny, 1.0 - tiny)
        return self.from_standard_normal(special.ndtri(u))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "degenerate":
            return (x >= self.mean).astype(float)[()]
        if self.family == "normal":
            return special.ndtr((x - self.mean) / self.std)[()]
        if self.family == "uniform":
            return np.clip((x - self.mean + self.half_width) / (2 * self.half_width), 0.0, 1.0)[()]
        mu_ln, sd_ln = self.lognormal_params
        with np.errstate(divide="ignore"):
            z = (np.log(np.where(x > 0, x, 0.0)) - mu_ln) / sd_ln
        return special.ndtr(z)[()]

    def sample(self, size, rng):
        return self.icdf(rng.uniform(size=size), clamp=True)

    def from_standard_normal(self, z):
        """Map standard normal values to this marginal (Rosenblatt, independent)."""
        z = np.asarray(z, dtype=float)
        if self.family == "normal":
            return (self.mean + self.std * z)[()]
        if self.family == "uniform":
            return (self.mean + self.half_width * (2.0 * special.ndtr(z) - 1.0))[()]
        if self.family == "lognormal":
            mu_ln, sd_ln = self.lognormal_params
            return np.exp(mu_ln + sd_ln * z)[()]
        return np.full_like(z, self.mean)[()]


def marginal_transform(marginal: Marginal, value=None, mode="icdf", rng=None, clamp=False):
    """Evaluate ``icdf``, ``cdf`` or draw samples from a marginal.

    For ``mode="sample"`` ``value`` is the sample size and ``rng`` is required.
    """
    if mode == "icdf":
        return marginal.icdf(value, clamp=clamp)
    if mode == "cdf":
        return marginal.cdf(value)
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling needs an rng")
        return marginal.sample(value, rng)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class RandomVector:
    """Ordered collection of independent marginals."""

    marginals: tuple

    def __post_init__(self):
        margs = tuple(self.marginals)
        if len(margs) < 1:
            raise ValueError("random vector needs at least one marginal")
        for m in margs:
            if not isinstance(m, Marginal):
                raise TypeError("marginals must be Marginal instances")
        object.__setattr__(self, "marginals", margs)

    def __len__(self):
        return len(self.marginals)

    @property
    def n(self):
        return len(self.marginals)

    @property
    def means(self):
        return np.array([m.mean for m in self.marginals])

    @property
    def stds(self):
        return np.array([m.std for m in self.marginals])

    @property
    def design_index(self):
        return np.array([i for i, m in enumerate(self.marginals) if m.mean_is_design], dtype=int)

    def with_means(self, means) -> "RandomVector":
        return RandomVector(tuple(m.with_mean(float(v)) for m, v in zip(self.marginals, means)))

    def from_standard_normal(self, z, means=None):
        """Map standard normal points to physical space.

        ``z`` has shape ``(..., n)``.  ``means`` optionally overrides the mean
        of every input and may carry leading batch axes broadcastable against
        ``z`` (one row of means per design).
        """
        z = np.asarray(z, dtype=float)
        if means is None:
            means = self.means
        means = np.asarray(means, dtype=float)
        out = np.empty(np.broadcast_shapes(z.shape, means.shape))
        for i, m in enumerate(self.marginals):
            mu = means[..., i]
            zi = z[..., i]
            if m.std_rule == "proportional":
                sd = m.coefficient * np.abs(mu)
            else:
                sd = m.std
            if m.family == "normal":
                out[..., i] = mu + sd * zi
            elif m.family == "uniform":
                out[..., i] = mu + _SQRT3 * sd * (2.0 * special.ndtr(zi) - 1.0)
            elif m.family == "lognormal":
                s2 = np.log1p((sd / mu) ** 2)
                out[..., i] = np.exp(np.log(mu) - 0.5 * s2 + np.sqrt(s2) * zi)
            else:
                out[..., i] = mu + 0.0 * zi
        return out

    def from_unit(self, u, means=None, clamp=True):
        """Map points of the unit hypercube through the marginal quantiles."""
        u = np.asarray(u, dtype=float)
        if clamp:
            tiny = np.finfo(float).eps
            u = np.clip(u, tiny, 1.0 - tiny)
        return self.from_standard_normal(special.ndtri(u), means)


@dataclass(frozen=True)
class Objective:
    """One optimization objective.

    ``kind`` selects the robustness scalarization of response ``response``:
    ``mean``, ``variance``, ``std``, ``mean_plus_k_var`` (E + k Var),
    ``mean_plus_k_std`` (E + k Std).  ``pf`` uses the (floored) failure
    probability and ``design`` a deterministic function of the design vector.
    """

    kind: str
    response: Optional[int] = None
    k: float = 0.0
    function: Optional[Callable] = field(default=None, compare=False)
    name: str = ""

    def __post_init__(self):
        if self.kind not in SCALARIZATIONS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind in ("pf", "design"):
            if self.kind == "design" and self.function is None:
                raise ValueError("design objective needs a function")
        elif self.response is None:
            raise ValueError(f"{self.kind} objective needs a response index")

    def scalarize(self, mean, var):
        if self.kind == "mean":
            return mean
        if self.kind == "variance":
            return var
        if self.kind == "std":
            return np.sqrt(var)
        if self.kind == "mean_plus_k_var":
            return mean + self.k * var
        if self.kind == "mean_plus_k_std":
            return mean + self.k * np.sqrt(var)
        raise ValueError(f"{self.kind} is not a moment objective")


@dataclass(frozen=True)
class ProblemSpec:
    """Multi-objective reliability-based robust design problem.

    ``design_constraints`` is an optional callable mapping design vectors of
    shape ``(p, n_design)`` to constraint values ``(p, n_c)`` with ``c >= 0``
    feasible; it is penalized in the optimizer the same way as the
    probabilistic constraint.
    """

    random_vector: RandomVector
    objectives: tuple
    limit_states: tuple
    target_pf: float
    design_lower: np.ndarray
    design_upper: np.ndarray
    n_responses: int
    pf_floor: float = 0.0
    pf_constraint: bool = True
    design_constraints: Optional[Callable] = field(default=None, compare=False)
    constraint_scale: float = 1.0
    name: str = "problem"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.design_lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.design_upper, dtype=float))
        object.__setattr__(self, "design_lower", lo)
        object.__setattr__(self, "design_upper", hi)
        object.__setattr__(self, "objectives", tuple(self.objectives))
        object.__setattr__(self, "limit_states", tuple(int(j) for j in self.limit_states))
        if lo.shape != hi.shape or lo.size != self.design_index.size:
            raise ValueError("design bounds must match the number of design variables")
        if not np.all(lo < hi):
            raise ValueError("design bounds need lower < upper elementwise")
        if not 0.0 < self.target_pf < 1.0:
            raise ValueError("target_pf must lie in (0, 1)")
        if self.pf_floor > self.target_pf:
            raise ValueError("pf_floor must not exceed target_pf")
        for obj in self.objectives:
            if obj.response is not None and not 0 <= obj.response < self.n_responses:
                raise ValueError(f"objective response {obj.response} out of range")
        for j in self.limit_states:
            if not 0 <= j < self.n_responses:
                raise ValueError(f"limit state response {j} out of range")

    @property
    def n_inputs(self):
        return self.random_vector.n

    @property
    def design_index(self):
        return self.random_vector.design_index

    @property
    def n_design(self):
        return int(self.design_index.size)

    @property
    def n_objectives(self):
        return len(self.objectives)

    @property
    def pf_as_objective(self):
        return any(o.kind == "pf" for o in self.objectives)

    @property
    def needs_reliability(self):
        return bool(self.limit_states) and (self.pf_constraint or self.pf_as_objective)

    @property
    def moment_responses(self):
        """Response indices needed for moment estimation."""
        return sorted({o.response for o in self.objectives if o.response is not None})

    def input_means(self, designs):
        """Embed design vectors ``(p, n_design)`` into full input mean vectors."""
        designs = np.atleast_2d(np.asarray(designs, dtype=float))
        means = np.tile(self.random_vector.means, (designs.shape[0], 1))
        means[:, self.design_index] = designs
        return means

    def constraint_penalty(self, designs):
        """Penalty of deterministic design constraints (0 where feasible)."""
        designs = np.atleast_2d(np.asarray(designs, dtype=float))
        if self.design_constraints is None:
            return np.zeros(designs.shape[0])
        c = np.atleast_2d(np.asarray(self.design_constraints(designs), dtype=float))
        if c.shape[0] != designs.shape[0]:
            c = c.T
        return 100.0 * np.sum(np.maximum(0.0, -c), axis=1) / self.constraint_scale


def sampling_bounds(problem: ProblemSpec, alpha: float = 0.999):
    """Box enclosing the input distributions over the whole design space.

    For design inputs the lower bound is the ``1 - alpha`` quantile with the
    mean at the lower design bound and the upper bound the ``alpha`` quantile
    with the mean at the upper design bound.  Fixed inputs use their own
    quantiles.  Degenerate design inputs fall back to the design bounds.
    """
    if not 0.5 < alpha < 1.0:
        raise ValueError("alpha must lie in (0.5, 1)")
    rv = problem.random_vector
    lower = np.empty(rv.n)
    upper = np.empty(rv.n)
    design_pos = {int(i): k for k, i in enumerate(problem.design_index)}
    for i, m in enumerate(rv.marginals):
        if i in design_pos:
            k = design_pos[i]
            lo_m = m.with_mean(problem.design_lower[k])
            hi_m = m.with_mean(problem.design_upper[k])
            if m.family == "degenerate":
                lower[i], upper[i] = problem.design_lower[k], problem.design_upper[k]
            else:
                lower[i] = lo_m.icdf(1.0 - alpha)
                upper[i] = hi_m.icdf(alpha)
        else:
            lower[i] = m.icdf(1.0 - alpha)
            upper[i] = m.icdf(alpha)
    return lower, upper


class Dataset:
    """Evaluated inputs ``X`` and responses ``Y`` with the refinement step of each row.

    Instances are immutable; :meth:`append` returns a new data set that
    shares the existing rows unchanged.
    """

    def __init__(self, X, Y, step=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y need the same number of rows")
        step = 0 if step is None else step
        step = np.asarray(step, dtype=int).ravel()
        if step.size == 1:
            step = np.full(X.shape[0], int(step[0]), dtype=int)
        if step.shape[0] != X.shape[0]:
            raise ValueError("step needs one entry per row")
        _check_unique(X, np.empty((0, X.shape[1])))
        self._X, self._Y, self._step = X, Y, step
        for arr in (self._X, self._Y, self._step):
            arr.setflags(write=False)

    X = property(lambda self: self._X)
    Y = property(lambda self: self._Y)
    step = property(lambda self: self._step)

    def __len__(self):
        return self._X.shape[0]

    @property
    def n_inputs(self):
        return self._X.shape[1]

    @property
    def n_responses(self):
        return self._Y.shape[1]

    def append(self, X_new, Y_new, step) -> "Dataset":
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        Y_new = np.asarray(Y_new, dtype=float)
        if Y_new.ndim == 1:
            Y_new = Y_new[:, None]
        if X_new.shape[1] != self.n_inputs or Y_new.shape[1] != self.n_responses:
            raise ValueError("appended rows have the wrong width")
        _check_unique(X_new, self._X)
        steps = np.full(X_new.shape[0], int(step), dtype=int)
        out = Dataset.__new__(Dataset)
        out._X = np.vstack([self._X, X_new])
        out._Y = np.vstack([self._Y, Y_new])
        out._step = np.concatenate([self._step, steps])
        for arr in (out._X, out._Y, out._step):
            arr.setflags(write=False)
        return out

    def to_csv(self, path):
        header = [f"x_{i + 1}" for i in range(self.n_inputs)]
        header += [f"y_{j + 1}" for j in range(self.n_responses)] + ["step"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for x, y, s in zip(self._X, self._Y, self._step):
                writer.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y] + [int(s)])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n_x = sum(h.startswith("x_") for h in header)
        n_y = sum(h.startswith("y_") for h in header)
        data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), n_x + n_y + 1)
        return cls(data[:, :n_x], data[:, n_x:n_x + n_y], data[:, -1].astype(int))

    def to_dict(self):
        return {"X": self._X.tolist(), "Y": self._Y.tolist(), "step": self._step.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Dataset":
        return cls(d["X"], d["Y"], d["step"])


def duplicate_mask(X_new, X_old, rtol=1e-12):
    """Rows of ``X_new`` that coincide (relative ``rtol``) with a row of ``X_old`` or an earlier new row."""
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    X_old = np.asarray(X_old, dtype=float).reshape(-1, X_new.shape[1])
    mask = np.zeros(X_new.shape[0], dtype=bool)
    if X_new.shape[0] == 0:
        return mask
    ref = np.vstack([X_old, X_new])
    scale = np.maximum(np.abs(ref).max(axis=0), 1.0)
    A = X_new / scale
    if X_old.shape[0]:
        d, _ = cKDTree(X_old / scale).query(A, p=np.inf)
        mask |= d <= rtol
    for i, j in cKDTree(A).query_pairs(rtol, p=np.inf):
        mask[max(i, j)] = True
    return mask


def _check_unique(X_new, X_old):
    dup = duplicate_mask(X_new, X_old)
    if dup.any():
        raise ValueError(f"duplicate input rows: {np.flatnonzero(dup).tolist()}")


def as_rows(values: Sequence[float]) -> np.ndarray:
    return np.atleast_2d(np.asarray(values, dtype=float))
