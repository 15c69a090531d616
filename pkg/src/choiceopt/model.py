"""Multinomial logit model: specification, data binding and evaluation.

Utilities are linear in the parameters. Each utility term multiplies one
parameter by one data column (or by the constant 1 for an
alternative-specific constant) and adds the product to one alternative's
utility. A parameter may appear in several terms, which is how generic
(shared) coefficients are expressed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Optional, Sequence

import numpy as np

from . import kernels

ORDERS = ("value", "gradient", "hessian")


class ChoiceModelError(ValueError):
    """Base class for model specification and data errors."""


class SpecError(ChoiceModelError):
    pass


class DataError(ChoiceModelError):
    """Invalid dataset contents. ``row`` is 0-based when known."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class EvaluationError(ArithmeticError):
    """Non-finite utility or zero probability for the chosen alternative."""

    def __init__(self, message, row):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class Term:
    """``parameter * column`` added to the utility of ``alternative``.

    ``column=None`` denotes the constant 1 (alternative-specific constant).
    """

    parameter: str
    alternative: Hashable
    column: Optional[str] = None

    @property
    def is_constant(self) -> bool:
        return self.column is None


@dataclass(frozen=True)
class ModelSpec:
    alternatives: tuple
    terms: tuple
    choice_column: str = "choice"
    availability: Optional[Mapping] = None

    def __post_init__(self):
        object.__setattr__(self, "alternatives", tuple(self.alternatives))
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.availability is not None:
            object.__setattr__(self, "availability", dict(self.availability))
        self.validate()

    @property
    def J(self) -> int:
        return len(self.alternatives)

    @property
    def K(self) -> int:
        return len(self.parameter_names)

    @property
    def parameter_names(self) -> tuple:
        names = []
        for term in self.terms:
            if term.parameter not in names:
                names.append(term.parameter)
        return tuple(names)

    @property
    def data_columns(self) -> tuple:
        """Covariate columns referenced by utility terms, in first-use order."""
        cols = []
        for term in self.terms:
            if term.column is not None and term.column not in cols:
                cols.append(term.column)
        return tuple(cols)

    def alternative_index(self, alternative) -> int:
        try:
            return self.alternatives.index(alternative)
        except ValueError:
            raise SpecError(f"unknown alternative {alternative!r}") from None

    def validate(self):
        if len(self.alternatives) < 2:
            raise SpecError("a choice model needs at least two alternatives")
        if len(set(self.alternatives)) != len(self.alternatives):
            raise SpecError("duplicate alternative identifiers")
        if not self.terms:
            raise SpecError("model has no utility terms")
        constant_owner = {}
        constants_per_alt = {}
        seen = set()
        for term in self.terms:
            self.alternative_index(term.alternative)
            key = (term.parameter, term.alternative, term.column)
            if key in seen:
                raise SpecError(f"duplicate term {term.parameter} * "
                                f"{term.column or 1} @ {term.alternative}")
            seen.add(key)
            if term.is_constant:
                if term.parameter in constant_owner:
                    raise SpecError(f"constant {term.parameter!r} is attached to "
                                    "more than one alternative")
                constant_owner[term.parameter] = term.alternative
                constants_per_alt[term.alternative] = constants_per_alt.get(term.alternative, 0) + 1
        for term in self.terms:
            if not term.is_constant and term.parameter in constant_owner:
                raise SpecError(f"parameter {term.parameter!r} is used both as a "
                                "constant and as a coefficient")
        for alt, count in constants_per_alt.items():
            if count > 1:
                raise SpecError(f"alternative {alt!r} has {count} constants")
        if len(constants_per_alt) == len(self.alternatives):
            raise SpecError("one alternative-specific constant must be omitted "
                            "for identification")
        if self.availability is not None:
            for alt in self.availability:
                self.alternative_index(alt)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations bound to a model layout.

    ``data`` holds the referenced covariate columns (N x C), ``choices`` the
    0-based index of the chosen alternative and ``available`` the N x J
    availability mask.
    """

    data: np.ndarray
    columns: tuple
    choices: np.ndarray
    available: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        choices = np.ascontiguousarray(self.choices, dtype=np.int64)
        available = np.ascontiguousarray(self.available, dtype=bool)
        if data.ndim != 2 or data.shape[1] != len(self.columns):
            raise DataError("data matrix does not match column names")
        n = data.shape[0]
        if n < 1:
            raise DataError("dataset is empty")
        if choices.shape != (n,) or available.ndim != 2 or available.shape[0] != n:
            raise DataError("choices/availability do not match the number of rows")
        bad = np.flatnonzero(~np.isfinite(data).all(axis=1))
        if bad.size:
            row = int(bad[0])
            col = self.columns[int(np.flatnonzero(~np.isfinite(data[row]))[0])]
            raise DataError(f"row {row}: missing or non-finite value in column {col!r}",
                            row=row, column=col)
        J = available.shape[1]
        out = np.flatnonzero((choices < 0) | (choices >= J))
        if out.size:
            row = int(out[0])
            raise DataError(f"row {row}: choice {int(choices[row])} is not an "
                            f"alternative index in [0, {J})", row=row)
        unavailable = np.flatnonzero(~available[np.arange(n), choices])
        if unavailable.size:
            row = int(unavailable[0])
            raise DataError(f"row {row}: chosen alternative {int(choices[row])} "
                            "is not available", row=row)
        for name, arr in (("data", data), ("choices", choices), ("available", available)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_columns(cls, spec: ModelSpec, columns: Mapping[str, Sequence]) -> "Dataset":
        """Pick the columns ``spec`` needs from a name -> values mapping."""
        def get(name):
            if name not in columns:
                raise DataError(f"missing column {name!r}", column=name)
            return np.asarray(columns[name], dtype=np.float64)

        names = spec.data_columns
        choice = get(spec.choice_column)
        n = choice.shape[0]
        data = np.empty((n, len(names)))
        for c, name in enumerate(names):
            data[:, c] = get(name)
        if not np.all(np.isfinite(choice)) or np.any(choice != np.round(choice)):
            row = int(np.flatnonzero(~np.isfinite(choice) | (choice != np.round(choice)))[0])
            raise DataError(f"row {row}: choice must be an integer index", row=row,
                            column=spec.choice_column)
        available = np.ones((n, spec.J), dtype=bool)
        for alt, name in (spec.availability or {}).items():
            col = get(name)
            bad = np.flatnonzero((col != 0) & (col != 1))
            if bad.size:
                raise DataError(f"row {int(bad[0])}: availability column {name!r} must "
                                "be 0 or 1", row=int(bad[0]), column=name)
            available[:, spec.alternative_index(alt)] = col == 1
        return cls(data, names, choice.astype(np.int64), available)

    def column(self, name) -> np.ndarray:
        return self.data[:, self.columns.index(name)]


@dataclass(frozen=True, eq=False)
class Batch:
    """A set of distinct row indices (drawn without replacement)."""

    indices: np.ndarray
    n_total: int

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size < 1:
            raise ValueError("a batch needs at least one index")
        if idx.size > self.n_total:
            raise ValueError("batch larger than the dataset")
        if idx.min() < 0 or idx.max() >= self.n_total:
            raise ValueError("batch index out of range")
        if np.unique(idx).size != idx.size:
            raise ValueError("batch indices must be distinct")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def full(cls, n) -> "Batch":
        return cls(np.arange(n, dtype=np.int64), n)

    @property
    def size(self) -> int:
        return self.indices.size

    @property
    def fraction(self) -> float:
        return self.size / self.n_total

    @property
    def is_full(self) -> bool:
        return self.size == self.n_total


@dataclass(frozen=True, eq=False)
class Evaluation:
    """Log likelihood summed over a batch, with derivatives."""

    value: float
    gradient: Optional[np.ndarray]
    hessian: Optional[np.ndarray]
    batch_fraction: float
    batch_size: int = field(default=0)

    @property
    def order(self) -> str:
        if self.hessian is not None:
            return "hessian"
        if self.gradient is not None:
            return "gradient"
        return "value"

    def satisfies(self, order: str) -> bool:
        return ORDERS.index(self.order) >= ORDERS.index(order)


class ChoiceModel:
    """A :class:`ModelSpec` bound to a :class:`Dataset`.

    Parameters
    ----------
    spec : ModelSpec
    dataset : Dataset
        Must carry every covariate column referenced by ``spec``.
    backend : str, optional
        ``"compiled"`` or ``"python"``; defaults to the backend selected at
        import (see :mod:`choiceopt.kernels`).
    """

    def __init__(self, spec: ModelSpec, dataset: Dataset, backend: Optional[str] = None):
        if dataset.available.shape[1] != spec.J:
            raise DataError("dataset availability mask does not match the model's "
                            "alternatives")
        self.spec = spec
        self.dataset = dataset
        self._kernel = kernels.get_backend(backend)
        self.backend = self._kernel.NAME
        names = spec.parameter_names
        self.term_param = np.array([names.index(t.parameter) for t in spec.terms], dtype=np.int64)
        self.term_alt = np.array([spec.alternative_index(t.alternative) for t in spec.terms],
                                 dtype=np.int64)
        cols = []
        for t in spec.terms:
            if t.column is None:
                cols.append(-1)
            elif t.column in dataset.columns:
                cols.append(dataset.columns.index(t.column))
            else:
                raise DataError(f"dataset lacks column {t.column!r}", column=t.column)
        self.term_col = np.array(cols, dtype=np.int64)
        self._avail = dataset.available.view(np.uint8)
        self._full = Batch.full(dataset.N)

    @property
    def K(self) -> int:
        return self.spec.K

    @property
    def J(self) -> int:
        return self.spec.J

    @property
    def N(self) -> int:
        return self.dataset.N

    @property
    def parameter_names(self) -> tuple:
        return self.spec.parameter_names

    @property
    def full_batch(self) -> Batch:
        return self._full

    def with_backend(self, backend: str) -> "ChoiceModel":
        return ChoiceModel(self.spec, self.dataset, backend=backend)

    def _check_theta(self, theta):
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != (self.K,):
            raise ValueError(f"theta must have shape ({self.K},), got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        return theta

    def utilities(self, theta, rows=None) -> np.ndarray:
        """Systematic utilities (N' x J); unavailable entries are -inf."""
        theta = self._check_theta(theta)
        rows = np.arange(self.N) if rows is None else np.asarray(rows, dtype=np.int64)
        data = self.dataset.data[rows]
        z = np.ones((rows.size, self.term_col.size))
        mask = self.term_col >= 0
        z[:, mask] = data[:, self.term_col[mask]]
        V = np.zeros((rows.size, self.J))
        np.add.at(V.T, self.term_alt, (z * theta[self.term_param]).T)
        V[~self.dataset.available[rows]] = -np.inf
        return V

    def probabilities(self, theta, rows=None) -> np.ndarray:
        """Choice probabilities for ``rows`` (all rows by default)."""
        V = self.utilities(theta, rows)
        finite = np.isfinite(V) | np.isneginf(V)
        if not finite.all():
            row = int(np.flatnonzero(~finite.all(axis=1))[0])
            raise EvaluationError("non-finite utility", row=row if rows is None
                                  else int(np.asarray(rows)[row]))
        vmax = V.max(axis=1, keepdims=True)
        if not np.all(np.isfinite(vmax)):
            row = int(np.flatnonzero(~np.isfinite(vmax[:, 0]))[0])
            raise EvaluationError("non-finite utility", row=row if rows is None
                                  else int(np.asarray(rows)[row]))
        E = np.exp(V - vmax)
        return E / E.sum(axis=1, keepdims=True)

    def choice_probabilities(self, theta, row: int) -> np.ndarray:
        """Probabilities of the J alternatives for a single observation."""
        return self.probabilities(theta, [row])[0]

    def evaluate(self, theta, batch: Optional[Batch] = None, order: str = "value") -> Evaluation:
        """Log likelihood over ``batch`` (full data by default).

        ``order`` is one of ``"value"``, ``"gradient"``, ``"hessian"``; a
        higher order also returns the lower ones. Derivatives are the exact
        analytic sums of per-observation derivatives.
        """
        if order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")
        theta = self._check_theta(theta)
        batch = self._full if batch is None else batch
        if batch.n_total != self.N:
            raise ValueError("batch was drawn for a dataset of a different size")
        level = ORDERS.index(order)
        value, grad, hess, bad = self._kernel.evaluate(
            theta, self.dataset.data, self.dataset.choices, self._avail,
            self.term_param, self.term_alt, self.term_col, batch.indices, level)
        if bad >= 0:
            raise EvaluationError(f"row {bad}: non-finite utility or zero probability "
                                  "for the chosen alternative", row=bad)
        return Evaluation(value, grad, hess, batch.fraction, batch.size)
