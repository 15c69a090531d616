"""CSV ingestion, model specification files and synthetic choice data.

Model specification format (one declaration per line, ``#`` starts a
comment)::

    alternatives: car, pt, walk
    choice: mode
    availability: car = car_av, walk = walk_av
    asc_pt * 1 @ pt
    b_time * time_car @ car
    b_time * time_pt @ pt

``alternatives`` is required; ``choice`` defaults to ``choice``;
``availability`` is optional. Every other non-blank line is a utility term
``parameter * column @ alternative`` where the column ``1`` denotes an
alternative-specific constant. See ``docs/formats.md``.
"""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .model import ChoiceModel, DataError, Dataset, ModelSpec, SpecError, Term

_KEYS = ("alternatives", "choice", "availability")
_TERM = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*\*\s*([^@\s]+)\s*@\s*(\S+)\s*$")
_KEYLINE = re.compile(r"^\s*([A-Za-z_][\w-]*)\s*:(.*)$")


class SpecParseError(SpecError):
    def __init__(self, message, line=None, path=None):
        where = f"{path or '<spec>'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


def parse_model_spec_text(text: str, path=None) -> ModelSpec:
    """Parse the contents of a model specification file."""
    keys = {}
    terms = []
    params = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _KEYLINE.match(line)
        if m and "@" not in line:
            key, rest = m.group(1).lower(), m.group(2).strip()
            if key not in _KEYS:
                raise SpecParseError(f"unknown key {key!r}", lineno, path)
            if key in keys:
                raise SpecParseError(f"key {key!r} given twice", lineno, path)
            keys[key] = (lineno, rest)
            continue
        m = _TERM.match(line)
        if not m:
            raise SpecParseError(f"cannot parse line {raw.strip()!r}; expected "
                                 "'parameter * column @ alternative'", lineno, path)
        name, column, alt = m.groups()
        column = None if column == "1" else column
        terms.append((lineno, Term(name, alt, column)))
        if column is None and name in params:
            raise SpecParseError(f"duplicate parameter {name!r}", lineno, path)
        if column is None:
            params[name] = lineno
    if "alternatives" not in keys:
        raise SpecParseError("missing 'alternatives:' declaration", None, path)
    lineno, rest = keys["alternatives"]
    alternatives = [a.strip() for a in rest.split(",") if a.strip()]
    known = set(alternatives)
    for lineno_t, term in terms:
        if term.alternative not in known:
            raise SpecParseError(f"unknown alternative {term.alternative!r}", lineno_t, path)
    seen = set()
    for lineno_t, term in terms:
        key = (term.parameter, term.alternative, term.column)
        if key in seen:
            raise SpecParseError(f"duplicate parameter term {term.parameter!r} for "
                                 f"alternative {term.alternative!r}", lineno_t, path)
        seen.add(key)
    choice = keys.get("choice", (None, "choice"))[1]
    availability = None
    if "availability" in keys:
        lineno, rest = keys["availability"]
        availability = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            if "=" not in item:
                raise SpecParseError(f"availability entry {item!r} is not 'alt = column'",
                                     lineno, path)
            alt, col = (s.strip() for s in item.split("=", 1))
            if alt not in known:
                raise SpecParseError(f"unknown alternative {alt!r}", lineno, path)
            availability[alt] = col
    try:
        return ModelSpec(tuple(alternatives), tuple(t for _, t in terms), choice, availability)
    except SpecError as exc:
        raise SpecParseError(str(exc), None, path) from None


def parse_model_spec(path) -> ModelSpec:
    path = Path(path)
    return parse_model_spec_text(path.read_text(encoding="utf-8"), path=path)


def format_model_spec(spec: ModelSpec) -> str:
    lines = ["alternatives: " + ", ".join(map(str, spec.alternatives)),
             f"choice: {spec.choice_column}"]
    if spec.availability:
        lines.append("availability: " + ", ".join(f"{a} = {c}"
                                                  for a, c in spec.availability.items()))
    for t in spec.terms:
        lines.append(f"{t.parameter} * {t.column or 1} @ {t.alternative}")
    return "\n".join(lines) + "\n"


def load_csv(path, spec: ModelSpec) -> Dataset:
    """Read a comma-delimited file with a header row into a :class:`Dataset`.

    Errors name the 1-based data row (header excluded) and the column.
    """
    path = Path(path)
    needed = list(spec.data_columns) + [spec.choice_column] + list((spec.availability or {}).values())
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in needed if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(map(repr, missing))}",
                            column=missing[0])
        pos = {name: header.index(name) for name in dict.fromkeys(needed)}
        values = {name: [] for name in pos}
        for rowno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {rowno} has {len(row)} fields, header has "
                                f"{len(header)}", row=rowno)
            for name, p in pos.items():
                cell = row[p].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {rowno}, column {name!r}: non-numeric "
                                    f"value {cell!r}", row=rowno, column=name) from None
                if not np.isfinite(v):
                    raise DataError(f"{path}: row {rowno}, column {name!r}: non-finite "
                                    f"value {cell!r}", row=rowno, column=name)
                values[name].append(v)
    if not values[spec.choice_column]:
        raise DataError(f"{path}: no data rows")
    choice = np.asarray(values[spec.choice_column])
    bad = np.flatnonzero((choice != np.round(choice)) | (choice < 0) | (choice >= spec.J))
    if bad.size:
        rowno = int(bad[0]) + 1
        raise DataError(f"{path}: row {rowno}, column {spec.choice_column!r}: choice "
                        f"{values[spec.choice_column][bad[0]]:g} is not an alternative index "
                        f"in [0, {spec.J})", row=rowno, column=spec.choice_column)
    try:
        return Dataset.from_columns(spec, values)
    except DataError as exc:
        if exc.row is not None:
            raise DataError(f"{path}: row {exc.row + 1}: {str(exc).split(': ', 1)[-1]}",
                            row=exc.row + 1, column=exc.column) from None
        raise


def write_csv(path, dataset: Dataset, spec: ModelSpec, header_lines=()):
    """Write ``dataset`` so that :func:`load_csv` reads it back losslessly."""
    names = list(dataset.columns) + [spec.choice_column]
    avail_cols = list((spec.availability or {}).items())
    names += [col for _, col in avail_cols]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        alt_idx = [spec.alternative_index(a) for a, _ in avail_cols]
        for n in range(dataset.N):
            row = [repr(float(v)) for v in dataset.data[n]]
            row.append(str(int(dataset.choices[n])))
            row += [str(int(dataset.available[n, j])) for j in alt_idx]
            writer.writerow(row)


@dataclass
class SyntheticSpec:
    """Recipe for a synthetic MNL dataset with known parameters.

    ``covariates`` maps a column name to ``(mean, scale)``; unlisted columns
    are standard normal. ``availability`` is the probability that each
    non-reference alternative is available (1 means always).
    """

    model: ModelSpec
    theta: Mapping[str, float]
    n: int
    seed: int = 0
    covariates: Mapping[str, tuple] = field(default_factory=dict)
    availability: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        missing = set(self.model.parameter_names) - set(self.theta)
        if missing:
            raise ValueError(f"theta lacks parameters: {sorted(missing)}")
        if not all(np.isfinite(float(v)) for v in self.theta.values()):
            raise ValueError("theta must be finite")
        if not 0.0 < self.availability <= 1.0:
            raise ValueError("availability must be in (0, 1]")

    @property
    def theta_vector(self) -> np.ndarray:
        return np.array([float(self.theta[p]) for p in self.model.parameter_names])

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "alternatives": list(self.model.alternatives),
            "choice": self.model.choice_column,
            "availability_columns": self.model.availability,
            "terms": [{"parameter": t.parameter, "alternative": t.alternative,
                       "column": t.column} for t in self.model.terms],
            "theta": {k: float(v) for k, v in self.theta.items()},
            "covariates": {k: list(v) for k, v in self.covariates.items()},
            "availability": self.availability,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        allowed = {"n", "seed", "alternatives", "choice", "availability_columns", "terms",
                   "theta", "covariates", "availability", "layout"}
        unknown = set(d) - allowed
        if unknown:
            raise SpecError(f"unknown synthetic-spec keys: {sorted(unknown)}")
        if "layout" in d:
            lay = dict(d["layout"])
            lay["n"] = int(d.get("n", lay.get("n", 1000)))
            lay["seed"] = int(d.get("seed", lay.get("seed", 0)))
            try:
                return make_problem(**lay)
            except TypeError as exc:
                raise SpecError(f"bad synthetic layout: {exc}") from None
        terms = tuple(Term(t["parameter"], t["alternative"], t.get("column"))
                      for t in d["terms"])
        model = ModelSpec(tuple(d["alternatives"]), terms, d.get("choice", "choice"),
                          d.get("availability_columns"))
        cov = {k: tuple(v) for k, v in d.get("covariates", {}).items()}
        return cls(model, d["theta"], int(d["n"]), int(d.get("seed", 0)), cov,
                   float(d.get("availability", 1.0)))


def load_synthetic_spec(path) -> SyntheticSpec:
    return SyntheticSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def generate_synthetic(spec: SyntheticSpec) -> tuple:
    """Draw covariates and choices from the exact MNL probabilities at theta*.

    Returns ``(dataset, theta_star)``; a pure function of ``spec``.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    model = spec.model
    n, J = spec.n, model.J
    columns = {}
    for name in model.data_columns:
        mean, scale = spec.covariates.get(name, (0.0, 1.0))
        columns[name] = mean + scale * rng.standard_normal(n)
    available = np.ones((n, J), dtype=bool)
    if model.availability:
        for alt, col in model.availability.items():
            j = model.alternative_index(alt)
            if j != 0:
                available[:, j] = rng.random(n) < spec.availability
            columns[col] = available[:, j].astype(float)
    # placeholder choices: alternative 0 is always available
    columns[model.choice_column] = np.zeros(n)
    draft = Dataset.from_columns(model, columns)
    theta = spec.theta_vector
    P = ChoiceModel(model, draft).probabilities(theta)
    u = rng.random(n)
    cdf = np.cumsum(P, axis=1)
    choice = (u[:, None] > cdf).sum(axis=1)
    # guard against round-off pushing past the last available alternative
    choice = np.minimum(choice, J - 1)
    for n_bad in np.flatnonzero(~available[np.arange(n), choice]):
        choice[n_bad] = int(np.flatnonzero(available[n_bad])[-1])
    columns[model.choice_column] = choice.astype(float)
    return Dataset.from_columns(model, columns), theta


def make_problem(n_alternatives=4, n_parameters=12, n=20000, seed=0, n_generic=None,
                 scales=None, theta_scale=0.5, availability=False,
                 theta_seed=None, scale_spread=0.0) -> SyntheticSpec:
    """Standard synthetic layout with J-1 constants, generic and specific terms.

    Generic coefficients multiply one column per alternative
    (``g{m}_{alt}``); the remaining coefficients are alternative-specific and
    cycle over alternatives. ``scales`` optionally maps column names to a
    scale factor, which is how ill-conditioned variants are built.
    ``scale_spread > 0`` gives every covariate column a scale of
    ``10**u`` with ``u ~ U(-scale_spread, scale_spread)``, mimicking data
    measured in mixed units.
    """
    J = n_alternatives
    if n_parameters < J:
        raise ValueError("n_parameters must be >= n_alternatives")
    alts = tuple(f"a{j}" for j in range(J))
    terms = [Term(f"asc_{alts[j]}", alts[j]) for j in range(1, J)]
    remaining = n_parameters - (J - 1)
    if n_generic is None:
        n_generic = min(3, remaining // 2)
    for m in range(n_generic):
        for j in range(J):
            terms.append(Term(f"b_g{m}", alts[j], f"g{m}_{alts[j]}"))
    for s in range(remaining - n_generic):
        j = s % J
        terms.append(Term(f"b_s{s}", alts[j], f"s{s}"))
    model = ModelSpec(alts, tuple(terms), "choice",
                      {a: f"av_{a}" for a in alts} if availability else None)
    trng = np.random.Generator(np.random.PCG64(seed if theta_seed is None else theta_seed))
    names = model.parameter_names
    theta = {p: float(theta_scale * v) for p, v in zip(names, trng.standard_normal(len(names)))}
    covariates = {}
    scales = dict(scales or {})
    if scale_spread > 0:
        for col in model.data_columns:
            scales.setdefault(col, 10.0 ** trng.uniform(-scale_spread, scale_spread))
    for col, factor in scales.items():
        covariates[col] = (0.0, float(factor))
        # keep utilities of the same order after rescaling the covariate
        for t in terms:
            if t.column == col:
                theta[t.parameter] = theta[t.parameter] / float(factor)
    return SyntheticSpec(model, theta, n, seed, covariates, 0.8 if availability else 1.0)
