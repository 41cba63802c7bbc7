"""Typed tables, fusion schemas and the stacked missing-by-design frame."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from . import recode
from .errors import DataError, SchemaError


class VariableRole(enum.Enum):
    COMMON = "common"
    SPECIFIC_RECIPIENT = "specific_recipient"
    SPECIFIC_DONOR = "specific_donor"


@dataclass(frozen=True)
class ScaleLevel:
    """Either ``metric`` or ``categorical`` with a declared level set."""

    kind: str
    levels: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("metric", "categorical"):
            raise SchemaError(f"unknown scale {self.kind!r}")
        if self.kind == "categorical" and len(self.levels) < 2:
            raise SchemaError("a categorical scale needs at least two levels")

    @classmethod
    def metric(cls) -> "ScaleLevel":
        return cls("metric")

    @classmethod
    def categorical(cls, levels: Iterable[int]) -> "ScaleLevel":
        return cls("categorical", tuple(int(v) for v in levels))

    @property
    def is_metric(self) -> bool:
        return self.kind == "metric"

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"


@dataclass(frozen=True)
class Variable:
    name: str
    role: VariableRole
    scale: ScaleLevel
    recode: recode.RecodeRule | None = None


@dataclass(frozen=True)
class FusionSchema:
    variables: tuple[Variable, ...]
    missing_token: str = ""

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate variable names in schema")
        if not self.common:
            raise SchemaError("schema needs at least one common variable")
        if not self.specific_donor:
            raise SchemaError("schema needs at least one donor-specific variable")

    def __getitem__(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise SchemaError(f"variable {name!r} not in schema")

    def __contains__(self, name: str) -> bool:
        return any(v.name == name for v in self.variables)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def by_role(self, role: VariableRole) -> list[str]:
        return [v.name for v in self.variables if v.role is role]

    @property
    def common(self) -> list[str]:
        return self.by_role(VariableRole.COMMON)

    @property
    def specific_recipient(self) -> list[str]:
        return self.by_role(VariableRole.SPECIFIC_RECIPIENT)

    @property
    def specific_donor(self) -> list[str]:
        return self.by_role(VariableRole.SPECIFIC_DONOR)

    def replace(self, name: str, **changes) -> "FusionSchema":
        out = []
        for v in self.variables:
            if v.name == name:
                v = Variable(changes.get("name", v.name), changes.get("role", v.role),
                             changes.get("scale", v.scale), changes.get("recode", v.recode))
            out.append(v)
        return FusionSchema(tuple(out), self.missing_token)

    def validate(self, table: "DataTable", names: Sequence[str] | None = None,
                 allow_missing: bool = False) -> None:
        """Check category codes and finiteness of the listed (default: present) columns."""
        names = [n for n in self.names if n in table] if names is None else list(names)
        for name in names:
            if name not in table:
                raise DataError(f"column {name!r} missing from table")
            var = self[name]
            col = table.column(name)
            miss = np.isnan(col)
            if miss.any() and not allow_missing:
                raise DataError(f"column {name!r} has missing cells outside the by-design pattern")
            obs = col[~miss]
            if var.scale.is_categorical:
                bad = ~np.isin(obs, np.asarray(var.scale.levels, dtype=float))
                if bad.any():
                    raise DataError(f"column {name!r}: undeclared category code {obs[bad][0]:g}")
            elif not np.all(np.isfinite(obs)):
                raise DataError(f"column {name!r}: non-finite metric value")

    def to_dict(self) -> dict:
        out = []
        for v in self.variables:
            d = {"name": v.name, "role": v.role.value, "scale": v.scale.kind}
            if v.scale.is_categorical:
                d["levels"] = list(v.scale.levels)
            if v.recode is not None:
                d["recode"] = recode.rule_to_dict(v.recode)
            out.append(d)
        return {"missing_token": self.missing_token, "variables": out}


def schema_from_dict(spec: Mapping) -> FusionSchema:
    variables = []
    for item in spec.get("variables", []):
        try:
            role = VariableRole(item["role"])
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"bad role for variable {item.get('name')!r}") from exc
        if item.get("scale") == "categorical":
            scale = ScaleLevel.categorical(item.get("levels", ()))
        else:
            scale = ScaleLevel(item.get("scale", "metric"))
        rule = recode.rule_from_dict(item["recode"]) if item.get("recode") else None
        variables.append(Variable(str(item["name"]), role, scale, rule))
    return FusionSchema(tuple(variables), str(spec.get("missing_token", "")))


def load_schema(path) -> FusionSchema:
    with open(path, encoding="utf-8") as fh:
        spec = yaml.safe_load(fh)
    if not isinstance(spec, Mapping):
        raise SchemaError(f"{path}: schema file must contain a mapping")
    return schema_from_dict(spec)


@dataclass(frozen=True)
class DataTable:
    """Immutable column store. Values are float64; NaN marks a missing cell.

    Category codes are stored as integral floats. ``row_ids`` carries the
    stable row identity assigned at load time.
    """

    columns: Mapping[str, np.ndarray]
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        cols = {}
        n = None
        for name, values in self.columns.items():
            arr = np.array(values, dtype=float)
            if arr.ndim != 1:
                raise DataError(f"column {name!r} is not one-dimensional")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise DataError("all columns must have the same length")
            arr.flags.writeable = False
            cols[str(name)] = arr
        n = 0 if n is None else n
        ids = np.arange(n) if self.row_ids is None else np.array(self.row_ids, dtype=np.int64)
        if ids.size != n:
            raise DataError("row_ids length does not match the columns")
        ids.flags.writeable = False
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "row_ids", ids)

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    @property
    def n_rows(self) -> int:
        return int(self.row_ids.size)

    def __len__(self) -> int:
        return self.n_rows

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise DataError(f"column {name!r} not in table") from None

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        return np.column_stack([self.column(n) for n in names]) if names else np.empty((self.n_rows, 0))

    def select(self, names: Sequence[str]) -> "DataTable":
        return DataTable({n: self.column(n) for n in names}, self.row_ids)

    def drop(self, names: Iterable[str]) -> "DataTable":
        names = set(names)
        return DataTable({k: v for k, v in self.columns.items() if k not in names}, self.row_ids)

    def take(self, idx) -> "DataTable":
        idx = np.asarray(idx)
        if idx.size == 0:
            idx = idx.astype(np.int64)
        return DataTable({k: v[idx] for k, v in self.columns.items()}, self.row_ids[idx])

    def with_columns(self, new: Mapping[str, np.ndarray]) -> "DataTable":
        cols = dict(self.columns)
        cols.update(new)
        return DataTable(cols, self.row_ids)

    def equals(self, other: "DataTable") -> bool:
        if self.names != other.names or not np.array_equal(self.row_ids, other.row_ids):
            return False
        return all(np.array_equal(self.columns[n], other.columns[n], equal_nan=True) for n in self.names)

    def to_csv(self, path, missing_token: str = "", with_row_id: bool = False) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            header = (["row_id"] if with_row_id else []) + self.names
            writer.writerow(header)
            cols = [self.columns[n] for n in self.names]
            for i in range(self.n_rows):
                row = [str(int(self.row_ids[i]))] if with_row_id else []
                row.extend(_format_cell(c[i], missing_token) for c in cols)
                writer.writerow(row)


def _format_cell(value: float, missing_token: str) -> str:
    if np.isnan(value):
        return missing_token
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def load_table(path, schema: FusionSchema, missing_token: str | None = None) -> DataTable:
    """Read a comma-separated file with a header row into a typed table.

    Only columns declared in the schema are kept; an optional ``row_id``
    column is used as row identity. Every schema column that appears must
    parse, and categorical codes must belong to the declared level set.
    Missing cells (the missing token) are allowed here; whether they are
    acceptable is decided by :func:`stack`.
    """
    token = schema.missing_token if missing_token is None else missing_token
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise DataError(f"{path}: no data rows")
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names")
    present = [n for n in schema.names if n in header]
    if not present:
        raise DataError(f"{path}: no schema columns found in header")
    cols = {}
    for name in present:
        j = header.index(name)
        values = np.empty(len(body))
        for i, row in enumerate(body):
            if j >= len(row):
                raise DataError(f"{path}: row {i + 2} is short")
            cell = row[j].strip()
            if cell == token:
                values[i] = np.nan
                continue
            try:
                values[i] = float(cell)
            except ValueError:
                raise DataError(f"{path}: column {name!r} row {i + 2}: cannot parse {cell!r}") from None
        cols[name] = values
    ids = None
    if "row_id" in header:
        j = header.index("row_id")
        try:
            ids = [int(r[j]) for r in body]
        except ValueError:
            raise DataError(f"{path}: row_id column must be integer") from None
    table = DataTable(cols, ids)
    schema.validate(table, allow_missing=True)
    return table


def require_columns(table: DataTable, names: Iterable[str], what: str) -> None:
    missing = [n for n in names if n not in table]
    if missing:
        raise DataError(f"{what} is missing columns: {', '.join(missing)}")


@dataclass(frozen=True)
class StackedFrame:
    """Recipient block on top of donor block, sharing one column set."""

    table: DataTable
    recipient_rows: np.ndarray
    donor_rows: np.ndarray
    recipient_columns: tuple[str, ...]
    donor_columns: tuple[str, ...]

    @property
    def n_rec(self) -> int:
        return int(self.recipient_rows.size)

    @property
    def n_don(self) -> int:
        return int(self.donor_rows.size)

    def block(self, which: str, names: Sequence[str] | None = None) -> DataTable:
        rows = self.recipient_rows if which == "recipient" else self.donor_rows
        default = self.recipient_columns if which == "recipient" else self.donor_columns
        return self.table.take(rows).select(list(default if names is None else names))

    def recipient(self, names: Sequence[str] | None = None) -> DataTable:
        return self.block("recipient", names)

    def donor(self, names: Sequence[str] | None = None) -> DataTable:
        return self.block("donor", names)

    def check(self, schema: FusionSchema) -> None:
        t = self.table
        rec, don = self.recipient_rows, self.donor_rows
        for name in schema.common:
            if np.isnan(t.column(name)).any():
                raise DataError(f"common variable {name!r} must be fully observed in both blocks")
        for name in schema.specific_donor:
            if name in t and not np.isnan(t.column(name)[rec]).all():
                raise DataError(f"donor-specific {name!r} observed on recipient rows")
        for name in schema.specific_recipient:
            if name in t and not np.isnan(t.column(name)[don]).all():
                raise DataError(f"recipient-specific {name!r} observed on donor rows")


def stack(recipient: DataTable, donor: DataTable, schema: FusionSchema) -> StackedFrame:
    """Concatenate recipient and donor into the missing-by-design frame."""
    if recipient.n_rows == 0:
        raise DataError("recipient file is empty")
    if donor.n_rows == 0:
        raise DataError("donor file is empty")
    common = schema.common
    require_columns(recipient, common, "recipient file")
    require_columns(donor, common, "donor file")
    z_names = [n for n in schema.specific_donor if n in donor]
    if not z_names:
        raise DataError("donor file carries no donor-specific variable")
    y_names = [n for n in schema.specific_recipient if n in recipient]
    for name in schema.specific_donor:
        if name in recipient and not np.isnan(recipient.column(name)).all():
            raise DataError(f"recipient file observes donor-specific variable {name!r}")
    for name in schema.specific_recipient:
        if name in donor and not np.isnan(donor.column(name)).all():
            raise DataError(f"donor file observes recipient-specific variable {name!r}")
    for name, tbl in (("recipient", recipient), ("donor", donor)):
        schema.validate(tbl, common)
    schema.validate(donor, z_names)
    schema.validate(recipient, y_names)

    names = common + y_names + z_names
    n_rec, n_don = recipient.n_rows, donor.n_rows
    cols = {}
    for name in names:
        top = recipient.column(name) if name in recipient else np.full(n_rec, np.nan)
        bottom = donor.column(name) if name in donor else np.full(n_don, np.nan)
        cols[name] = np.concatenate([top, bottom])
    table = DataTable(cols, np.concatenate([recipient.row_ids, donor.row_ids]))
    rec_cols = tuple(n for n in recipient.names if n in cols)
    don_cols = tuple(n for n in donor.names if n in cols)
    frame = StackedFrame(table, np.arange(n_rec), np.arange(n_rec, n_rec + n_don), rec_cols, don_cols)
    frame.check(schema)
    return frame


def split_population(pop: DataTable, n_rec: int, n_don: int, rng, schema: FusionSchema | None = None
                     ) -> tuple[DataTable, DataTable]:
    """Draw disjoint recipient and donor samples without replacement.

    With a schema, the recipient copy drops donor-specific columns and the
    donor copy drops recipient-specific ones. ``rng`` is a Generator or seed.
    """
    if n_rec < 1 or n_don < 1:
        raise DataError("sample sizes must be positive")
    if n_rec + n_don > pop.n_rows:
        raise DataError(f"cannot draw {n_rec}+{n_don} rows from a population of {pop.n_rows}")
    rng = np.random.default_rng(rng)
    idx = rng.choice(pop.n_rows, size=n_rec + n_don, replace=False)
    rec, don = pop.take(idx[:n_rec]), pop.take(idx[n_rec:])
    if schema is not None:
        rec = rec.drop(schema.specific_donor)
        don = don.drop(schema.specific_recipient)
    return rec, don


def categorise(table: DataTable, schema: FusionSchema, names: Sequence[str] | None = None
               ) -> tuple[DataTable, FusionSchema]:
    """Replace metric common variables by the codes of their binning rule.

    Quantile cut points are computed over all rows of ``table``, so applying
    this to a stacked frame's table bins both blocks on pooled quantiles.
    """
    names = schema.common if names is None else list(names)
    new_cols = {}
    for name in names:
        var = schema[name]
        if var.scale.is_categorical:
            continue
        if not isinstance(var.recode, (recode.QuantileBin, recode.IntervalBin)):
            raise SchemaError(f"metric common variable {name!r} has no binning rule; declare a "
                              "quantile or interval recode so random hot deck can categorise it")
        new_cols[name] = recode.apply_rule(table.column(name), var.recode)
        schema = schema.replace(name, scale=ScaleLevel.categorical(var.recode.levels), recode=None)
    return table.with_columns(new_cols), schema


def categorise_frame(frame: StackedFrame, schema: FusionSchema) -> tuple[StackedFrame, FusionSchema]:
    table, cschema = categorise(frame.table, schema)
    return StackedFrame(table, frame.recipient_rows, frame.donor_rows,
                        frame.recipient_columns, frame.donor_columns), cschema
