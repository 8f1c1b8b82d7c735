"""Schema declaration, CSV ingestion, splitting, and model serialization.

The model file is a single container: a text header (format version line,
JSON with schema/codecs/architecture/block manifest) followed by a binary
section of little-endian float64 blocks, each length-prefixed.  Loading
requires no training data, and a load(save(model)) round trip reproduces
densities and generated rows bitwise.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .discrete import CategoryCodec, build_codec
from .errors import ConfigurationError, DataError, ModelFileError, ModelVersionError

MODEL_FORMAT_VERSION = 1
_MAGIC = "copulaflow-model"

COLUMN_KINDS = ("continuous", "ordinal", "categorical")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise ConfigurationError(
                f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.bounds is not None:
            lo, hi = float(self.bounds[0]), float(self.bounds[1])
            if not lo < hi:
                raise ConfigurationError(
                    f"column {self.name!r}: invalid bounds ({lo}, {hi})")
            object.__setattr__(self, "bounds", (lo, hi))

    @property
    def is_discrete(self) -> bool:
        return self.kind in ("ordinal", "categorical")


@dataclass(frozen=True)
class Schema:
    columns: tuple

    def __post_init__(self):
        if not self.columns:
            raise ConfigurationError("schema needs at least one column")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ConfigurationError("schema has duplicate column names")
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def names(self):
        return [c.name for c in self.columns]

    def __getitem__(self, name: str) -> ColumnSpec:
        for col in self.columns:
            if col.name == name:
                return col
        raise KeyError(name)

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @classmethod
    def from_file(cls, path) -> "Schema":
        """Parse a schema file: one `name,kind[,lower,upper]` line per
        column; blank lines and #-comments ignored."""
        cols = []
        with open(path, encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = [p.strip() for p in line.split(",")]
                if len(parts) == 2:
                    cols.append(ColumnSpec(parts[0], parts[1]))
                elif len(parts) == 4:
                    try:
                        bounds = (float(parts[2]), float(parts[3]))
                    except ValueError:
                        raise DataError(
                            f"{path}:{lineno}: unparseable bounds") from None
                    cols.append(ColumnSpec(parts[0], parts[1], bounds))
                else:
                    raise DataError(
                        f"{path}:{lineno}: expected name,kind[,lower,upper]")
        if not cols:
            raise DataError(f"{path}: empty schema file")
        return cls(tuple(cols))

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as handle:
            for col in self.columns:
                if col.bounds is None:
                    handle.write(f"{col.name},{col.kind}\n")
                else:
                    handle.write(f"{col.name},{col.kind},"
                                 f"{col.bounds[0]!r},{col.bounds[1]!r}\n")


@dataclass(frozen=True)
class Dataset:
    """Column-major table: continuous columns as float64, discrete columns
    as integer codes with their codec."""

    schema: Schema
    columns: dict
    codecs: dict

    def __post_init__(self):
        lengths = {arr.shape[0] for arr in self.columns.values()}
        if len(lengths) > 1:
            raise DataError("columns have unequal lengths")
        for col in self.schema.columns:
            if col.name not in self.columns:
                raise DataError(f"missing column {col.name!r}")
            if col.is_discrete:
                codec = self.codecs.get(col.name)
                if codec is None:
                    raise DataError(f"discrete column {col.name!r} has no codec")
                codes = self.columns[col.name]
                if codes.size and (codes.min() < 0
                                   or codes.max() >= codec.n_classes):
                    raise DataError(
                        f"column {col.name!r}: codes outside codec range")

    @property
    def n_rows(self) -> int:
        return next(iter(self.columns.values())).shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def labels(self, name: str) -> list:
        """Decoded raw labels for a discrete column."""
        return self.codecs[name].decode(self.columns[name])

    def take(self, indices) -> "Dataset":
        return Dataset(self.schema,
                       {k: v[indices] for k, v in self.columns.items()},
                       self.codecs)


def load_csv(path, schema: Schema, codecs: dict | None = None) -> Dataset:
    """Read a header-required CSV against a schema.

    Column order in the file is irrelevant; cells must parse per the column
    kind (unparseable cells are reported with 1-based data row and column
    name).  Discrete columns are encoded with `codecs` when given (e.g. a
    fitted model's), otherwise codecs are built from the observed labels.
    Missing values are rejected.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        index = {name: header.index(name) for name in schema.names}
        raw = {name: [] for name in schema.names}
        for rownum, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {rownum} has {len(row)} cells, "
                    f"expected {len(header)}")
            for name in schema.names:
                raw[name].append(row[index[name]])

    if not next(iter(raw.values()), []):
        raise DataError(f"{path}: no data rows")

    columns = {}
    out_codecs = {}
    for col in schema.columns:
        cells = raw[col.name]
        if col.kind == "continuous":
            values = np.empty(len(cells), dtype=np.float64)
            for i, cell in enumerate(cells):
                try:
                    values[i] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {i + 1}, column {col.name!r}: "
                        f"cannot parse {cell!r} as a real number") from None
            if np.any(np.isnan(values)):
                raise DataError(f"{path}: column {col.name!r} contains NaN")
            columns[col.name] = values
        else:
            if col.kind == "ordinal":
                labels = []
                for i, cell in enumerate(cells):
                    try:
                        labels.append(int(cell))
                    except ValueError:
                        raise DataError(
                            f"{path}: row {i + 1}, column {col.name!r}: "
                            f"cannot parse {cell!r} as an integer") from None
            else:
                labels = [cell for cell in cells]
            if codecs and col.name in codecs:
                codec = codecs[col.name]
            else:
                codec = build_codec(labels, kind=col.kind)
            try:
                columns[col.name] = codec.encode(labels)
            except DataError as exc:
                raise DataError(f"{path}: column {col.name!r}: {exc}") from None
            out_codecs[col.name] = codec
    return Dataset(schema=schema, columns=columns, codecs=out_codecs)


def save_csv(dataset: Dataset, path):
    """Write a dataset back to CSV with full float precision (values round
    trip bitwise through load_csv)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(dataset.schema.names)
        decoded = {}
        for col in dataset.schema.columns:
            if col.is_discrete:
                decoded[col.name] = dataset.labels(col.name)
            else:
                decoded[col.name] = dataset.column(col.name)
        for i in range(dataset.n_rows):
            row = []
            for col in dataset.schema.columns:
                value = decoded[col.name][i]
                row.append(repr(float(value))
                           if col.kind == "continuous" else str(value))
            writer.writerow(row)


def split(dataset: Dataset, fractions, seed: int):
    """Seeded disjoint (train, val, test) split.

    Fractions must be positive and sum to at most 1; when they sum to 1 the
    parts partition the rows exactly (remainder goes to train).
    """
    f1, f2, f3 = (float(f) for f in fractions)
    if min(f1, f2, f3) <= 0:
        raise ConfigurationError("split fractions must be positive")
    if f1 + f2 + f3 > 1.0 + 1e-9:
        raise ConfigurationError("split fractions must sum to at most 1")
    n = dataset.n_rows
    n1 = int(n * f1)
    n2 = int(n * f2)
    n3 = int(n * f3)
    if abs((f1 + f2 + f3) - 1.0) <= 1e-9:
        n1 = n - n2 - n3
    if min(n1, n2, n3) < 1:
        raise DataError(
            f"{n} rows cannot fill three nonempty parts at fractions "
            f"({f1}, {f2}, {f3})")
    perm = np.random.default_rng(seed).permutation(n)
    return (dataset.take(perm[:n1]),
            dataset.take(perm[n1:n1 + n2]),
            dataset.take(perm[n1 + n2:n1 + n2 + n3]))


# --- model file -------------------------------------------------------------

def _schema_to_json(schema: Schema):
    return [{"name": c.name, "kind": c.kind,
             "bounds": list(c.bounds) if c.bounds else None}
            for c in schema.columns]


def _schema_from_json(spec):
    return Schema(tuple(
        ColumnSpec(c["name"], c["kind"],
                   tuple(c["bounds"]) if c["bounds"] else None)
        for c in spec))


def _codec_to_json(codec: CategoryCodec):
    kind = "int" if all(isinstance(c, (int, np.integer)) for c in codec.classes) \
        else "str"
    return {"class_kind": kind,
            "classes": [int(c) if kind == "int" else str(c)
                        for c in codec.classes]}


def _codec_from_json(spec) -> CategoryCodec:
    cast = int if spec["class_kind"] == "int" else str
    return CategoryCodec(tuple(cast(c) for c in spec["classes"]))


def save_model(model, path):
    """Serialize a fitted model (schema, codecs, all parameter blocks).

    The write is whole-file atomic: a temp file in the target directory is
    renamed over `path`.
    """
    from .copula import INPUT_CLAMP_EPS, NONLINEARITY

    blocks = {}
    marginal_specs = []
    for col, marginal in zip(model.schema.columns, model.marginals):
        prefix = f"marginal/{col.name}"
        raw = marginal.params
        blocks[f"{prefix}/widths_raw"] = raw.widths_raw
        blocks[f"{prefix}/heights_raw"] = raw.heights_raw
        blocks[f"{prefix}/slopes_raw"] = raw.slopes_raw
        spec = {"name": col.name, "k_bins": raw.k_bins}
        if col.is_discrete:
            spec["kind"] = "discrete"
            spec["codec"] = _codec_to_json(marginal.codec)
        else:
            spec["kind"] = "continuous"
            spec["bounds"] = list(raw.bounds)
        marginal_specs.append(spec)

    stack = model.copula
    for name in stack.params.layout:
        blocks[f"copula/{name}"] = stack.params.block(name)

    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "schema": _schema_to_json(model.schema),
        "marginals": marginal_specs,
        "copula": {
            "d": stack.d,
            "k_bins": stack.k_bins,
            "hidden_sizes": list(stack.hidden_sizes),
            "n_layers": len(stack.layers),
            "seed": stack.seed,
            "nonlinearity": NONLINEARITY,
            "input_clamp_eps": INPUT_CLAMP_EPS,
        },
        "metadata": model.fit_metadata,
        "blocks": [{"name": name, "size": int(np.asarray(arr).size)}
                   for name, arr in blocks.items()],
    }
    payload = json.dumps(header).encode("utf-8")

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(f"{_MAGIC} {MODEL_FORMAT_VERSION}\n".encode("ascii"))
            handle.write(f"{len(payload)}\n".encode("ascii"))
            handle.write(payload)
            for name, arr in blocks.items():
                data = np.ascontiguousarray(
                    np.asarray(arr, dtype="<f8")).tobytes()
                handle.write(np.uint64(len(data) // 8).tobytes())
                handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path):
    """Reconstruct a fitted model; behavior is bitwise identical to the
    saved one for density evaluation and generation."""
    from .copula import build_copula_flow
    from .discrete import DiscreteMarginalFlow
    from .marginals import MarginalFlowModel
    from .pipeline import FittedModel
    from .splines import RawSplineParams

    with open(path, "rb") as handle:
        magic_line = handle.readline().decode("ascii", errors="replace").strip()
        parts = magic_line.split()
        if len(parts) != 2 or parts[0] != _MAGIC:
            raise ModelFileError(f"{path}: not a model file")
        try:
            version = int(parts[1])
        except ValueError:
            raise ModelFileError(f"{path}: malformed version") from None
        if version != MODEL_FORMAT_VERSION:
            raise ModelVersionError(version, MODEL_FORMAT_VERSION)
        try:
            header_len = int(handle.readline().decode("ascii").strip())
        except ValueError:
            raise ModelFileError(f"{path}: malformed header length") from None
        payload = handle.read(header_len)
        if len(payload) != header_len:
            raise ModelFileError(f"{path}: truncated header")
        try:
            header = json.loads(payload.decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise ModelFileError(f"{path}: bad header JSON: {exc}") from None

        blocks = {}
        for spec in header["blocks"]:
            prefix = handle.read(8)
            if len(prefix) != 8:
                raise ModelFileError(f"{path}: truncated at block "
                                     f"{spec['name']!r}")
            count = int(np.frombuffer(prefix, dtype=np.uint64)[0])
            if count != spec["size"]:
                raise ModelFileError(
                    f"{path}: block {spec['name']!r} length mismatch")
            data = handle.read(count * 8)
            if len(data) != count * 8:
                raise ModelFileError(f"{path}: truncated at block "
                                     f"{spec['name']!r}")
            blocks[spec["name"]] = np.frombuffer(data, dtype="<f8").copy()
        if handle.read(1):
            raise ModelFileError(f"{path}: trailing bytes after last block")

    schema = _schema_from_json(header["schema"])
    marginals = []
    for col, spec in zip(schema.columns, header["marginals"]):
        prefix = f"marginal/{col.name}"
        k = spec["k_bins"]
        if spec["kind"] == "discrete":
            codec = _codec_from_json(spec["codec"])
            bounds = (-1.0, float(codec.n_classes - 1))
            raw = RawSplineParams(blocks[f"{prefix}/widths_raw"],
                                  blocks[f"{prefix}/heights_raw"],
                                  blocks[f"{prefix}/slopes_raw"], bounds)
            marginals.append(DiscreteMarginalFlow(codec, raw, col.name))
        else:
            bounds = tuple(spec["bounds"])
            raw = RawSplineParams(blocks[f"{prefix}/widths_raw"],
                                  blocks[f"{prefix}/heights_raw"],
                                  blocks[f"{prefix}/slopes_raw"], bounds)
            marginals.append(MarginalFlowModel(raw, col.name, bounds))

    cop = header["copula"]
    stack = build_copula_flow(cop["d"], tuple(cop["hidden_sizes"]),
                              cop["k_bins"], cop["n_layers"],
                              seed=cop["seed"])
    values = stack.params.values.copy()
    for name, sl in stack.params.layout.items():
        values[sl] = blocks[f"copula/{name}"]
    stack = stack.with_params(stack.params.replace_values(values))

    return FittedModel(schema=schema, marginals=marginals, copula=stack,
                       fit_metadata=header["metadata"])
