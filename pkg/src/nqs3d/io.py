"""Run configuration and schema-versioned output files."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .lattice import Lattice3D
from .network import ArchitectureSpec
from .protocols import QuenchSpec, RampSpec, protocol_from_dict
from .sampler import SamplerConfig
from .tdvp import IntegratorConfig, Regularization

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class ArchitectureConfig:
    depth: int = 2
    channels: int = 2
    init: str = "uniform"  # uniform: random weights fitted to the X-polarised state | random
    init_scale: float = 3.0

    def spec(self) -> ArchitectureSpec:
        return ArchitectureSpec(self.depth, self.channels)


@dataclass
class RunConfig:
    dims: tuple = (2, 2, 3)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    sampler: dict | None = None  # None selects exact enumeration
    # small Tikhonov shift with a negligible hard cutoff keeps the TDVP flow smooth near the uniform start
    integrator: dict = field(default_factory=lambda: {"dt": 1e-6, "dt_min": 1e-12, "tol": 1e-4,
                                                      "regularization": {"cutoff": 1e-12, "shift": 1e-6}})
    protocol: dict = field(default_factory=lambda: {"type": "quench", "h_init": 1e9, "h_final": 5.158136})
    measure_times: list = field(default_factory=lambda: [0.1 * k for k in range(1, 11)])
    t_start: float | None = None  # defaults to the protocol start (0 for quenches)
    t_end: float | None = None
    max_R: int | None = None
    ground_energy: str = "none"  # none | ed: reference for the excess energy
    checkpoint_every: int = 0
    seed: int = 0
    output_dir: str = "runs/default"

    def validate(self) -> None:
        """Raise ConfigError naming the first offending field."""
        try:
            dims = tuple(int(d) for d in self.dims)
            if len(dims) != 3:
                raise ValueError("need three axis lengths")
            Lattice3D(dims)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"dims: {exc}") from None
        for name, build in (("architecture", lambda: self.architecture.spec()),
                            ("sampler", lambda: self.sampler_config()),
                            ("integrator", lambda: self.integrator_config()),
                            ("protocol", lambda: self.protocol_spec())):
            try:
                build()
            except (ValueError, TypeError, KeyError) as exc:
                raise ConfigError(f"{name}: {exc}") from None
        if self.architecture.init not in ("random", "uniform"):
            raise ConfigError("architecture.init: must be 'random' or 'uniform'")
        if self.architecture.init_scale <= 0:
            raise ConfigError("architecture.init_scale: must be positive")
        if self.ground_energy not in ("none", "ed"):
            raise ConfigError("ground_energy: must be 'none' or 'ed'")
        if self.max_R is not None and not 0 <= self.max_R <= min(dims) // 2:
            raise ConfigError(f"max_R: must lie in [0, {min(dims) // 2}]")
        t0, t1 = self.window()
        if t1 < t0:
            raise ConfigError("t_end: precedes the start time")
        slack = 1e-12 * max(1.0, abs(t0), abs(t1))
        if any(not t0 - slack <= t <= t1 + slack for t in self.measure_times):
            raise ConfigError("measure_times: outside the simulated window")

    @property
    def lattice(self) -> Lattice3D:
        return Lattice3D(tuple(int(d) for d in self.dims))

    def sampler_config(self) -> SamplerConfig | None:
        return None if self.sampler is None else SamplerConfig(**{"seed": self.seed, **self.sampler})

    def integrator_config(self) -> IntegratorConfig:
        doc = dict(self.integrator)
        reg = doc.pop("regularization", {})
        return IntegratorConfig(**doc, regularization=Regularization(**reg))

    def protocol_spec(self) -> RampSpec | QuenchSpec:
        return protocol_from_dict(self.protocol)

    def window(self) -> tuple[float, float]:
        spec = self.protocol_spec()
        if isinstance(spec, RampSpec):
            t0 = spec.t_start if self.t_start is None else self.t_start
            t1 = spec.t_end if self.t_end is None else self.t_end
        else:
            t0 = 0.0 if self.t_start is None else self.t_start
            t1 = max(self.measure_times, default=0.0) if self.t_end is None else self.t_end
        return float(t0), float(t1)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["dims"] = list(self.dims)
        doc["schema_version"] = SCHEMA_VERSION
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        check_schema(doc, "run config")
        doc.pop("schema_version", None)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "architecture" in doc:
            doc["architecture"] = ArchitectureConfig(**doc["architecture"])
        if "dims" in doc:
            doc["dims"] = tuple(doc["dims"])
        return cls(**doc)


def check_schema(doc: dict, what: str) -> None:
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{what}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")


def load_config(path) -> RunConfig:
    """Run configuration from a config JSON or from a run manifest (its ``config`` entry)."""
    with open(path) as fh:
        doc = json.load(fh)
    if "verb" in doc and "config" in doc:
        check_schema(doc, str(path))
        doc = doc["config"]
    return RunConfig.from_dict(doc)


def save_json(path, doc: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, **doc}
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable))
    os.replace(tmp, path)


def load_json(path, what: str = "file") -> dict:
    doc = json.loads(Path(path).read_text())
    if "schema_version" not in doc:
        raise SchemaError(f"{path}: missing schema_version")
    check_schema(doc, str(path))
    return doc


def _jsonable(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


class JsonlWriter:
    """Append-only JSONL log; every record carries the schema version and a record type."""

    def __init__(self, path, mode: str = "w"):
        self.fh = open(path, mode)

    def write(self, kind: str, record: dict) -> None:
        doc = {"schema_version": SCHEMA_VERSION, "record": kind, **record}
        self.fh.write(json.dumps(doc, sort_keys=True, default=_jsonable) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path, kind: str | None = None) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            check_schema(doc, str(path))
            if kind is None or doc.get("record") == kind:
                out.append(doc)
    return out


def write_csv(path, rows: list[dict]) -> None:
    """CSV with a leading schema_version column; column order from the first row."""
    if not rows:
        raise ValueError("no rows to write")
    columns = ["schema_version"] + [k for k in rows[0] if k != "schema_version"]
    for row in rows[1:]:
        columns += [k for k in row if k not in columns]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({"schema_version": SCHEMA_VERSION, **{k: _fmt(v) for k, v in row.items()}})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        if row.get("schema_version") is None:
            raise SchemaError(f"{path}: missing schema_version column")
        if int(row["schema_version"]) != SCHEMA_VERSION:
            raise SchemaError(f"{path}: unsupported schema_version {row['schema_version']}")
    return rows


@dataclass
class TrajectorySet:
    """One run's observables keyed by (L, tau_q) for analysis."""

    path: Path
    L: float
    tau_q: float | None
    rows: list

    @property
    def times(self) -> list[float]:
        return [float(r["time"]) for r in self.rows]

    def column(self, name) -> list[float]:
        return [float(r[name]) if r.get(name, "") != "" else float("nan") for r in self.rows]

    def correlation_at(self, index: int = -1) -> tuple[list[int], list[float]]:
        row = self.rows[index]
        Rs = sorted(int(k[1:]) for k in row if k.startswith("C") and k[1:].isdigit())
        return Rs, [float(row[f"C{R}"]) for R in Rs]


def load_trajectory_sets(data_dir) -> list[TrajectorySet]:
    """Every run directory below ``data_dir`` holding manifest.json and observables.csv."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"{data_dir} is not a directory")
    sets, offenders = [], []
    for manifest in sorted(data_dir.rglob("manifest.json")):
        obs = manifest.parent / "observables.csv"
        if not obs.exists():
            continue
        try:
            meta = load_json(manifest)
            rows = read_csv(obs)
        except (SchemaError, ValueError) as exc:
            offenders.append(f"{manifest.parent}: {exc}")
            continue
        dims = meta["config"]["dims"]
        L = float(dims[0]) if len(set(dims)) == 1 else float(dims[0] * dims[1] * dims[2]) ** (1.0 / 3.0)
        tau = meta["config"]["protocol"].get("tau_q")
        sets.append(TrajectorySet(manifest.parent, L, tau, rows))
    if offenders:
        raise SchemaError("inconsistent trajectory files:\n  " + "\n  ".join(offenders))
    if not sets:
        raise FileNotFoundError(f"no trajectory sets (manifest.json + observables.csv) under {data_dir}")
    return sets
