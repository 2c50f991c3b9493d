"""Weight files, JSON configs and benchmark reports.

Weights file layout (all integers little-endian)::

    b"FIPA"                      magic
    u16   version                (currently 1)
    u32   n_entries
    n_entries times:
        u16   name length, then UTF-8 name
        u8    bytes per element  (4 = float32, 8 = float64)
        u8    ndim
        u32   dim, ndim times
        payload, row-major little-endian IEEE-754

``w_L`` and ``w_C`` are stored as 0-d float64 entries.

Report CSV columns: arm,L,seed,precision,peak_bytes,seconds
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attention_kernel import TileSpec
from .ipa_reference import IpaConfig, IpaWeights
from .pair_features import DistogramSpec

MAGIC = b"FIPA"
FORMAT_VERSION = 1
CSV_COLUMNS = ("arm", "L", "seed", "precision", "peak_bytes", "seconds")


class WeightsFormatError(ValueError):
    pass


class WeightsVersionError(WeightsFormatError):
    pass


def _entries(w: IpaWeights) -> list[tuple[str, np.ndarray]]:
    items = list(w.arrays().items())
    items.append(("w_L", np.asarray(w.w_L, dtype=np.float64)))
    items.append(("w_C", np.asarray(w.w_C, dtype=np.float64)))
    return items


def save_weights(w: IpaWeights, path) -> None:
    entries = _entries(w)
    chunks = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(entries))]
    for name, arr in entries:
        if arr.dtype not in (np.float32, np.float64):
            raise WeightsFormatError(f"{name}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<BB", arr.dtype.itemsize, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightsFormatError("truncated weights file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_weight_table(path) -> dict[str, np.ndarray]:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4) != MAGIC:
        raise WeightsFormatError("not a FIPA weights file (bad magic)")
    version, n = reader.unpack("<HI")
    if version != FORMAT_VERSION:
        raise WeightsVersionError(f"weights format version {version}, expected {FORMAT_VERSION}")
    table = {}
    for _ in range(n):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        itemsize, ndim = reader.unpack("<BB")
        if itemsize not in (4, 8):
            raise WeightsFormatError(f"{name}: bad element size {itemsize}")
        shape = reader.unpack(f"<{ndim}I")
        dtype = np.dtype("<f4" if itemsize == 4 else "<f8")
        count = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(count * itemsize)
        table[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if reader.pos != len(reader.data):
        raise WeightsFormatError("trailing bytes after tensor table")
    return table


def load_weights(path) -> IpaWeights:
    table = read_weight_table(path)
    try:
        w_L = float(table.pop("w_L"))
        w_C = float(table.pop("w_C"))
        return IpaWeights(**table, w_L=w_L, w_C=w_C)
    except (KeyError, TypeError) as exc:
        raise WeightsFormatError(f"tensor table does not describe IpaWeights: {exc}") from None


def weights_precision(w: IpaWeights) -> str:
    return "f32" if w.w_q.dtype == np.float32 else "f64"


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class BenchConfig:
    """Everything a benchmark run needs besides seed and lengths.

    JSON schema::

        {"ipa": {IpaConfig fields}, "distogram": {DistogramSpec fields},
         "tiles": {"block_rows": int, "block_cols": int}}

    Every key is optional; missing keys take the dataclass defaults.
    """

    ipa: IpaConfig = field(default_factory=IpaConfig)
    distogram: DistogramSpec = field(default_factory=DistogramSpec)
    tiles: TileSpec = field(default_factory=TileSpec)

    def to_dict(self) -> dict:
        return {"ipa": self.ipa.to_dict(), "distogram": asdict(self.distogram), "tiles": asdict(self.tiles)}

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        unknown = set(d) - {"ipa", "distogram", "tiles"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        return cls(IpaConfig(**d.get("ipa", {})), DistogramSpec(**d.get("distogram", {})),
                   TileSpec(**d.get("tiles", {})))


def load_config(path) -> BenchConfig:
    return BenchConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(config: BenchConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# reports


@dataclass
class ScalingRecord:
    arm: str
    L: int
    seed: int
    precision: str
    peak_bytes: int
    seconds: float


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    seed: int = 0
    precision: str = "f64"


@dataclass
class RunReport:
    command: str
    config: dict
    records: list[ScalingRecord] = field(default_factory=list)
    fits: dict[str, dict] = field(default_factory=dict)
    checks: list[CheckResult] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            command=d["command"],
            config=d["config"],
            records=[ScalingRecord(**r) for r in d.get("records", [])],
            fits=d.get("fits", {}),
            checks=[CheckResult(**c) for c in d.get("checks", [])],
            notes=d.get("notes", []),
        )


def emit_report(report: RunReport, fmt: str, path) -> None:
    if fmt == "json":
        Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in report.records:
                writer.writerow([r.arm, r.L, r.seed, r.precision, r.peak_bytes, repr(r.seconds)])
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def load_report_json(path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text()))


def read_records_csv(path) -> list[ScalingRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"expected CSV columns {','.join(CSV_COLUMNS)}")
        return [ScalingRecord(r["arm"], int(r["L"]), int(r["seed"]), r["precision"],
                              int(r["peak_bytes"]), float(r["seconds"])) for r in reader]
