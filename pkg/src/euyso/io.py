"""File formats and run manifests.

CSV: comma separated, '.' decimal, header row required. Frequencies are
MHz except Rabi data (kHz). JSON is written with sorted keys.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .branching import RabiRecord
from .fieldfit import RhsLine, RhsMeasurement, ShbLine, ShbMeasurement
from .spin import ConfigError, format_transition, parse_transition


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_rows(path, required: tuple[str, ...]):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigError(f"{path}: empty file, header row required")
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in required if c not in header]
        if missing:
            raise ConfigError(f"{path}: missing column(s) {missing}; header is {header}")
        reader.fieldnames = header
        for n, row in enumerate(reader, start=2):
            yield n, {k: (v.strip() if isinstance(v, str) else v) for k, v in row.items()}


def _float(path, n, row, key, default=None) -> float:
    v = row.get(key)
    if v in (None, ""):
        if default is not None:
            return default
        raise ConfigError(f"{path}:{n}: missing value for {key!r}")
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"{path}:{n}: {key}={v!r} is not a number") from None


def read_rabi_csv(path) -> list[RabiRecord]:
    """``transition,raw_kHz,err_kHz,power_W``."""
    out = []
    for n, row in _read_rows(path, ("transition", "raw_kHz", "err_kHz", "power_W")):
        try:
            i, j = parse_transition(row["transition"])
            out.append(RabiRecord(i, j, _float(path, n, row, "raw_kHz"), _float(path, n, row, "err_kHz"), _float(path, n, row, "power_W")))
        except (ConfigError, ValueError) as exc:
            raise ConfigError(f"{path}:{n}: {exc}") from None
    if not out:
        raise ConfigError(f"{path}: no Rabi records")
    return out


CALIBRATED_HEADER = ("transition", "calibrated_kHz", "cal_err_kHz", "raw_kHz", "err_kHz", "power_W")


def write_calibrated_csv(path, records) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALIBRATED_HEADER)
        for r in records:
            w.writerow([r.label, *(repr(float(v)) for v in (r.calibrated, r.cal_err, r.raw, r.err, r.power))])
    return Path(path)


def read_calibrated_csv(path) -> list[RabiRecord]:
    out = []
    for n, row in _read_rows(path, CALIBRATED_HEADER):
        i, j = parse_transition(row["transition"])
        vals = [_float(path, n, row, k) for k in CALIBRATED_HEADER[1:]]
        out.append(RabiRecord(i, j, vals[2], vals[3], vals[4], vals[0], vals[1]))
    return out


def read_rhs_csv(path) -> RhsMeasurement:
    """``label,freq_MHz,weight`` plus an optional ``subsite`` column."""
    lines = []
    for n, row in _read_rows(path, ("label", "freq_MHz")):
        try:
            lines.append(
                RhsLine(
                    row["label"],
                    _float(path, n, row, "freq_MHz"),
                    _float(path, n, row, "weight", 1.0),
                    row.get("subsite") or "merged",
                )
            )
        except ValueError as exc:
            raise ConfigError(f"{path}:{n}: {exc}") from None
    if not lines:
        raise ConfigError(f"{path}: no RHS lines")
    return RhsMeasurement(lines)


def write_rhs_csv(path, meas: RhsMeasurement) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "freq_MHz", "weight", "subsite"])
        for ln in meas.lines:
            w.writerow([ln.label, repr(float(ln.freq)), repr(float(ln.weight)), ln.subsite])
    return Path(path)


SHB_ASSIGN = ("i", "j", "i2", "j2")


def read_shb_csv(path) -> ShbMeasurement:
    """``kind,offset_MHz[,i,j,i2,j2],weight``; blank assignment means auto."""
    lines = []
    for n, row in _read_rows(path, ("kind", "offset_MHz")):
        a = [row.get(k) for k in SHB_ASSIGN]
        try:
            if all(v not in (None, "") for v in a):
                assignment = tuple(int(v) for v in a)
            elif any(v not in (None, "") for v in a):
                raise ValueError("partial assignment; give all of i,j,i2,j2 or none")
            else:
                assignment = None
            lines.append(ShbLine(row["kind"], _float(path, n, row, "offset_MHz"), assignment, _float(path, n, row, "weight", 1.0)))
        except ValueError as exc:
            raise ConfigError(f"{path}:{n}: {exc}") from None
    if not lines:
        raise ConfigError(f"{path}: no SHB lines")
    return ShbMeasurement(lines)


def write_shb_csv(path, meas: ShbMeasurement) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "offset_MHz", *SHB_ASSIGN, "weight"])
        for ln in meas.lines:
            a = ln.assignment or ("", "", "", "")
            w.writerow([ln.kind, repr(float(ln.offset)), *a, repr(float(ln.weight))])
    return Path(path)


def read_trace_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """``tau_us,od``."""
    t, y = [], []
    for n, row in _read_rows(path, ("tau_us", "od")):
        t.append(_float(path, n, row, "tau_us"))
        y.append(_float(path, n, row, "od"))
    return np.array(t), np.array(y)


def read_percent_table(path) -> np.ndarray:
    """6x6 table in percent, header ``ground,1e..6e``, rows 1g..6g."""
    rows = {}
    for n, row in _read_rows(path, ("ground",) + tuple(f"{j}e" for j in range(1, 7))):
        g = row["ground"].lower()
        if not (g.endswith("g") and g[:-1].isdigit() and 1 <= int(g[:-1]) <= 6):
            raise ConfigError(f"{path}:{n}: bad ground label {row['ground']!r}")
        rows[int(g[:-1])] = [_float(path, n, row, f"{j}e") for j in range(1, 7)]
    if sorted(rows) != list(range(1, 7)):
        raise ConfigError(f"{path}: need rows 1g..6g, got {sorted(rows)}")
    return np.array([rows[i] for i in range(1, 7)]) / 100.0


def write_matrix_csv(path, m: np.ndarray, scale: float = 1.0, err: np.ndarray | None = None) -> Path:
    """Ground-by-excited table; optional ``_err`` columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["ground"] + [f"{j}e" for j in range(1, 7)]
        if err is not None:
            head += [f"{j}e_err" for j in range(1, 7)]
        w.writerow(head)
        for i in range(6):
            row = [f"{i + 1}g"] + [repr(float(v * scale)) for v in m[i]]
            if err is not None:
                row += [repr(float(v * scale)) for v in err[i]]
            w.writerow(row)
    return Path(path)


def write_spectrum_csv(path, freqs, columns: dict[str, np.ndarray]) -> Path:
    names = list(columns)
    data = np.column_stack([freqs] + [columns[k] for k in names])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_MHz"] + names)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
    return Path(path)


def read_spectrum_csv(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    if not header or header[0] != "freq_MHz":
        raise ConfigError(f"{path}: first column must be freq_MHz")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], {k: data[:, n + 1] for n, k in enumerate(header[1:])}


def write_levels_csv(path, levels) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "energy_MHz"])
        for k, e in enumerate(levels.ground.energies):
            w.writerow([f"{k + 1}g", repr(float(e))])
        for k, e in enumerate(levels.excited.energies):
            w.writerow([f"{k + 1}e", repr(float(e))])
    return Path(path)


def write_transitions_csv(path, levels) -> Path:
    t = levels.transition_offsets()
    gam = levels.branching()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["transition", "T0_MHz", "gamma"])
        for i in range(6):
            for j in range(6):
                w.writerow([format_transition(i + 1, j + 1), repr(float(t[i, j])), repr(float(gam[i, j]))])
    return Path(path)


def write_catalog_csv(path, catalog) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "offset_MHz", "i", "j", "i2", "j2", "multiplicity"])
        for kind, lines in (("hole", catalog.holes), ("antihole", catalog.antiholes)):
            for ln in lines:
                w.writerow([kind, repr(float(ln.offset)), *ln.provenance[0], len(ln.provenance)])
    return Path(path)


@dataclass
class RunManifest:
    command: str
    config_paths: dict[str, str]
    input_digests: dict[str, str]
    parameters: dict
    outputs: list[str] = field(default_factory=list)
    version: str = __version__
    timestamp: str = ""

    @classmethod
    def create(cls, command: str, inputs: dict[str, str | None], parameters: dict) -> "RunManifest":
        paths = {k: str(Path(v).resolve()) for k, v in inputs.items() if v}
        digests = {k: digest(v) for k, v in paths.items()}
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        return cls(command, paths, digests, parameters, timestamp=stamp)

    def write(self, out_dir) -> Path:
        return write_json(Path(out_dir) / "manifest.json", asdict(self))
