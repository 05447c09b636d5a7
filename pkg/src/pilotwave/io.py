"""On-disk formats: QHDF binary grid dumps and the plot-ready CSV files.

QHDF layout (little-endian): b"QHDF", u32 version, u32 ndim, ndim x u32
counts, ndim x (f64 lower, f64 upper), then row-major f64 samples.  Complex
fields store two interleaved f64 per point; the reader tells them apart by
payload size.  The boundary condition is not stored, so readers supply it.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from pilotwave.fields import PERIODIC, ComplexField, Field, Grid, RealField

MAGIC = b"QHDF"
VERSION = 1
_FMT = ".17g"

PathLike = Union[str, Path]


class FormatError(ValueError):
    pass


def _num(x: float) -> str:
    return format(float(x), _FMT)


def encode_qhdf(field: Field) -> bytes:
    grid = field.grid
    head = [MAGIC, struct.pack("<II", VERSION, grid.ndim), struct.pack(f"<{grid.ndim}I", *grid.counts)]
    for lo, hi in zip(grid.lower, grid.upper):
        head.append(struct.pack("<dd", lo, hi))
    values = np.ascontiguousarray(field.values)
    if np.iscomplexobj(values):
        flat = values.astype("<c16").view("<f8")
    else:
        flat = values.astype("<f8")
    return b"".join(head) + flat.tobytes(order="C")


def decode_qhdf(data: bytes, boundary: str = PERIODIC) -> Field:
    if data[:4] != MAGIC:
        raise FormatError("not a QHDF dump (bad magic)")
    if len(data) < 12:
        raise FormatError("truncated QHDF header")
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported QHDF version {version}")
    if ndim not in (1, 2):
        raise FormatError(f"unsupported dimension {ndim}")
    pos = 12
    counts = struct.unpack_from(f"<{ndim}I", data, pos)
    pos += 4 * ndim
    bounds = [struct.unpack_from("<dd", data, pos + 16 * i) for i in range(ndim)]
    pos += 16 * ndim
    payload = np.frombuffer(data, dtype="<f8", offset=pos)
    size = int(np.prod(counts))
    grid = Grid(tuple(b[0] for b in bounds), tuple(b[1] for b in bounds), tuple(counts), boundary)
    if payload.size == size:
        return RealField(grid, payload.reshape(counts).astype(float))
    if payload.size == 2 * size:
        return ComplexField(grid, payload.view("<c16").reshape(counts).astype(complex))
    raise FormatError(f"payload holds {payload.size} values; expected {size} or {2 * size}")


def write_qhdf(path: PathLike, field: Field) -> Path:
    path = Path(path)
    path.write_bytes(encode_qhdf(field))
    return path


def read_qhdf(path: PathLike, boundary: str = PERIODIC) -> Field:
    return decode_qhdf(Path(path).read_bytes(), boundary)


def snapshot_name(step: int) -> str:
    return f"psi_{step}.qhdf"


def _write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_trajectories(path: PathLike, times: np.ndarray, positions: np.ndarray,
                       sample_index: Sequence[int] | None = None) -> Path:
    """One row per (sample time, particle); escaped particles are written as nan."""
    n_t, n_p, ndim = positions.shape
    idx = range(n_t) if sample_index is None else sample_index
    header = ["t", "particle_id", "x", "y"][:2 + ndim]
    path = Path(path)
    with path.open("w") as fh:
        fh.write(",".join(header) + "\n")
        for j in idx:
            t = _num(times[j])
            coords = [[_num(v) for v in col] for col in positions[j].T]
            fh.writelines(f"{t},{k},{','.join(c[k] for c in coords)}\n" for k in range(n_p))
    return path


def read_trajectories(path: PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of write_trajectories: (times (n_t,), positions (n_t, N, ndim))."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times, first = np.unique(data[:, 0], return_index=True)
    n_p = int(data[:, 1].max()) + 1
    if data.shape[0] != times.size * n_p:
        raise FormatError("trajectory file is not a complete (time, particle) table")
    order = np.argsort(first)
    times = times[order]
    positions = data[:, 2:].reshape(times.size, n_p, -1)
    return times, positions


def write_spectrum(path: PathLike, energies: Sequence[float]) -> Path:
    return _write_rows(path, ["n", "energy"], ((n, _num(e)) for n, e in enumerate(energies)))


def read_spectrum(path: PathLike) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)[:, 1]


def write_classical(path: PathLike, times, q, p) -> Path:
    d = q.shape[1]
    header = ["t"] + [f"q{i}" for i in range(d)] + [f"p{i}" for i in range(d)]
    rows = ([_num(t)] + [_num(v) for v in qi] + [_num(v) for v in pi] for t, qi, pi in zip(times, q, p))
    return _write_rows(path, header, rows)


def write_variational(path: PathLike, times, xi, eta, invariant) -> Path:
    d = xi.shape[1]
    header = ["t"] + [f"xi{i}" for i in range(d)] + [f"eta{i}" for i in range(d)] + ["C"]
    rows = ([_num(t)] + [_num(v) for v in a] + [_num(v) for v in b] + [_num(c)]
            for t, a, b, c in zip(times, xi, eta, invariant))
    return _write_rows(path, header, rows)


def write_lyapunov(path: PathLike, log_growth, running) -> Path:
    rows = ((k, _num(g), _num(r)) for k, (g, r) in enumerate(zip(log_growth, running)))
    return _write_rows(path, ["interval", "log_growth", "lambda_running"], rows)


def write_histogram(path: PathLike, edges, observed, expected) -> Path:
    rows = ((_num(a), _num(b), _num(o), _num(e))
            for a, b, o, e in zip(edges[:-1], edges[1:], observed, expected))
    return _write_rows(path, ["left", "right", "observed", "expected"], rows)
