"""Pulse CSV and result JSON files."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import ControlPulse

PULSE_COLUMNS = ("time_ns", "delta1_GHz", "delta2_GHz", "optimizable")
FILTERED_COLUMNS = ("delta1_filtered_GHz", "delta2_filtered_GHz")


def write_pulse_csv(path, pulse: ControlPulse, filtered: Optional[np.ndarray] = None) -> Path:
    """One row per pixel, buffers included; ``time_ns`` is the pixel start.

    ``filtered`` (shape ``(2, n_total)``) adds the samples the qubits see.
    """
    path = Path(path)
    samples = pulse.samples()
    mask = pulse.optimizable
    header = list(PULSE_COLUMNS) + (list(FILTERED_COLUMNS) if filtered is not None else [])
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j in range(pulse.n_total):
            row = [repr(float(j * pulse.dt)), repr(float(samples[0, j])), repr(float(samples[1, j])), int(mask[j])]
            if filtered is not None:
                row += [repr(float(filtered[0, j])), repr(float(filtered[1, j]))]
            writer.writerow(row)
    return path


def read_pulse_csv(path, buffer_values=None) -> ControlPulse:
    """Inverse of :func:`write_pulse_csv`.

    Buffer values are read from the buffer rows; a file without buffers
    takes ``buffer_values`` (default: the first pixel of each channel).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(PULSE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = list(reader)
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least two pixels")
    t = np.array([float(r["time_ns"]) for r in rows])
    d = np.array([[float(r["delta1_GHz"]), float(r["delta2_GHz"])] for r in rows]).T
    opt = np.array([int(r["optimizable"]) for r in rows], dtype=bool)
    steps = np.diff(t)
    dt = float(steps.mean())
    if not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
        raise ValueError(f"{path}: pixel times are not evenly spaced")
    idx = np.flatnonzero(opt)
    if idx.size == 0:
        raise ValueError(f"{path}: no optimizable pixels")
    n_lead, n_trail = idx[0], len(rows) - 1 - idx[-1]
    if n_lead != n_trail or idx.size != idx[-1] - idx[0] + 1:
        raise ValueError(f"{path}: buffers must be equal and surround one contiguous window")
    if n_lead:
        buffers = d[:, ~opt]
        if np.ptp(buffers, axis=1).max() > 0:
            raise ValueError(f"{path}: buffer pixels are not constant")
        buffer_values = tuple(buffers[:, 0])
    elif buffer_values is None:
        buffer_values = tuple(d[:, 0])
    return ControlPulse(dt, d[:, opt], int(n_lead), tuple(buffer_values))


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
