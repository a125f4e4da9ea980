"""CSV/JSON artifacts: waveforms, realised trajectories and run manifests."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidArgument
from .waveform import RealizedTrajectory, VoltageWaveform

MANIFEST_NAME = "manifest.json"


def _fmt(x) -> str:
    return repr(float(x))


def write_waveform_csv(waveform: VoltageWaveform, path, comment: str | None = None) -> None:
    """``t,ch_1,...,ch_K`` in seconds and volts."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"ch_{k + 1}" for k in range(waveform.n_channels)])
        for t, row in zip(waveform.times, waveform.samples):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row])


def read_waveform_csv(path, vmax: float | None = None, slew: float | None = None) -> VoltageWaveform:
    rows = [r for r in csv.reader(l for l in open(path) if not l.startswith("#")) if r]
    if not rows or rows[0][0].strip() != "t":
        raise InvalidArgument(f"{path}: expected header t,ch_1,...")
    data = np.array([[float(c) for c in r] for r in rows[1:]])
    if data.shape[0] < 2:
        raise InvalidArgument(f"{path}: need at least two samples")
    rate = 1.0 / (data[1, 0] - data[0, 0])
    kwargs = {}
    if vmax is not None:
        kwargs["vmax"] = vmax
    if slew is not None:
        kwargs["slew"] = slew
    return VoltageWaveform(rate, data[:, 1:], **kwargs)


def write_trajectory_csv(traj: RealizedTrajectory, path, comment: str | None = None) -> None:
    """``t,z,v,omega,depth`` in s, m, m/s, rad/s and eV."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "z", "v", "omega", "depth"])
        for row in zip(traj.times, traj.position, traj.velocity, traj.omega, traj.depth):
            w.writerow([_fmt(x) for x in row])


def write_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_manifest(out_dir, config_bytes: bytes | None, seed: int | None, outputs,
                   command: str) -> dict:
    """Provenance record next to the artifacts it describes."""
    manifest = {
        "config_sha256": sha256_bytes(config_bytes) if config_bytes is not None else None,
        "seed": seed,
        "tool_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "command": command,
        "numpy_version": np.__version__,
        "outputs": sorted(str(Path(p).name) for p in outputs),
    }
    write_json(manifest, Path(out_dir) / MANIFEST_NAME)
    return manifest
