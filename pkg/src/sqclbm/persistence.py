"""File formats: binary datasets, JSON checkpoints, field dumps and CSV outputs.

Dataset file (little-endian)::

    offset  size  field
    0       4     magic b"SQCD"
    4       4     format version, uint32 (currently 1)
    8       8     sample count N, uint64
    16      32    SHA-256 digest of the generating DataGenConfig (zeros if unknown)
    48      144N  N records of 18 float64: 9 pre-collision then 9 post-collision

Field dump (little-endian)::

    0       4     magic b"SQCF"
    4       4     format version, uint32 (currently 1)
    8       4     nx, uint32
    12      4     ny, uint32
    16      8     time step t, uint64
    24      24*nx*ny  (rho, ux, uy) float64 triples, x-major: node (x, y) is record x*ny + y
"""

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .circuit import Architecture
from .hybrid import FieldSnapshot
from .lattice import VELOCITIES
from .training import Checkpoint, Dataset

DATASET_MAGIC = b"SQCD"
DATASET_VERSION = 1
_DATASET_HEADER = struct.Struct("<4sIQ32s")
_RECORD_BYTES = 18 * 8

CHECKPOINT_FORMAT = "sqclbm-checkpoint"
CHECKPOINT_VERSION = 1

FIELD_MAGIC = b"SQCF"
FIELD_VERSION = 1
_FIELD_HEADER = struct.Struct("<4sIIIQ")

CONSERVATION_TOL = 1e-12


class PersistenceError(ValueError):
    """Base class for unreadable or invalid files."""


class CorruptFileError(PersistenceError):
    pass


class UnsupportedVersionError(PersistenceError):
    pass


class RecordValidationError(PersistenceError):
    pass


# --- datasets -----------------------------------------------------------------


def write_dataset(path, dataset):
    digest = bytes.fromhex(dataset.info.get("config_digest", "00" * 32))
    body = np.concatenate([dataset.f_pre, dataset.f_post], axis=1).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(dataset), digest))
        fh.write(body.tobytes())


def check_conservation(f_pre, f_post, tol=CONSERVATION_TOL):
    """Index of the first record whose mass or momentum differs by more than ``tol``, else ``None``."""
    d = f_post - f_pre
    bad = (np.abs(d.sum(axis=1)) > tol) | np.any(np.abs(d @ VELOCITIES) > tol, axis=1)
    return int(np.argmax(bad)) if bad.any() else None


def read_dataset(path, validate=True):
    raw = Path(path).read_bytes()
    if len(raw) < _DATASET_HEADER.size:
        raise CorruptFileError(
            f"{path}: truncated header: expected {_DATASET_HEADER.size} bytes, found {len(raw)}"
        )
    magic, version, count, digest = _DATASET_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise UnsupportedVersionError(f"{path}: dataset format version {version} is not supported")
    expected = _DATASET_HEADER.size + count * _RECORD_BYTES
    if len(raw) != expected:
        raise CorruptFileError(
            f"{path}: size mismatch for {count} records: expected {expected} bytes, found {len(raw)}"
        )
    body = np.frombuffer(raw, dtype="<f8", offset=_DATASET_HEADER.size).reshape(count, 18)
    f_pre, f_post = body[:, :9].astype(np.float64), body[:, 9:].astype(np.float64)
    if validate:
        if not np.all(np.isfinite(body)):
            raise RecordValidationError(f"{path}: non-finite values in records")
        bad = check_conservation(f_pre, f_post)
        if bad is not None:
            raise RecordValidationError(
                f"{path}: record {bad} violates mass/momentum conservation beyond {CONSERVATION_TOL}"
            )
    return Dataset(f_pre, f_post, {"config_digest": digest.hex()})


# --- checkpoints --------------------------------------------------------------


def save_checkpoint(path, ckpt):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "layers": [k.value for k in ckpt.architecture.layers],
        "theta": [float(t).hex() for t in ckpt.theta],
        "iteration": int(ckpt.iteration),
        "seed": int(ckpt.seed),
        "train_config": ckpt.train_config,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_checkpoint(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CorruptFileError(f"{path}: not a {CHECKPOINT_FORMAT} document")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: checkpoint format version {doc.get('format_version')} is not supported"
        )
    try:
        arch = Architecture(tuple(doc["layers"]))
        theta = np.array([float.fromhex(t) if isinstance(t, str) else float(t) for t in doc["theta"]])
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptFileError(f"{path}: malformed checkpoint ({exc})") from None
    if theta.shape[0] != arch.n_params:
        raise CorruptFileError(
            f"{path}: theta has {theta.shape[0]} entries but {arch.n_params} layers are listed"
        )
    return Checkpoint(arch, theta, doc.get("train_config", {}), int(doc.get("iteration", 0)), int(doc.get("seed", 0)))


# --- simulation outputs -------------------------------------------------------


def write_field_dump(path, snap):
    nx, ny = snap.shape
    body = np.stack([snap.rho, snap.ux, snap.uy], axis=-1).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_FIELD_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, nx, ny, int(snap.t)))
        fh.write(body.tobytes())


def read_field_dump(path):
    raw = Path(path).read_bytes()
    if len(raw) < _FIELD_HEADER.size:
        raise CorruptFileError(f"{path}: truncated header: expected {_FIELD_HEADER.size} bytes, found {len(raw)}")
    magic, version, nx, ny, t = _FIELD_HEADER.unpack_from(raw)
    if magic != FIELD_MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}, expected {FIELD_MAGIC!r}")
    if version != FIELD_VERSION:
        raise UnsupportedVersionError(f"{path}: field dump version {version} is not supported")
    expected = _FIELD_HEADER.size + 24 * nx * ny
    if len(raw) != expected:
        raise CorruptFileError(f"{path}: size mismatch: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=_FIELD_HEADER.size).reshape(nx, ny, 3).astype(np.float64)
    return FieldSnapshot(int(t), body[..., 0].copy(), body[..., 1].copy(), body[..., 2].copy())


def write_field_csv(path, snap):
    nx, ny = snap.shape
    x, y = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    write_csv(path, ["x", "y", "rho", "ux", "uy"],
              np.column_stack([x.ravel(), y.ravel(), snap.rho.ravel(), snap.ux.ravel(), snap.uy.ravel()]))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, np.array([[float(v) for v in row] for row in r])


def write_loss_curve(path, report):
    write_csv(path, ["iteration", "train_loss", "val_mse", "alpha"], report.loss_curve)
