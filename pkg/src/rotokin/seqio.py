"""File formats: pose-sequence JSONL, tree/shape JSON, testbed configs.

A pose-sequence file is one JSON object per line: a header line with
``type: "pose_sequence"`` and stream metadata, then one frame per line
with fields ``ts``, ``pose2d`` and optional ``pose3d``, ``rotations`` and
``converged``. Rotations are representation-tagged per frame
(``{"rep": "matrix"|"quat"|"aa", "data": [...]}``) with matrices stored
row-major, quaternions as [w, x, y, z] and axis-angle as [vx, vy, vz].

Floats are emitted via their shortest round-trip representation, so
``parse`` then ``emit`` is lossless and emitting a parsed file reproduces
it byte for byte (field order is normalized on emit). Parsing is
streaming: iter_frames holds one line at a time.
"""

import json

import numpy as np

from . import so3
from .kinematics import BodyShape, KinematicTree, PoseSequence
from .testbed import RegressorConfig, SyntheticSpec


class ParseError(ValueError):
    """Malformed input file; message carries the file path and line number."""


def _to_rep(rotations, representation):
    if representation == so3.REP_MATRIX:
        return rotations.reshape(rotations.shape[0], -1, 9)
    if representation == so3.REP_QUAT:
        return so3.matrix_to_quat(rotations, validate=False)
    if representation == so3.REP_AA:
        return so3.matrix_to_aa(rotations, validate=False)
    raise ValueError(f"unknown representation tag {representation!r}")


def _from_rep(values, representation):
    values = np.asarray(values, dtype=np.float64)
    if representation == so3.REP_MATRIX:
        return values.reshape(-1, 3, 3)
    if representation == so3.REP_QUAT:
        return so3.quat_to_matrix(values)
    if representation == so3.REP_AA:
        return so3.aa_to_matrix(values)
    raise ValueError(f"unknown representation tag {representation!r}")


def emit_sequence(seq, fh, representation=so3.REP_MATRIX):
    """Write one PoseSequence as JSONL to an open text file."""
    header = {
        "type": "pose_sequence",
        "frame_rate": seq.frame_rate,
        "joint_count": int(seq.pose2d.shape[1]),
        "provenance": seq.provenance,
    }
    fh.write(json.dumps(header) + "\n")
    rep_frames = None
    if seq.rotations is not None:
        rep_frames = _to_rep(seq.rotations, representation)
    for i in range(len(seq)):
        frame = {"ts": float(seq.timestamps[i]), "pose2d": seq.pose2d[i].tolist()}
        if seq.pose3d is not None:
            frame["pose3d"] = seq.pose3d[i].tolist()
        if rep_frames is not None:
            frame["rotations"] = {"rep": representation, "data": rep_frames[i].tolist()}
        if seq.converged is not None:
            frame["converged"] = bool(seq.converged[i])
        fh.write(json.dumps(frame) + "\n")


def write_sequence(path, seq, representation=so3.REP_MATRIX):
    with open(path, "w", encoding="utf-8") as fh:
        emit_sequence(seq, fh, representation)


def iter_frames(fh, path="<stream>"):
    """Stream (line_number, record) pairs from an open pose-sequence file.

    The header line is validated and skipped; memory use is one line at a
    time regardless of file length.
    """
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
        if lineno == 1:
            if record.get("type") != "pose_sequence":
                raise ParseError(f"{path}:1: expected a pose_sequence header line")
            yield lineno, record
            continue
        for fieldname in ("ts", "pose2d"):
            if fieldname not in record:
                raise ParseError(f"{path}:{lineno}: frame missing field '{fieldname}'")
        if "rotations" in record:
            rot = record["rotations"]
            if not isinstance(rot, dict) or "rep" not in rot or "data" not in rot:
                raise ParseError(f"{path}:{lineno}: rotations must carry 'rep' and 'data'")
            if rot["rep"] not in so3.REPRESENTATIONS:
                raise ParseError(f"{path}:{lineno}: unknown representation tag {rot['rep']!r}")
        yield lineno, record


def read_sequence(path):
    """Load a pose-sequence file; rotations come back as matrices."""
    timestamps, pose2d, pose3d, rot, converged = [], [], [], [], []
    header = None
    with open(path, encoding="utf-8") as fh:
        for lineno, record in iter_frames(fh, path):
            if header is None:
                header = record
                continue
            timestamps.append(record["ts"])
            pose2d.append(record["pose2d"])
            if "pose3d" in record:
                pose3d.append(record["pose3d"])
            if "rotations" in record:
                rot.append(_from_rep(record["rotations"]["data"], record["rotations"]["rep"]))
            if "converged" in record:
                converged.append(record["converged"])
    if header is None:
        raise ParseError(f"{path}: empty file (missing header line)")
    n = len(timestamps)
    if pose3d and len(pose3d) != n:
        raise ParseError(f"{path}: pose3d present on some frames but not all")
    if rot and len(rot) != n:
        raise ParseError(f"{path}: rotations present on some frames but not all")
    return PoseSequence(
        timestamps=np.asarray(timestamps, dtype=np.float64),
        pose2d=np.asarray(pose2d, dtype=np.float64),
        pose3d=np.asarray(pose3d, dtype=np.float64) if pose3d else None,
        rotations=np.stack(rot) if rot else None,
        frame_rate=float(header.get("frame_rate", 30.0)),
        provenance=str(header.get("provenance", "")),
        converged=np.asarray(converged, dtype=bool) if converged else None,
    )


def save_tree(path, tree):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tree.to_dict(), fh, indent=2)
        fh.write("\n")


def load_shape(path):
    with open(path, encoding="utf-8") as fh:
        return BodyShape.from_dict(json.load(fh))


def save_shape(path, shape):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(shape.to_dict(), fh, indent=2)
        fh.write("\n")


def load_config(path):
    """Read a testbed config file: synthetic spec plus grid/train settings.

    Layout: ``{"synthetic": {...SyntheticSpec fields}, "cells":
    [{...RegressorConfig fields}, ...]}``; both sections optional.
    """
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    spec = None
    if "synthetic" in data:
        raw = dict(data["synthetic"])
        if "camera_offset" in raw:
            raw["camera_offset"] = tuple(raw["camera_offset"])
        try:
            spec = SyntheticSpec(**raw)
        except TypeError as exc:
            raise ParseError(f"{path}: bad synthetic section ({exc})") from exc
    cells = None
    if "cells" in data:
        try:
            cells = [RegressorConfig(**cell) for cell in data["cells"]]
        except TypeError as exc:
            raise ParseError(f"{path}: bad cell config ({exc})") from exc
    return spec, cells
