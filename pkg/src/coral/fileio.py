"""Readers and writers for ASCII point clouds, pose files and reports."""
from __future__ import annotations

import csv
import io
import json
import math
import re
from pathlib import Path

import numpy as np

from .cloud import PointCloud, RigidTransform, apply_transform
from .errors import DataError, FormatError, InvalidTransformError, ParseError

MAX_REJECTED_FRACTION = 0.01
FORMATS = ("xyz-ascii", "pcd-ascii")


def guess_format(path) -> str:
    return "pcd-ascii" if str(path).lower().endswith(".pcd") else "xyz-ascii"


def _finish(rows: list[tuple[float, float, float]], rejected: int, path, origin=None) -> PointCloud:
    total = len(rows) + rejected
    if total and rejected > MAX_REJECTED_FRACTION * total:
        raise DataError(f"{path}: {rejected} of {total} points have non-finite coordinates")
    pts = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return PointCloud(pts, origin if origin is not None else np.zeros(3))


def _read_xyz(path: Path) -> PointCloud:
    rows, rejected, origin = [], 0, None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("# sensor_origin"):
                try:
                    origin = np.array([float(v) for v in line.split()[2:5]])
                except ValueError:
                    raise ParseError(f"{path}: bad sensor_origin comment", lineno) from None
                continue
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 3:
                raise ParseError(f"{path}: expected 3 values, got {len(parts)}", lineno)
            try:
                xyz = tuple(float(v) for v in parts)
            except ValueError:
                raise ParseError(f"{path}: not a number in {line!r}", lineno) from None
            if all(map(math.isfinite, xyz)):
                rows.append(xyz)
            else:
                rejected += 1
    return _finish(rows, rejected, path, origin)


def _read_pcd(path: Path) -> PointCloud:
    header: dict[str, list[str]] = {}
    rows, rejected = [], 0
    with open(path, errors="replace") as fh:
        lineno = 0
        for line in fh:
            lineno += 1
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            key, *vals = s.split()
            header[key.upper()] = vals
            if key.upper() == "DATA":
                break
        else:
            raise ParseError(f"{path}: no DATA line in header", lineno)
        if [v.lower() for v in header["DATA"]] != ["ascii"]:
            raise FormatError(f"{path}: only ASCII PCD is supported (DATA {' '.join(header['DATA'])})")
        fields = [f.lower() for f in header.get("FIELDS", [])]
        counts = [int(c) for c in header.get("COUNT", ["1"] * len(fields))]
        if len(counts) != len(fields):
            raise ParseError(f"{path}: COUNT and FIELDS disagree", None)
        cols, pos = {}, 0
        for f, c in zip(fields, counts):
            cols[f] = pos
            pos += c
        if not all(k in cols for k in "xyz"):
            raise FormatError(f"{path}: FIELDS must contain x, y and z")
        ix, iy, iz = cols["x"], cols["y"], cols["z"]
        declared = int(header["POINTS"][0]) if "POINTS" in header else None
        origin = None
        if "VIEWPOINT" in header and len(header["VIEWPOINT"]) >= 3:
            origin = np.array([float(v) for v in header["VIEWPOINT"][:3]])
        for line in fh:
            lineno += 1
            parts = line.split()
            if not parts:
                continue
            if len(parts) != pos:
                raise ParseError(f"{path}: expected {pos} values, got {len(parts)}", lineno)
            try:
                xyz = (float(parts[ix]), float(parts[iy]), float(parts[iz]))
            except ValueError:
                raise ParseError(f"{path}: not a number", lineno) from None
            if all(map(math.isfinite, xyz)):
                rows.append(xyz)
            else:
                rejected += 1
    if declared is not None and declared != len(rows) + rejected:
        raise ParseError(f"{path}: header declares {declared} points, found {len(rows) + rejected}")
    return _finish(rows, rejected, path, origin)


def load_cloud(path, fmt: str | None = None) -> PointCloud:
    """Read an ASCII cloud; ``fmt`` is ``xyz-ascii`` or ``pcd-ascii`` (default: by extension)."""
    path = Path(path)
    fmt = fmt or guess_format(path)
    try:
        if fmt == "xyz-ascii":
            return _read_xyz(path)
        if fmt == "pcd-ascii":
            return _read_pcd(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    raise FormatError(f"unknown cloud format {fmt!r}; expected one of {FORMATS}")


def save_cloud(cloud: PointCloud, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or guess_format(path)
    body = "".join(f"{x:.9f} {y:.9f} {z:.9f}\n" for x, y, z in cloud.points.tolist())
    if fmt == "xyz-ascii":
        ox, oy, oz = cloud.sensor_origin
        path.write_text(f"# sensor_origin {ox:.9f} {oy:.9f} {oz:.9f}\n" + body)
    elif fmt == "pcd-ascii":
        n = len(cloud)
        vp = " ".join(f"{v:.9f}" for v in cloud.sensor_origin)
        head = ("# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\nFIELDS x y z\n"
                "SIZE 8 8 8\nTYPE F F F\nCOUNT 1 1 1\n"
                f"WIDTH {n}\nHEIGHT 1\nVIEWPOINT {vp} 1 0 0 0\nPOINTS {n}\nDATA ascii\n")
        path.write_text(head + body)
    else:
        raise FormatError(f"unknown cloud format {fmt!r}")


# -- poses ---------------------------------------------------------------

POSE_LAYOUTS = ("auto", "3x4", "4x4", "eth")
REORTHO_MAX = 1e-4


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation (polar factor) of a nearly orthonormal matrix."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def _pose_from_values(vals: list[float], layout: str, where: str) -> RigidTransform:
    n = len(vals)
    if layout == "eth":
        vals = vals[2:]
        n = len(vals)
        layout = "4x4"
    if layout == "auto":
        layout = {12: "3x4", 16: "4x4"}.get(n)
        if layout is None:
            raise FormatError(f"{where}: expected 12 or 16 columns, got {n}")
    want = 12 if layout == "3x4" else 16
    if n != want:
        raise FormatError(f"{where}: layout {layout} needs {want} columns, got {n}")
    m = np.array(vals[:12]).reshape(3, 4)
    if not np.all(np.isfinite(m)):
        raise FormatError(f"{where}: non-finite pose entry")
    if layout == "4x4" and np.max(np.abs(np.array(vals[12:]) - [0, 0, 0, 1])) > 1e-9:
        raise FormatError(f"{where}: last row of a 4x4 pose must be 0 0 0 1")
    R, t = m[:, :3], m[:, 3]
    err = max(np.max(np.abs(R.T @ R - np.eye(3))), abs(np.linalg.det(R) - 1.0))
    if err > REORTHO_MAX:
        raise InvalidTransformError(f"{where}: rotation is not orthonormal (error {err:.2e})")
    if err > 1e-9:
        R = orthonormalize(R)
    return RigidTransform(R, t)


def load_poses(path, layout: str = "auto") -> list[RigidTransform]:
    """One pose per numeric row of a comma- or whitespace-separated file.

    A leading non-numeric row (column header) and ``#`` comments are skipped.  ``eth``
    layout drops two leading columns (id, timestamp) before a 4x4 matrix.
    """
    if layout not in POSE_LAYOUTS:
        raise FormatError(f"unknown pose layout {layout!r}; expected one of {POSE_LAYOUTS}")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    poses = []
    first = True
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p for p in re.split(r"[,\s]+", line) if p]
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            if first:
                first = False
                continue  # column header
            raise ParseError(f"{path}: non-numeric pose row", lineno) from None
        first = False
        poses.append(_pose_from_values(vals, layout, f"{path}:{lineno}"))
    return poses


def save_poses(poses: list[RigidTransform], path) -> None:
    lines = [",".join(repr(v) for v in p.as_matrix()[:3].reshape(-1).tolist()) for p in poses]
    Path(path).write_text("\n".join(lines) + "\n")


def load_posed_cloud(path, pose: RigidTransform, fmt: str | None = None) -> PointCloud:
    """A scan stored in its sensor frame, mapped into the world frame by ``pose``."""
    return apply_transform(load_cloud(path, fmt), pose)


# -- reports -------------------------------------------------------------

REPORT_COLUMNS = ("sequence", "environment", "total", "tp", "fp", "tn", "fn", "accuracy")


def report_csv(report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for seq, c in report.per_sequence.items():
        w.writerow([seq, report.environments.get(seq, ""), c.total, c.tp, c.fp, c.tn, c.fn,
                    f"{c.accuracy:.6f}"])
    c = report.overall
    w.writerow(["overall", "", c.total, c.tp, c.fp, c.tn, c.fn, f"{c.accuracy:.6f}"])
    return buf.getvalue()


def report_summary(report) -> dict:
    c = report.overall
    envs = {}
    for env in sorted(set(report.environments.values())):
        envs[env] = report.accuracy_for({env})
    return {
        "protocol": report.protocol,
        "method": report.method,
        "accuracy": c.accuracy,
        "confusion": {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn},
        "evaluated": c.total,
        "skipped_folds": report.skipped_folds,
        "per_environment": envs,
        "per_sequence": {
            seq: {"environment": report.environments.get(seq, ""), "accuracy": v.accuracy,
                  "tp": v.tp, "fp": v.fp, "tn": v.tn, "fn": v.fn}
            for seq, v in report.per_sequence.items()
        },
        "parameters": report.parameters,
    }


def write_report(report, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "report.csv", out / "summary.json"
    csv_path.write_text(report_csv(report))
    json_path.write_text(json.dumps(report_summary(report), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def write_surface(rows, path) -> None:
    lines = ["dx dy dtheta Q"] + [f"{dx:.6f} {dy:.6f} {dth:.6f} {q:.9f}" for dx, dy, dth, q in rows]
    Path(path).write_text("\n".join(lines) + "\n")
