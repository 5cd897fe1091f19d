"""Point cloud, trajectory and sequence files, and the file-to-file pipeline run.

Point clouds: PCD v0.7 (``DATA ascii`` or little-endian ``DATA binary``) and
a plain text format with one ``x y z`` point per line. Trajectories: one
``stamp tx ty tz qx qy qz qw`` line per pose. A sequence directory holds
``frames.txt`` (``stamp relative/path`` lines) and optionally
``groundtruth.txt``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from pathlib import Path

import numpy as np

from . import config as config_mod
from .core import PointCloud, RigidTransform, drop_nonfinite
from .errors import DataError, ParseError
from .evaluation import TimingRecord, Trajectory, ate_rmse, endpoint_distance, timing_summary

log = logging.getLogger(__name__)

PCD_TYPES = {("F", 4): "f4", ("F", 8): "f8", ("I", 1): "i1", ("I", 2): "i2", ("I", 4): "i4", ("I", 8): "i8",
             ("U", 1): "u1", ("U", 2): "u2", ("U", 4): "u4", ("U", 8): "u8"}
PCD_KEYS = ("VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT", "POINTS", "DATA")


def _pcd_header(raw: bytes):
    """Parse the header; returns (fields dict, byte offset of the data section)."""
    header = {}
    offset = 0
    while True:
        end = raw.find(b"\n", offset)
        if end < 0:
            raise ParseError(f"malformed PCD header at byte offset {offset}: no DATA line")
        line = raw[offset:end].decode("ascii", errors="replace").strip()
        start, offset = offset, end + 1
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        key = key.upper()
        if key not in PCD_KEYS:
            raise ParseError(f"malformed PCD header at byte offset {start}: unknown key {key!r}")
        header[key] = rest.split()
        if key == "DATA":
            return header, offset


def _pcd_dtype(header, start):
    try:
        fields = header["FIELDS"]
        sizes = [int(s) for s in header["SIZE"]]
        types = [t.upper() for t in header["TYPE"]]
        counts = [int(c) for c in header.get("COUNT", ["1"] * len(fields))]
        points = int(header["POINTS"][0]) if "POINTS" in header else int(header["WIDTH"][0]) * int(header["HEIGHT"][0])
    except (KeyError, ValueError, IndexError) as e:
        raise ParseError(f"malformed PCD header at byte offset {start}: {e}") from None
    if not len(fields) == len(sizes) == len(types) == len(counts):
        raise ParseError(f"malformed PCD header at byte offset {start}: FIELDS/SIZE/TYPE/COUNT lengths differ")
    if not {"x", "y", "z"} <= set(fields):
        raise DataError(f"unsupported PCD field layout {fields}: x, y and z are required")
    parts = []
    for name, size, kind, count in zip(fields, sizes, types, counts):
        code = PCD_TYPES.get((kind, size))
        if code is None:
            raise DataError(f"unsupported PCD field {name!r}: TYPE {kind} SIZE {size}")
        parts.append((name if name != "_" else f"_pad{len(parts)}", "<" + code, (count,) if count > 1 else ()))
    return np.dtype(parts), points


def read_pcd(path):
    """Returns (cloud, number of non-finite points dropped)."""
    raw = Path(path).read_bytes()
    header, offset = _pcd_header(raw)
    dtype, n = _pcd_dtype(header, 0)
    mode = header["DATA"][0].lower() if header["DATA"] else ""
    if mode == "ascii":
        text = raw[offset:].decode("ascii", errors="replace").split()
        ncol = sum(int(np.prod(dtype[name].shape or (1,))) for name in dtype.names)
        if len(text) < n * ncol:
            raise ParseError(f"truncated ASCII data at byte offset {offset}: expected {n} points")
        try:
            flat = np.array(text[: n * ncol], dtype=np.float64).reshape(n, ncol)
        except ValueError as e:
            raise ParseError(f"bad ASCII value after byte offset {offset}: {e}") from None
        col = {}
        i = 0
        for name in dtype.names:
            col[name] = i
            i += int(np.prod(dtype[name].shape or (1,)))
        pts = flat[:, [col["x"], col["y"], col["z"]]]
    elif mode == "binary":
        need = n * dtype.itemsize
        if len(raw) - offset < need:
            raise ParseError(
                f"truncated binary PCD data at byte offset {len(raw)}: expected {need} bytes after offset {offset}"
            )
        rec = np.frombuffer(raw, dtype=dtype, count=n, offset=offset)
        pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    else:
        raise DataError(f"unsupported PCD DATA mode {mode!r} (ascii and binary are supported)")
    pts, dropped = drop_nonfinite(pts)
    return PointCloud(pts), dropped


def write_pcd(path, points, binary=True, intensity=None):
    """Write x y z (float64, bitwise exact) and optionally intensity (float32)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if intensity is not None:
        fields.append(("intensity", "<f4"))
    rec = np.empty(n, dtype=fields)
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    if intensity is not None:
        rec["intensity"] = intensity
    names = " ".join(f[0] for f in fields)
    sizes = " ".join(f[1][-1] for f in fields)
    header = (
        "# .PCD v0.7 - Point Cloud Data file format\n"
        "VERSION 0.7\n"
        f"FIELDS {names}\n"
        f"SIZE {sizes}\n"
        f"TYPE {' '.join('F' for _ in fields)}\n"
        f"COUNT {' '.join('1' for _ in fields)}\n"
        f"WIDTH {n}\n"
        "HEIGHT 1\n"
        "VIEWPOINT 0 0 0 1 0 0 0\n"
        f"POINTS {n}\n"
        f"DATA {'binary' if binary else 'ascii'}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(rec.tobytes())
        else:
            for row in rec:
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))


def read_xyz(path):
    """Whitespace-separated text, first three columns x y z; ``#`` lines skipped."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            cols = line.split()
            if len(cols) < 3:
                raise ParseError(f"expected at least 3 columns at line {n}")
            try:
                rows.append([float(c) for c in cols[:3]])
            except ValueError:
                raise ParseError(f"bad number at line {n}") from None
    pts, dropped = drop_nonfinite(np.array(rows, dtype=np.float64).reshape(-1, 3))
    return PointCloud(pts), dropped


def write_xyz(path, points):
    np.savetxt(path, np.asarray(points, dtype=np.float64).reshape(-1, 3), fmt="%.17g")


def read_pointcloud_file(path):
    """Load a ``.pcd`` or text cloud; returns (cloud, dropped non-finite count)."""
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")
    if str(path).lower().endswith(".pcd"):
        return read_pcd(path)
    return read_xyz(path)


def _fmt(v):
    s = f"{v:.9g}"
    return "0" if s == "-0" else s


def write_trajectory(t: Trajectory, path):
    with open(path, "w", encoding="utf-8") as fh:
        for stamp, pose in zip(t.stamps, t.poses):
            vals = list(pose.translation) + list(pose.quat)
            fh.write(f"{stamp:.9f} " + " ".join(_fmt(v) for v in vals) + "\n")


def read_trajectory(path, quat_tolerance=1e-6) -> Trajectory:
    stamps, poses = [], []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split()
            if len(cols) != 8:
                raise ParseError(f"expected 8 columns at line {n}")
            try:
                v = np.array([float(c) for c in cols])
            except ValueError:
                raise ParseError(f"bad number at line {n}") from None
            if not np.all(np.isfinite(v)):
                raise ParseError(f"non-finite value at line {n}")
            if stamps and v[0] <= stamps[-1]:
                raise ParseError(f"non-monotone stamp at line {n}")
            q = v[4:]
            norm = float(np.linalg.norm(q))
            if abs(norm - 1.0) > quat_tolerance:
                raise ParseError(f"non-unit quaternion (norm {norm:.9g}) at line {n}")
            stamps.append(v[0])
            poses.append(RigidTransform(q / norm, v[1:4]))
    return Trajectory(stamps, poses)


@dataclasses.dataclass(frozen=True)
class SequenceManifest:
    root: Path
    stamps: tuple
    paths: tuple
    groundtruth: Path | None = None

    def __len__(self):
        return len(self.paths)


def load_manifest(root, period=0.1) -> SequenceManifest:
    """Read ``frames.txt``, or else take every ``.pcd``/``.xyz`` file in name order
    at ``period``-second spacing. ``groundtruth.txt`` is picked up if present."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"no such sequence directory: {root}")
    listing = root / "frames.txt"
    stamps, paths = [], []
    if listing.exists():
        with open(listing, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                cols = line.split(maxsplit=1)
                if len(cols) != 2:
                    raise ParseError(f"expected 'stamp path' at line {n} of {listing}")
                try:
                    stamp = float(cols[0])
                except ValueError:
                    raise ParseError(f"bad stamp at line {n} of {listing}") from None
                if stamps and stamp <= stamps[-1]:
                    raise ParseError(f"non-monotone stamp at line {n} of {listing}")
                p = root / cols[1]
                if not p.is_file():
                    raise DataError(f"missing frame file {p} (line {n} of {listing})")
                stamps.append(stamp)
                paths.append(p)
    else:
        files = sorted(p for p in root.iterdir() if p.suffix.lower() in (".pcd", ".xyz"))
        paths = files
        stamps = [i * period for i in range(len(files))]
    gt = root / "groundtruth.txt"
    return SequenceManifest(root, tuple(stamps), tuple(paths), gt if gt.is_file() else None)


def write_sequence(root, frames, groundtruth: Trajectory | None = None, binary=True):
    """Write clouds as ``frames/NNNNNN.pcd`` plus ``frames.txt`` (and ground truth)."""
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    with open(root / "frames.txt", "w", encoding="utf-8") as fh:
        for i, f in enumerate(frames):
            rel = f"frames/{i:06d}.pcd"
            write_pcd(root / rel, f.points, binary=binary)
            fh.write(f"{f.stamp:.9f} {rel}\n")
    if groundtruth is not None:
        write_trajectory(groundtruth, root / "groundtruth.txt")
    return root


@dataclasses.dataclass
class RunSummary:
    trajectory: Trajectory
    results: list
    skipped: list
    dropped_points: int
    report: dict


def run_pipeline(manifest: SequenceManifest, cfg=None, traj_out=None, map_out=None, log_out=None, report_out=None):
    """Feed every frame through the odometry; write whichever outputs are requested.

    An unreadable first frame aborts; later unreadable frames are skipped
    and counted.
    """
    from .odometry import STAGES, Odometry

    cfg = cfg or config_mod.PipelineConfig()
    if len(manifest) == 0:
        raise DataError("no frames")
    odo = Odometry(cfg)
    skipped, dropped = [], 0
    for i, (stamp, path) in enumerate(zip(manifest.stamps, manifest.paths)):
        try:
            cloud, nd = read_pointcloud_file(path)
        except DataError as e:
            if i == 0:
                raise DataError(f"first frame unreadable: {e}") from e
            log.warning("skipping frame %d (%s): %s", i, path, e)
            skipped.append(i)
            continue
        dropped += nd
        odo.process(PointCloud(cloud.points, stamp=stamp, frame_id=i))
    results = odo.results
    traj = Trajectory.from_results(results)

    if traj_out:
        write_trajectory(traj, traj_out)
    if map_out:
        write_pcd(map_out, odo.map.points, binary=True)
    if log_out:
        with open(log_out, "w", encoding="utf-8") as fh:
            fh.write("frame_id " + " ".join(STAGES) + " total stable map_updated\n")
            for r in results:
                times = " ".join(f"{r.timing.get(s, 0.0):.3f}" for s in STAGES)
                fh.write(f"{r.frame_id} {times} {r.timing['total']:.3f} {int(r.stable)} {int(r.map_updated)}\n")

    report = {
        "frames_total": len(manifest),
        "frames_processed": len(results),
        "frames_skipped": skipped,
        "nonfinite_points_dropped": dropped,
        "map_updates": sum(r.map_updated for r in results),
        "keyframes_selected": sum(r.keyframe_selected for r in results),
        "unstable_frames": sum(not r.stable for r in results),
        "registration_failures": sum(any(f != "empty frame" for f in r.failures) for r in results),
        "map_points": len(odo.map),
        "endpoint_distance": endpoint_distance(traj) if len(traj) else None,
        "timing_ms": timing_summary([TimingRecord.from_result(r) for r in results]) if results else {},
        "parameters": {
            f.name: dataclasses.asdict(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)
        },
    }
    if manifest.groundtruth is not None:
        gt = read_trajectory(manifest.groundtruth)
        try:
            report["ate_rmse"] = ate_rmse(traj, gt, cfg.eval.alignment, cfg.eval.max_dt)
        except (ValueError, ArithmeticError) as e:
            report["ate_rmse"] = None
            report["ate_error"] = str(e)
    if report_out:
        with open(report_out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    return RunSummary(traj, results, skipped, dropped, report)
