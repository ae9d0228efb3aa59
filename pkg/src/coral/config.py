"""Run configuration, parameter profiles and dataset manifests.

Both files use a flat ``key = value`` format with ``[section]`` headers.
Angles are given in degrees.  Unknown sections or keys are errors.

Run configuration::

    [run]
    profile = eth             ; base values, overridden by the keys below
    method = coral
    protocol = separate
    downsample = 0.08         ; voxel size applied at load, 0 disables
    folds = 5

    [entropy]
    r_min = 0.3
    ...

Dataset manifest, one section per sequence::

    [sequence stairs]
    environment = structured  ; structured | semi | unstructured
    scans = s000.xyz s001.xyz s002.xyz
    poses = poses.csv
    alpha_deg = 0.0
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .cloud import apply_transform, voxel_downsample
from .entropy import Aggregation, EntropyParams
from .errors import CoralError, DataError, UsageError
from .fileio import FORMATS, POSE_LAYOUTS, load_cloud, load_poses
from .harness.evaluation import ENVIRONMENTS, Protocol, SequenceData
from .harness.methods import METHODS, MethodParams
from .harness.perturb import ErrorSpec
from .harness.synth import ScanPair


class ConfigError(UsageError):
    pass


PROFILES = {
    "eth": {
        "entropy": {"r_min": "0.3", "r_max": "0.3", "alpha_deg": "0", "epsilon": "0",
                    "e_reject": "0.2"},
        "ndt": {"voxel": "0.6"},
        "run": {"downsample": "0.08"},
    },
    "spinning-lidar": {
        "entropy": {"r_min": "0.2", "r_max": "1.0", "alpha_deg": "0.92", "epsilon": "1e-8",
                    "e_reject": "0.2"},
        "ndt": {"voxel": "0.4"},
        "run": {"downsample": "0"},
    },
}

_KEYS = {
    "run": {"profile", "method", "protocol", "downsample", "folds", "output"},
    "entropy": {"r_min", "r_max", "alpha_deg", "epsilon", "e_reject", "min_overlap",
                "aggregation", "min_neighbors"},
    "ndt": {"voxel", "min_cell_points"},
    "error": {"e_d", "e_theta_deg", "seed"},
}


@dataclass(frozen=True)
class RunConfig:
    method_params: MethodParams = field(default_factory=MethodParams)
    error: ErrorSpec = field(default_factory=ErrorSpec)
    method: str = "coral"
    protocol: Protocol = Protocol.SEPARATE
    downsample: float = 0.08
    folds: int = 5
    output: str = "reports"
    alpha_from_manifest: bool = False

    @property
    def entropy(self) -> EntropyParams:
        return self.method_params.entropy

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return replace(self, error=replace(self.error, seed=int(seed)))


def _read_ini(text: str, source: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cp


def parse_config(text: str = "", source: str = "<config>", profile: str | None = None) -> RunConfig:
    """Validate a configuration completely or raise :class:`ConfigError`."""
    cp = _read_ini(text, source)
    raw: dict[str, dict[str, str]] = {s: {} for s in _KEYS}
    for sec in cp.sections():
        if sec not in _KEYS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for k, v in cp.items(sec):
            if k not in _KEYS[sec]:
                raise ConfigError(f"{source}: unknown key {k!r} in [{sec}]")
            raw[sec][k] = v
    prof = raw["run"].get("profile", profile or "eth")
    if prof not in PROFILES:
        raise ConfigError(f"unknown profile {prof!r}; expected one of {sorted(PROFILES)}")
    merged = {s: dict(PROFILES[prof].get(s, {})) for s in _KEYS}
    for s in _KEYS:
        merged[s].update(raw[s])
    try:
        return _build(merged)
    except CoralError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def _build(m: dict[str, dict[str, str]]) -> RunConfig:
    e = m["entropy"]
    alpha_raw = e.get("alpha_deg", "0").strip()
    from_manifest = alpha_raw == "manifest"
    ent = EntropyParams(
        r_min=float(e.get("r_min", "0.3")),
        r_max=float(e.get("r_max", e.get("r_min", "0.3"))),
        alpha=0.0 if from_manifest else math.radians(float(alpha_raw)),
        epsilon=float(e.get("epsilon", "0")),
        e_reject=float(e.get("e_reject", "0")),
        min_overlap=float(e.get("min_overlap", "0.1")),
        aggregation=Aggregation(e.get("aggregation", "mean")),
        min_neighbors=int(e.get("min_neighbors", "5")),
    )
    n = m["ndt"]
    mp = MethodParams(ent, float(n.get("voxel", str(2 * ent.r_min))), int(n.get("min_cell_points", "6")))
    if not (mp.ndt_voxel > 0 and mp.min_cell_points >= 4):
        raise ValueError("need ndt voxel > 0 and min_cell_points >= 4")
    er = m["error"]
    spec = ErrorSpec(float(er.get("e_d", "0.1")), math.radians(float(er.get("e_theta_deg", "0.57"))),
                     int(er.get("seed", "0")))
    r = m["run"]
    method = r.get("method", "coral")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    folds = int(r.get("folds", "5"))
    down = float(r.get("downsample", "0"))
    if folds < 2 or down < 0:
        raise ValueError("need folds >= 2 and downsample >= 0")
    return RunConfig(mp, spec, method, Protocol(r.get("protocol", "separate")), down, folds,
                     r.get("output", "reports"), from_manifest)


def load_config(path=None, profile: str | None = None) -> RunConfig:
    if path is None:
        return parse_config("", "<defaults>", profile)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path), profile)


@dataclass(frozen=True)
class SequenceEntry:
    sequence_id: str
    environment: str
    scans: tuple[Path, ...]
    poses: Path
    alpha: float = 0.0
    fmt: str | None = None
    pose_layout: str = "auto"


@dataclass(frozen=True)
class DatasetManifest:
    path: Path
    sequences: tuple[SequenceEntry, ...]


def load_manifest(path) -> DatasetManifest:
    """Parse and check a manifest: files must exist and pose counts match scan counts."""
    path = Path(path)
    try:
        cp = _read_ini(path.read_text(), str(path))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    root = path.parent
    seqs = []
    allowed = {"environment", "scans", "poses", "alpha_deg", "format", "pose_layout"}
    for sec in cp.sections():
        kind, _, name = sec.partition(" ")
        if kind != "sequence" or not name.strip():
            raise ConfigError(f"{path}: sections must be [sequence <id>], got [{sec}]")
        items = dict(cp.items(sec))
        extra = set(items) - allowed
        if extra:
            raise ConfigError(f"{path}: unknown keys {sorted(extra)} in [{sec}]")
        env = items.get("environment", "structured")
        if env not in ENVIRONMENTS:
            raise ConfigError(f"{path}: environment must be one of {ENVIRONMENTS}")
        fmt = items.get("format")
        if fmt is not None and fmt not in FORMATS:
            raise ConfigError(f"{path}: format must be one of {FORMATS}")
        layout = items.get("pose_layout", "auto")
        if layout not in POSE_LAYOUTS:
            raise ConfigError(f"{path}: pose_layout must be one of {POSE_LAYOUTS}")
        if "scans" not in items or "poses" not in items:
            raise ConfigError(f"{path}: [{sec}] needs scans and poses")
        scans = tuple(root / s for s in items["scans"].split())
        poses = root / items["poses"]
        for f in scans + (poses,):
            if not f.is_file():
                raise DataError(f"{path}: missing file {f}")
        try:
            alpha = math.radians(float(items.get("alpha_deg", "0")))
        except ValueError:
            raise ConfigError(f"{path}: alpha_deg must be a number") from None
        seqs.append(SequenceEntry(name.strip(), env, scans, poses, alpha, fmt, layout))
    if not seqs:
        raise ConfigError(f"{path}: no sequences")
    for s in seqs:
        n = len(load_poses(s.poses, s.pose_layout))
        if n != len(s.scans):
            raise DataError(f"{path}: sequence {s.sequence_id} has {len(s.scans)} scans but {n} poses")
    return DatasetManifest(path, tuple(seqs))


def load_sequence(entry: SequenceEntry, downsample: float = 0.0) -> SequenceData:
    """World-frame clouds of one sequence paired as consecutive scans."""
    poses = load_poses(entry.poses, entry.pose_layout)
    clouds = []
    for scan_path, pose in zip(entry.scans, poses):
        c = load_cloud(scan_path, entry.fmt)
        if len(c) == 0:
            raise DataError(f"{scan_path}: empty cloud")
        c = apply_transform(c, pose)
        if downsample > 0:
            c = voxel_downsample(c, downsample)
        clouds.append(c)
    pairs = [ScanPair(clouds[i], clouds[i + 1], entry.sequence_id, i, entry.environment)
             for i in range(len(clouds) - 1)]
    return SequenceData(entry.sequence_id, entry.environment, pairs)


def params_for(entry: SequenceEntry, cfg: RunConfig) -> MethodParams:
    if not cfg.alpha_from_manifest:
        return cfg.method_params
    return replace(cfg.method_params, entropy=cfg.entropy.with_(alpha=entry.alpha))
