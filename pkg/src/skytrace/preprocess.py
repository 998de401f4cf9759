"""Cleaning, spline resampling, spatial/temporal split, PCA and sliding windows."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import container
from .adsb import Trajectory
from .errors import ConfigError, DegenerateTrajectoryError, InsufficientDataError, ShapeError

GRID_COLUMNS = ("lat", "lon", "altitude", "velocity", "heading", "vertical_rate")
SPATIAL_COLUMNS = ("lat", "lon", "altitude")
TEMPORAL_COLUMNS = ("dt", "velocity", "heading", "vertical_rate")
TARGET_COLUMNS = ("time", "lat", "lon", "altitude")
SCALE_FLOOR = 1e-9
MIN_KNOTS = 4
DATASET_SCHEMA = 1


@dataclass
class PreprocessConfig:
    period: float = 10.0
    window: int = 100
    stride: int = 5
    horizon: int = 5
    spatial_variance: float = 0.95
    temporal_variance: float = 0.95

    def validate(self) -> None:
        if not self.period > 0:
            raise ConfigError(f"preprocess.period must be positive, got {self.period}")
        for name in ("window", "stride", "horizon"):
            if getattr(self, name) < 1:
                raise ConfigError(f"preprocess.{name} must be >= 1, got {getattr(self, name)}")
        for name in ("spatial_variance", "temporal_variance"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"preprocess.{name} must be in (0, 1], got {getattr(self, name)}")


# ---------------------------------------------------------------------------
# cleaning and resampling


def clean(traj: Trajectory) -> Trajectory:
    """Collapse repeated timestamps (first record wins); result is strictly increasing."""
    seen: set[int] = set()
    kept = []
    for r in sorted(traj.records, key=lambda r: r.timestamp):
        if r.timestamp in seen:
            continue
        seen.add(r.timestamp)
        kept.append(r)
    if len(kept) < 2:
        raise DegenerateTrajectoryError(f"trajectory {traj.icao24} has {len(kept)} distinct timestamps")
    return Trajectory(traj.icao24, traj.callsign, kept)


@dataclass
class GridTrajectory:
    """A trajectory sampled on a uniform time grid."""

    icao24: str
    callsign: str
    times: np.ndarray  # [n] Unix seconds
    values: np.ndarray  # [n, 6] in GRID_COLUMNS order
    period: float

    def __len__(self) -> int:
        return len(self.times)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, GRID_COLUMNS.index(name)]


def natural_spline(x: np.ndarray, y: np.ndarray) -> CubicSpline:
    return CubicSpline(x, y, bc_type="natural", axis=0)


def spline_resample(traj: Trajectory, period: float = 10.0) -> GridTrajectory:
    """Fit a natural cubic spline per feature and evaluate on ``t0, t0+period, ... <= t_end``.

    Heading is unwrapped before fitting and wrapped back into [0, 360)
    afterwards so a 359 -> 1 degree crossing does not swing through 180.
    """
    if not period > 0:
        raise ConfigError(f"period must be positive, got {period}")
    t = np.array([r.timestamp for r in traj.records], dtype=np.float64)
    if len(t) < MIN_KNOTS or np.any(np.diff(t) <= 0):
        raise DegenerateTrajectoryError(
            f"trajectory {traj.icao24} needs >= {MIN_KNOTS} strictly increasing knots, got {len(t)}"
        )
    raw = np.array(
        [[r.lat, r.lon, r.altitude, r.velocity, r.heading, r.vertical_rate] for r in traj.records],
        dtype=np.float64,
    )
    h = GRID_COLUMNS.index("heading")
    raw[:, h] = np.unwrap(raw[:, h], period=360.0)
    n = int(np.floor((t[-1] - t[0]) / period + 1e-9)) + 1
    grid = t[0] + period * np.arange(n)
    values = natural_spline(t, raw)(grid)
    values[:, h] = np.mod(values[:, h], 360.0)
    values[:, h] = np.where(values[:, h] >= 360.0, 0.0, values[:, h])
    return GridTrajectory(traj.icao24, traj.callsign, grid, values, float(period))


@dataclass
class FeatureSplit:
    spatial: np.ndarray  # [n, 3] lat, lon, altitude
    temporal: np.ndarray  # [n, 4] dt, velocity, heading, vertical_rate
    timestamps: np.ndarray  # [n]


def split_features(traj: GridTrajectory) -> FeatureSplit:
    v = traj.values
    spatial = v[:, [GRID_COLUMNS.index(c) for c in SPATIAL_COLUMNS]]
    dt = np.concatenate([[0.0], np.diff(traj.times)])
    temporal = np.column_stack([dt] + [v[:, GRID_COLUMNS.index(c)] for c in TEMPORAL_COLUMNS[1:]])
    return FeatureSplit(spatial.copy(), temporal, traj.times.copy())


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaModel:
    mean: np.ndarray  # [d]
    scale: np.ndarray  # [d]
    components: np.ndarray  # [k, d], orthonormal rows
    explained_variance: np.ndarray  # [k], descending

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]


def pca_fit(data: np.ndarray, variance_target: float = 0.95) -> PcaModel:
    """Standardize columns, eigendecompose the covariance, keep the smallest
    number of leading components whose cumulative explained-variance ratio
    reaches ``variance_target``.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"pca_fit expects a matrix, got shape {X.shape}")
    if X.shape[0] < 2:
        raise InsufficientDataError(f"pca_fit needs at least 2 rows, got {X.shape[0]}")
    if not 0.0 < variance_target <= 1.0:
        raise ConfigError(f"variance_target must be in (0, 1], got {variance_target}")
    mean = X.mean(axis=0)
    scale = np.maximum(X.std(axis=0), SCALE_FLOOR)
    Z = (X - mean) / scale
    cov = Z.T @ Z / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T
    # sign convention: largest-magnitude loading positive
    signs = np.sign(comps[np.arange(len(comps)), np.argmax(np.abs(comps), axis=1)])
    comps = comps * np.where(signs == 0, 1.0, signs)[:, None]
    total = evals.sum()
    if total <= 0:
        k = 1
    else:
        ratio = np.cumsum(evals) / total
        k = int(np.searchsorted(ratio, variance_target - 1e-12) + 1)
        k = min(k, len(evals))
    return PcaModel(mean, scale, comps[:k].copy(), evals[:k].copy())


def pca_transform(model: PcaModel, data: np.ndarray) -> np.ndarray:
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeError(f"pca_transform expects [N, {model.n_features}], got {X.shape}")
    return ((X - model.mean) / model.scale) @ model.components.T


def pca_inverse(model: PcaModel, coords: np.ndarray) -> np.ndarray:
    C = np.asarray(coords, dtype=np.float64)
    if C.ndim != 2 or C.shape[1] != model.n_components:
        raise ShapeError(f"pca_inverse expects [N, {model.n_components}], got {C.shape}")
    return (C @ model.components) * model.scale + model.mean


# ---------------------------------------------------------------------------
# windows


@dataclass
class WindowSample:
    input: np.ndarray  # [W, d_in]
    target: np.ndarray  # [H, 4]
    trajectory: int
    start: int
    anchor: np.ndarray | None = None  # last observed (time, lat, lon, altitude)


def window_count(n: int, window: int, stride: int, horizon: int) -> int:
    return (n - window - horizon) // stride + 1 if n >= window + horizon else 0


def sliding_windows(
    features: np.ndarray,
    targets: np.ndarray,
    window: int = 100,
    stride: int = 5,
    horizon: int = 5,
    trajectory: int = 0,
) -> list[WindowSample]:
    """Input rows ``[s, s+window)`` and target rows ``[s+window, s+window+horizon)``
    for ``s = 0, stride, 2*stride, ...`` while the target fits.
    """
    if min(window, stride, horizon) < 1:
        raise ConfigError("window, stride and horizon must be positive")
    if len(features) != len(targets):
        raise ShapeError(f"features have {len(features)} rows, targets {len(targets)}")
    n = len(features)
    out = []
    for s in range(0, n - window - horizon + 1, stride):
        out.append(
            WindowSample(
                input=features[s : s + window],
                target=targets[s + window : s + window + horizon],
                trajectory=trajectory,
                start=s,
            )
        )
    return out


@dataclass
class TargetScaler:
    mean: np.ndarray  # [4]
    scale: np.ndarray  # [4]

    @classmethod
    def fit(cls, offsets: np.ndarray) -> "TargetScaler":
        flat = offsets.reshape(-1, offsets.shape[-1])
        return cls(flat.mean(axis=0), np.maximum(flat.std(axis=0), SCALE_FLOOR))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return z * self.scale + self.mean


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass
class PreprocessReport:
    trajectories_in: int = 0
    degenerate: int = 0
    too_few_knots: int = 0
    used: int = 0
    samples: int = 0


@dataclass
class Dataset:
    """Windowed samples plus everything needed to map back to physical units.

    Targets are the next ``horizon`` points expressed as offsets from the
    last observed point (time, lat, lon, altitude), standardized by
    ``target_scaler``. The persistence forecast (repeat the last point)
    is therefore ``target_scaler.transform(0)`` for every step.
    """

    inputs: np.ndarray  # [N, W, d_spatial + d_temporal]
    targets: np.ndarray  # [N, H, 4]
    anchors: np.ndarray  # [N, 4]
    traj_index: np.ndarray  # [N] int
    starts: np.ndarray  # [N] int
    trajectory_ids: list[str]
    d_spatial: int
    d_temporal: int
    spatial_pca: PcaModel
    temporal_pca: PcaModel
    target_scaler: TargetScaler
    config: PreprocessConfig
    report: PreprocessReport = field(default_factory=PreprocessReport)

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def window(self) -> int:
        return self.config.window

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def sample(self, i: int) -> WindowSample:
        return WindowSample(self.inputs[i], self.targets[i], int(self.traj_index[i]), int(self.starts[i]), self.anchors[i])

    def persistence_prediction(self, n: int | None = None) -> np.ndarray:
        n = len(self) if n is None else n
        row = self.target_scaler.transform(np.zeros(4))
        return np.broadcast_to(row, (n, self.horizon, 4)).copy()

    def physical_targets(self, standardized: np.ndarray, anchors: np.ndarray) -> np.ndarray:
        """Map standardized offsets back to absolute (time, lat, lon, altitude)."""
        return self.target_scaler.inverse(standardized) + anchors[:, None, :]


def _target_matrix(grid: GridTrajectory) -> np.ndarray:
    v = grid.values
    return np.column_stack([grid.times - grid.times[0]] + [v[:, GRID_COLUMNS.index(c)] for c in TARGET_COLUMNS[1:]])


def build_dataset(trajectories: Sequence[Trajectory], cfg: PreprocessConfig | None = None) -> Dataset:
    """clean -> spline_resample -> split_features -> PCA -> sliding_windows."""
    cfg = cfg or PreprocessConfig()
    cfg.validate()
    report = PreprocessReport(trajectories_in=len(trajectories))
    grids: list[GridTrajectory] = []
    ids: list[str] = []
    for traj in trajectories:
        try:
            cleaned = clean(traj)
        except DegenerateTrajectoryError:
            report.degenerate += 1
            continue
        try:
            grid = spline_resample(cleaned, cfg.period)
        except DegenerateTrajectoryError:
            report.too_few_knots += 1
            continue
        grids.append(grid)
        ids.append(f"{traj.icao24}@{cleaned.records[0].timestamp}")
    if not grids:
        raise InsufficientDataError("every trajectory is degenerate")
    report.used = len(grids)

    splits = [split_features(g) for g in grids]
    spatial_pca = pca_fit(np.concatenate([s.spatial for s in splits]), cfg.spatial_variance)
    temporal_pca = pca_fit(np.concatenate([s.temporal for s in splits]), cfg.temporal_variance)

    inputs, offsets, anchors, tix, starts = [], [], [], [], []
    for i, (grid, sp) in enumerate(zip(grids, splits)):
        feats = np.concatenate([pca_transform(spatial_pca, sp.spatial), pca_transform(temporal_pca, sp.temporal)], axis=1)
        phys = _target_matrix(grid)
        for w in sliding_windows(feats, phys, cfg.window, cfg.stride, cfg.horizon, trajectory=i):
            anchor = phys[w.start + cfg.window - 1]
            inputs.append(w.input)
            offsets.append(w.target - anchor)
            anchors.append(anchor)
            tix.append(i)
            starts.append(w.start)
    d_in = spatial_pca.n_components + temporal_pca.n_components
    if inputs:
        offsets_arr = np.stack(offsets)
        scaler = TargetScaler.fit(offsets_arr)
        targets = scaler.transform(offsets_arr)
        inputs_arr = np.stack(inputs)
        anchors_arr = np.stack(anchors)
    else:
        scaler = TargetScaler(np.zeros(4), np.ones(4))
        targets = np.zeros((0, cfg.horizon, 4))
        inputs_arr = np.zeros((0, cfg.window, d_in))
        anchors_arr = np.zeros((0, 4))
    report.samples = len(inputs)
    return Dataset(
        inputs=inputs_arr,
        targets=targets,
        anchors=anchors_arr,
        traj_index=np.array(tix, dtype=np.int64),
        starts=np.array(starts, dtype=np.int64),
        trajectory_ids=ids,
        d_spatial=spatial_pca.n_components,
        d_temporal=temporal_pca.n_components,
        spatial_pca=spatial_pca,
        temporal_pca=temporal_pca,
        target_scaler=scaler,
        config=cfg,
        report=report,
    )


# ---------------------------------------------------------------------------
# persistence


def save_dataset(ds: Dataset, path) -> None:
    meta = {
        "schema_version": DATASET_SCHEMA,
        "window": ds.config.window,
        "stride": ds.config.stride,
        "horizon": ds.config.horizon,
        "config": asdict(ds.config),
        "report": asdict(ds.report),
        "d_spatial": ds.d_spatial,
        "d_temporal": ds.d_temporal,
        "trajectory_ids": list(ds.trajectory_ids),
        "n_samples": len(ds),
    }
    arrays = {}
    for prefix, m in (("spatial_pca", ds.spatial_pca), ("temporal_pca", ds.temporal_pca)):
        for name in ("mean", "scale", "components", "explained_variance"):
            arrays[f"{prefix}.{name}"] = getattr(m, name)
    arrays["target_scaler.mean"] = ds.target_scaler.mean
    arrays["target_scaler.scale"] = ds.target_scaler.scale
    arrays["traj_index"] = ds.traj_index.astype(np.float64)
    arrays["starts"] = ds.starts.astype(np.float64)
    arrays["anchors"] = ds.anchors
    arrays["inputs"] = ds.inputs
    arrays["targets"] = ds.targets
    container.save(path, "dataset", meta, arrays)


def load_dataset(path) -> Dataset:
    meta, arr = container.load(path, "dataset")
    if meta.get("schema_version") != DATASET_SCHEMA:
        raise ConfigError(f"unsupported dataset schema {meta.get('schema_version')}")

    def pca(prefix):
        return PcaModel(*(arr[f"{prefix}.{n}"] for n in ("mean", "scale", "components", "explained_variance")))

    return Dataset(
        inputs=arr["inputs"],
        targets=arr["targets"],
        anchors=arr["anchors"],
        traj_index=arr["traj_index"].astype(np.int64),
        starts=arr["starts"].astype(np.int64),
        trajectory_ids=list(meta["trajectory_ids"]),
        d_spatial=int(meta["d_spatial"]),
        d_temporal=int(meta["d_temporal"]),
        spatial_pca=pca("spatial_pca"),
        temporal_pca=pca("temporal_pca"),
        target_scaler=TargetScaler(arr["target_scaler.mean"], arr["target_scaler.scale"]),
        config=PreprocessConfig(**meta["config"]),
        report=PreprocessReport(**meta["report"]),
    )
