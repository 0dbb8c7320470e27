"""AIS domain types, ingestion, synthetic generation, scaling and windowing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor import Rng

log = logging.getLogger(__name__)

# feature order used by every window and model
VARIABLES = ("lat", "lon", "delta_t", "cog", "sog")
M = len(VARIABLES)
LOWER = np.array([-90.0, -180.0, 0.0, 0.0, 0.0])
UPPER = np.array([90.0, 180.0, np.inf, 360.0, np.inf])

CSV_COLUMNS = ("vessel_id", "timestamp", "lat", "lon", "cog", "sog")

# complexity regimes: name -> (window, horizon)
REGIMES = {"low": (15, 5), "medium": (15, 25), "high": (30, 50)}


class DataError(ValueError):
    pass


class OrderingError(DataError):
    pass


class CsvFormatError(DataError):
    pass


class ScalerStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class AISMessage:
    vessel_id: str
    lat: float
    lon: float
    timestamp: int
    cog: float
    sog: float
    delta_t: float = 0.0

    def features(self) -> tuple[float, float, float, float, float]:
        return (self.lat, self.lon, self.delta_t, self.cog, self.sog)


def clip_values(values: np.ndarray) -> np.ndarray:
    """Clamp a (..., 5) array in feature order to the physical bounds."""
    values = np.asarray(values, dtype=np.float64)
    if np.isnan(values).any():
        raise DataError("cannot clip NaN values")
    return np.minimum(np.maximum(values, LOWER), UPPER)


def clip_message(msg: AISMessage) -> AISMessage:
    lat, lon, dt, cog, sog = clip_values(np.array(msg.features()))
    return replace(msg, lat=float(lat), lon=float(lon), delta_t=float(dt), cog=float(cog), sog=float(sog))


@dataclass
class Trajectory:
    """Messages of one vessel as parallel arrays ordered by timestamp."""

    vessel_id: str
    timestamp: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    cog: np.ndarray
    sog: np.ndarray
    delta_t: np.ndarray = None

    def __post_init__(self):
        self.timestamp = np.asarray(self.timestamp, dtype=np.int64)
        for name in ("lat", "lon", "cog", "sog"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = len(self.timestamp)
        if n < 1:
            raise DataError(f"trajectory {self.vessel_id!r} has no messages")
        if any(len(getattr(self, k)) != n for k in ("lat", "lon", "cog", "sog")):
            raise DataError(f"trajectory {self.vessel_id!r} has ragged columns")
        if self.delta_t is None:
            self.delta_t = np.zeros(n)
        else:
            self.delta_t = np.asarray(self.delta_t, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.timestamp)

    @classmethod
    def from_messages(cls, vessel_id: str, messages: Sequence[AISMessage]) -> "Trajectory":
        return cls(
            vessel_id,
            timestamp=[m.timestamp for m in messages],
            lat=[m.lat for m in messages],
            lon=[m.lon for m in messages],
            cog=[m.cog for m in messages],
            sog=[m.sog for m in messages],
            delta_t=[m.delta_t for m in messages],
        )

    def messages(self) -> list[AISMessage]:
        return [
            AISMessage(self.vessel_id, float(a), float(o), int(t), float(c), float(s), float(d))
            for t, a, o, c, s, d in zip(self.timestamp, self.lat, self.lon, self.cog, self.sog, self.delta_t)
        ]

    def features(self) -> np.ndarray:
        """(L, 5) array in VARIABLES order."""
        return np.stack([self.lat, self.lon, self.delta_t, self.cog, self.sog], axis=1)


def derive_delta_t(traj: Trajectory) -> Trajectory:
    """Seconds since the previous message; the first message gets 0."""
    ts = traj.timestamp
    steps = np.diff(ts)
    bad = np.flatnonzero(steps < 0)
    if bad.size:
        j = int(bad[0]) + 1
        raise OrderingError(f"vessel {traj.vessel_id!r}: timestamp at index {j} ({ts[j]}) precedes index {j - 1} ({ts[j - 1]})")
    dt = np.concatenate([[0.0], steps.astype(np.float64)])
    return replace(traj, delta_t=dt)


def clip_trajectory(traj: Trajectory) -> Trajectory:
    f = clip_values(traj.features())
    return replace(traj, lat=f[:, 0], lon=f[:, 1], delta_t=f[:, 2], cog=f[:, 3], sog=f[:, 4])


@dataclass
class TrajectoryNetwork:
    """Disjoint per-vessel trajectories keyed by vessel id."""

    trajectories: dict[str, Trajectory] = field(default_factory=dict)
    malformed_rows: int = 0
    duplicate_rows: int = 0

    @property
    def c(self) -> int:
        return len(self.trajectories)

    @property
    def n_messages(self) -> int:
        return sum(len(t) for t in self.trajectories.values())

    def __len__(self) -> int:
        return self.c

    def __iter__(self):
        return iter(self.trajectories.values())

    def add(self, traj: Trajectory) -> None:
        if traj.vessel_id in self.trajectories:
            raise DataError(f"duplicate vessel id {traj.vessel_id!r}")
        self.trajectories[traj.vessel_id] = traj

    def min_length(self) -> int:
        return min(len(t) for t in self) if self.trajectories else 0


# ---------------------------------------------------------------------------
# CSV


def load_csv(path: str | Path) -> TrajectoryNetwork:
    """Read ``vessel_id,timestamp,lat,lon,cog,sog`` rows into a network.

    Rows are grouped by vessel and stably sorted by timestamp; a repeated
    (vessel, timestamp) pair keeps the row that appeared first in the file.
    Unparsable rows are skipped and counted.
    """
    rows: dict[str, list[tuple[int, float, float, float, float]]] = {}
    malformed = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise CsvFormatError(f"{path}: missing required column(s) {', '.join(missing)}")
        for row in reader:
            try:
                vid = row["vessel_id"].strip()
                if not vid:
                    raise ValueError("empty vessel id")
                rec = (int(row["timestamp"]), float(row["lat"]), float(row["lon"]),
                       float(row["cog"]), float(row["sog"]))
                if any(math.isnan(v) for v in rec[1:]):
                    raise ValueError("NaN field")
            except (ValueError, TypeError, AttributeError):
                malformed += 1
                continue
            rows.setdefault(vid, []).append(rec)

    net = TrajectoryNetwork(malformed_rows=malformed)
    for vid, recs in rows.items():
        recs.sort(key=lambda r: r[0])
        kept, seen = [], set()
        for r in recs:
            if r[0] in seen:
                net.duplicate_rows += 1
                continue
            seen.add(r[0])
            kept.append(r)
        arr = np.array([r[1:] for r in kept])
        traj = Trajectory(vid, [r[0] for r in kept], arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
        net.add(clip_trajectory(derive_delta_t(traj)))
    if malformed:
        log.warning("%s: skipped %d malformed row(s)", path, malformed)
    if net.duplicate_rows:
        log.warning("%s: dropped %d duplicate (vessel, timestamp) row(s)", path, net.duplicate_rows)
    return net


def write_csv(network: TrajectoryNetwork, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for traj in network:
            for t, a, o, c, s in zip(traj.timestamp, traj.lat, traj.lon, traj.cog, traj.sog):
                w.writerow([traj.vessel_id, int(t), repr(float(a)), repr(float(o)), repr(float(c)), repr(float(s))])


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class GeneratorConfig:
    n_vessels: int = 200
    pareto_shape: float = 1.2
    min_messages: int = 81  # w + s + 1 for the high regime
    max_messages: int = 2000
    outlier_rate: float = 0.0
    dt_median: float = 30.0  # seconds, lognormal body
    dt_sigma: float = 0.5
    outlier_decades: tuple[float, float] = (2.0, 3.0)  # spike = median * 10**U(lo, hi)
    # default bounding box: lat_min, lat_max, lon_min, lon_max
    region: tuple[float, float, float, float] = (23.8708, 68.5008, -82.7828, -2.0218)
    start_time: int = 1583020800  # 2020-03-01T00:00:00Z
    speed_range: tuple[float, float] = (2.0, 20.0)
    heading_range: tuple[float, float] = (0.0, 360.0)  # initial course
    turn_bias: float = 0.0  # max |constant turn rate| per vessel, degrees per message
    turn_noise: float = 1.5  # degrees, innovation of the AR(1) turn rate
    speed_noise: float = 0.3  # knots
    weave_amplitude: float = 0.0  # degrees of sinusoidal weaving around the base course
    weave_period: float = 20.0  # messages per weave cycle
    weave_period_jitter: float = 0.25  # per-vessel relative spread of the period

    def validate(self) -> None:
        if self.n_vessels < 1:
            raise ValueError("n_vessels must be >= 1")
        if self.pareto_shape <= 0:
            raise ValueError("pareto_shape must be positive")
        if not 1 <= self.min_messages <= self.max_messages:
            raise ValueError("need 1 <= min_messages <= max_messages")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValueError("outlier_rate must be in [0, 1)")
        lat0, lat1, lon0, lon1 = self.region
        if not (lat1 > lat0 and lon1 > lon0):
            raise ValueError(f"degenerate region {self.region}")
        if lat0 < -90 or lat1 > 90 or lon0 < -180 or lon1 > 180:
            raise ValueError(f"region {self.region} exceeds geographic bounds")


def _vessel_track(cfg: GeneratorConfig, vessel_id: str, rng: Rng) -> Trajectory:
    n = int(cfg.min_messages * (1.0 + rng.pareto(cfg.pareto_shape)))
    n = min(max(n, cfg.min_messages), cfg.max_messages)
    lat0, lat1, lon0, lon1 = cfg.region

    dt = rng.lognormal(math.log(cfg.dt_median), cfg.dt_sigma, n)
    if cfg.outlier_rate > 0:
        spikes = rng.random(n) < cfg.outlier_rate
        lo, hi = cfg.outlier_decades
        dt = np.where(spikes, cfg.dt_median * 10.0 ** rng.uniform(lo, hi, n), dt)
    dt = np.maximum(1, np.rint(dt)).astype(np.int64)
    dt[0] = 0
    ts = cfg.start_time + int(rng.uniform(0, 86400)) + np.cumsum(dt)

    lat = np.empty(n)
    lon = np.empty(n)
    cog = np.empty(n)
    sog = np.empty(n)
    lat[0] = rng.uniform(lat0 + 0.1 * (lat1 - lat0), lat1 - 0.1 * (lat1 - lat0))
    lon[0] = rng.uniform(lon0 + 0.1 * (lon1 - lon0), lon1 - 0.1 * (lon1 - lon0))
    course = rng.uniform(*cfg.heading_range) % 360.0  # base course, before weaving
    cruise = rng.uniform(*cfg.speed_range)
    bias = rng.uniform(-cfg.turn_bias, cfg.turn_bias)
    period = cfg.weave_period * rng.uniform(1.0 - cfg.weave_period_jitter, 1.0 + cfg.weave_period_jitter)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    noise_turn = rng.normal(0.0, cfg.turn_noise, n)
    noise_speed = rng.normal(0.0, cfg.speed_noise, n)

    def weave(j):
        return cfg.weave_amplitude * math.sin(2.0 * math.pi * j / period + phase) if cfg.weave_amplitude else 0.0

    cog[0] = (course + weave(0)) % 360.0
    sog[0] = cruise
    turn = 0.0
    for j in range(1, n):
        turn = 0.8 * turn + noise_turn[j]
        course = (course + bias + turn) % 360.0
        heading = (course + weave(j)) % 360.0
        speed = max(0.0, sog[j - 1] + 0.1 * (cruise - sog[j - 1]) + noise_speed[j])
        # dead reckoning over the elapsed interval, nautical miles -> degrees
        dist = speed * dt[j] / 3600.0
        rad = math.radians(heading)
        nlat = lat[j - 1] + dist * math.cos(rad) / 60.0
        nlon = lon[j - 1] + dist * math.sin(rad) / (60.0 * max(math.cos(math.radians(lat[j - 1])), 0.05))
        if not (lat0 <= nlat <= lat1 and lon0 <= nlon <= lon1):
            # bounce off the region boundary
            course = (course + 180.0) % 360.0
            heading = (heading + 180.0) % 360.0
            turn = 0.0
            nlat, nlon = lat[j - 1], lon[j - 1]
        lat[j], lon[j], cog[j], sog[j] = nlat, nlon, heading, speed
    traj = Trajectory(vessel_id, ts, lat, lon, cog, sog)
    return clip_trajectory(derive_delta_t(traj))


def generate_synthetic(cfg: GeneratorConfig, rng: Rng) -> TrajectoryNetwork:
    """Trajectory network with Pareto-distributed lengths and heavy-tailed intervals.

    Each vessel draws from its own substream keyed by its id, so the set of
    vessels generated does not depend on generation order.
    """
    cfg.validate()
    net = TrajectoryNetwork()
    width = len(str(cfg.n_vessels - 1))
    for k in range(cfg.n_vessels):
        vid = f"V{k:0{width}d}"
        net.add(_vessel_track(cfg, vid, rng.child(vid)))
    return net


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class WindowSample:
    vessel_id: str
    start: int
    x: np.ndarray  # (w, 5) raw features
    y: np.ndarray  # (s, 5) raw features


def sample_windows(traj: Trajectory, w: int, s: int, count: int = 25, rng: Rng | None = None) -> list[WindowSample]:
    """Draw up to ``count`` distinct window start positions without replacement.

    Candidate starts are ``0 .. L - w - s``. Windows keep the raw message order
    and intervals. Trajectories shorter than ``w + s`` yield no samples.
    """
    if w < 1 or s < 1 or count < 1:
        raise ValueError("w, s and count must be positive")
    L = len(traj)
    if L < w + s:
        log.info("skipping vessel %s: %d messages < w + s = %d", traj.vessel_id, L, w + s)
        return []
    n_cand = L - w - s + 1
    k = min(count, n_cand)
    if rng is None:
        raise ValueError("sample_windows needs an Rng")
    starts = np.sort(rng.choice(n_cand, size=k, replace=False))
    feats = traj.features()
    return [WindowSample(traj.vessel_id, int(i), feats[i : i + w].copy(), feats[i + w : i + w + s].copy()) for i in starts]


def build_windows(network: TrajectoryNetwork, w: int, s: int, count: int, rng: Rng) -> list[WindowSample]:
    out: list[WindowSample] = []
    for traj in network:
        out.extend(sample_windows(traj, w, s, count, rng.child(traj.vessel_id)))
    return out


def split_train_test(samples: Sequence[WindowSample], test_fraction: float, rng: Rng) -> tuple[list[WindowSample], list[WindowSample]]:
    """Per-vessel stratified split of window samples.

    A vessel with n >= 2 samples sends round(n * test_fraction) of them
    (at most n - 1) to the test side; a vessel with a single sample stays in
    training.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    by_vessel: dict[str, list[WindowSample]] = {}
    for smp in samples:
        by_vessel.setdefault(smp.vessel_id, []).append(smp)
    train, test = [], []
    for vid, group in by_vessel.items():
        n = len(group)
        n_test = 0 if n < 2 else min(n - 1, int(math.floor(n * test_fraction + 0.5)))
        order = rng.child(vid).permutation(n)
        chosen = set(order[:n_test].tolist())
        for i, smp in enumerate(group):
            (test if i in chosen else train).append(smp)
    if not train or not test:
        raise ValueError(f"split produced an empty side ({len(train)} train / {len(test)} test)")
    return train, test


def stack_samples(samples: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.x for s in samples]), np.stack([s.y for s in samples])


# ---------------------------------------------------------------------------
# scaling

_EPS = 1e-12


@dataclass
class Scaler:
    """z-score followed by min-max, per variable, on the last axis."""

    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    zmin: np.ndarray | None = None
    zmax: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    @property
    def m(self) -> int:
        self._check()
        return len(self.mean)

    def _check(self):
        if not self.fitted:
            raise ScalerStateError("scaler used before fit")

    def fit(self, values: np.ndarray) -> "Scaler":
        v = np.asarray(values, dtype=np.float64).reshape(-1, np.shape(values)[-1])
        self.mean = v.mean(axis=0)
        self.std = np.maximum(v.std(axis=0), _EPS)
        z = (v - self.mean) / self.std
        self.zmin = z.min(axis=0)
        self.zmax = z.max(axis=0)
        return self

    @property
    def _range(self):
        return np.maximum(self.zmax - self.zmin, _EPS)

    def transform(self, x: np.ndarray) -> np.ndarray:
        self._check()
        return ((np.asarray(x) - self.mean) / self.std - self.zmin) / self._range

    def inverse_transform(self, u: np.ndarray) -> np.ndarray:
        self._check()
        return (np.asarray(u) * self._range + self.zmin) * self.std + self.mean

    def inverse_affine(self) -> tuple[np.ndarray, np.ndarray]:
        """(gain, offset) such that inverse_transform(u) == u * gain + offset."""
        self._check()
        gain = self._range * self.std
        return gain, self.zmin * self.std + self.mean

    def to_dict(self) -> dict:
        self._check()
        return {k: getattr(self, k).tolist() for k in ("mean", "std", "zmin", "zmax")}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in ("mean", "std", "zmin", "zmax")})


def fit_scaler(train_samples: Iterable[WindowSample]) -> Scaler:
    """Fit on every message (inputs and targets) of the training windows."""
    rows = [np.concatenate([s.x, s.y]) for s in train_samples]
    if not rows:
        raise ValueError("cannot fit a scaler on zero samples")
    return Scaler().fit(np.concatenate(rows))
