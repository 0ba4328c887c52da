"""Trajectory dataset generation, windowing, and persistence.

Generation integrates finely (default dt 0.001), coarse-grains (default every
100th sample), drops an initial transient, and audits energy conservation on
everything it keeps.  Initial conditions are rejection-sampled on a constant
energy surface.  Every trajectory owns an independent RNG stream keyed by
(dataset seed, trajectory index), so results are independent of batching or
worker count.

On disk a dataset is a directory: ``manifest.json`` (structured metadata plus
a SHA-256 checksum) and ``states.bin`` (all state rows concatenated,
little-endian float64, row order ``q_x, q_y, p_x, p_y``).
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import (
    ESCAPE_RADIUS,
    PhaseState,
    PotentialParams,
    Trajectory,
    hh_potential,
    integrate_batch,
)
from .errors import (
    CorruptRecord,
    EmptyDataset,
    FormatVersionMismatch,
    IntegrationDiverged,
    RejectionExhausted,
    TooShort,
)

FORMAT_VERSION = 1
MAX_REJECTION_TRIES = 100_000
MAX_DIVERGENCE_RETRIES = 5
CONSERVATION_TOL = 1e-4


@dataclass(frozen=True)
class GenerationConfig:
    """Grid of (parameters, energy) cells and integration settings.

    ``param_values`` holds (alpha, beta) pairs; ``param_channels`` is 1 for
    the single-parameter family (beta locked to alpha, networks see alpha
    only) or 2 for independent couplings.  ``series_length`` counts coarse
    samples including the initial state; the first ``transient`` of them are
    dropped from what is stored.
    """

    param_values: tuple
    energies: tuple
    n_per_cell: int
    fine_dt: float = 0.001
    coarse_factor: int = 100
    series_length: int = 3000
    transient: int = 500
    seed: int = 0
    param_channels: int = 1

    def __post_init__(self):
        object.__setattr__(
            self,
            "param_values",
            tuple((float(a), float(b)) for a, b in self.param_values),
        )
        object.__setattr__(self, "energies", tuple(float(e) for e in self.energies))
        if not self.param_values:
            raise ValueError("param_values must be non-empty")
        if not self.energies or any(e <= 0 for e in self.energies):
            raise ValueError("energies must be positive")
        if self.n_per_cell < 1:
            raise ValueError("n_per_cell must be >= 1")
        if self.fine_dt <= 0:
            raise ValueError("fine_dt must be positive")
        if self.coarse_factor < 1:
            raise ValueError("coarse_factor must be >= 1")
        if self.series_length < 2:
            raise ValueError("series_length must be >= 2")
        if not 0 <= self.transient < self.series_length:
            raise ValueError("transient must lie in [0, series_length)")
        if self.param_channels not in (1, 2):
            raise ValueError("param_channels must be 1 or 2")
        if self.param_channels == 1 and any(a != b for a, b in self.param_values):
            raise ValueError("single-parameter datasets need alpha == beta")

    @classmethod
    def single_parameter(cls, alphas, energies, n_per_cell, **kw):
        """Convenience constructor for the beta == alpha family."""
        return cls(
            param_values=tuple((float(a), float(a)) for a in alphas),
            energies=tuple(energies),
            n_per_cell=n_per_cell,
            param_channels=1,
            **kw,
        )

    @property
    def coarse_dt(self):
        return self.fine_dt * self.coarse_factor

    @property
    def stored_length(self):
        return self.series_length - self.transient

    def cells(self):
        """All (PotentialParams, energy) cells in generation order."""
        return [
            (PotentialParams(alpha=a, beta=b), e)
            for (a, b) in self.param_values
            for e in self.energies
        ]

    def to_dict(self):
        return {
            "param_values": [list(v) for v in self.param_values],
            "energies": list(self.energies),
            "n_per_cell": self.n_per_cell,
            "fine_dt": self.fine_dt,
            "coarse_factor": self.coarse_factor,
            "series_length": self.series_length,
            "transient": self.transient,
            "seed": self.seed,
            "param_channels": self.param_channels,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["param_values"] = tuple(tuple(v) for v in d["param_values"])
        d["energies"] = tuple(d["energies"])
        return cls(**d)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Per-trajectory metadata: the generating cell."""

    alpha: float
    beta: float
    energy: float


class Dataset:
    """Generated trajectories plus their per-trajectory records."""

    def __init__(self, trajectories, records, config=None):
        if len(trajectories) != len(records):
            raise CorruptRecord("trajectory and record counts disagree")
        self.trajectories = list(trajectories)
        self.records = list(records)
        self.config = config

    def __len__(self):
        return len(self.trajectories)

    @property
    def n_states(self):
        return sum(len(t) for t in self.trajectories)


def sample_initial_condition(energy, params, rng):
    """A state on the energy surface: position rejection-sampled uniformly
    over [-1, 1]^2 with V(q) <= E, momentum magnitude fixed by the energy
    deficit at a uniform angle.  Exact to round-off."""
    if energy < 0:
        raise ValueError("energy must be non-negative")
    if energy == 0:
        return PhaseState(q=np.zeros(2), p=np.zeros(2))
    for _ in range(MAX_REJECTION_TRIES):
        q = rng.uniform(-1.0, 1.0, size=2)
        v = hh_potential(q, params)
        if 0 <= v <= energy:
            speed = np.sqrt(2.0 * (energy - v))
            angle = rng.uniform(0.0, 2.0 * np.pi)
            p = speed * np.array([np.cos(angle), np.sin(angle)])
            return PhaseState(q=q, p=p)
    raise RejectionExhausted(
        f"no position with V(q) <= {energy} found in {MAX_REJECTION_TRIES} tries"
    )


def _energy_rows(block, alpha, beta):
    """Energies of a (B, M, 4) block under per-row parameters (B,)."""
    qx, qy = block[:, :, 0], block[:, :, 1]
    px, py = block[:, :, 2], block[:, :, 3]
    return (
        0.5 * (px * px + py * py)
        + 0.5 * (qx * qx + qy * qy)
        + alpha[:, None] * qx * qx * qy
        - beta[:, None] * (qy * qy * qy) / 3.0
    )


def generate_dataset(config):
    """Generate every trajectory of the config's (parameters, energy) grid.

    Trajectories that leave the bounded regime or fail the conservation
    audit (max relative energy drift <= 1e-4 over all kept samples) are
    resampled from their own RNG stream a bounded number of times.
    """
    cells = config.cells()
    entries = [(pot, e) for (pot, e) in cells for _ in range(config.n_per_cell)]
    n = len(entries)
    rngs = [np.random.default_rng([config.seed, i]) for i in range(n)]
    alpha = np.array([pot.alpha for pot, _ in entries])
    beta = np.array([pot.beta for pot, _ in entries])
    states0 = np.empty((n, 4))
    for i, (pot, energy) in enumerate(entries):
        states0[i] = sample_initial_condition(energy, pot, rngs[i]).vec()

    n_fine = (config.series_length - 1) * config.coarse_factor
    stored = np.empty((n, config.stored_length, 4))
    pending = np.arange(n)
    for _attempt in range(MAX_DIVERGENCE_RETRIES + 1):
        coarse, escaped = integrate_batch(
            states0[pending],
            alpha[pending],
            beta[pending],
            config.fine_dt,
            n_fine,
            stride=config.coarse_factor,
        )
        energies = _energy_rows(coarse, alpha[pending], beta[pending])
        drift = np.max(
            np.abs(energies - energies[:, :1]) / np.abs(energies[:, :1]), axis=1
        )
        good = (escaped < 0) & np.isfinite(drift) & (drift <= CONSERVATION_TOL)
        stored[pending[good]] = coarse[good, config.transient :]
        pending = pending[~good]
        if pending.size == 0:
            break
        for i in pending:
            pot, energy = entries[i]
            states0[i] = sample_initial_condition(energy, pot, rngs[i]).vec()
    else:
        raise IntegrationDiverged(
            f"{pending.size} trajectories kept diverging after "
            f"{MAX_DIVERGENCE_RETRIES} resamples"
        )

    trajectories = []
    records = []
    for i, (pot, energy) in enumerate(entries):
        trajectories.append(
            Trajectory(dt=config.coarse_dt, data=stored[i], params=pot)
        )
        records.append(TrajectoryRecord(alpha=pot.alpha, beta=pot.beta, energy=energy))
    return Dataset(trajectories, records, config=config)


@dataclass
class DerivativePairs:
    """States with their analytic time derivatives (training rows)."""

    states: np.ndarray
    derivs: np.ndarray
    channels: np.ndarray

    @property
    def n(self):
        return self.states.shape[0]

    def take(self, idx):
        return DerivativePairs(self.states[idx], self.derivs[idx], self.channels[idx])


@dataclass
class RolloutWindows:
    """Contiguous state windows for rollout-matching training."""

    windows: np.ndarray
    channels: np.ndarray
    dt: float

    @property
    def n(self):
        return self.windows.shape[0]

    def take(self, idx):
        return RolloutWindows(self.windows[idx], self.channels[idx], self.dt)


@dataclass
class EncoderWindows:
    """Partial-observation windows with (q_y, p_y, parameters) targets."""

    inputs: np.ndarray
    targets: np.ndarray
    dt: float

    @property
    def n(self):
        return self.inputs.shape[0]

    def take(self, idx):
        return EncoderWindows(self.inputs[idx], self.targets[idx], self.dt)


def _channel_row(record, k):
    if k == 1:
        return [record.alpha]
    return [record.alpha, record.beta]


def window_dataset(dataset, kind, window_len=None, stride=None):
    """Cut training rows or windows out of a dataset.

    Kinds: ``derivative-pairs`` (every state with its analytic derivative),
    ``rollout`` (non-overlapping windows of ``window_len`` states, default 11,
    default stride = window_len), ``encoder`` (sliding windows of the observed
    (q_x, p_x) columns, default length 30 and stride 1, targets at each
    window's last step).  Trajectories too short for one window are skipped;
    if none is long enough, TooShort is raised.
    """
    if len(dataset) == 0:
        raise EmptyDataset("cannot window an empty dataset")
    k = dataset.config.param_channels if dataset.config else 1
    dts = {t.dt for t in dataset.trajectories}
    if len(dts) != 1:
        raise CorruptRecord("trajectories have mixed sampling steps")
    dt = dts.pop()

    if kind == "derivative-pairs":
        states, derivs, channels = [], [], []
        for traj, rec in zip(dataset.trajectories, dataset.records):
            d = traj.data
            qx, qy, px, py = d[:, 0], d[:, 1], d[:, 2], d[:, 3]
            gx = qx + 2.0 * rec.alpha * qx * qy
            gy = qy + rec.alpha * qx * qx - rec.beta * qy * qy
            states.append(d)
            derivs.append(np.stack([px, py, -gx, -gy], axis=1))
            channels.append(np.tile(_channel_row(rec, k), (len(traj), 1)))
        return DerivativePairs(
            states=np.concatenate(states),
            derivs=np.concatenate(derivs),
            channels=np.concatenate(channels),
        )

    if kind == "rollout":
        length = 11 if window_len is None else int(window_len)
        if length < 2:
            raise ValueError("rollout windows need at least 2 states")
        step = length if stride is None else int(stride)
        windows, channels = [], []
        for traj, rec in zip(dataset.trajectories, dataset.records):
            starts = range(0, len(traj) - length + 1, step)
            for s in starts:
                windows.append(traj.data[s : s + length])
                channels.append(_channel_row(rec, k))
        if not windows:
            raise TooShort(f"no trajectory has {length} consecutive states")
        return RolloutWindows(
            windows=np.stack(windows), channels=np.array(channels), dt=dt
        )

    if kind == "encoder":
        length = 30 if window_len is None else int(window_len)
        step = 1 if stride is None else int(stride)
        inputs, targets = [], []
        for traj, rec in zip(dataset.trajectories, dataset.records):
            d = traj.data
            for s in range(0, len(traj) - length + 1, step):
                inputs.append(d[s : s + length][:, [0, 2]])
                last = d[s + length - 1]
                targets.append([last[1], last[3], *_channel_row(rec, k)])
        if not inputs:
            raise TooShort(f"no trajectory has {length} consecutive states")
        return EncoderWindows(
            inputs=np.stack(inputs), targets=np.array(targets), dt=dt
        )

    raise ValueError(f"unknown windowing kind {kind!r}")


def save_dataset(dataset, path):
    """Write manifest.json and states.bin into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blocks = [t.data.astype("<f8") for t in dataset.trajectories]
    blob = b"".join(b.tobytes() for b in blocks)
    records = []
    offset = 0
    for traj, rec in zip(dataset.trajectories, dataset.records):
        records.append(
            {
                "offset": offset,
                "length": len(traj),
                "alpha": rec.alpha,
                "beta": rec.beta,
                "energy": rec.energy,
                "dt": traj.dt,
            }
        )
        offset += len(traj)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "trajectory-dataset",
        "config": dataset.config.to_dict() if dataset.config else None,
        "records": records,
        "totals": {"trajectories": len(dataset), "states": offset},
        "checksum_sha256": hashlib.sha256(blob).hexdigest(),
    }
    (path / "states.bin").write_bytes(blob)
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_dataset(path):
    """Read a dataset directory back; verifies version and checksum."""
    path = Path(path)
    try:
        with open(path / "manifest.json") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise CorruptRecord(f"cannot read manifest: {err}")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"dataset format {version!r}, supported {FORMAT_VERSION}"
        )
    try:
        blob = (path / "states.bin").read_bytes()
    except OSError as err:
        raise CorruptRecord(f"cannot read states.bin: {err}")
    if hashlib.sha256(blob).hexdigest() != manifest.get("checksum_sha256"):
        raise CorruptRecord("states.bin does not match its checksum")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    if flat.size % 4 != 0:
        raise CorruptRecord("states.bin length is not a multiple of the row size")
    rows = flat.reshape(-1, 4)
    total = manifest.get("totals", {}).get("states")
    if total != rows.shape[0]:
        raise CorruptRecord(
            f"manifest declares {total} states, file holds {rows.shape[0]}"
        )
    trajectories, records = [], []
    try:
        for rec in manifest["records"]:
            block = rows[rec["offset"] : rec["offset"] + rec["length"]]
            if block.shape[0] != rec["length"]:
                raise CorruptRecord("record extends past the end of states.bin")
            pot = PotentialParams(alpha=rec["alpha"], beta=rec["beta"])
            trajectories.append(Trajectory(dt=rec["dt"], data=block.copy(), params=pot))
            records.append(
                TrajectoryRecord(alpha=rec["alpha"], beta=rec["beta"], energy=rec["energy"])
            )
        config = manifest.get("config")
        config = GenerationConfig.from_dict(config) if config else None
    except (KeyError, TypeError) as err:
        raise CorruptRecord(f"manifest is structurally invalid: {err}")
    return Dataset(trajectories, records, config=config)
