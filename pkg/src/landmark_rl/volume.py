"""3D scalar volumes: synthetic generation, file I/O, and tri-planar observations.

A volume is a dense (nx, ny, nz) float32 grid with mm spacing and named
ground-truth landmark positions in voxel coordinates. The agent's observation
at a position is a stack of three m x m orthogonal cross-sections (axial,
coronal, sagittal) centered there, min-max normalized per volume and
zero-padded outside the grid.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, VolumeIOError


@dataclass
class Volume:
    """Immutable-by-convention 3D scalar grid; do not mutate after construction.

    data is indexed data[x, y, z]. landmarks map names to real voxel-coordinate
    triples strictly inside the grid.
    """
    dims: tuple
    spacing: tuple
    data: np.ndarray
    landmarks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise ConfigError(f"dims must be a positive integer triple, got {self.dims}")
        if self.data.shape != self.dims:
            raise VolumeIOError(
                f"data shape {self.data.shape} does not match dims {self.dims}")
        if not np.all(np.isfinite(self.data)):
            raise VolumeIOError("data contains non-finite values")
        for name, p in self.landmarks.items():
            p = tuple(float(c) for c in p)
            for c, d in zip(p, self.dims):
                if not (0.0 <= c <= d - 1):
                    raise ConfigError(f"landmark {name!r} at {p} lies outside the volume")
            self.landmarks[name] = p
        self._norm = None

    @property
    def normalized(self):
        """Per-volume min-max normalized copy of data, cached."""
        if self._norm is None:
            lo = float(self.data.min())
            hi = float(self.data.max())
            if hi > lo:
                self._norm = ((self.data - lo) / (hi - lo)).astype(np.float32)
            else:
                self._norm = np.zeros(self.dims, dtype=np.float32)
        return self._norm

    def landmark(self, name=None):
        if name is None:
            name = next(iter(self.landmarks))
        return np.asarray(self.landmarks[name], dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (self.dims == other.dims and self.spacing == other.spacing
                and self.landmarks == other.landmarks
                and np.array_equal(self.data, other.data))


@dataclass(frozen=True)
class State:
    """Tri-planar observation: patches is (3, m, m) float32 in [0, 1]."""
    patches: np.ndarray
    center: tuple
    window: int


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic blob volume; seed fully determines the output."""
    dims: tuple = (64, 64, 64)
    n_blobs: int = 3
    radius_range: tuple = (6.0, 12.0)
    noise_sigma: float = 0.02
    target_blob: int = 0
    seed: int = 0

    def validate(self):
        if len(self.dims) != 3 or any(int(d) < 4 for d in self.dims):
            raise ConfigError(f"dims must be a triple of integers >= 4, got {self.dims}")
        lo, hi = self.radius_range
        if not (0 < lo <= hi):
            raise ConfigError(f"radius_range must satisfy 0 < lo <= hi, got {self.radius_range}")
        if self.n_blobs < 1:
            raise ConfigError("n_blobs must be >= 1")
        if not (0 <= self.target_blob < self.n_blobs):
            raise ConfigError(f"target_blob {self.target_blob} out of range")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")


def generate_synthetic(spec: SyntheticSpec) -> Volume:
    """Build a volume of anisotropic Gaussian blobs plus background noise.

    The designated blob has the largest amplitude and its (integer) center is
    recorded as the ground-truth landmark "target". Blob centers are kept
    pairwise separated so the designated blob dominates its own support.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    dims = tuple(int(d) for d in spec.dims)
    lo, hi = spec.radius_range
    margin = int(np.ceil(lo)) + 1

    centers = []
    min_sep = 2.0 * hi
    for _ in range(spec.n_blobs):
        for _attempt in range(200):
            c = np.array([rng.integers(margin, d - margin) for d in dims], dtype=np.float64)
            if all(np.linalg.norm(c - o) >= min_sep for o in centers):
                break
        centers.append(c)

    x, y, z = np.meshgrid(*(np.arange(d, dtype=np.float64) for d in dims), indexing="ij")
    data = np.zeros(dims, dtype=np.float64)
    for k, c in enumerate(centers):
        sig = rng.uniform(lo, hi, size=3)
        amp = 1.0 if k == spec.target_blob else rng.uniform(0.3, 0.7)
        data += amp * np.exp(-0.5 * (((x - c[0]) / sig[0]) ** 2
                                     + ((y - c[1]) / sig[1]) ** 2
                                     + ((z - c[2]) / sig[2]) ** 2))
    if spec.noise_sigma > 0:
        data += spec.noise_sigma * rng.standard_normal(dims)

    target = tuple(float(c) for c in centers[spec.target_blob])
    return Volume(dims=dims, spacing=(1.0, 1.0, 1.0),
                  data=data.astype(np.float32), landmarks={"target": target})


def extract_state(vol: Volume, q, m: int) -> State:
    """Tri-planar m x m observation centered at integer position q.

    Axial = XY plane at z=q_z, coronal = XZ at y=q_y, sagittal = YZ at x=q_x.
    Out-of-volume samples are zero.
    """
    qx, qy, qz = (int(c) for c in q)
    nd = vol.normalized
    nx, ny, nz = vol.dims
    offs = np.arange(m) - m // 2

    def plane(rows, rn, cols, cn, fixed_ok, take):
        patch = np.zeros((m, m), dtype=np.float32)
        if not fixed_ok:
            return patch
        rv = (rows >= 0) & (rows < rn)
        cv = (cols >= 0) & (cols < cn)
        rc = np.clip(rows, 0, rn - 1)
        cc = np.clip(cols, 0, cn - 1)
        patch[np.ix_(rv, cv)] = take(rc[rv], cc[cv])
        return patch

    axial = plane(qx + offs, nx, qy + offs, ny, 0 <= qz < nz,
                  lambda r, c: nd[np.ix_(r, c, [qz])][:, :, 0])
    coronal = plane(qx + offs, nx, qz + offs, nz, 0 <= qy < ny,
                    lambda r, c: nd[np.ix_(r, [qy], c)][:, 0, :])
    sagittal = plane(qy + offs, ny, qz + offs, nz, 0 <= qx < nx,
                     lambda r, c: nd[qx][np.ix_(r, c)])
    patches = np.stack([axial, coronal, sagittal])
    return State(patches=patches, center=(qx, qy, qz), window=m)


def states_batch(vol: Volume, positions, m: int) -> np.ndarray:
    """(B, 3, m, m) observation batch for a sequence of positions."""
    return np.stack([extract_state(vol, q, m).patches for q in positions])


# ---------------------------------------------------------------------------
# File format: one UTF-8 JSON header line, then x-fastest f32le payload.
# ---------------------------------------------------------------------------

def save_volume(vol: Volume, path):
    header = {
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "dtype": "f32le",
        "landmarks": {k: list(v) for k, v in vol.landmarks.items()},
    }
    payload = np.asarray(vol.data, dtype="<f4").ravel(order="F")
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        f.write(payload.tobytes())


def load_volume(path) -> Volume:
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise VolumeIOError(f"malformed header: {e}") from e
        for key in ("dims", "spacing", "dtype", "landmarks"):
            if key not in header:
                raise VolumeIOError(f"header missing field {key!r}")
        if header["dtype"] != "f32le":
            raise VolumeIOError(f"unsupported dtype {header['dtype']!r}")
        dims = tuple(int(d) for d in header["dims"])
        n = int(np.prod(dims))
        raw = f.read()
    if len(raw) != 4 * n:
        raise VolumeIOError(
            f"payload size mismatch: dims {dims} need {4 * n} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4").reshape(dims, order="F")
    if not np.all(np.isfinite(data)):
        raise VolumeIOError("payload contains non-finite values")
    return Volume(dims=dims, spacing=tuple(header["spacing"]),
                  data=np.ascontiguousarray(data),
                  landmarks={k: tuple(v) for k, v in header["landmarks"].items()})
