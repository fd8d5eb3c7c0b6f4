"""Synthetic friction-cube dataset of windowed (slip, friction) pairs.

Each curve drawn from the cube is sampled on a dense slip grid and cut into
windows of ``n`` consecutive pairs. Every window is emitted twice, clean and
with white Gaussian noise on the friction values, and the pair order inside
each window is shuffled. The label of a window is the optimal slip of the
curve it came from.

Windows are flattened as ``(lam_1, mu_1, ..., lam_n, mu_n)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np
from scipy.stats import qmc

from slipnet.exceptions import DomainError, FormatError, TruncationError
from slipnet.friction import (
    REFERENCE_ROADS,
    BurckhardtParams,
    mu,
    optimal_point_closed_form,
)

MAGIC = b"FCUBEDS1"
FORMAT_VERSION = 1
DEFAULT_NUM_POINTS = 10_000
DEFAULT_WINDOW = 15
DEFAULT_NOISE_SIGMA = 0.01

DESIGNS = ("path", "lhs", "grid")


@dataclass(frozen=True)
class FrictionCube:
    """Box of Burckhardt parameters plus how densely to explore it.

    ``design="grid"`` is the Cartesian product of ``counts`` evenly spaced
    levels per axis (a single level sits at the interval midpoint).
    ``design="lhs"`` draws ``prod(counts)`` points from a Latin hypercube so
    that no two curves share a parameter value.

    ``design="path"`` (the default) follows the log-linear path through the
    Snow, Wet and Dry triples, restricted to where it stays inside the box,
    at ``counts[0]`` points. Each point is then scaled in amplitude
    (``beta1`` and ``beta3`` together, which keeps the optimal slip) at
    ``counts[1]`` levels of ``scale_range``, and in ``beta3`` alone at
    ``counts[2]`` levels of ``beta3_scale_range``. Candidates leaving the box
    are dropped. Unlike a Cartesian grid, no two curves coincide over the
    high-slip region while carrying different labels.
    """

    beta1_range: tuple[float, float] = (0.15, 1.35)
    beta2_range: tuple[float, float] = (20.0, 100.0)
    beta3_range: tuple[float, float] = (0.05, 0.55)
    counts: tuple[int, int, int] = (12, 3, 1)
    design: str = "path"
    design_seed: int = 0
    scale_range: tuple[float, float] = (0.8, 1.2)
    beta3_scale_range: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        for name, (lo, hi) in zip(("beta1", "beta2", "beta3"), self.ranges):
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise DomainError(f"invalid {name} range ({lo}, {hi})")
        if len(self.counts) != 3 or any(int(c) < 1 for c in self.counts):
            raise DomainError(f"cube counts must be three positive integers, got {self.counts}")
        for name in ("scale_range", "beta3_scale_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo <= 0 or lo > hi:
                raise DomainError(f"invalid {name} ({lo}, {hi})")
        if self.design not in DESIGNS:
            raise DomainError(f"unknown cube design {self.design!r}; expected one of {DESIGNS}")

    @property
    def ranges(self):
        return (self.beta1_range, self.beta2_range, self.beta3_range)

    def contains(self, params: BurckhardtParams) -> bool:
        return self.contains_tuple(params.as_tuple())

    def contains_tuple(self, triple) -> bool:
        return all(lo <= b <= hi for b, (lo, hi) in zip(triple, self.ranges))

    @classmethod
    def centered_on(cls, params: BurckhardtParams, rel_width: float = 0.0, **kwargs):
        rngs = [(b * (1 - rel_width), b * (1 + rel_width)) for b in params.as_tuple()]
        return cls(*rngs, **kwargs)


DESK_CUBE = FrictionCube()
FULL_CUBE = FrictionCube(counts=(71, 3, 2))


@dataclass(frozen=True)
class Window:
    pairs: np.ndarray  # shape (n, 2): columns slip, friction

    @property
    def n(self) -> int:
        return self.pairs.shape[0]

    def flatten(self) -> np.ndarray:
        return self.pairs.reshape(-1)


@dataclass(frozen=True)
class LabeledWindow:
    window: Window
    lambda_star: float
    curve_index: int = -1
    noisy: bool = False


@dataclass(frozen=True)
class DatasetManifest:
    total_windows: int
    n: int
    noise_sigma: float
    seed: int
    cube: FrictionCube
    stride: int
    num_points: int = DEFAULT_NUM_POINTS
    format_version: int = FORMAT_VERSION


@dataclass
class Dataset:
    """Array view of a generated dataset.

    ``X`` has one interleaved window per row, ``y`` the optimal-slip labels.
    ``curve_index`` and ``noisy`` are provenance kept in memory only; they
    are not part of the file format and come back as ``None`` after loading.
    """

    manifest: DatasetManifest
    X: np.ndarray
    y: np.ndarray
    curve_index: np.ndarray | None = field(default=None, repr=False)
    noisy: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return self.X.shape[0]

    def windows(self) -> list[LabeledWindow]:
        n = self.manifest.n
        out = []
        for i in range(len(self)):
            out.append(
                LabeledWindow(
                    Window(self.X[i].reshape(n, 2)),
                    float(self.y[i]),
                    -1 if self.curve_index is None else int(self.curve_index[i]),
                    False if self.noisy is None else bool(self.noisy[i]),
                )
            )
        return out


def _axis_levels(lo, hi, count):
    if count == 1:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(lo, hi, count)


def _reference_path(s: np.ndarray) -> np.ndarray:
    """Log-linear interpolation Snow (s=0) -> Wet (s=1) -> Dry (s=2), extrapolated beyond."""
    from slipnet.friction import ReferenceRoad

    snow, wet, dry = (np.log(np.array(r.params.as_tuple())) for r in (ReferenceRoad.SNOW, ReferenceRoad.WET, ReferenceRoad.DRY))
    s = np.asarray(s, dtype=np.float64)[:, None]
    lower = (1 - s) * snow + s * wet
    upper = (2 - s) * wet + (s - 1) * dry
    return np.exp(np.where(s <= 1, lower, upper))


def _path_extent(cube: FrictionCube, resolution: int = 4001) -> tuple[float, float]:
    s = np.linspace(-1.0, 3.0, resolution)
    pts = _reference_path(s)
    lo = np.array([r[0] for r in cube.ranges])
    hi = np.array([r[1] for r in cube.ranges])
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)
    if not inside.any():
        raise DomainError("reference path does not pass through the friction cube")
    # the path is monotone per axis, so the inside set is one interval
    idx = np.nonzero(inside)[0]
    return float(s[idx[0]]), float(s[idx[-1]])


def _path_triples(cube: FrictionCube) -> list[tuple[float, float, float]]:
    s_lo, s_hi = _path_extent(cube)
    base = _reference_path(_axis_levels(s_lo, s_hi, int(cube.counts[0])) if cube.counts[0] > 1 else np.array([1.0]))
    amp = _axis_levels(*cube.scale_range, int(cube.counts[1])) if cube.counts[1] > 1 else np.array([1.0])
    tail = _axis_levels(*cube.beta3_scale_range, int(cube.counts[2])) if cube.counts[2] > 1 else np.array([1.0])
    out = []
    for b1, b2, b3 in base:
        for a in amp:
            for t in tail:
                trip = (b1 * a, b2, b3 * a * t)
                if cube.contains_tuple(trip):
                    out.append(trip)
    return out


def enumerate_curves(cube: FrictionCube, include_references: bool = True) -> list[BurckhardtParams]:
    """Curves explored in ``cube``, with the reference roads appended.

    Triples violating ``beta1*beta2 > beta3`` are dropped and exact duplicates
    removed, keeping first occurrence.
    """
    if cube.design == "path":
        triples = _path_triples(cube)
    elif cube.design == "grid":
        axes = [_axis_levels(lo, hi, int(c)) for (lo, hi), c in zip(cube.ranges, cube.counts)]
        triples = list(itertools.product(*axes))
    else:
        total = int(np.prod(cube.counts))
        unit = qmc.LatinHypercube(d=3, seed=np.random.default_rng(cube.design_seed)).random(total)
        lo = np.array([r[0] for r in cube.ranges])
        hi = np.array([r[1] for r in cube.ranges])
        triples = [tuple(row) for row in lo + unit * (hi - lo)]
    if include_references:
        triples.extend(p.as_tuple() for p in REFERENCE_ROADS)

    seen = set()
    curves = []
    for b1, b2, b3 in triples:
        key = (float(b1), float(b2), float(b3))
        if key in seen or b1 <= 0 or b2 <= 0 or b3 < 0 or b1 * b2 <= b3:
            continue
        seen.add(key)
        curves.append(BurckhardtParams(*key))
    if not curves:
        raise DomainError("friction cube produced no valid curves")
    return curves


def sample_curve(params: BurckhardtParams, num_points: int = DEFAULT_NUM_POINTS) -> np.ndarray:
    """``num_points`` pairs on the curve with slips evenly spaced over [0, 1]."""
    if num_points < 2:
        raise DomainError("num_points must be at least 2")
    lam = np.linspace(0.0, 1.0, int(num_points))
    return np.column_stack([lam, mu(params, lam)])


def make_windows(
    samples: np.ndarray,
    n: int = DEFAULT_WINDOW,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    rng: np.random.Generator | None = None,
    stride: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Cut ``samples`` into shuffled clean and noisy windows.

    Returns ``(windows, noisy)`` where ``windows`` has shape ``(2*k, n, 2)``
    ordered clean_0, noisy_0, clean_1, noisy_1, ... and ``noisy`` flags the
    AWGN copies.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if n < 1 or n > samples.shape[0]:
        raise DomainError(f"window size {n} incompatible with {samples.shape[0]} samples")
    if noise_sigma < 0:
        raise DomainError("noise_sigma must be non-negative")
    stride = n if stride is None else int(stride)
    if stride < 1:
        raise DomainError("stride must be positive")
    rng = np.random.default_rng() if rng is None else rng

    starts = np.arange(0, samples.shape[0] - n + 1, stride)
    clean = samples[starts[:, None] + np.arange(n)[None, :]]  # (k, n, 2)
    noisy = clean.copy()
    noisy[:, :, 1] += rng.normal(0.0, noise_sigma, size=noisy.shape[:2]) if noise_sigma > 0 else 0.0

    k = len(starts)
    out = np.empty((2 * k, n, 2))
    out[0::2] = clean
    out[1::2] = noisy
    perms = np.argsort(rng.random((2 * k, n)), axis=1)
    out = np.take_along_axis(out, perms[:, :, None], axis=1)
    flags = np.zeros(2 * k, dtype=bool)
    flags[1::2] = True
    return out, flags


def build_dataset(
    cube: FrictionCube = DESK_CUBE,
    n: int = DEFAULT_WINDOW,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    stride: int | None = None,
    seed: int = 42,
    num_points: int = DEFAULT_NUM_POINTS,
) -> Dataset:
    """Generate the full labeled dataset; deterministic in all arguments.

    Curve ``i`` draws its noise and permutations from its own stream seeded
    with ``(seed, i)`` so generation order does not matter.
    """
    if n < 2:
        raise DomainError("window size n must be at least 2")
    if num_points < n:
        raise DomainError("num_points must be at least n")
    stride = n if stride is None else int(stride)
    curves = enumerate_curves(cube)

    xs, ys, idx, flags = [], [], [], []
    for i, params in enumerate(curves):
        rng = np.random.default_rng([int(seed), i])
        windows, noisy = make_windows(sample_curve(params, num_points), n, noise_sigma, rng, stride)
        xs.append(windows.reshape(len(windows), -1))
        ys.append(np.full(len(windows), optimal_point_closed_form(params).lambda_star))
        idx.append(np.full(len(windows), i, dtype=np.int64))
        flags.append(noisy)

    X = np.concatenate(xs)
    manifest = DatasetManifest(
        total_windows=X.shape[0],
        n=n,
        noise_sigma=float(noise_sigma),
        seed=int(seed),
        cube=cube,
        stride=stride,
        num_points=int(num_points),
    )
    return Dataset(manifest, X, np.concatenate(ys), np.concatenate(idx), np.concatenate(flags))


def curves_for(manifest: DatasetManifest) -> list[BurckhardtParams]:
    return enumerate_curves(manifest.cube)


# --- serialization ---------------------------------------------------------

def _header_fields(m: DatasetManifest) -> dict[str, str]:
    c = m.cube
    return {
        "format_version": str(m.format_version),
        "total_windows": str(m.total_windows),
        "n": str(m.n),
        "noise_sigma": repr(m.noise_sigma),
        "seed": str(m.seed),
        "stride": str(m.stride),
        "num_points": str(m.num_points),
        "beta1_range": f"{c.beta1_range[0]!r}:{c.beta1_range[1]!r}",
        "beta2_range": f"{c.beta2_range[0]!r}:{c.beta2_range[1]!r}",
        "beta3_range": f"{c.beta3_range[0]!r}:{c.beta3_range[1]!r}",
        "counts": ":".join(str(int(k)) for k in c.counts),
        "design": c.design,
        "design_seed": str(c.design_seed),
        "scale_range": f"{c.scale_range[0]!r}:{c.scale_range[1]!r}",
        "beta3_scale_range": f"{c.beta3_scale_range[0]!r}:{c.beta3_scale_range[1]!r}",
    }


def _parse_header(line: str) -> DatasetManifest:
    try:
        fields = dict(tok.split("=", 1) for tok in line.split())
        version = int(fields["format_version"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"corrupt dataset header: {exc}") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported dataset format_version {version} (expected {FORMAT_VERSION})")

    def pair(key):
        lo, hi = fields[key].split(":")
        return (float(lo), float(hi))

    try:
        cube = FrictionCube(
            pair("beta1_range"),
            pair("beta2_range"),
            pair("beta3_range"),
            tuple(int(k) for k in fields["counts"].split(":")),
            fields["design"],
            int(fields["design_seed"]),
            pair("scale_range"),
            pair("beta3_scale_range"),
        )
        return DatasetManifest(
            total_windows=int(fields["total_windows"]),
            n=int(fields["n"]),
            noise_sigma=float(fields["noise_sigma"]),
            seed=int(fields["seed"]),
            cube=cube,
            stride=int(fields["stride"]),
            num_points=int(fields["num_points"]),
            format_version=version,
        )
    except (ValueError, KeyError, DomainError) as exc:
        raise FormatError(f"corrupt dataset header: {exc}") from None


def save_dataset(dataset: Dataset, path) -> None:
    m = dataset.manifest
    if len(dataset) != m.total_windows:
        raise FormatError("manifest total_windows does not match record count")
    header = " ".join(f"{k}={v}" for k, v in _header_fields(m).items())
    records = np.column_stack([dataset.X, dataset.y]).astype("<f8", copy=False)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("ascii") + b"\n")
        fh.write(records.tobytes(order="C"))


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: not a dataset file (bad magic)")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise FormatError(f"{path}: missing header terminator")
    m = _parse_header(raw[len(MAGIC):end].decode("ascii", errors="replace"))
    body = raw[end + 1:]
    rec_bytes = (2 * m.n + 1) * 8
    complete = len(body) // rec_bytes
    if complete < m.total_windows or len(body) % rec_bytes:
        raise TruncationError(
            f"{path}: truncated at record {complete} of {m.total_windows}", record_index=complete
        )
    if complete > m.total_windows:
        raise FormatError(f"{path}: {complete} records but header says {m.total_windows}")
    records = np.frombuffer(body, dtype="<f8").reshape(m.total_windows, 2 * m.n + 1)
    X = records[:, :-1].astype(np.float64)
    y = records[:, -1].astype(np.float64)
    return Dataset(m, X, y)


def export_csv(dataset: Dataset, path) -> None:
    n = dataset.manifest.n
    cols = [f"{name}_{i}" for i in range(1, n + 1) for name in ("lambda", "mu")]
    np.savetxt(
        path,
        np.column_stack([dataset.X, dataset.y]),
        delimiter=",",
        header=",".join(cols + ["lambda_star"]),
        comments="",
        fmt="%.17g",
    )


def train_test_split_indices(num: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([int(seed), 0x5EED])
    perm = rng.permutation(num)
    k = int(round(num * test_fraction))
    return perm[k:], perm[:k]

