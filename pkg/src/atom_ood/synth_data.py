"""Samplers for the Gaussian data model and the 2-D toy problem.

All samplers are pure functions of ``(spec, count, seed)``. Mixture and toy
samplers keep a per-row component tag on the batch for test assertions; the
tag is never written by the dataset writers.
"""

import enum
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import generator, normal


class SourceTag(enum.Enum):
    IN_DIST = "InDist"
    AUX_SPHERE = "AuxSphere"
    AUX_MIXTURE = "AuxMixture"
    OOD_SHELL = "OodShell"
    TOY2D = "Toy2d"


# component tags used by sample_aux_mixture
COMP_SPHERE, COMP_EASY, COMP_IN = 0, 1, 2


@dataclass(frozen=True)
class GaussianModelSpec:
    """Data model: in-distribution N(mu, sigma^2 I) plus auxiliary/OOD knobs."""

    mu: np.ndarray
    sigma: float
    gamma_margin: float
    sigma_o: float
    eta: float = 1.0
    nu: float = 0.1
    sigma_q: float = 10.0
    eps: float = 0.0
    eps_tau: float = 0.0

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).ravel()
        object.__setattr__(self, "mu", mu)
        scalars = dict(sigma=self.sigma, gamma_margin=self.gamma_margin,
                       sigma_o=self.sigma_o, eta=self.eta, nu=self.nu,
                       sigma_q=self.sigma_q, eps=self.eps, eps_tau=self.eps_tau)
        for name, value in scalars.items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if mu.size == 0 or not np.all(np.isfinite(mu)):
            raise ValueError("mu must be a nonempty finite vector")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.gamma_margin < math.sqrt(self.dim):
            raise ValueError(f"gamma_margin must lie in (0, sqrt(dim)), got {self.gamma_margin}")
        if self.sigma_o <= self.sigma:
            raise ValueError("sigma_o must exceed sigma")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if not 0 <= self.nu < 0.5:
            raise ValueError(f"nu must lie in [0, 1/2), got {self.nu}")
        if self.sigma_q <= 0:
            raise ValueError("sigma_q must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if not 0 <= self.eps_tau < 1:
            raise ValueError("eps_tau must lie in [0, 1)")

    @property
    def dim(self):
        return int(self.mu.size)

    @property
    def tau(self):
        d = math.sqrt(self.dim)
        return self.sigma * d + self.sigma * self.gamma_margin + self.eps * d

    def to_dict(self):
        return {
            "mu": [float(v) for v in self.mu], "sigma": self.sigma,
            "gamma_margin": self.gamma_margin, "sigma_o": self.sigma_o,
            "eta": self.eta, "nu": self.nu, "sigma_q": self.sigma_q,
            "eps": self.eps, "eps_tau": self.eps_tau,
        }

    @classmethod
    def isotropic(cls, dim, mu_norm=0.0, **kw):
        """Spec with mu = mu_norm * e_1 in ``dim`` dimensions."""
        mu = np.zeros(dim)
        mu[0] = mu_norm
        return cls(mu=mu, **kw)


@dataclass
class SampleBatch:
    points: np.ndarray
    labels: np.ndarray | None = None
    source_tag: SourceTag = SourceTag.IN_DIST
    components: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise ValueError("points must be a (count, dim) matrix")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.points),):
                raise ValueError("label count does not match row count")
        if self.components is not None:
            self.components = np.asarray(self.components)
            if len(self.components) != len(self.points):
                raise ValueError("component tags do not match row count")

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    def subset(self, index):
        """Rows selected by an index or mask, tags carried along."""
        return SampleBatch(
            self.points[index],
            None if self.labels is None else self.labels[index],
            self.source_tag,
            None if self.components is None else self.components[index],
        )


def _check_count(count):
    if int(count) != count or count < 1:
        raise ValueError(f"count must be a positive integer, got {count}")
    return int(count)


def unit_directions(rng, count, dim):
    """Uniform directions on the unit sphere; zero draws are redrawn."""
    g = normal(rng, (count, dim))
    norms = np.linalg.norm(g, axis=1)
    bad = norms == 0.0
    while np.any(bad):
        g[bad] = normal(rng, (int(bad.sum()), dim))
        norms[bad] = np.linalg.norm(g[bad], axis=1)
        bad = norms == 0.0
    return g / norms[:, None]


def _tilted_directions(rng, count, dim, eta):
    # accept w.p. eta + (1 - eta) * [v_1 > 0]; density stays >= eta * uniform
    out = np.empty((count, dim))
    filled = 0
    while filled < count:
        want = count - filled
        batch = int(math.ceil(want * 2.0 / (1.0 + eta))) + 8
        v = unit_directions(rng, batch, dim)
        accept_p = np.where(v[:, 0] > 0, 1.0, eta)
        keep = v[rng.random(batch) < accept_p][:want]
        out[filled:filled + len(keep)] = keep
        filled += len(keep)
    return out


def _in_points(spec, count, rng):
    return spec.mu + spec.sigma * normal(rng, (count, spec.dim))


def _sphere_points(spec, count, rng):
    radius = spec.sigma_o * math.sqrt(spec.dim)
    if spec.eta == 1.0:
        v = unit_directions(rng, count, spec.dim)
    else:
        v = _tilted_directions(rng, count, spec.dim, spec.eta)
    return spec.mu + radius * v


def sample_in_dist(spec, count, seed):
    count = _check_count(count)
    return SampleBatch(_in_points(spec, count, generator(seed, 0)),
                       source_tag=SourceTag.IN_DIST)


def sample_aux_sphere(spec, count, seed):
    """Points on the sphere ||x - mu|| = sigma_o * sqrt(d)."""
    count = _check_count(count)
    if not 0 < spec.eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    return SampleBatch(_sphere_points(spec, count, generator(seed, 1)),
                       source_tag=SourceTag.AUX_SPHERE)


def sample_aux_mixture(spec, count, seed):
    """U_mix = nu U_X + (1 - 2 nu) N(0, sigma_q^2 I) + nu P_X, rows tagged."""
    count = _check_count(count)
    if not 0 <= spec.nu < 0.5:
        raise ValueError("nu must lie in [0, 1/2)")
    u = generator(seed, 2, 0).random(count)
    comp = np.where(u < spec.nu, COMP_SPHERE,
                    np.where(u < 1.0 - spec.nu, COMP_EASY, COMP_IN)).astype(np.int8)
    pts = np.empty((count, spec.dim))
    k = np.bincount(comp, minlength=3)
    if k[COMP_SPHERE]:
        pts[comp == COMP_SPHERE] = _sphere_points(spec, k[COMP_SPHERE], generator(seed, 2, 1))
    if k[COMP_EASY]:
        pts[comp == COMP_EASY] = spec.sigma_q * normal(generator(seed, 2, 2), (k[COMP_EASY], spec.dim))
    if k[COMP_IN]:
        pts[comp == COMP_IN] = _in_points(spec, k[COMP_IN], generator(seed, 2, 3))
    return SampleBatch(pts, source_tag=SourceTag.AUX_MIXTURE, components=comp)


def sample_ood_shell(spec, radius, count, seed):
    """Uniform on the sphere of ``radius`` around mu; in Q with eps_tau=0 when radius > tau."""
    count = _check_count(count)
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    v = unit_directions(generator(seed, 3), count, spec.dim)
    return SampleBatch(spec.mu + radius * v, source_tag=SourceTag.OOD_SHELL)


# -- 2-D toy problem ---------------------------------------------------------


@dataclass(frozen=True)
class ToyConfig:
    """Class-conditional Gaussians plus an outlier annulus around the origin."""

    class_means: tuple = ((-2.0, 0.0), (2.0, 0.0))
    sigma: float = 0.3
    annulus: tuple = (4.0, 6.0)

    def __post_init__(self):
        means = np.asarray(self.class_means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 2:
            raise ValueError("need at least two class means")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        check_annulus(self, *self.annulus)

    @property
    def num_classes(self):
        return len(self.class_means)

    @property
    def dim(self):
        return len(self.class_means[0])

    @property
    def support_radius(self):
        means = np.asarray(self.class_means, dtype=np.float64)
        return float(np.linalg.norm(means, axis=1).max()) + 3.0 * self.sigma


def check_annulus(cfg, r_lo, r_hi):
    if not 0 <= r_lo <= r_hi:
        raise ValueError(f"bad annulus [{r_lo}, {r_hi}]")
    if r_lo < cfg.support_radius:
        raise ValueError(
            f"annulus inner radius {r_lo} overlaps class supports "
            f"(needs >= {cfg.support_radius:.6g})")


def sample_annulus(r_lo, r_hi, count, seed, dim=2):
    """Uniform (by volume) on the shell r_lo <= ||x|| <= r_hi."""
    count = _check_count(count)
    if not 0 <= r_lo <= r_hi:
        raise ValueError(f"bad annulus [{r_lo}, {r_hi}]")
    return SampleBatch(_annulus_points(r_lo, r_hi, count, generator(seed, 4), dim),
                       source_tag=SourceTag.TOY2D)


def _annulus_points(r_lo, r_hi, count, rng, dim):
    v = unit_directions(rng, count, dim)
    lo, hi = r_lo ** dim, r_hi ** dim
    r = (lo + (hi - lo) * rng.random(count)) ** (1.0 / dim)
    return r[:, None] * v


def sample_toy2d(cfg, count_per_class, seed, outlier_count=0):
    """Labeled class points (labels 1..K), then annulus outliers labeled K+1."""
    count_per_class = _check_count(count_per_class)
    rng = generator(seed, 6, 0)
    means = np.asarray(cfg.class_means, dtype=np.float64)
    k = len(means)
    labels = np.repeat(np.arange(1, k + 1), count_per_class)
    pts = means[labels - 1] + cfg.sigma * normal(rng, (len(labels), cfg.dim))
    comps = labels.copy()
    if outlier_count:
        out = _annulus_points(*cfg.annulus, outlier_count, generator(seed, 6, 1), cfg.dim)
        pts = np.vstack([pts, out])
        labels = np.concatenate([labels, np.full(outlier_count, k + 1)])
        comps = labels.copy()
    return SampleBatch(pts, labels, SourceTag.TOY2D, components=comps)


# -- dataset files -----------------------------------------------------------

_MAGIC = b"ATM1"


def write_csv(batch, path):
    labeled = batch.labels is not None
    buf = io.StringIO()
    buf.write(f"dim={batch.dim},count={len(batch)},labeled={int(labeled)}\n")
    for i, row in enumerate(batch.points):
        cells = ["%.17g" % v for v in row]
        if labeled:
            cells.append(str(int(batch.labels[i])))
        buf.write(",".join(cells) + "\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def read_csv(path, source_tag=SourceTag.IN_DIST):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            meta = dict(item.split("=", 1) for item in header.split(","))
            dim, count, labeled = int(meta["dim"]), int(meta["count"]), meta["labeled"] == "1"
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: bad dataset header {header!r}") from exc
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if len(rows) != count:
        raise ValueError(f"{path}: header says {count} rows, found {len(rows)}")
    width = dim + int(labeled)
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: expected {width} columns per row")
    pts = np.array([[float(v) for v in r[:dim]] for r in rows]).reshape(count, dim)
    labels = np.array([int(r[dim]) for r in rows]) if labeled else None
    return SampleBatch(pts, labels, source_tag)


def write_binary(batch, path):
    labeled = batch.labels is not None
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQB", batch.dim, len(batch), int(labeled)))
        fh.write(batch.points.astype("<f8").tobytes())
        if labeled:
            fh.write(batch.labels.astype("<u4").tobytes())


def read_binary(path, source_tag=SourceTag.IN_DIST):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not an ATM1 dataset")
    dim, count, labeled = struct.unpack_from("<IQB", data, 4)
    off = 4 + struct.calcsize("<IQB")
    nvals = dim * count
    pts = np.frombuffer(data, "<f8", nvals, off).reshape(count, dim).astype(np.float64)
    labels = None
    if labeled:
        labels = np.frombuffer(data, "<u4", count, off + 8 * nvals).astype(np.int64)
    return SampleBatch(pts, labels, source_tag)


def read_dataset(path, source_tag=SourceTag.IN_DIST):
    """Dispatch on extension: ``.bin`` is binary, anything else CSV."""
    if str(path).endswith(".bin"):
        return read_binary(path, source_tag)
    return read_csv(path, source_tag)
