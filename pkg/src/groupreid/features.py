"""Multi-granularity group features.

A group image with person boxes becomes a :class:`GroupGraph`: one stripe
histogram descriptor per person, log-distance / polar-angle histograms per
ordered person pair, and internal-angle sines per person triple.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy.signal import fftconvolve
from skimage import color
from skimage.filters import gabor_kernel
from skimage.transform import resize

CROP_HEIGHT = 128
CROP_WIDTH = 48
N_STRIPES = 18
N_BINS = 16
N_COLOR_CHANNELS = 15  # RGB, HSV, YCbCr, Lab, YIQ
GABOR_FREQUENCIES = (0.08, 0.12, 0.18, 0.27)
GABOR_ORIENTATIONS = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)
N_CHANNELS = N_COLOR_CHANNELS + len(GABOR_FREQUENCIES) * len(GABOR_ORIENTATIONS)
DESCRIPTOR_DIM = N_STRIPES * N_CHANNELS * N_BINS  # 8928

N_LOG_BINS = 9
N_POLAR_BINS = 9
SIGMA_LOG = 5.0
SIGMA_POLAR = 5.0
# smallest relative distance the log-distance bins resolve; closer pairs
# (including coincident centres) fall into bin 0
MIN_RHO = 1e-3

RANSAC_ITERATIONS = 500
RANSAC_THRESHOLD = 0.025  # fraction of the image diagonal

# (low, high) of every color channel in the order they are stacked
_COLOR_RANGES = np.array(
    [(0.0, 1.0)] * 3                                   # RGB
    + [(0.0, 1.0)] * 3                                 # HSV
    + [(16.0, 235.0), (16.0, 240.0), (16.0, 240.0)]    # YCbCr, BT.601
    + [(0.0, 100.0), (-128.0, 127.0), (-128.0, 127.0)]  # CIELAB, D65
    + [(0.0, 1.0), (-0.5957, 0.5957), (-0.5226, 0.5226)]  # YIQ
)


@dataclass(frozen=True)
class PersonCrop:
    pixels: np.ndarray  # (128, 48, 3) float RGB in [0, 1]
    center: tuple[float, float]
    index: int = 0


def make_crop(image: np.ndarray, box, index: int = 0) -> PersonCrop:
    """Cut ``box = (x, y, w, h)`` out of ``image`` and resize it to 128x48."""
    x, y, w, h = (int(round(v)) for v in box)
    H, W = image.shape[:2]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, W), min(y + h, H)
    if x1 <= x0 or y1 <= y0:
        raise ValueError("empty crop")
    patch = _as_float_rgb(image[y0:y1, x0:x1])
    pixels = resize(patch, (CROP_HEIGHT, CROP_WIDTH, 3), order=1,
                    anti_aliasing=True, mode="edge")
    center = ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    return PersonCrop(pixels=np.clip(pixels, 0.0, 1.0), center=center, index=index)


def _as_float_rgb(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    img = img[..., :3]
    if img.dtype.kind in "ui":
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


@lru_cache(maxsize=None)
def _gabor_bank() -> tuple[tuple[np.ndarray, float], ...]:
    bank = []
    for freq in GABOR_FREQUENCIES:
        for theta in GABOR_ORIENTATIONS:
            k = gabor_kernel(freq, theta=theta)
            bank.append((k, float(np.abs(k).sum())))
    return tuple(bank)


def _gabor_channels(gray: np.ndarray) -> np.ndarray:
    out = np.empty(gray.shape + (len(_gabor_bank()),))
    for c, (kernel, bound) in enumerate(_gabor_bank()):
        ph, pw = kernel.shape[0] // 2, kernel.shape[1] // 2
        padded = np.pad(gray, ((ph, ph), (pw, pw)), mode="reflect")
        resp = fftconvolve(padded, kernel, mode="valid")
        # |response| <= sum|kernel| for pixels in [0, 1]
        out[..., c] = np.abs(resp) / bound
    return np.clip(out, 0.0, 1.0)


def _channel_stack(rgb: np.ndarray) -> np.ndarray:
    """All 31 channels of a crop, each mapped onto [0, 1]."""
    colour = np.concatenate(
        [rgb, color.rgb2hsv(rgb), color.rgb2ycbcr(rgb),
         color.rgb2lab(rgb), color.rgb2yiq(rgb)], axis=-1)
    lo, hi = _COLOR_RANGES[:, 0], _COLOR_RANGES[:, 1]
    colour = np.clip((colour - lo) / (hi - lo), 0.0, 1.0)
    gray = color.rgb2gray(rgb)
    return np.concatenate([colour, _gabor_channels(gray)], axis=-1)


def extract_person_descriptor(crop: PersonCrop | np.ndarray) -> np.ndarray:
    """Stripe histogram descriptor of a 128x48 crop.

    Layout is ``[stripe][channel][bin]``; every 16-bin block sums to one.
    """
    pixels = crop.pixels if isinstance(crop, PersonCrop) else crop
    pixels = _as_float_rgb(pixels)
    if pixels.size == 0 or min(pixels.shape[:2]) == 0:
        raise ValueError("empty crop")
    if pixels.shape[:2] != (CROP_HEIGHT, CROP_WIDTH):
        pixels = resize(pixels, (CROP_HEIGHT, CROP_WIDTH, 3), order=1,
                        anti_aliasing=True, mode="edge")
    channels = _channel_stack(np.clip(pixels, 0.0, 1.0))
    bins = np.minimum((channels * N_BINS).astype(np.int64), N_BINS - 1)
    offsets = np.arange(N_CHANNELS) * N_BINS
    hist = np.empty((N_STRIPES, N_CHANNELS * N_BINS))
    for s, rows in enumerate(np.array_split(np.arange(CROP_HEIGHT), N_STRIPES)):
        flat = (bins[rows] + offsets).ravel()
        counts = np.bincount(flat, minlength=N_CHANNELS * N_BINS)
        hist[s] = counts / (len(rows) * CROP_WIDTH)
    return hist.ravel()


def block_view(descriptor: np.ndarray) -> np.ndarray:
    return np.asarray(descriptor).reshape(N_STRIPES, N_CHANNELS, N_BINS)


# --------------------------------------------------------------------------
# geometry


def _principal_direction(points: np.ndarray) -> np.ndarray:
    centred = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    return vt[0]


def _canonical_sign(d: np.ndarray) -> np.ndarray:
    d = d / np.linalg.norm(d)
    if d[0] < -1e-12 or (abs(d[0]) <= 1e-12 and d[1] < 0):
        d = -d
    return d


def fit_reference_direction(centers, image_size=None, *,
                            iterations: int = RANSAC_ITERATIONS,
                            threshold: float = RANSAC_THRESHOLD,
                            seed: int = 0) -> np.ndarray:
    """RANSAC line direction through person centres, as a unit 2-vector.

    The sign is fixed so that x >= 0 (y > 0 for vertical lines). When every
    point pair fits in ``iterations`` hypotheses, all pairs are tried instead
    of sampling.
    """
    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("no centers")
    if len(pts) == 1:
        return np.array([1.0, 0.0])
    if len(pts) == 2:
        d = pts[1] - pts[0]
        if np.linalg.norm(d) == 0:
            return np.array([1.0, 0.0])
        return _canonical_sign(d)

    if image_size is not None:
        diag = math.hypot(*image_size)
    else:
        diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if diag == 0:
        return np.array([1.0, 0.0])
    tol = threshold * diag

    n = len(pts)
    all_pairs = list(itertools.combinations(range(n), 2))
    if len(all_pairs) <= iterations:
        hypotheses = all_pairs
    else:
        rng = np.random.default_rng(seed)
        hypotheses = [tuple(rng.choice(n, 2, replace=False)) for _ in range(iterations)]

    best_inliers, best_err = None, np.inf
    for a, b in hypotheses:
        d = pts[b] - pts[a]
        norm = np.linalg.norm(d)
        if norm == 0:
            continue
        normal = np.array([-d[1], d[0]]) / norm
        resid = np.abs((pts - pts[a]) @ normal)
        inliers = resid <= tol
        err = resid[inliers].sum()
        count = inliers.sum()
        if best_inliers is None or count > best_inliers.sum() or (
                count == best_inliers.sum() and err < best_err):
            best_inliers, best_err = inliers, err
    if best_inliers is None:
        return np.array([1.0, 0.0])
    return _canonical_sign(_principal_direction(pts[best_inliers]))


def _gaussian(x: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-0.5 * (x / sigma) ** 2)


def log_distance_bin(rho: float, n_bins: int = N_LOG_BINS) -> int:
    """Bin of a relative distance on the log scale [log MIN_RHO, 0]."""
    lo = math.log(MIN_RHO)
    rho = max(rho, MIN_RHO)
    m = int(math.floor((math.log(rho) - lo) / -lo * n_bins))
    return min(max(m, 0), n_bins - 1)


def log_distance_hist(m: int, n_bins: int = N_LOG_BINS, sigma: float = SIGMA_LOG) -> np.ndarray:
    h = _gaussian(np.arange(n_bins) - m, sigma)
    return h / h.sum()


def polar_angle_bin(theta: float, n_bins: int = N_POLAR_BINS) -> int:
    theta = theta % (2 * math.pi)
    return min(int(theta / (2 * math.pi / n_bins)), n_bins - 1)


def polar_angle_hist(m: int, n_bins: int = N_POLAR_BINS, sigma: float = SIGMA_POLAR) -> np.ndarray:
    # offset wrapped into [-n/2, n/2) so the window is symmetric about bin m
    x = (np.arange(n_bins) - m + n_bins / 2) % n_bins - n_bins / 2
    h = _gaussian(x, sigma) + _gaussian(x + n_bins, sigma) + _gaussian(x - n_bins, sigma)
    return h / h.sum()


def triangle_angles(a, b, c) -> tuple[np.ndarray, bool]:
    """Internal angles at ``a``, ``b``, ``c``; collinear input gives (0, 0, pi)."""
    pts = np.asarray([a, b, c], dtype=np.float64)
    sides = [pts[(t + 1) % 3] - pts[t] for t in range(3)]
    longest = max(float(np.dot(s, s)) for s in sides)
    cross = sides[0][0] * sides[2][1] - sides[0][1] * sides[2][0]
    if longest == 0 or abs(cross) <= 1e-9 * longest:
        return np.array([0.0, 0.0, math.pi]), True
    angles = np.empty(3)
    for t in range(3):
        u = pts[(t + 1) % 3] - pts[t]
        v = pts[(t + 2) % 3] - pts[t]
        cos = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
        angles[t] = math.acos(min(1.0, max(-1.0, cos)))
    return angles, False


@dataclass(frozen=True)
class EdgeAttribute:
    i: int
    j: int
    log_distance_hist: np.ndarray
    polar_angle_hist: np.ndarray
    rho: float
    theta: float
    node_i: np.ndarray = field(repr=False)
    node_j: np.ndarray = field(repr=False)

    @property
    def composite(self) -> np.ndarray:
        return np.concatenate([self.node_i, self.node_j,
                               self.log_distance_hist, self.polar_angle_hist])


@dataclass(frozen=True)
class HyperEdgeAttribute:
    vertices: tuple[int, int, int]
    internal_angles: np.ndarray  # sines of the angles at each vertex
    degenerate: bool
    nodes: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)
    edges: tuple[EdgeAttribute, EdgeAttribute, EdgeAttribute] = field(repr=False)

    @property
    def composite(self) -> np.ndarray:
        parts = list(self.nodes)
        for e in self.edges:
            parts += [e.log_distance_hist, e.polar_angle_hist]
        return np.concatenate(parts + [self.internal_angles])


@dataclass(frozen=True, eq=False)
class GroupGraph:
    """One group image: person descriptors, centres and derived geometry.

    Geometry arrays are computed once and cached; the instance is treated as
    immutable.
    """

    descriptors: np.ndarray          # (n, D)
    centers: np.ndarray              # (n, 2) pixel coordinates
    image_size: tuple[float, float]  # (w, h)
    reference_direction: np.ndarray  # unit 2-vector
    group_id: str = ""
    person_ids: tuple[str, ...] = ()
    global_descriptor: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.descriptors)

    @property
    def diag(self) -> float:
        return math.hypot(*self.image_size)

    @cached_property
    def distances(self) -> np.ndarray:
        diff = self.centers[:, None, :] - self.centers[None, :, :]
        return np.sqrt((diff ** 2).sum(-1))

    @cached_property
    def _edge_geometry(self):
        n = self.n
        L = np.zeros((n, n, N_LOG_BINS))
        P = np.zeros((n, n, N_POLAR_BINS))
        rho = np.zeros((n, n))
        theta = np.zeros((n, n))
        ref_angle = math.atan2(self.reference_direction[1], self.reference_direction[0])
        for i, j in itertools.permutations(range(n), 2):
            d = self.centers[j] - self.centers[i]
            r = float(np.hypot(*d)) / self.diag
            t = (math.atan2(d[1], d[0]) - ref_angle) % (2 * math.pi) if np.any(d) else 0.0
            rho[i, j], theta[i, j] = r, t
            L[i, j] = log_distance_hist(log_distance_bin(r))
            P[i, j] = polar_angle_hist(polar_angle_bin(t))
        return L, P, rho, theta

    @property
    def log_distance(self) -> np.ndarray:
        """(n, n, n_L) log-distance histograms of ordered pairs."""
        return self._edge_geometry[0]

    @property
    def polar_angle(self) -> np.ndarray:
        """(n, n, n_P) polar-angle histograms of ordered pairs."""
        return self._edge_geometry[1]

    @cached_property
    def angle_sines(self) -> np.ndarray:
        """(n, n, n, 3): sines of internal angles at (i, j, k) for distinct i, j, k."""
        n = self.n
        out = np.zeros((n, n, n, 3))
        for tri in itertools.combinations(range(n), 3):
            angles, _ = triangle_angles(*self.centers[list(tri)])
            sines = np.where(angles >= math.pi - 1e-12, 0.0, np.sin(angles))
            for perm in itertools.permutations(range(3)):
                out[tuple(tri[p] for p in perm)] = sines[list(perm)]
        return out

    @cached_property
    def triangle_internal_angles(self) -> dict[tuple[int, int, int], np.ndarray]:
        out = {}
        for tri in itertools.combinations(range(self.n), 3):
            out[tri] = triangle_angles(*self.centers[list(tri)])[0]
        return out

    @cached_property
    def edges(self) -> dict[tuple[int, int], EdgeAttribute]:
        return {(i, j): edge_attribute(self, i, j)
                for i, j in itertools.combinations(range(self.n), 2)}

    @cached_property
    def hyper_edges(self) -> dict[tuple[int, int, int], HyperEdgeAttribute]:
        return {t: hyper_edge_attribute(self, *t)
                for t in itertools.combinations(range(self.n), 3)}


def build_group_graph(descriptors, centers, image_size, *, group_id: str = "",
                      person_ids=(), global_descriptor=None,
                      reference_direction=None) -> GroupGraph:
    descriptors = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if len(descriptors) != len(centers):
        raise ValueError("descriptor/center count mismatch")
    if len(centers) == 0:
        raise ValueError("group has no persons")
    w, h = (float(v) for v in image_size)
    if reference_direction is None:
        reference_direction = fit_reference_direction(centers, (w, h))
    ref = np.asarray(reference_direction, dtype=np.float64)
    ref = ref / np.linalg.norm(ref)
    if global_descriptor is not None:
        global_descriptor = np.asarray(global_descriptor, dtype=np.float64)
    return GroupGraph(descriptors=descriptors, centers=centers, image_size=(w, h),
                      reference_direction=ref, group_id=str(group_id),
                      person_ids=tuple(str(p) for p in person_ids) or
                      tuple(str(i) for i in range(len(centers))),
                      global_descriptor=global_descriptor)


def edge_attribute(g: GroupGraph, i: int, j: int) -> EdgeAttribute:
    if i == j:
        raise ValueError("edge endpoints must differ")
    L, P, rho, theta = g._edge_geometry
    return EdgeAttribute(i=i, j=j, log_distance_hist=L[i, j], polar_angle_hist=P[i, j],
                         rho=float(rho[i, j]), theta=float(theta[i, j]),
                         node_i=g.descriptors[i], node_j=g.descriptors[j])


def hyper_edge_attribute(g: GroupGraph, i: int, j: int, k: int) -> HyperEdgeAttribute:
    if len({i, j, k}) != 3:
        raise ValueError("hyper-edge vertices must be distinct")
    angles, degenerate = triangle_angles(g.centers[i], g.centers[j], g.centers[k])
    sines = np.zeros(3) if degenerate else np.sin(angles)
    return HyperEdgeAttribute(
        vertices=(i, j, k), internal_angles=sines, degenerate=degenerate,
        nodes=(g.descriptors[i], g.descriptors[j], g.descriptors[k]),
        edges=(edge_attribute(g, i, j), edge_attribute(g, j, k), edge_attribute(g, k, i)))


def expand_head_box(box, image_size, width_factor: float = 3.0,
                    height_factor: float = 7.0):
    """Body box grown from a head box, clamped to the image."""
    x, y, w, h = box
    W, H = image_size
    cx = x + w / 2.0
    bw, bh = w * width_factor, h * height_factor
    x0 = max(0.0, cx - bw / 2.0)
    x1 = min(float(W), cx + bw / 2.0)
    y0 = max(0.0, float(y))
    y1 = min(float(H), y + bh)
    return (x0, y0, x1 - x0, y1 - y0)


def global_descriptor(image: np.ndarray) -> np.ndarray:
    """Person descriptor applied to the whole group image."""
    return extract_person_descriptor(_as_float_rgb(image))
