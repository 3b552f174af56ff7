"""Dataset ingestion (manifests, descriptor caches) and synthetic benchmarks.

Manifest JSON, version 1::

    {
      "version": 1,
      "cameras": {"A": "exit", "B": "road"},
      "descriptorCache": "descriptors.grpd",        # optional, image-free mode
      "groups": [
        {"groupId": "g1", "camera": "A",
         "imagePath": "img/g1.png",                  # image mode
         "imageSize": [640, 360],                    # image-free mode
         "globalDescriptor": [...],                  # optional
         "persons": [
           {"personId": "p1", "box": [x, y, w, h], "kind": "head" | "body",
            "center": [x, y], "descriptor": [...]}   # center/descriptor: image-free
         ]}
      ],
      "pairs": [
        {"probeGroupId": "g1", "galleryGroupId": "g7",
         "personCorrespondences": [["p1", "p4"], ...]}
      ]
    }

Camera A groups are probes, camera B groups are galleries. In image-free
mode each person needs a ``center`` and a descriptor, given inline or taken
from the group's entry in ``descriptorCache``.
"""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .features import (DESCRIPTOR_DIM, N_BINS, N_STRIPES, GroupGraph, build_group_graph,
                       expand_head_box, extract_person_descriptor, global_descriptor,
                       make_crop)
from .importance import lof_scores
from .pipeline import ReIdTask

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
CACHE_MAGIC = b"GRPD"
CACHE_VERSION = 1


class ManifestError(ValueError):
    pass


MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["version", "groups"],
    "properties": {
        "version": {"const": MANIFEST_VERSION},
        "cameras": {"type": "object",
                    "properties": {"A": {"type": "string"}, "B": {"type": "string"}}},
        "descriptorCache": {"type": "string"},
        "groups": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["groupId", "camera", "persons"],
                "properties": {
                    "groupId": {"type": "string", "minLength": 1},
                    "camera": {"enum": ["A", "B"]},
                    "imagePath": {"type": "string"},
                    "imageSize": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                                  "minItems": 2, "maxItems": 2},
                    "globalDescriptor": {"type": "array", "items": {"type": "number"}},
                    "persons": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["personId"],
                            "properties": {
                                "personId": {"type": "string", "minLength": 1},
                                "box": {"type": "array", "items": {"type": "number"},
                                        "minItems": 4, "maxItems": 4},
                                "kind": {"enum": ["head", "body"]},
                                "center": {"type": "array", "items": {"type": "number"},
                                           "minItems": 2, "maxItems": 2},
                                "descriptor": {"type": "array", "items": {"type": "number", "minimum": 0}},
                            },
                        },
                    },
                },
            },
        },
        "pairs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["probeGroupId", "galleryGroupId"],
                "properties": {
                    "probeGroupId": {"type": "string"},
                    "galleryGroupId": {"type": "string"},
                    "personCorrespondences": {
                        "type": "array",
                        "items": {"type": "array", "items": {"type": "string"},
                                  "minItems": 2, "maxItems": 2}},
                },
            },
        },
    },
}


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def validate_manifest(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(MANIFEST_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ManifestError(f"{_pointer(e.absolute_path)}: {e.message}")
    if not doc["groups"]:
        raise ManifestError("/groups: no groups")
    ids = set()
    for gi, g in enumerate(doc["groups"]):
        if g["groupId"] in ids:
            raise ManifestError(f"/groups/{gi}/groupId: duplicate group id {g['groupId']!r}")
        ids.add(g["groupId"])
        pids = [p["personId"] for p in g["persons"]]
        if len(set(pids)) != len(pids):
            raise ManifestError(f"/groups/{gi}/persons: duplicate person ids")
    by_id = {g["groupId"]: g for g in doc["groups"]}
    for pi, pair in enumerate(doc.get("pairs", [])):
        for key, cam in (("probeGroupId", "A"), ("galleryGroupId", "B")):
            gid = pair[key]
            if gid not in by_id:
                raise ManifestError(f"/pairs/{pi}/{key}: unknown group {gid!r}")
            if by_id[gid]["camera"] != cam:
                raise ManifestError(f"/pairs/{pi}/{key}: group {gid!r} is not in camera {cam}")
        probe_p = {p["personId"] for p in by_id[pair["probeGroupId"]]["persons"]}
        gal_p = {p["personId"] for p in by_id[pair["galleryGroupId"]]["persons"]}
        for ci, (a, b) in enumerate(pair.get("personCorrespondences", [])):
            if a not in probe_p or b not in gal_p:
                raise ManifestError(f"/pairs/{pi}/personCorrespondences/{ci}: unknown person")
        _check_group_identity(pair, len(probe_p), len(gal_p))


def _check_group_identity(pair: dict, n_p: int, n_q: int) -> None:
    shared = len(pair.get("personCorrespondences", []))
    if shared * 4 <= n_p + n_q:
        log.warning("pair %s/%s shares %d of %d persons; below the one-quarter group criterion",
                    pair["probeGroupId"], pair["galleryGroupId"], shared, n_p + n_q)


def _check_box(box, image_size, where: str) -> None:
    x, y, w, h = box
    W, H = image_size
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > W + 1e-6 or y + h > H + 1e-6:
        raise ManifestError(f"{where}: box {list(box)} outside image bounds {list(image_size)}")


def _load_image(path: Path) -> np.ndarray:
    from PIL import Image

    if not path.exists():
        raise FileNotFoundError(f"missing image: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def _group_from_doc(g: dict, gi: int, base: Path, cache: dict) -> GroupGraph:
    where = f"/groups/{gi}"
    cached = cache.get(g["groupId"])
    person_ids = [p["personId"] for p in g["persons"]]
    if "imagePath" in g and cached is None:
        image = _load_image(base / g["imagePath"])
        size = (image.shape[1], image.shape[0])
        descs, centers = [], []
        for k, p in enumerate(g["persons"]):
            if "box" not in p:
                raise ManifestError(f"{where}/persons/{k}: image mode needs a box")
            _check_box(p["box"], size, f"{where}/persons/{k}/box")
            box = expand_head_box(p["box"], size) if p.get("kind") == "head" else p["box"]
            crop = make_crop(image, box, k)
            descs.append(extract_person_descriptor(crop))
            centers.append(crop.center)
        return build_group_graph(descs, centers, size, group_id=g["groupId"],
                                 person_ids=person_ids, global_descriptor=global_descriptor(image))
    if cached is not None:
        if list(cached.person_ids) != person_ids:
            raise ManifestError(f"{where}: descriptor cache persons differ from manifest")
        return cached
    if "imageSize" not in g:
        raise ManifestError(f"{where}: needs imagePath or imageSize")
    size = tuple(g["imageSize"])
    descs, centers = [], []
    for k, p in enumerate(g["persons"]):
        if "descriptor" not in p or "center" not in p:
            raise ManifestError(f"{where}/persons/{k}: image-free mode needs center and descriptor")
        if "box" in p:
            _check_box(p["box"], size, f"{where}/persons/{k}/box")
        cx, cy = p["center"]
        if not (0 <= cx <= size[0] and 0 <= cy <= size[1]):
            raise ManifestError(f"{where}/persons/{k}/center: outside image bounds")
        descs.append(p["descriptor"])
        centers.append(p["center"])
    return build_group_graph(descs, centers, size, group_id=g["groupId"], person_ids=person_ids,
                             global_descriptor=g.get("globalDescriptor"))


def task_from_manifest(doc: dict, base: Path | str = ".", limit: int | None = None) -> ReIdTask:
    validate_manifest(doc)
    base = Path(base)
    cache = {}
    if "descriptorCache" in doc:
        cache_path = base / doc["descriptorCache"]
        if not cache_path.exists():
            raise FileNotFoundError(f"missing descriptor cache: {cache_path}")
        cache = {g.group_id: g for g in read_cache(cache_path)[0]}
    groups = doc["groups"] if limit is None else doc["groups"][:limit]
    probes, galleries = [], []
    for gi, g in enumerate(groups):
        graph = _group_from_doc(g, gi, base, cache)
        (probes if g["camera"] == "A" else galleries).append(graph)
    by_id = {g.group_id: g for g in probes + galleries}
    truth, corr = {}, {}
    for pair in doc.get("pairs", []):
        p, q = pair["probeGroupId"], pair["galleryGroupId"]
        if p not in by_id or q not in by_id:
            continue
        truth[p] = q
        pi = {pid: k for k, pid in enumerate(by_id[p].person_ids)}
        qi = {pid: k for k, pid in enumerate(by_id[q].person_ids)}
        corr[(p, q)] = [(pi[a], qi[b]) for a, b in pair.get("personCorrespondences", [])]
    return ReIdTask(probes, galleries, truth, corr)


def load_manifest(path, limit: int | None = None) -> ReIdTask:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing manifest: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    return task_from_manifest(doc, path.parent, limit)


def task_to_manifest(task: ReIdTask, cache_name: str | None = None) -> dict:
    """Image-free manifest of a task; descriptors inline unless ``cache_name`` is set."""
    def group_doc(g: GroupGraph, camera: str) -> dict:
        doc = {"groupId": g.group_id, "camera": camera, "imageSize": list(g.image_size), "persons": []}
        for k in range(g.n):
            person = {"personId": g.person_ids[k], "center": [float(v) for v in g.centers[k]]}
            if cache_name is None:
                person["descriptor"] = g.descriptors[k].tolist()
            doc["persons"].append(person)
        if cache_name is None and g.global_descriptor is not None:
            doc["globalDescriptor"] = g.global_descriptor.tolist()
        return doc

    doc = {"version": MANIFEST_VERSION, "cameras": {"A": "A", "B": "B"}}
    if cache_name is not None:
        doc["descriptorCache"] = cache_name
    doc["groups"] = ([group_doc(g, "A") for g in task.probes]
                     + [group_doc(g, "B") for g in task.galleries])
    by_id = {g.group_id: g for g in task.probes + task.galleries}
    doc["pairs"] = [
        {"probeGroupId": p, "galleryGroupId": q,
         "personCorrespondences": [[by_id[p].person_ids[i], by_id[q].person_ids[a]]
                                   for i, a in task.correspondences.get((p, q), [])]}
        for p, q in sorted(task.ground_truth.items())]
    return doc


def save_task(task: ReIdTask, path, with_cache: bool = True) -> None:
    """Write a task as manifest JSON (+ sibling ``.grpd`` descriptor cache)."""
    path = Path(path)
    cache_name = path.with_suffix(".grpd").name if with_cache else None
    doc = task_to_manifest(task, cache_name)
    if with_cache:
        cameras = ["A"] * len(task.probes) + ["B"] * len(task.galleries)
        write_cache(path.parent / cache_name, task.probes + task.galleries, cameras)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))


# --------------------------------------------------------------------------
# binary descriptor cache (little-endian)
#
#   header   '<4sHHII'  magic "GRPD", version, reserved, n_groups, dim
#   group    str id, str camera, '<4d' w h ref_x ref_y, '<IB' n has_global,
#            n x str person id, n*2 f8 centers, n*dim f8 descriptors,
#            [dim f8 global descriptor]
#   str      '<H' byte length + utf-8 bytes


def _write_str(buf, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<H", len(b)))
    buf.write(b)


def write_cache(path, graphs: list[GroupGraph], cameras: list[str]) -> None:
    dim = graphs[0].descriptors.shape[1] if graphs else 0
    buf = io.BytesIO()
    buf.write(struct.pack("<4sHHII", CACHE_MAGIC, CACHE_VERSION, 0, len(graphs), dim))
    for g, cam in zip(graphs, cameras):
        if g.descriptors.shape[1] != dim:
            raise ValueError("all descriptors in a cache must share one dimension")
        _write_str(buf, g.group_id)
        _write_str(buf, cam)
        buf.write(struct.pack("<4d", *g.image_size, *g.reference_direction))
        has_global = g.global_descriptor is not None
        buf.write(struct.pack("<IB", g.n, int(has_global)))
        for pid in g.person_ids:
            _write_str(buf, pid)
        buf.write(np.ascontiguousarray(g.centers, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(g.descriptors, dtype="<f8").tobytes())
        if has_global:
            buf.write(np.ascontiguousarray(g.global_descriptor, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_cache(path) -> tuple[list[GroupGraph], list[str]]:
    data = memoryview(Path(path).read_bytes())
    pos = 0

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    def take_str():
        (n,) = take("<H")
        return bytes(take(f"<{n}s")[0]).decode("utf-8")

    def take_f8(count):
        nonlocal pos
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr

    magic, version, _, n_groups, dim = take("<4sHHII")
    if magic != CACHE_MAGIC:
        raise ValueError(f"{path}: not a descriptor cache")
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    graphs, cameras = [], []
    for _ in range(n_groups):
        gid = take_str()
        cam = take_str()
        w, h, rx, ry = take("<4d")
        n, has_global = take("<IB")
        pids = [take_str() for _ in range(n)]
        centers = take_f8(2 * n).reshape(n, 2)
        descs = take_f8(n * dim).reshape(n, dim)
        glob = take_f8(dim) if has_global else None
        graphs.append(build_group_graph(descs, centers, (w, h), group_id=gid, person_ids=pids,
                                        global_descriptor=glob, reference_direction=(rx, ry)))
        cameras.append(cam)
    return graphs, cameras


# --------------------------------------------------------------------------
# synthetic benchmark


@dataclass(frozen=True)
class SynthConfig:
    n_pairs: int = 100
    size_min: int = 3
    size_max: int = 6
    layout_noise: float = 0.05     # view change scale: rotation (rad), log-scale, shift/diag
    feature_noise: float = 0.02    # per-dimension Gaussian sigma
    churn_rate: float = 0.2
    distractor_count: int = 10
    seed: int = 0
    image_size: tuple[float, float] = (640.0, 360.0)
    n_prototypes: int = 16
    n_common: int = 4
    common_prob: float = 0.7
    common_spread: float = 0.5     # how far common prototypes sit from their shared base
    prototype_weight: tuple[float, float] = (0.6, 0.95)
    peripheral_churn: float = 1.0  # 0: uniform churn, 1: leave odds proportional to outlierness
    background_weight: float = 0.5
    view_change: tuple[float, float] = (0.2, 0.5)  # camera-B blend with a fresh appearance
    n_communities: int = 10        # groups drawn from a community share a uniform look
    uniform_prob: float = 0.85
    lookalikes: int = 2
    lookalike_noise: float = 0.01
    formation_spread: float = 0.12  # across-axis spread, fraction of image height
    dim: int = DESCRIPTOR_DIM

    def __post_init__(self):
        for name in ("churn_rate", "common_prob", "common_spread", "background_weight",
                     "peripheral_churn", "uniform_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("prototype_weight", "view_change"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"{name} must be an ordered range inside [0, 1]")
        if self.size_min < 1 or self.size_max < self.size_min:
            raise ValueError("group sizes must satisfy 1 <= size_min <= size_max")
        if self.n_communities < 0:
            raise ValueError("n_communities must be >= 0")
        if self.n_pairs < 1 or self.distractor_count < 0:
            raise ValueError("n_pairs must be >= 1 and distractor_count >= 0")
        if self.layout_noise < 0 or self.feature_noise < 0:
            raise ValueError("noise levels must be non-negative")
        if self.dim % (N_STRIPES * N_BINS):
            raise ValueError("dim must be a multiple of stripes x bins")
        if not 0 <= self.n_common <= self.n_prototypes:
            raise ValueError("n_common must lie in [0, n_prototypes]")


# stripe ranges of the body regions that carry one look each
_HEAD, _UPPER, _LOWER = range(0, 3), range(3, 10), range(10, N_STRIPES)
_HEAD_LOOKS = 3
# minimum distance between two members, as a fraction of the image diagonal
MIN_GAP = 0.1


class _Synth:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.stripe_blocks = cfg.dim // (N_STRIPES * N_BINS)
        # common garment looks are variants of one base; rare looks are independent
        base = self._stripe_hist(0.3)
        self.looks = [
            (1 - cfg.common_spread) * base + cfg.common_spread * self._stripe_hist(0.3)
            if k < cfg.n_common else self._stripe_hist(0.3)
            for k in range(cfg.n_prototypes)]
        self.head_looks = [self._stripe_hist(0.3) for _ in range(_HEAD_LOOKS)]
        self.uniforms = [(self._stripe_hist(0.3), self._stripe_hist(0.3))
                         for _ in range(cfg.n_communities)]
        self.backgrounds = {cam: self._random_hist(0.5) for cam in ("A", "B")}
        self.identities: list[np.ndarray] = []
        self.W, self.H = cfg.image_size
        self.diag = math.hypot(self.W, self.H)

    def _stripe_hist(self, concentration: float) -> np.ndarray:
        return self.rng.dirichlet(np.full(N_BINS, concentration), size=self.stripe_blocks).ravel()

    def _random_hist(self, concentration: float) -> np.ndarray:
        return np.concatenate([self._stripe_hist(concentration) for _ in range(N_STRIPES)])

    def _garment(self) -> np.ndarray:
        cfg = self.cfg
        if cfg.n_common and self.rng.random() < cfg.common_prob:
            return self.looks[self.rng.integers(cfg.n_common)]
        return self.looks[self.rng.integers(cfg.n_common, cfg.n_prototypes)]

    def community(self) -> int | None:
        return int(self.rng.integers(self.cfg.n_communities)) if self.cfg.n_communities else None

    def new_identity(self, community: int | None = None) -> int:
        """A person: one look per body region blended with personal detail.

        Members of a community wear its uniform with probability ``uniform_prob``.
        """
        cfg = self.cfg
        if community is not None and self.rng.random() < cfg.uniform_prob:
            upper, lower = self.uniforms[community]
        else:
            upper, lower = self._garment(), self._garment()
        region_looks = [(_HEAD, self.head_looks[self.rng.integers(_HEAD_LOOKS)]),
                        (_UPPER, upper), (_LOWER, lower)]
        w = self.rng.uniform(*cfg.prototype_weight)
        stripes = [None] * N_STRIPES
        for rows, look in region_looks:
            for s in rows:
                stripes[s] = w * look + (1 - w) * self._stripe_hist(1.0)
        self.identities.append(np.concatenate(stripes))
        return len(self.identities) - 1

    def lookalike(self, ident: int) -> int:
        desc = self._noisy(self.identities[ident], self.cfg.lookalike_noise)
        self.identities.append(desc)
        return len(self.identities) - 1

    def _noisy(self, desc: np.ndarray, sigma: float) -> np.ndarray:
        if sigma == 0:
            return desc.copy()
        out = np.maximum(desc + self.rng.normal(0.0, sigma, desc.shape), 0.0).reshape(-1, N_BINS)
        sums = out.sum(axis=1, keepdims=True)
        flat = np.full_like(out, 1.0 / N_BINS)
        out = np.where(sums > 0, out / np.where(sums > 0, sums, 1.0), flat)
        return out.ravel()

    def view(self, ident: int, camera: str) -> np.ndarray:
        desc = self.identities[ident]
        if camera == "A":
            return desc.copy()
        lo, hi = self.cfg.view_change
        if hi > 0:
            beta = self.rng.uniform(lo, hi)
            desc = (1 - beta) * desc + beta * self._random_hist(1.0)
        return self._noisy(desc, self.cfg.feature_noise)

    def layout(self, n: int) -> np.ndarray:
        """Person centres of a loose, roughly horizontal formation.

        Members spread along a main axis tilted by a few degrees, with a
        smaller spread across it and at least one body width between them.
        """
        min_gap = MIN_GAP * self.diag
        tilt = self.rng.normal(0.0, 0.25)
        axis = np.array([math.cos(tilt), math.sin(tilt)])
        normal = np.array([-axis[1], axis[0]])
        centre = np.array([self.W / 2, self.H / 2])
        pts = []
        for _ in range(n):
            for _attempt in range(200):
                p = (centre + axis * self.rng.uniform(-0.38, 0.38) * self.W
                     + normal * self.rng.normal(0.0, self.cfg.formation_spread) * self.H)
                if all(np.linalg.norm(p - q) >= min_gap for q in pts):
                    break
            pts.append(p)
        return self.clamp(np.array(pts))

    def perturb(self, pts: np.ndarray) -> np.ndarray:
        """Similarity transform plus per-person jitter.

        Rotation (radians) and log-scale have standard deviation equal to the
        layout noise; the jitter is that fraction of the minimum person gap.
        """
        s = self.cfg.layout_noise
        if s == 0:
            return pts.copy()
        angle = self.rng.normal(0.0, s)
        scale = math.exp(self.rng.normal(0.0, s))
        shift = self.rng.normal(0.0, s * self.diag, 2)
        c = pts.mean(axis=0)
        R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        out = (pts - c) @ R.T * scale + c + shift
        out += self.rng.normal(0.0, s * MIN_GAP * self.diag, out.shape)
        return self.clamp(out)

    def clamp(self, pts: np.ndarray) -> np.ndarray:
        margin = 0.02 * self.diag
        pts = pts.copy()
        pts[:, 0] = np.clip(pts[:, 0], margin, self.W - margin)
        pts[:, 1] = np.clip(pts[:, 1], margin, self.H - margin)
        return pts

    def near(self, pts: np.ndarray) -> np.ndarray:
        base = pts[self.rng.integers(len(pts))] if len(pts) else np.array([self.W / 2, self.H / 2])
        p = base + self.rng.normal(0.0, 0.12 * self.diag, 2)
        return self.clamp(p[None, :])[0]

    def global_view(self, descs: np.ndarray, camera: str) -> np.ndarray:
        w = self.cfg.background_weight
        bg = 0.5 * self.backgrounds[camera] + 0.5 * self._random_hist(0.5)
        return (1 - w) * descs.mean(axis=0) + w * bg

    def graph(self, gid: str, camera: str, idents: list[int], centers: np.ndarray) -> GroupGraph:
        descs = np.array([self.view(i, camera) for i in idents])
        return build_group_graph(descs, centers, (self.W, self.H), group_id=gid,
                                 person_ids=[f"id{i:05d}" for i in idents],
                                 global_descriptor=self.global_view(descs, camera))


def _leave_probabilities(pts: np.ndarray, rate: float, peripheral: float) -> np.ndarray:
    """Per-member churn odds with mean ``rate``; outlying members churn more."""
    n = len(pts)
    if n < 3 or peripheral == 0:
        return np.full(n, rate)
    lof = lof_scores(pts)
    w = (1 - peripheral) + peripheral * lof / lof.mean()
    return np.clip(rate * w, 0.0, 1.0)


def generate_synthetic(cfg: SynthConfig | None = None) -> ReIdTask:
    """Group pairs seen by two cameras, plus camera-B distractor groups.

    Camera B sees each group under a perturbed layout, noisy appearance and
    member churn (leave or swap); distractors borrow look-alikes of members
    of real groups.
    """
    cfg = cfg or SynthConfig()
    sy = _Synth(cfg)
    rng = sy.rng
    probes, galleries, truth, corr = [], [], {}, {}
    for k in range(cfg.n_pairs):
        n = int(rng.integers(cfg.size_min, cfg.size_max + 1))
        com = sy.community()
        idents = [sy.new_identity(com) for _ in range(n)]
        pts_a = sy.layout(n)
        pts_b_all = sy.perturb(pts_a)
        members_b, pts_b = [], []
        leave = _leave_probabilities(pts_a, cfg.churn_rate, cfg.peripheral_churn)
        for m, ident in enumerate(idents):
            if rng.random() < leave[m]:
                if rng.random() < 0.5:
                    # replaced by a newcomer at the same spot
                    members_b.append(sy.new_identity(com))
                    pts_b.append(pts_b_all[m])
                continue
            members_b.append(ident)
            pts_b.append(pts_b_all[m])
        if not members_b:
            members_b.append(sy.new_identity(com))
            pts_b.append(sy.near(pts_b_all))
        pts_b = np.array(pts_b)
        order = rng.permutation(len(members_b))
        members_b = [members_b[o] for o in order]
        pts_b = pts_b[order]

        gA = sy.graph(f"A{k:04d}", "A", idents, pts_a)
        gB = sy.graph(f"B{k:04d}", "B", members_b, pts_b)
        probes.append(gA)
        galleries.append(gB)
        truth[gA.group_id] = gB.group_id
        pos_b = {ident: j for j, ident in enumerate(members_b)}
        corr[(gA.group_id, gB.group_id)] = [(i, pos_b[ident]) for i, ident in enumerate(idents)
                                            if ident in pos_b]

    n_real = len(sy.identities)
    for d in range(cfg.distractor_count):
        n = int(rng.integers(cfg.size_min, cfg.size_max + 1))
        com = sy.community()
        idents = [sy.new_identity(com) for _ in range(n)]
        for slot in rng.choice(n, min(cfg.lookalikes, n), replace=False):
            idents[slot] = sy.lookalike(int(rng.integers(n_real)))
        galleries.append(sy.graph(f"D{d:04d}", "B", idents, sy.perturb(sy.layout(n))))
    return ReIdTask(probes, galleries, truth, corr)
