"""Synthetic indoor scenes projected into camera pairs.

Produces object detections with ground-truth matches, per-pair difficulty
statistics, synthetic visual features, and synthetic keypoint matches.
All randomness flows through numpy Generators seeded explicitly
(PCG64 via np.random.default_rng), so identical (config, seed) inputs
reproduce bit-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SceneConfig

DIFFICULTY_BINS = ("easy", "hard", "very_hard")

# Difficulty thresholds: mean camera-distance difference (m) and mean
# angle between object-to-camera rays (degrees).
EASY_D, EASY_A = 4.0, 45.0
HARD_D, HARD_A = 8.0, 90.0


class SceneGenError(RuntimeError):
    """Placement or camera sampling failed after bounded retries."""


@dataclass
class SceneObject:
    instance_id: int
    label: int
    position: np.ndarray      # (3,) meters
    half_extent: np.ndarray   # (3,) meters, strictly positive
    latent: np.ndarray        # unit-norm identity vector, length d_viz


@dataclass
class Scene:
    objects: list
    room_size: tuple


@dataclass
class Camera:
    position: np.ndarray   # world coordinates, meters
    rotation: np.ndarray   # (3,3) world->camera
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("camera rotation is not orthonormal")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-9):
            raise ValueError("camera rotation must have determinant +1")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal length must be positive")

    def to_cam(self, p):
        return self.rotation @ (np.asarray(p, dtype=np.float64) - self.position)

    def intrinsics(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }


@dataclass
class Detection:
    instance_id: int
    label: int
    bbox: np.ndarray        # (x_min, y_min, x_max, y_max) normalized to [0,1]
    offset: np.ndarray      # (2,) bbox center -> projected 3D center, normalized units
    dist: float             # camera-to-center distance, meters
    center_cam: np.ndarray  # (3,) object center in camera frame
    view_angle: float       # radians, object canonical axis vs. camera ray


@dataclass
class ScenePair:
    pair_id: int
    det1: list
    det2: list
    gt_matches: list                 # [(i, j)] one-to-one
    rel_dist1: np.ndarray            # (M, M) GT pairwise center distances, meters
    rel_dist2: np.ndarray
    d_mean: float                    # mean |d1 - d2| over matched objects
    angle_mean_deg: float            # mean angle between object-to-camera rays
    difficulty: str
    cam1: dict                       # intrinsics
    cam2: dict
    feats1: np.ndarray = field(default=None)   # (M, d_viz)
    feats2: np.ndarray = field(default=None)
    keypoints: list = field(default_factory=list)  # [((u1,v1),(u2,v2))] normalized

    @property
    def n1(self) -> int:
        return len(self.det1)

    @property
    def n2(self) -> int:
        return len(self.det2)

    def unmatched(self):
        m1 = {i for i, _ in self.gt_matches}
        m2 = {j for _, j in self.gt_matches}
        return ([i for i in range(self.n1) if i not in m1],
                [j for j in range(self.n2) if j not in m2])


# -- scene construction -----------------------------------------------------


def generate_scene(cfg: SceneConfig, seed: int) -> Scene:
    """Place non-overlapping objects inside the room, deterministically."""
    if cfg.n_objects_min < 3:
        raise ValueError("need at least 3 objects per scene")
    if cfg.num_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    count = int(rng.integers(cfg.n_objects_min, cfg.n_objects_max + 1))
    w, l, _ = cfg.room_size
    objects = []
    centers = []
    for idx in range(count):
        for _ in range(cfg.max_placement_tries):
            he = rng.uniform(cfg.half_extent_min, cfg.half_extent_max, size=3)
            pos = np.array([
                rng.uniform(1.0, w - 1.0),
                rng.uniform(1.0, l - 1.0),
                rng.uniform(he[2], 1.8),
            ])
            if all(np.linalg.norm(pos - c) > cfg.min_center_dist for c in centers):
                break
        else:
            raise SceneGenError(
                f"could not place object {idx} after {cfg.max_placement_tries} tries"
            )
        latent = rng.standard_normal(cfg.d_viz)
        latent /= np.linalg.norm(latent)
        objects.append(SceneObject(
            instance_id=idx,
            label=int(rng.integers(0, cfg.num_classes)),
            position=pos,
            half_extent=he,
            latent=latent,
        ))
        centers.append(pos)
    return Scene(objects=objects, room_size=cfg.room_size)


def look_at_camera(position, target, cfg: SceneConfig) -> Camera:
    """Camera at `position` with optical axis toward `target` (z-up world)."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    nrm = np.linalg.norm(right)
    if nrm < 1e-9:
        raise ValueError("camera pointing straight up/down")
    right /= nrm
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return Camera(
        position=position, rotation=rot,
        fx=cfg.focal_px, fy=cfg.focal_px,
        cx=cfg.image_width / 2.0, cy=cfg.image_height / 2.0,
        width=cfg.image_width, height=cfg.image_height,
    )


def _project_object(obj: SceneObject, cam: Camera, cfg: SceneConfig):
    """Clipped pixel bbox of the object's 3D box, or None if not usable."""
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    corners = obj.position[None, :] + signs * obj.half_extent[None, :]
    cc = (cam.rotation @ (corners - cam.position).T).T
    if np.any(cc[:, 2] < 0.1):
        return None
    us = cam.fx * cc[:, 0] / cc[:, 2] + cam.cx
    vs = cam.fy * cc[:, 1] / cc[:, 2] + cam.cy
    x0 = max(us.min(), 0.0)
    y0 = max(vs.min(), 0.0)
    x1 = min(us.max(), float(cam.width))
    y1 = min(vs.max(), float(cam.height))
    if x1 - x0 < cfg.min_box_px or y1 - y0 < cfg.min_box_px:
        return None
    return np.array([x0, y0, x1, y1])


def _visible_detections(scene: Scene, cam: Camera, cfg: SceneConfig):
    cands = []
    for obj in scene.objects:
        box = _project_object(obj, cam, cfg)
        if box is None:
            continue
        center_cam = cam.to_cam(obj.position)
        cands.append((obj, box, center_cam))
    # painter's occlusion: a closer box covering >= threshold of a farther
    # box's area hides the farther object
    cands.sort(key=lambda t: t[2][2])
    kept = []
    for obj, box, center_cam in cands:
        area = (box[2] - box[0]) * (box[3] - box[1])
        occluded = False
        for _, nbox, _ in kept:
            ix = min(box[2], nbox[2]) - max(box[0], nbox[0])
            iy = min(box[3], nbox[3]) - max(box[1], nbox[1])
            if ix > 0 and iy > 0 and (ix * iy) / area >= cfg.occlusion_overlap:
                occluded = True
                break
        if not occluded:
            kept.append((obj, box, center_cam))
    dets = []
    for obj, box, center_cam in kept:
        u = cam.fx * center_cam[0] / center_cam[2] + cam.cx
        v = cam.fy * center_cam[1] / center_cam[2] + cam.cy
        bbox_n = box / np.array([cam.width, cam.height, cam.width, cam.height])
        bc = np.array([(bbox_n[0] + bbox_n[2]) / 2.0, (bbox_n[1] + bbox_n[3]) / 2.0])
        offset = np.array([u / cam.width, v / cam.height]) - bc
        ray = cam.position - obj.position
        cosv = ray[0] / np.linalg.norm(ray)
        dets.append(Detection(
            instance_id=obj.instance_id,
            label=obj.label,
            bbox=bbox_n,
            offset=offset,
            dist=float(np.linalg.norm(obj.position - cam.position)),
            center_cam=center_cam,
            view_angle=float(np.arccos(np.clip(cosv, -1.0, 1.0))),
        ))
    return dets


def project_pair(scene: Scene, cam1: Camera, cam2: Camera, cfg: SceneConfig,
                 pair_id: int = 0) -> ScenePair:
    """Project the scene into both cameras and link detections by instance."""
    det1 = _visible_detections(scene, cam1, cfg)
    det2 = _visible_detections(scene, cam2, cfg)
    idx2 = {d.instance_id: j for j, d in enumerate(det2)}
    matches = [(i, idx2[d.instance_id]) for i, d in enumerate(det1)
               if d.instance_id in idx2]
    if len(matches) < 2:
        raise SceneGenError("fewer than two co-visible objects")

    by_id = {o.instance_id: o for o in scene.objects}
    diffs = []
    angles = []
    for i, j in matches:
        diffs.append(abs(det1[i].dist - det2[j].dist))
        p = by_id[det1[i].instance_id].position
        a = cam1.position - p
        b = cam2.position - p
        cosang = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
        angles.append(math.degrees(math.acos(float(np.clip(cosang, -1.0, 1.0)))))
    d_mean = float(np.mean(diffs))
    angle_mean = float(np.mean(angles))

    def rel(dets):
        pos = np.stack([by_id[d.instance_id].position for d in dets])
        diff = pos[:, None, :] - pos[None, :, :]
        return np.sqrt((diff**2).sum(axis=2))

    return ScenePair(
        pair_id=pair_id,
        det1=det1, det2=det2,
        gt_matches=matches,
        rel_dist1=rel(det1), rel_dist2=rel(det2),
        d_mean=d_mean, angle_mean_deg=angle_mean,
        difficulty=classify_difficulty(d_mean, angle_mean),
        cam1=cam1.intrinsics(), cam2=cam2.intrinsics(),
    )


def classify_difficulty(d_mean: float, angle_mean_deg: float) -> str:
    if d_mean <= EASY_D and angle_mean_deg <= EASY_A:
        return "easy"
    if d_mean <= HARD_D and angle_mean_deg <= HARD_A:
        return "hard"
    return "very_hard"


def classify_pair(pair: ScenePair) -> str:
    return classify_difficulty(pair.d_mean, pair.angle_mean_deg)


# -- synthetic stand-ins for visual features and keypoints ------------------


def class_embeddings(cfg: SceneConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.class_emb_seed)
    emb = rng.standard_normal((cfg.num_classes, cfg.d_viz))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    return emb * cfg.class_emb_scale


def synth_visual_features(pair: ScenePair, scene: Scene, cfg: SceneConfig,
                          seed: int, noise_scale: float = None):
    """Unit-norm features: identity latent + class embedding + view noise.

    The perturbation magnitude grows with each detection's view angle, so
    wide-baseline pairs get less similar features. noise_scale defaults to
    the per-difficulty value from the config.
    """
    if noise_scale is None:
        noise_scale = cfg.feature_noise[pair.difficulty]
    rng = np.random.default_rng(seed)
    emb = class_embeddings(cfg)
    by_id = {o.instance_id: o for o in scene.objects}

    def feats(dets):
        out = np.empty((len(dets), cfg.d_viz))
        for k, d in enumerate(dets):
            base = by_id[d.instance_id].latent + emb[d.label]
            mag = noise_scale * (d.view_angle / math.pi)
            f = base + mag * rng.standard_normal(cfg.d_viz)
            out[k] = f / np.linalg.norm(f)
        return out

    pair.feats1 = feats(pair.det1)
    pair.feats2 = feats(pair.det2)
    return pair.feats1, pair.feats2


def synth_keypoint_matches(pair: ScenePair, cfg: SceneConfig, seed: int,
                           density: float = None, outlier_rate: float = None):
    """Poisson keypoint pairs inside GT-matched boxes, plus sparse outliers.

    The per-object rate shrinks with the angle between the two camera rays
    at that object; identical views keep the full density.
    """
    if density is None:
        density = cfg.keypoint_density
    if outlier_rate is None:
        outlier_rate = cfg.keypoint_outlier_rate
    if density < 0:
        raise ValueError("density must be non-negative")
    rng = np.random.default_rng(seed)
    kps = []

    def point_in(box):
        return (rng.uniform(box[0], box[2]), rng.uniform(box[1], box[3]))

    for i, j in pair.gt_matches:
        lam = density * max(0.0, math.cos(math.radians(pair.angle_mean_deg)))
        for _ in range(int(rng.poisson(lam))):
            kps.append((point_in(pair.det1[i].bbox), point_in(pair.det2[j].bbox)))
    if outlier_rate > 0 and pair.n1 and pair.n2:
        for _ in range(int(rng.poisson(outlier_rate * density))):
            b1 = pair.det1[int(rng.integers(pair.n1))].bbox
            b2 = pair.det2[int(rng.integers(pair.n2))].bbox
            kps.append((point_in(b1), point_in(b2)))
    pair.keypoints = kps
    return kps


# -- high-level pair generation ---------------------------------------------

_CAMERA_RANGES = {
    "easy": ((2.0, 35.0), (-1.5, 1.5)),
    "hard": ((45.0, 85.0), (-3.0, 3.0)),
    "very_hard": ((105.0, 175.0), (-2.0, 2.0)),
    None: ((0.0, 180.0), (-3.0, 3.0)),
}


def generate_pair(cfg: SceneConfig, seed: int, difficulty: str = None,
                  pair_id: int = 0) -> ScenePair:
    """Generate a full ScenePair (detections, features, keypoints).

    When `difficulty` is given, camera sampling is biased toward that bin
    and the classified bin is verified, retrying with fresh cameras.
    """
    if difficulty is not None and difficulty not in DIFFICULTY_BINS:
        raise ValueError(f"unknown difficulty {difficulty!r}")
    rng = np.random.default_rng(seed)
    scene = generate_scene(cfg, int(rng.integers(2**63)))
    centers = np.stack([o.position for o in scene.objects])
    pivot = centers.mean(axis=0)
    (alo, ahi), (rlo, rhi) = _CAMERA_RANGES[difficulty]

    last_err = None
    for _ in range(cfg.max_camera_tries):
        phi = rng.uniform(0.0, 2.0 * math.pi)
        r1 = rng.uniform(4.0, 8.0)
        h1 = rng.uniform(1.2, 2.2)
        delta = math.radians(rng.uniform(alo, ahi)) * (1 if rng.random() < 0.5 else -1)
        r2 = float(np.clip(r1 + rng.uniform(rlo, rhi), 3.0, 11.0))
        h2 = rng.uniform(1.2, 2.2)
        c1 = pivot + np.array([r1 * math.cos(phi), r1 * math.sin(phi), 0.0])
        c1[2] = h1
        c2 = pivot + np.array([r2 * math.cos(phi + delta), r2 * math.sin(phi + delta), 0.0])
        c2[2] = h2
        try:
            cam1 = look_at_camera(c1, pivot, cfg)
            cam2 = look_at_camera(c2, pivot, cfg)
            pair = project_pair(scene, cam1, cam2, cfg, pair_id=pair_id)
        except (SceneGenError, ValueError) as err:
            last_err = err
            continue
        if difficulty is not None and pair.difficulty != difficulty:
            continue
        synth_visual_features(pair, scene, cfg, seed=int(rng.integers(2**63)))
        synth_keypoint_matches(pair, cfg, seed=int(rng.integers(2**63)))
        return pair
    raise SceneGenError(
        f"no valid camera pair after {cfg.max_camera_tries} tries "
        f"(difficulty={difficulty}, last error: {last_err})"
    )


def generate_pairs(cfg: SceneConfig, count: int, seed: int,
                   difficulty: str = None) -> list:
    """Generate `count` independent pairs, deterministically from `seed`."""
    rng = np.random.default_rng(seed)
    pairs = []
    pid = 0
    while len(pairs) < count:
        sub = int(rng.integers(2**63))
        try:
            pairs.append(generate_pair(cfg, sub, difficulty=difficulty, pair_id=pid))
            pid += 1
        except SceneGenError:
            continue
    return pairs
