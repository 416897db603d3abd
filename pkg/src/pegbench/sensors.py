"""Observation synthesis: software-rendered wrist views, force-torque
history, proprioception, and sensor noise.

The renderer is a tiny deterministic rasterizer: pinhole cameras rigidly
mounted on each wrist, flat-shaded polygons in painter's order (floor,
opposing body, face plate, cross-section, gripper fingers), per-pixel
lighting multiply, no anti-aliasing. The grasped body itself is drawn as
see-through so the contact plane stays visible (see module docs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .simcore import SimConfig, Wrench, WorldState
from .variations import (
    BodyShape,
    SensorNoiseInstance,
    VariationKind,
    VariationSpec,
)

IMG_SIZE = 84
FT_ROWS = 32
FT_COLS = 12
PROPRIO_DIM = 14

VFOV_DEG = 60.0
FOCAL_PX = (IMG_SIZE / 2.0) / math.tan(math.radians(VFOV_DEG / 2.0))
PRINCIPAL = (IMG_SIZE - 1) / 2.0

BODY_HALF_MM = 38.0  # 76 mm bodies
MOUNT_MM = 60.0  # wrist origin sits this far behind the object center
CAM_BACK_MM = 65.0  # camera behind the grasp point along the approach axis
CAM_UP_MM = 65.0  # camera above the grasp point
NEAR_MM = 10.0

SKY_COLOR = (215, 225, 235)
FINGER_COLOR = (70, 70, 75)
FLOOR_Y_MM = -60.0
LIGHT_OFF_FACTOR = 0.15

# 20 procedural floor patterns: (color_a, color_b, mode, scale_mm, angle_deg)
# mode 0 = planks (stripes), 1 = checker, 2 = diagonal stripes.
FLOOR_PATTERNS = (
    ((205, 172, 126), (188, 152, 106), 0, 34.0, 0.0),  # 0 light wood, canonical
    ((142, 146, 152), (118, 122, 128), 1, 40.0, 0.0),  # 1 gray tile
    ((96, 128, 88), (76, 106, 70), 1, 55.0, 45.0),  # 2 green checker
    ((166, 120, 90), (140, 96, 68), 0, 26.0, 90.0),  # 3 terracotta planks
    ((70, 80, 120), (54, 62, 98), 2, 30.0, 30.0),  # 4 blue diagonal
    ((150, 150, 120), (170, 170, 140), 1, 70.0, 0.0),  # 5 sand checker
    ((120, 70, 70), (96, 52, 52), 0, 40.0, 45.0),  # 6 red planks
    ((60, 60, 60), (90, 90, 90), 1, 28.0, 0.0),  # 7 dark tile
    ((200, 200, 205), (170, 172, 180), 2, 45.0, 60.0),  # 8 pale diagonal
    ((90, 140, 150), (66, 112, 122), 1, 36.0, 30.0),  # 9 teal checker
    ((176, 160, 120), (150, 134, 96), 0, 58.0, 0.0),  # 10 oak wide planks
    ((110, 96, 150), (88, 74, 124), 2, 24.0, 120.0),  # 11 violet diagonal
    ((140, 110, 80), (108, 82, 58), 1, 48.0, 45.0),  # 12 walnut checker
    ((180, 140, 140), (154, 112, 112), 0, 30.0, 60.0),  # 13 rose planks
    ((84, 110, 84), (64, 88, 64), 2, 52.0, 0.0),  # 14 moss stripes
    ((166, 166, 166), (132, 132, 132), 0, 22.0, 30.0),  # 15 concrete strips
    ((120, 134, 160), (94, 108, 134), 1, 30.0, 15.0),  # 16 slate checker
    ((196, 178, 148), (224, 206, 176), 2, 38.0, 150.0),  # 17 cream diagonal
    ((104, 78, 120), (82, 58, 96), 1, 64.0, 0.0),  # 18 plum checker
    ((88, 88, 60), (112, 112, 80), 0, 44.0, 120.0),  # 19 olive planks
)


@dataclass(frozen=True)
class Observation:
    image_left: np.ndarray  # (84,84,3) uint8, moving-arm wrist view
    image_right: np.ndarray  # (84,84,3) uint8, compliant-arm wrist view
    ft: np.ndarray  # (32,12) float32, oldest row first
    proprio: np.ndarray  # (14,) float32

    def __post_init__(self):
        assert self.image_left.shape == (IMG_SIZE, IMG_SIZE, 3)
        assert self.image_right.shape == (IMG_SIZE, IMG_SIZE, 3)
        assert self.ft.shape == (FT_ROWS, FT_COLS)
        assert self.proprio.shape == (PROPRIO_DIM,)


# ------------------------------------------------------------------ ft + proprio


def ft_prefill(w_moving: Wrench, w_compliant: Wrench) -> np.ndarray:
    """History at episode start: the initial wrench repeated on all rows."""
    row = np.concatenate([w_moving.row(), w_compliant.row()]).astype(np.float32)
    return np.tile(row, (FT_ROWS, 1))


def push_ft(history: np.ndarray, w_moving: Wrench, w_compliant: Wrench) -> np.ndarray:
    """Shift rows up by one, append the newest reading at the bottom."""
    row = np.concatenate([w_moving.row(), w_compliant.row()]).astype(np.float32)
    return np.vstack([history[1:], row[None, :]])


def _quat_wxyz_from_matrix(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w,x,y,z), w >= 0."""
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    q = np.array([w, x, y, z])
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def _quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def _object_centers(state: WorldState, config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """(peg center, hole center) in the global frame (hole face at z=0)."""
    peg = np.array([state.lateral_offset[0], state.lateral_offset[1], state.depth - BODY_HALF_MM])
    hole = np.array([0.0, 0.0, BODY_HALF_MM])
    return peg, hole


def _wrist_pose(state: WorldState, side: str, config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """(position mm in global frame, rotation wrist->global) for one wrist."""
    peg_c, hole_c = _object_centers(state, config)
    if side == "left":
        grasp, center, mount = state.peg_grasp, peg_c, np.array([0.0, 0.0, -MOUNT_MM])
    else:
        grasp, center, mount = state.hole_grasp, hole_c, np.array([0.0, 0.0, MOUNT_MM])
    r_g, t_g = grasp.rigid()
    # object->wrist: x_w = R (x_o - m) + t; wrist origin in object coords:
    origin_obj = mount - r_g.T @ t_g
    position = center + origin_obj
    rotation_wg = r_g.T  # wrist axes expressed in the global frame
    return position, rotation_wg


def proprio_obs(state: WorldState, config: SimConfig | None = None) -> np.ndarray:
    """14-vector: position (mm) + wxyz quaternion for moving then compliant."""
    config = config or SimConfig()
    out = np.empty(PROPRIO_DIM)
    for i, side in enumerate(("left", "right")):
        pos, rot = _wrist_pose(state, side, config)
        out[i * 7 : i * 7 + 3] = pos
        out[i * 7 + 3 : i * 7 + 7] = _quat_wxyz_from_matrix(rot)
    return out.astype(np.float32)


# ----------------------------------------------------------------- rendering


def _body_polygon(body: BodyShape, half: float) -> np.ndarray:
    if body is BodyShape.CUBE:
        return np.array([(half, -half), (half, half), (-half, half), (-half, -half)])
    if body is BodyShape.CYLINDER:
        ang = 2.0 * np.pi * np.arange(32) / 32
        return np.column_stack([half * np.cos(ang), half * np.sin(ang)])
    ang = 2.0 * np.pi * (np.arange(8) + 0.5) / 8
    return np.column_stack([half * np.cos(ang) / math.cos(math.pi / 8),
                            half * np.sin(ang) / math.cos(math.pi / 8)])


def _camera_rig(side: str, spec: VariationSpec) -> tuple[np.ndarray, np.ndarray]:
    """(camera position in wrist frame mm, rotation wrist->camera).

    The nominal rig looks from behind/above the grasp point at the opposing
    face center; the CameraPose instance perturbs position and orientation.
    """
    sign = 1.0 if side == "left" else -1.0
    cam_pos = np.array([0.0, CAM_UP_MM, sign * (MOUNT_MM - CAM_BACK_MM)])
    target = np.array([0.0, 0.0, sign * (MOUNT_MM + BODY_HALF_MM)])
    forward = target - cam_pos
    forward = forward / np.linalg.norm(forward)
    up_hint = np.array([0.0, 1.0, 0.0])
    right = np.cross(up_hint, forward)
    right /= np.linalg.norm(right)
    down = np.cross(right, forward)
    down /= np.linalg.norm(down)
    rot_wc = np.vstack([right, down, forward])  # rows: image x, image y, view z
    pert = spec.camera
    cam_pos = cam_pos + np.asarray(pert.translation)
    rot_wc = pert.rotation().T @ rot_wc
    return cam_pos, rot_wc


def _view_transform(state: WorldState, side: str, spec: VariationSpec, config: SimConfig):
    """Affine global->camera map (R, t): x_c = R x_G + t."""
    peg_c, hole_c = _object_centers(state, config)
    if side == "left":
        grasp, center, mount = state.peg_grasp, peg_c, np.array([0.0, 0.0, -MOUNT_MM])
    else:
        grasp, center, mount = state.hole_grasp, hole_c, np.array([0.0, 0.0, MOUNT_MM])
    r_g, t_g = grasp.rigid()
    cam_pos, rot_wc = _camera_rig(side, spec)
    # x_w = R_g (x_G - center - m) + t_g ; x_c = rot_wc (x_w - cam_pos)
    r_total = rot_wc @ r_g
    t_total = rot_wc @ (t_g - r_g @ (center + mount)) - rot_wc @ cam_pos
    return r_total, t_total


def _project(points_cam: np.ndarray) -> np.ndarray:
    z = points_cam[:, 2]
    u = PRINCIPAL + FOCAL_PX * points_cam[:, 0] / z
    v = PRINCIPAL + FOCAL_PX * points_cam[:, 1] / z
    return np.column_stack([u, v])


_PIX_U, _PIX_V = np.meshgrid(np.arange(IMG_SIZE), np.arange(IMG_SIZE), indexing="xy")


def _fill_polygon(img: np.ndarray, pts: np.ndarray, color) -> None:
    """Even-odd fill of a projected polygon onto the image, in place."""
    if len(pts) < 3:
        return
    minu = max(0, int(math.floor(pts[:, 0].min())))
    maxu = min(IMG_SIZE - 1, int(math.ceil(pts[:, 0].max())))
    minv = max(0, int(math.floor(pts[:, 1].min())))
    maxv = min(IMG_SIZE - 1, int(math.ceil(pts[:, 1].max())))
    if minu > maxu or minv > maxv:
        return
    u = _PIX_U[minv : maxv + 1, minu : maxu + 1].astype(np.float64)
    v = _PIX_V[minv : maxv + 1, minu : maxu + 1].astype(np.float64)
    a = pts
    b = np.roll(pts, -1, axis=0)
    inside = np.zeros(u.shape, dtype=np.int64)
    for (ax, ay), (bx, by) in zip(a, b):
        straddle = (ay > v) != (by > v)
        if ay == by:
            continue
        x_cross = ax + (v - ay) * (bx - ax) / (by - ay)
        inside += (straddle & (u < x_cross)).astype(np.int64)
    mask = (inside % 2).astype(bool)
    img[minv : maxv + 1, minu : maxu + 1][mask] = color


def _draw_world_polygon(img, verts3_g, view_r, view_t, color) -> None:
    cam = verts3_g @ view_r.T + view_t
    if np.any(cam[:, 2] < NEAR_MM):
        return
    _fill_polygon(img, _project(cam), color)


def _floor_pattern(x: np.ndarray, z: np.ndarray, texture: int) -> np.ndarray:
    color_a, color_b, mode, scale, angle = FLOOR_PATTERNS[texture % len(FLOOR_PATTERNS)]
    th = math.radians(angle)
    xr = x * math.cos(th) - z * math.sin(th)
    zr = x * math.sin(th) + z * math.cos(th)
    if mode == 0:  # planks: stripes along rotated x
        sel = (np.floor(zr / scale).astype(np.int64)) % 2 == 0
    elif mode == 1:  # checker
        sel = ((np.floor(xr / scale) + np.floor(zr / scale)).astype(np.int64)) % 2 == 0
    else:  # diagonal stripes
        sel = (np.floor((xr + zr) / scale).astype(np.int64)) % 2 == 0
    out = np.where(sel[..., None], np.array(color_a, dtype=np.float64), np.array(color_b, dtype=np.float64))
    return out


def _render_floor(img: np.ndarray, view_r: np.ndarray, view_t: np.ndarray, texture: int) -> None:
    """Ray-cast the ground plane y = FLOOR_Y per pixel; sky elsewhere."""
    cam_origin = -view_r.T @ view_t
    dirs_cam = np.stack(
        [
            (_PIX_U - PRINCIPAL) / FOCAL_PX,
            (_PIX_V - PRINCIPAL) / FOCAL_PX,
            np.ones_like(_PIX_U, dtype=np.float64),
        ],
        axis=-1,
    )
    dirs_g = dirs_cam @ view_r  # == dirs_cam @ (view_r^-1)^T
    img[:] = np.array(SKY_COLOR, dtype=np.float64)
    dy = dirs_g[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (FLOOR_Y_MM - cam_origin[1]) / dy
    hit = (t > 0) & np.isfinite(t)
    x = cam_origin[0] + t * dirs_g[..., 0]
    z = cam_origin[2] + t * dirs_g[..., 2]
    colors = _floor_pattern(x, z, texture)
    img[hit] = colors[hit]


def _lift(poly2: np.ndarray, z: float, lateral: np.ndarray | None = None) -> np.ndarray:
    out = np.zeros((len(poly2), 3))
    out[:, :2] = poly2
    if lateral is not None:
        out[:, :2] += lateral
    out[:, 2] = z
    return out


def _shade(color, factor: float) -> np.ndarray:
    return np.clip(np.asarray(color, dtype=np.float64) * factor, 0, 255)


def render_wrist(state: WorldState, side: str, spec: VariationSpec,
                 config: SimConfig | None = None) -> np.ndarray:
    """One 84x84x3 uint8 wrist view. side 'left' = moving arm (sees the hole
    object), 'right' = compliant arm (sees the peg object)."""
    if side not in ("left", "right"):
        raise ValueError(f"side must be left or right, got {side!r}")
    config = config or SimConfig()
    view_r, view_t = _view_transform(state, side, spec, config)
    img = np.empty((IMG_SIZE, IMG_SIZE, 3), dtype=np.float64)

    _render_floor(img, view_r, view_t, spec.appearance.floor_texture)

    obj_color = np.asarray(spec.appearance.object_color, dtype=np.float64)
    peg_poly, cavity_poly = state.peg, state.cavity
    off = state.lateral_offset
    if side == "left":
        # Opposing object: the hole block, face plane at z=0.
        half = BODY_HALF_MM
        body2 = _body_polygon(spec.body.hole_body, half)
        _draw_world_polygon(img, _lift(body2, 0.0), view_r, view_t, obj_color)
        _draw_world_polygon(
            img, _lift(cavity_poly.vertices, -0.2), view_r, view_t, _shade(obj_color, 0.42)
        )
    else:
        # Opposing object: the peg block, face plane at z=depth.
        half = BODY_HALF_MM * (0.6 if spec.body.peg_thin else 1.0)
        body2 = _body_polygon(spec.body.peg_body, half)
        zf = state.depth
        _draw_world_polygon(img, _lift(body2, zf, lateral=off), view_r, view_t, obj_color)
        _draw_world_polygon(
            img, _lift(peg_poly.vertices, zf - 0.2, lateral=off), view_r, view_t,
            _shade(obj_color, 0.42),
        )

    # Own gripper fingers: slabs rigid in the wrist frame, drawn by mapping
    # their wrist coordinates through the camera rig only.
    cam_pos, rot_wc = _camera_rig(side, spec)
    sign = 1.0 if side == "left" else -1.0
    for fx in (-35.0, 35.0):
        quad_w = np.array(
            [
                [fx - 6, 30.0, sign * 60.0],
                [fx + 6, 30.0, sign * 60.0],
                [fx + 6, 62.0, sign * 96.0],
                [fx - 6, 62.0, sign * 96.0],
            ]
        )
        cam = (quad_w - cam_pos) @ rot_wc.T
        if np.any(cam[:, 2] < NEAR_MM):
            continue
        _fill_polygon(img, _project(cam), np.array(FINGER_COLOR, dtype=np.float64))

    light = spec.appearance.lighting
    if light.on:
        factor = np.asarray(light.color, dtype=np.float64) / 255.0 * light.intensity
    else:
        factor = np.full(3, LIGHT_OFF_FACTOR)
    img *= factor
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


# ----------------------------------------------------------------- noise + observe


def apply_noise(obs: Observation, noise: SensorNoiseInstance, rng: np.random.Generator) -> Observation:
    """Gaussian sensor noise on ft and proprio; images pass through."""
    if noise.is_zero():
        return obs
    ft = obs.ft.astype(np.float64)
    force_cols = [0, 1, 2, 6, 7, 8]
    torque_cols = [3, 4, 5, 9, 10, 11]
    ft[:, force_cols] += rng.normal(0.0, noise.sigma_force, size=(FT_ROWS, 6))
    ft[:, torque_cols] += rng.normal(0.0, noise.sigma_torque, size=(FT_ROWS, 6))
    prop = obs.proprio.astype(np.float64)
    for base in (0, 7):
        prop[base : base + 3] += rng.normal(0.0, noise.sigma_pos, size=3)
        rotvec = rng.normal(0.0, math.radians(noise.sigma_rot_deg), size=3)
        angle = float(np.linalg.norm(rotvec))
        if angle > 0.0:
            axis = rotvec / angle
            dq = np.concatenate([[math.cos(angle / 2.0)], math.sin(angle / 2.0) * axis])
            q = _quat_multiply(dq, prop[base + 3 : base + 7])
            q /= np.linalg.norm(q)
            if q[0] < 0:
                q = -q
            prop[base + 3 : base + 7] = q
    return replace(obs, ft=ft.astype(np.float32), proprio=prop.astype(np.float32))


def observe(
    state: WorldState,
    history: np.ndarray,
    spec: VariationSpec,
    rng: np.random.Generator | None = None,
    config: SimConfig | None = None,
) -> Observation:
    """Assemble the full observation; noise only when SensorNoise is active."""
    config = config or SimConfig()
    obs = Observation(
        image_left=render_wrist(state, "left", spec, config),
        image_right=render_wrist(state, "right", spec, config),
        ft=history.astype(np.float32, copy=True),
        proprio=proprio_obs(state, config),
    )
    if VariationKind.SENSOR_NOISE in spec.active and not spec.noise.is_zero():
        if rng is None:
            raise ValueError("sensor noise active but no rng supplied")
        obs = apply_noise(obs, spec.noise, rng)
    return obs
