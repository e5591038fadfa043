"""Scenario configuration, defaults and seeded scene generators.

A scenario is a JSON document with top-level keys ``room``, ``aps``,
``mirror_arrays``, ``users``, ``adr``, ``diffuse_grid``, ``noise``,
``solver`` and ``time_bin_ns``.  Angles are in degrees, lengths in metres,
power in watts and areas in square metres.  Unknown keys are rejected.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .geometry import MirrorPose, branch_normal
from .link import NoiseModel

Vec3 = Tuple[float, float, float]

_PLANE_TOL = 1e-9

DEFAULT_SCENARIO_FILE = Path(__file__).with_name("data") / "default_scenario.json"


class ScenarioError(ValueError):
    """Scenario failed to parse or validate; ``errors`` holds one line per problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Reflectivity(_Frozen):
    walls: float = Field(0.8, ge=0, le=1)
    floor: float = Field(0.3, ge=0, le=1)
    ceiling: float = Field(0.8, ge=0, le=1)


class Room(_Frozen):
    length: float = Field(5.0, gt=0)
    width: float = Field(5.0, gt=0)
    height: float = Field(3.0, gt=0)
    reflectivity: Reflectivity = Reflectivity()

    def contains(self, p, tol=_PLANE_TOL) -> bool:
        x, y, z = p
        return (-tol <= x <= self.length + tol and -tol <= y <= self.width + tol
                and -tol <= z <= self.height + tol)


class BranchOrientation(_Frozen):
    azimuth_deg: float
    elevation_deg: float = Field(ge=0, le=90)
    fov_deg: float = Field(gt=0, le=90)

    @property
    def normal(self) -> np.ndarray:
        return branch_normal(self.azimuth_deg, self.elevation_deg)


class ApConfig(_Frozen):
    position: Vec3
    transmit_power_w: float = Field(2.0, gt=0)
    half_power_semiangle_deg: float = Field(60.0, gt=0, lt=90)
    normal: Vec3 = (0.0, 0.0, -1.0)

    @field_validator("normal")
    @classmethod
    def _unit_normal(cls, v):
        if abs(math.sqrt(sum(c * c for c in v)) - 1.0) > 1e-12:
            raise ValueError("normal must be a unit vector")
        return v


class AdrConfig(_Frozen):
    branches: Tuple[BranchOrientation, ...] = Field(min_length=1)
    pd_area_m2: float = Field(20e-6, gt=0)
    responsivity_a_per_w: float = Field(0.4, gt=0)
    mount_height_m: float = Field(1.0, gt=0)


WallName = Literal["x0", "x1", "y0", "y1"]


class MirrorArrayConfig(_Frozen):
    """A rows x cols grid of mirrors tiled edge to edge on one wall.

    ``wall`` names the plane (``x0`` is x=0, ``x1`` is x=length, likewise for
    y).  ``center_along_m`` runs along the wall's horizontal axis (x for the
    y walls, y for the x walls) and ``center_height_m`` is the array centre
    height.  When ``poses`` is omitted the (roll, yaw) pairs are drawn from
    ``rng_seed``.
    """

    wall: WallName
    center_along_m: float
    center_height_m: float
    rows: int = Field(5, ge=1)
    cols: int = Field(5, ge=1)
    element_width_m: float = Field(0.25, gt=0)
    element_height_m: float = Field(0.15, gt=0)
    reflectivity: float = Field(0.95, ge=0, le=1)
    roll_range_deg: Tuple[float, float] = (-45.0, 45.0)
    yaw_range_deg: Tuple[float, float] = (-45.0, 45.0)
    rng_seed: int = 0
    poses: Optional[Tuple[Tuple[float, float], ...]] = None

    @model_validator(mode="after")
    def _check(self):
        for name in ("roll_range_deg", "yaw_range_deg"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound exceeds upper bound")
        if self.poses is not None and len(self.poses) != self.rows * self.cols:
            raise ValueError(f"poses: expected rows*cols = {self.rows * self.cols} entries, "
                             f"got {len(self.poses)}")
        return self

    @property
    def size(self) -> int:
        return self.rows * self.cols


class DiffuseGrid(_Frozen):
    first_order_element_m: float = Field(0.05, gt=0)
    second_order_element_m: float = Field(0.20, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.second_order_element_m < self.first_order_element_m:
            raise ValueError("second_order_element_m must be >= first_order_element_m")
        return self


class UserPlacement(_Frozen):
    count: int = Field(ge=1)
    rng_seed: int = 0


class SolverOptions(_Frozen):
    # "auto" runs the exhaustive mirror search when (K+1)^M <= search_guard
    mirror_search: Literal["greedy", "exhaustive", "auto"] = "greedy"
    search_guard: int = Field(10**7, ge=1)
    utility_epsilon: float = Field(1e-12, gt=0)


class ScenarioConfig(_Frozen):
    room: Room
    aps: Tuple[ApConfig, ...] = Field(min_length=1)
    mirror_arrays: Tuple[MirrorArrayConfig, ...] = ()
    users: Union[Tuple[Vec3, ...], UserPlacement]
    adr: AdrConfig
    diffuse_grid: DiffuseGrid = DiffuseGrid()
    noise: NoiseModel = NoiseModel()
    solver: SolverOptions = SolverOptions()
    time_bin_ns: float = Field(0.5, gt=0)

    @model_validator(mode="after")
    def _check(self):
        room = self.room
        errors = []
        if self.adr.mount_height_m >= room.height:
            errors.append("adr.mount_height_m: receiver must sit below the ceiling")
        for i, ap in enumerate(self.aps):
            x, y, z = ap.position
            if abs(z - room.height) > _PLANE_TOL:
                errors.append(f"aps.{i}.position: AP must lie on ceiling plane z={room.height}")
            elif not room.contains(ap.position):
                errors.append(f"aps.{i}.position: AP outside the room")
        if not isinstance(self.users, UserPlacement):
            for i, p in enumerate(self.users):
                if not room.contains(p):
                    errors.append(f"users.{i}: position outside the room")
                elif abs(p[2] - self.adr.mount_height_m) > _PLANE_TOL:
                    errors.append(f"users.{i}: user must sit at the mount height "
                                  f"{self.adr.mount_height_m}")
        for i, arr in enumerate(self.mirror_arrays):
            problem = _array_fit_problem(arr, room)
            if problem:
                errors.append(f"mirror_arrays.{i}: {problem}")
        if errors:
            raise ValueError("; ".join(errors))
        return self

    # -- derived scene -------------------------------------------------------

    @property
    def num_mirrors(self) -> int:
        return sum(a.size for a in self.mirror_arrays)

    def user_positions(self) -> np.ndarray:
        return np.array(place_users(self.users, self.room, self.adr.mount_height_m), dtype=float)

    def mirror_poses(self):
        """All mirrors, array by array, and the array index of each mirror."""
        poses, owner = [], []
        for i, arr in enumerate(self.mirror_arrays):
            ps = generate_mirror_poses(arr, self.room)
            poses.extend(ps)
            owner.extend([i] * len(ps))
        return poses, np.array(owner, dtype=int)

    def with_users(self, users) -> "ScenarioConfig":
        return self.model_copy(update={"users": users})

    def with_power(self, p_t_w: float) -> "ScenarioConfig":
        aps = tuple(ap.model_copy(update={"transmit_power_w": float(p_t_w)}) for ap in self.aps)
        return self.model_copy(update={"aps": aps})


# -- walls and mirror arrays ------------------------------------------------

def wall_frame(wall: str, room: Room):
    """``(origin, along_axis, inward_normal, wall_length)`` of a named wall."""
    L, W = room.length, room.width
    if wall == "y0":
        return np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), L
    if wall == "y1":
        return np.array([0.0, W, 0.0]), np.array([1.0, 0.0, 0.0]), np.array([0.0, -1.0, 0.0]), L
    if wall == "x0":
        return np.array([0.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]), W
    if wall == "x1":
        return np.array([L, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([-1.0, 0.0, 0.0]), W
    raise ValueError(f"unknown wall {wall!r}")


def _array_fit_problem(arr: MirrorArrayConfig, room: Room) -> Optional[str]:
    _, _, _, length = wall_frame(arr.wall, room)
    half_w = arr.cols * arr.element_width_m / 2
    half_h = arr.rows * arr.element_height_m / 2
    if arr.center_along_m - half_w < -_PLANE_TOL or arr.center_along_m + half_w > length + _PLANE_TOL:
        return "array extends beyond the wall horizontally"
    if arr.center_height_m - half_h < -_PLANE_TOL or arr.center_height_m + half_h > room.height + _PLANE_TOL:
        return "array extends beyond the wall vertically"
    return None


def array_footprint(arr: MirrorArrayConfig, room: Room):
    """Wall name and (along_lo, along_hi, z_lo, z_hi) of the array rectangle."""
    half_w = arr.cols * arr.element_width_m / 2
    half_h = arr.rows * arr.element_height_m / 2
    return arr.wall, (arr.center_along_m - half_w, arr.center_along_m + half_w,
                      arr.center_height_m - half_h, arr.center_height_m + half_h)


def generate_mirror_poses(array: MirrorArrayConfig, room: Room, rng_seed: Optional[int] = None):
    """Row-major list of the array's mirrors (row 0 is the top row).

    Roll and yaw are uniform over the configured ranges unless the array
    lists explicit poses.  ``rng_seed`` overrides ``array.rng_seed``.
    """
    origin, along, normal, _ = wall_frame(array.wall, room)
    n = array.size
    if array.poses is not None:
        angles = np.asarray(array.poses, dtype=float).reshape(n, 2)
        roll, yaw = angles[:, 0], angles[:, 1]
    else:
        rng = np.random.default_rng(array.rng_seed if rng_seed is None else rng_seed)
        roll = rng.uniform(*array.roll_range_deg, size=n)
        yaw = rng.uniform(*array.yaw_range_deg, size=n)
    ew, eh = array.element_width_m, array.element_height_m
    poses = []
    for r in range(array.rows):
        z = array.center_height_m + ((array.rows - 1) / 2 - r) * eh
        for c in range(array.cols):
            a = array.center_along_m + (c - (array.cols - 1) / 2) * ew
            center = origin + a * along + np.array([0.0, 0.0, z])
            i = r * array.cols + c
            poses.append(MirrorPose(center=tuple(center), base_normal=tuple(normal),
                                    roll_deg=float(roll[i]), yaw_deg=float(yaw[i]),
                                    half_width=ew / 2, half_height=eh / 2))
    return poses


# -- users --------------------------------------------------------------------

def place_users(spec, room: Room, mount_height_m: float, rng_seed: Optional[int] = None):
    """Resolve a user spec to explicit positions on the receiving plane.

    Explicit lists pass through unchanged (after a containment check);
    a :class:`UserPlacement` draws uniform positions.  ``rng_seed``
    overrides the placement's own seed.
    """
    if mount_height_m >= room.height:
        raise ValueError("mount height must be below the ceiling")
    if isinstance(spec, UserPlacement):
        rng = np.random.default_rng(spec.rng_seed if rng_seed is None else rng_seed)
        xy = rng.uniform(size=(spec.count, 2)) * np.array([room.length, room.width])
        return tuple((float(x), float(y), float(mount_height_m)) for x, y in xy)
    out = tuple(tuple(float(c) for c in p) for p in spec)
    for p in out:
        if len(p) != 3 or not room.contains(p):
            raise ValueError(f"user position {p} outside the room")
    return out


# -- diffuse surface grid -----------------------------------------------------

@dataclass(frozen=True)
class SurfaceElements:
    """Struct-of-arrays view of the room's diffuse reflecting elements."""

    centers: np.ndarray      # (N, 3)
    normals: np.ndarray      # (N, 3), pointing into the room
    areas: np.ndarray        # (N,)
    reflectivity: np.ndarray  # (N,)
    surface: np.ndarray      # (N,) surface name per element
    # optional rectangle description: in-plane unit axes (N, 2, 3) and side lengths (N, 2)
    axes: Optional[np.ndarray] = None
    sizes: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.areas)

    def select(self, keep) -> "SurfaceElements":
        keep = np.asarray(keep)
        opt = [None if a is None else a[keep] for a in (self.axes, self.sizes)]
        return SurfaceElements(self.centers[keep], self.normals[keep], self.areas[keep],
                               self.reflectivity[keep], self.surface[keep], *opt)


def _edges(length: float, step: float) -> np.ndarray:
    n = max(1, math.ceil(length / step - 1e-9))
    e = np.minimum(np.arange(n + 1) * step, length)
    e[-1] = length
    return e


def _tile(a_len, b_len, step):
    ea, eb = _edges(a_len, step), _edges(b_len, step)
    ca, cb = (ea[:-1] + ea[1:]) / 2, (eb[:-1] + eb[1:]) / 2
    A, B = np.meshgrid(ca, cb, indexing="ij")
    SA, SB = np.meshgrid(np.diff(ea), np.diff(eb), indexing="ij")
    return A.ravel(), B.ravel(), SA.ravel(), SB.ravel()


def discretize_surfaces(room: Room, element_m: float) -> SurfaceElements:
    """Tile floor, ceiling and the four walls with square elements.

    Edge elements are truncated so that the faces are covered exactly.
    """
    if not element_m > 0:
        raise ValueError("element size must be positive")
    if element_m > min(room.length, room.width, room.height):
        raise ValueError("element size exceeds the smallest room dimension")
    L, W, H = room.length, room.width, room.height
    rho = room.reflectivity
    parts = []

    ex, ey, ez = np.eye(3)

    def add(name, pts, normal, axes, sa, sb, refl):
        n = len(sa)
        parts.append((np.column_stack(pts), np.tile(normal, (n, 1)), sa * sb,
                      np.full(n, refl), np.full(n, name, dtype=object),
                      np.tile(np.array(axes), (n, 1, 1)), np.column_stack([sa, sb])))

    x, y, sa, sb = _tile(L, W, element_m)
    add("floor", (x, y, np.zeros_like(x)), ez, (ex, ey), sa, sb, rho.floor)
    add("ceiling", (x, y, np.full_like(x, H)), -ez, (ex, ey), sa, sb, rho.ceiling)
    y, z, sa, sb = _tile(W, H, element_m)
    add("x0", (np.zeros_like(y), y, z), ex, (ey, ez), sa, sb, rho.walls)
    add("x1", (np.full_like(y, L), y, z), -ex, (ey, ez), sa, sb, rho.walls)
    x, z, sa, sb = _tile(L, H, element_m)
    add("y0", (x, np.zeros_like(x), z), ey, (ex, ez), sa, sb, rho.walls)
    add("y1", (x, np.full_like(x, W), z), -ey, (ex, ez), sa, sb, rho.walls)
    cols = list(zip(*parts))
    return SurfaceElements(*(np.concatenate(c) for c in cols))


# -- defaults and (de)serialisation --------------------------------------------

def default_scenario() -> ScenarioConfig:
    """Baseline 5 x 5 x 3 m room with four ceiling APs, two mirror arrays and
    a four-branch angle-diversity receiver."""
    branches = tuple(BranchOrientation(azimuth_deg=az, elevation_deg=60.0, fov_deg=25.0)
                     for az in (0.0, 90.0, 180.0, 270.0))
    aps = tuple(ApConfig(position=p) for p in
                ((1.5, 1.5, 3.0), (1.5, 3.5, 3.0), (3.5, 1.5, 3.0), (3.5, 3.5, 3.0)))
    arrays = (
        MirrorArrayConfig(wall="y0", center_along_m=2.5, center_height_m=DEFAULT_ARRAY_HEIGHT_M, rng_seed=1),
        MirrorArrayConfig(wall="y1", center_along_m=2.5, center_height_m=DEFAULT_ARRAY_HEIGHT_M, rng_seed=2),
    )
    return ScenarioConfig(
        room=Room(),
        aps=aps,
        mirror_arrays=arrays,
        users=UserPlacement(count=4, rng_seed=7),
        adr=AdrConfig(branches=branches),
        diffuse_grid=DiffuseGrid(),
        noise=NoiseModel(),
        solver=SolverOptions(),
        time_bin_ns=0.5,
    )


# top edge flush with the 3 m ceiling line
DEFAULT_ARRAY_HEIGHT_M = 2.625


def _format_errors(exc: ValidationError):
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        lines.append(f"{loc}: {msg}" if loc else msg)
    return lines


def scenario_from_dict(data) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(_format_errors(exc)) from None


def load_scenario(text: str) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"parse error: {exc}"]) from None
    return scenario_from_dict(data)


def load_scenario_file(path) -> ScenarioConfig:
    return load_scenario(Path(path).read_text())


def dump_scenario(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), indent=2) + "\n"
