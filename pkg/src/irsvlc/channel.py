"""Optical channel engine.

DC gains and path lists for the line-of-sight link, first- and second-order
diffuse reflections off the room surfaces and first-order specular
reflections off wall mirrors.  All links use the generalised Lambertian
model: a source of order ``m`` delivers the fraction

    (m + 1) * A / (2 pi d^2) * cos^m(phi) * cos(psi)

of its power to a receiving patch of area ``A`` at distance ``d``.  Diffuse
surface elements re-emit as first-order (m = 1) Lambertian sources.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .geometry import MirrorPose, fov_cos, incidence_cosines, specular_point, unit, vec3
from .scene import ScenarioConfig, SurfaceElements, array_footprint, discretize_surfaces

C_M_PER_NS = 0.299792458


class PathKind(IntEnum):
    LOS = 0
    DIFFUSE1 = 1
    DIFFUSE2 = 2
    IRS = 3


CSV_CLASS_COLUMNS = ("los", "diffuse1", "diffuse2", "irs")

# sub-grid per side used to resolve the FoV cone edge across an element
FOV_SUBSAMPLES = 4


@dataclass(frozen=True)
class PathContribution:
    gain: float
    delay_ns: float
    kind: PathKind
    mirror_index: Optional[int] = None


@dataclass
class PathSet:
    """Many propagation paths stored column-wise."""

    gains: np.ndarray
    delays_ns: np.ndarray
    kinds: np.ndarray
    mirror_index: np.ndarray = field(default=None)

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        self.delays_ns = np.asarray(self.delays_ns, dtype=float)
        self.kinds = np.broadcast_to(np.asarray(self.kinds, dtype=np.int8), self.gains.shape).copy()
        if self.mirror_index is None:
            self.mirror_index = np.full(self.gains.shape, -1, dtype=int)

    def __len__(self):
        return len(self.gains)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int8))

    @classmethod
    def from_contributions(cls, contribs):
        contribs = list(contribs)
        return cls(
            [c.gain for c in contribs],
            [c.delay_ns for c in contribs],
            [int(c.kind) for c in contribs],
            np.array([-1 if c.mirror_index is None else c.mirror_index for c in contribs], dtype=int),
        )

    @classmethod
    def concat(cls, sets):
        sets = list(sets)
        return cls(np.concatenate([s.gains for s in sets]),
                   np.concatenate([s.delays_ns for s in sets]),
                   np.concatenate([s.kinds for s in sets]),
                   np.concatenate([s.mirror_index for s in sets]))

    def total(self, kind=None) -> float:
        if kind is None:
            return float(self.gains.sum())
        return float(self.gains[self.kinds == int(kind)].sum())


def lambertian_order(half_power_semiangle_deg: float) -> float:
    """Lambertian mode number m = -ln 2 / ln(cos(semi-angle))."""
    if not 0.0 < half_power_semiangle_deg < 90.0:
        raise ValueError("half-power semi-angle must lie in (0, 90) degrees")
    m = -math.log(2.0) / math.log(math.cos(math.radians(half_power_semiangle_deg)))
    # cos(radians(60)) is one ulp above 0.5; keep integer orders exact
    r = round(m)
    return float(r) if abs(m - r) < 1e-12 else m


def lambertian_link(src, src_normal, dst, dst_normal, dst_area, order=1.0, fov_deg=None) -> float:
    """Fraction of a point source's power collected by a small patch at ``dst``.

    ``fov_deg`` optionally gates the incidence angle at the receiving patch.
    """
    cos_e, cos_r, d = incidence_cosines(src, src_normal, dst, dst_normal)
    if cos_e <= 0.0 or cos_r <= 0.0:
        return 0.0
    if fov_deg is not None and cos_r < fov_cos(fov_deg):
        return 0.0
    return (order + 1.0) * dst_area / (2.0 * np.pi * d * d) * cos_e ** order * cos_r


def los_gain(ap, rx_pos, branch_normal, pd_area, fov_deg) -> float:
    m = lambertian_order(ap.half_power_semiangle_deg)
    return lambertian_link(ap.position, ap.normal, rx_pos, branch_normal, pd_area, m, fov_deg)


# -- vectorised link kernels ---------------------------------------------------

def _source_to_patches(src, src_normal, order, centers, normals, areas):
    """Gain and distance from one point source to each patch."""
    delta = centers - vec3(src)
    d2 = np.einsum("ij,ij->i", delta, delta)
    d = np.sqrt(d2)
    # a patch centred on the source is coplanar with it and receives nothing
    safe = np.where(d > 0, d, np.inf)
    cos_e = np.clip(delta @ vec3(src_normal) / safe, 0.0, None)
    cos_r = np.clip(-np.einsum("ij,ij->i", delta, normals) / safe, 0.0, None)
    g = (order + 1.0) * areas / (2.0 * np.pi * safe * safe) * cos_e ** order * cos_r
    return g, d


def visible_fraction(el: SurfaceElements, rx, rx_normal, fov_deg, samples=FOV_SUBSAMPLES):
    """Fraction of each element lying inside the receiver's field of view.

    Elements whose centre is clearly inside or outside the cone get 1 or 0;
    those straddling the cone edge are sampled on a ``samples x samples``
    sub-grid.  Elements without a rectangle description use the centre only.
    """
    rx, n = vec3(rx), unit(rx_normal)
    delta = rx - el.centers
    d = np.linalg.norm(delta, axis=1)
    safe = np.where(d > 0, d, np.inf)
    cos_r = -(delta @ n) / safe
    limit = fov_cos(fov_deg)
    frac = (cos_r >= limit).astype(float)
    if el.axes is None or samples <= 1:
        return frac
    # angular half-size of each element as seen from the receiver (conservative)
    half_diag = 0.5 * np.hypot(el.sizes[:, 0], el.sizes[:, 1])
    margin = np.where(d > 2 * half_diag, np.arcsin(np.clip(half_diag / safe, 0, 1)) * 1.5, np.pi)
    psi = np.arccos(np.clip(cos_r, -1.0, 1.0))
    edge = np.flatnonzero(np.abs(psi - np.radians(fov_deg)) <= margin)
    if len(edge) == 0:
        return frac
    offs = (np.arange(samples) + 0.5) / samples - 0.5
    c = el.centers[edge]
    u = el.axes[edge, 0] * el.sizes[edge, 0:1]
    v = el.axes[edge, 1] * el.sizes[edge, 1:2]
    hits = np.zeros(len(edge))
    for a in offs:
        for b in offs:
            dp = rx - (c + a * u + b * v)
            hits += (-(dp @ n) / np.linalg.norm(dp, axis=1)) >= limit
    frac[edge] = hits / samples ** 2
    return frac


def _patches_to_receiver(el: SurfaceElements, rx, rx_normal, rx_area, fov_deg):
    """Gain (m = 1 re-emission, FoV gated) and distance from each patch to a receiver."""
    delta = vec3(rx) - el.centers
    d2 = np.einsum("ij,ij->i", delta, delta)
    d = np.sqrt(d2)
    safe = np.where(d > 0, d, np.inf)
    cos_e = np.clip(np.einsum("ij,ij->i", delta, el.normals) / safe, 0.0, None)
    cos_r = np.clip(-(delta @ vec3(rx_normal)) / safe, 0.0, None)
    g = rx_area / (np.pi * safe * safe) * cos_e * cos_r
    return g * visible_fraction(el, rx, rx_normal, fov_deg), d


def patch_kernel(centers, normals, areas, chunk=512):
    """``K[i, j]``: fraction of power re-emitted by patch i (m = 1) landing on patch j.

    Returns ``(K, D)`` with ``D`` the centre-to-centre distances; the diagonal
    of ``K`` is zero.
    """
    n = len(areas)
    K = np.empty((n, n))
    D = np.empty((n, n))
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        delta = centers[None, :, :] - centers[s:e, None, :]   # i -> j
        d2 = np.einsum("ijk,ijk->ij", delta, delta)
        idx = np.arange(s, e)
        d2[idx - s, idx] = np.inf
        d = np.sqrt(d2)
        cos_e = np.clip(np.einsum("ijk,ik->ij", delta, normals[s:e]) / d, 0.0, None)
        cos_r = np.clip(-np.einsum("ijk,jk->ij", delta, normals) / d, 0.0, None)
        K[s:e] = areas[None, :] / (np.pi * d2) * cos_e * cos_r
        d[idx - s, idx] = 0.0
        D[s:e] = d
    return K, D


# -- single-link engines -------------------------------------------------------

def diffuse_first_order(ap, rx_pos, branch_normal, pd_area, fov_deg, elements: SurfaceElements,
                        with_paths=False):
    """First-order diffuse gain AP -> element -> receiver branch.

    Returns ``(gain, paths)``; ``paths`` is ``None`` unless ``with_paths``.
    """
    m = lambertian_order(ap.half_power_semiangle_deg)
    h1, d1 = _source_to_patches(ap.position, ap.normal, m, elements.centers,
                                elements.normals, elements.areas)
    h2, d2 = _patches_to_receiver(elements, rx_pos, branch_normal, pd_area, fov_deg)
    g = h1 * elements.reflectivity * h2
    paths = None
    if with_paths:
        keep = g > 0
        paths = PathSet(g[keep], (d1[keep] + d2[keep]) / C_M_PER_NS, PathKind.DIFFUSE1)
    return float(g.sum()), paths


def diffuse_second_order(ap, rx_pos, branch_normal, pd_area, fov_deg, elements: SurfaceElements,
                         kernel=None, with_paths=False):
    """Second-order diffuse gain AP -> element i -> element j -> receiver branch.

    ``kernel`` is an optional precomputed ``patch_kernel`` of ``elements``.
    """
    m = lambertian_order(ap.half_power_semiangle_deg)
    h1, d1 = _source_to_patches(ap.position, ap.normal, m, elements.centers,
                                elements.normals, elements.areas)
    h3, d3 = _patches_to_receiver(elements, rx_pos, branch_normal, pd_area, fov_deg)
    a = h1 * elements.reflectivity
    b = elements.reflectivity * h3
    ia, ib = np.flatnonzero(a > 0), np.flatnonzero(b > 0)
    if len(ia) == 0 or len(ib) == 0:
        return 0.0, (PathSet.empty() if with_paths else None)
    if kernel is None:
        sub = elements.select(np.union1d(ia, ib))
        K, D = patch_kernel(sub.centers, sub.normals, sub.areas)
        pos = {e: k for k, e in enumerate(np.union1d(ia, ib))}
        ra = np.array([pos[i] for i in ia])
        rb = np.array([pos[j] for j in ib])
    else:
        K, D = kernel
        ra, rb = ia, ib
    Ksub = K[np.ix_(ra, rb)]
    gain = float(a[ia] @ Ksub @ b[ib])
    paths = None
    if with_paths:
        w = a[ia][:, None] * Ksub * b[ib][None, :]
        t = (d1[ia][:, None] + D[np.ix_(ra, rb)] + d3[ib][None, :]) / C_M_PER_NS
        keep = w > 0
        paths = PathSet(w[keep], t[keep], PathKind.DIFFUSE2)
    return gain, paths


def mirror_gain(ap, mirror: MirrorPose, reflectivity, rx_pos, branch_normal, pd_area, fov_deg):
    """Specular gain via one mirror, using the image-source model.

    Returns ``(gain, delay_ns)``; gain is 0 (delay NaN) when no valid
    specular path exists or the angle gates reject it.
    """
    q = specular_point(ap.position, rx_pos, mirror)
    if q is None:
        return 0.0, float("nan")
    ap_pos, rx = vec3(ap.position), vec3(rx_pos)
    d1 = float(np.linalg.norm(q - ap_pos))
    d2 = float(np.linalg.norm(rx - q))
    cos_phi = float(np.dot(vec3(ap.normal), (q - ap_pos) / d1))
    cos_psi = float(np.dot(unit(branch_normal), (q - rx) / d2))
    if cos_phi <= 0.0 or cos_psi <= 0.0 or cos_psi < fov_cos(fov_deg):
        return 0.0, float("nan")
    m = lambertian_order(ap.half_power_semiangle_deg)
    d = d1 + d2
    g = reflectivity * (m + 1.0) * pd_area / (2.0 * np.pi * d * d) * cos_phi ** m * cos_psi
    return float(g), d / C_M_PER_NS


# -- impulse response ------------------------------------------------------------

@dataclass
class ImpulseResponse:
    bin_width_ns: float
    t_ns: np.ndarray
    total: np.ndarray
    by_class: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t_ns,total," + ",".join(CSV_CLASS_COLUMNS) + "\n")
        for row in self.rows():
            buf.write(",".join(f"{v:.9g}" for v in row) + "\n")
        return buf.getvalue()

    def rows(self):
        cols = [self.t_ns, self.total] + [self.by_class[c] for c in CSV_CLASS_COLUMNS]
        return list(zip(*cols))


def impulse_response(contributions, bin_width_ns: float) -> ImpulseResponse:
    """Accumulate path gains into time bins ``[k*w, (k+1)*w)`` starting at t = 0."""
    if not bin_width_ns > 0:
        raise ValueError("bin width must be positive")
    paths = contributions if isinstance(contributions, PathSet) else \
        PathSet.from_contributions(contributions)
    if len(paths) == 0:
        z = np.zeros(0)
        return ImpulseResponse(bin_width_ns, z, z, {c: z for c in CSV_CLASS_COLUMNS})
    idx = np.floor(paths.delays_ns / bin_width_ns).astype(np.int64)
    n = int(idx.max()) + 1
    total = np.bincount(idx, weights=paths.gains, minlength=n)
    by_class = {}
    for name, kind in zip(CSV_CLASS_COLUMNS, PathKind):
        sel = paths.kinds == int(kind)
        by_class[name] = np.bincount(idx[sel], weights=paths.gains[sel], minlength=n)
    return ImpulseResponse(bin_width_ns, np.arange(n) * bin_width_ns, total, by_class)


# -- gain tensor -------------------------------------------------------------------

@dataclass
class GainTensor:
    """DC gains indexed ``[user, branch, ap]`` (and ``[..., mirror]`` for ``irs``).

    ``mirror_array`` maps each mirror to the array that holds it.
    """

    los: np.ndarray
    diff1: np.ndarray
    diff2: np.ndarray
    irs: np.ndarray
    mirror_array: np.ndarray

    @property
    def diff(self) -> np.ndarray:
        return self.diff1 + self.diff2

    @property
    def shape(self):
        return self.irs.shape

    @property
    def num_users(self):
        return self.los.shape[0]

    @property
    def num_aps(self):
        return self.los.shape[2]

    @property
    def num_mirrors(self):
        return self.irs.shape[3]

    def take_users(self, order) -> "GainTensor":
        order = list(order)
        return GainTensor(self.los[order], self.diff1[order], self.diff2[order],
                          self.irs[order], self.mirror_array)

    def masked(self, diffuse=True, arrays=None) -> "GainTensor":
        """Copy with the diffuse terms zeroed and/or mirrors outside ``arrays`` zeroed."""
        irs = self.irs.copy()
        if arrays is not None:
            drop = ~np.isin(self.mirror_array, list(arrays))
            irs[..., drop] = 0.0
        d1, d2 = (self.diff1, self.diff2) if diffuse else \
            (np.zeros_like(self.diff1), np.zeros_like(self.diff2))
        return GainTensor(self.los, d1, d2, irs, self.mirror_array)

    def scaled(self, factor) -> "GainTensor":
        return GainTensor(self.los * factor, self.diff1 * factor, self.diff2 * factor,
                          self.irs * factor, self.mirror_array)


def _outside_mirrors(elements: SurfaceElements, scenario: ScenarioConfig):
    keep = np.ones(len(elements), dtype=bool)
    c = elements.centers
    for arr in scenario.mirror_arrays:
        wall, (a0, a1, z0, z1) = array_footprint(arr, scenario.room)
        along = c[:, 0] if wall in ("y0", "y1") else c[:, 1]
        inside = ((elements.surface == wall) & (along > a0) & (along < a1)
                  & (c[:, 2] > z0) & (c[:, 2] < z1))
        keep &= ~inside
    return keep


def _same_diffuse_geometry(a: ScenarioConfig, b: ScenarioConfig) -> bool:
    def footprints(sc):
        return [array_footprint(arr, sc.room) for arr in sc.mirror_arrays]
    return (a.room == b.room and a.diffuse_grid == b.diffuse_grid
            and [(ap.position, ap.normal, ap.half_power_semiangle_deg) for ap in a.aps]
            == [(ap.position, ap.normal, ap.half_power_semiangle_deg) for ap in b.aps]
            and footprints(a) == footprints(b))


class ChannelModel:
    """User-independent channel state for one scenario.

    Precomputes the diffuse grids (with mirror footprints removed), the
    AP -> element gains and the element-to-element kernel so that gain
    tensors for many user drops can be built cheaply.
    """

    def __init__(self, scenario: ScenarioConfig, reuse: Optional["ChannelModel"] = None):
        self.scenario = scenario
        self.mirrors, self.mirror_array = scenario.mirror_poses()
        self.mirror_reflectivity = np.concatenate(
            [np.full(a.size, a.reflectivity) for a in scenario.mirror_arrays]
        ) if scenario.mirror_arrays else np.zeros(0)
        self.orders = [lambertian_order(ap.half_power_semiangle_deg) for ap in scenario.aps]
        if reuse is not None and _same_diffuse_geometry(reuse.scenario, scenario):
            # mirror poses and receiver settings do not touch the diffuse state
            self.fine, self.coarse = reuse.fine, reuse.coarse
            self.fine_src, self.coarse_src = reuse.fine_src, reuse.coarse_src
            self.kernel = reuse.kernel
        else:
            room, grid = scenario.room, scenario.diffuse_grid
            fine = discretize_surfaces(room, grid.first_order_element_m)
            coarse = discretize_surfaces(room, grid.second_order_element_m)
            self.fine = fine.select(_outside_mirrors(fine, scenario))
            self.coarse = coarse.select(_outside_mirrors(coarse, scenario))
            # AP -> element (gain * reflectivity) and distances, per AP
            self.fine_src = [self._src(i, self.fine) for i in range(len(scenario.aps))]
            self.coarse_src = [self._src(i, self.coarse) for i in range(len(scenario.aps))]
            self.kernel = patch_kernel(self.coarse.centers, self.coarse.normals, self.coarse.areas)
        self.branches = scenario.adr.branches
        self.branch_normals = np.array([b.normal for b in self.branches])

    def _src(self, i, el):
        ap = self.scenario.aps[i]
        h, d = _source_to_patches(ap.position, ap.normal, self.orders[i], el.centers,
                                  el.normals, el.areas)
        return h * el.reflectivity, d

    def _rx_vectors(self, el, rx_pos):
        """``(B, N)`` element -> branch gains and distances."""
        adr = self.scenario.adr
        out, dist = [], None
        for br, n in zip(self.branches, self.branch_normals):
            h, dist = _patches_to_receiver(el, rx_pos, n, adr.pd_area_m2, br.fov_deg)
            out.append(h)
        return np.array(out), dist

    def gain_tensor(self, user_positions) -> GainTensor:
        sc = self.scenario
        users = np.asarray(user_positions, dtype=float).reshape(-1, 3)
        K, B, L, M = len(users), len(self.branches), len(sc.aps), len(self.mirrors)
        los = np.zeros((K, B, L))
        d1 = np.zeros((K, B, L))
        d2 = np.zeros((K, B, L))
        irs = np.zeros((K, B, L, M))
        a_fine = np.array([s[0] for s in self.fine_src])        # (L, Nf)
        a_coarse = np.array([s[0] for s in self.coarse_src])    # (L, Nc)
        a_coarse_K = a_coarse @ self.kernel[0]                   # (L, Nc)
        pd = sc.adr.pd_area_m2
        for k, rx in enumerate(users):
            bf, _ = self._rx_vectors(self.fine, rx)
            bc, _ = self._rx_vectors(self.coarse, rx)
            bc = bc * self.coarse.reflectivity    # second bounce
            d1[k] = bf @ a_fine.T
            d2[k] = bc @ a_coarse_K.T
            for l, ap in enumerate(sc.aps):
                for b, br in enumerate(self.branches):
                    los[k, b, l] = los_gain(ap, rx, self.branch_normals[b], pd, br.fov_deg)
                for mi, mirror in enumerate(self.mirrors):
                    self._mirror_into(irs, k, l, mi, ap, mirror, rx)
        return GainTensor(los, d1, d2, irs, self.mirror_array.copy())

    def _mirror_into(self, irs, k, l, mi, ap, mirror, rx):
        q = specular_point(ap.position, rx, mirror)
        if q is None:
            return
        pd = self.scenario.adr.pd_area_m2
        for b, br in enumerate(self.branches):
            g, _ = mirror_gain(ap, mirror, self.mirror_reflectivity[mi], rx,
                               self.branch_normals[b], pd, br.fov_deg)
            irs[k, b, l, mi] = g

    def paths(self, rx_pos, ap_index: int, branch_index: int, mirrors=None) -> PathSet:
        """Every path from one AP to one branch (``mirrors`` restricts the IRS set)."""
        sc = self.scenario
        ap = sc.aps[ap_index]
        br = self.branches[branch_index]
        n = self.branch_normals[branch_index]
        pd = sc.adr.pd_area_m2
        rx = vec3(rx_pos)
        sets = []
        g = los_gain(ap, rx, n, pd, br.fov_deg)
        if g > 0:
            t = np.linalg.norm(rx - vec3(ap.position)) / C_M_PER_NS
            sets.append(PathSet([g], [t], PathKind.LOS))
        sets.append(diffuse_first_order(ap, rx, n, pd, br.fov_deg, self.fine, with_paths=True)[1])
        sets.append(diffuse_second_order(ap, rx, n, pd, br.fov_deg, self.coarse,
                                         kernel=self.kernel, with_paths=True)[1])
        contribs = []
        idx = range(len(self.mirrors)) if mirrors is None else mirrors
        for mi in idx:
            g, t = mirror_gain(ap, self.mirrors[mi], self.mirror_reflectivity[mi], rx, n, pd, br.fov_deg)
            if g > 0:
                contribs.append(PathContribution(g, t, PathKind.IRS, mi))
        if contribs:
            sets.append(PathSet.from_contributions(contribs))
        return PathSet.concat(sets)


def build_gain_tensor(scenario: ScenarioConfig, user_positions=None) -> GainTensor:
    """Gain tensor for the scenario's users (or ``user_positions`` if given)."""
    model = ChannelModel(scenario)
    users = scenario.user_positions() if user_positions is None else user_positions
    return model.gain_tensor(users)
