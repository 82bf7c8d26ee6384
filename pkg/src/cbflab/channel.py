"""Temporally correlated block-fading channels on a hexagonal cell layout.

This is a desk-scale substitute for ray-traced urban-macro channels: it keeps
the two properties the learning machinery depends on -- temporal correlation
between slots and spatial structure across the array -- without a ray-tracing
engine.  Fading follows a first-order Gauss-Markov recursion

    h(t) = rho_c * h(t-1) + sqrt(1 - rho_c^2) * e(t)

where e(t) is a fresh draw from the slot-marginal distribution: either a
path-loss-scaled complex Gaussian or a sum of uniform-rectangular-array rays
with random angles and gains.  Users advance along straight tracks with
specular reflection at the cell edge.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import j0

from .network import ChannelState, NetworkConfig

logger = logging.getLogger(__name__)

MODEL_KINDS = ("iid-rayleigh", "gauss-markov", "geometric-ura")

# Users are dropped uniformly in the cell disc outside this radius around
# their BS, so the first slot never starts on top of an antenna mast.
BS_EXCLUSION_RADIUS = 10.0

TRACE_MAGIC = b"CBFLAB-TRACE\x00\x00\x00\x01"
_HEADER = struct.Struct("<5Q")


class TraceFormatError(ValueError):
    """Raised when a channel-trace file fails an integrity check."""


@dataclass(frozen=True)
class ChannelModelConfig:
    """Knobs of the substitute fading model.

    ``temporal_corr`` may be None, in which case the slot-to-slot correlation
    is derived from Jakes' model as J0(2*pi*f_D*T_s) with Doppler
    f_D = v*f_c/c; for a 2.6 GHz carrier, 3 km/h and 20 ms slots this
    evaluates to about 0.80.
    """

    model_kind: str = "geometric-ura"
    temporal_corr: float | None = None
    pathloss_exponent: float = 3.0
    pathloss_ref_db: float = 36.0
    pathloss_ref_dist: float = 1.0
    num_rays: int = 8
    angular_spread_deg: float = 10.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
        if self.temporal_corr is not None and not 0.0 <= self.temporal_corr <= 1.0:
            raise ValueError("temporal_corr must lie in [0, 1]")
        if not self.pathloss_exponent > 0:
            raise ValueError("pathloss_exponent must be > 0")
        if self.num_rays < 1:
            raise ValueError("num_rays must be >= 1")
        if self.angular_spread_deg < 0:
            raise ValueError("angular_spread_deg must be >= 0")


def jakes_temporal_corr(cfg: NetworkConfig):
    """Slot-lag correlation J0(2*pi*f_D*T_s) implied by the mobility config."""
    doppler = cfg.ue_speed * cfg.carrier_freq / 299792458.0
    return float(j0(2.0 * np.pi * doppler * cfg.slot_duration))


def resolve_temporal_corr(model_cfg, net_cfg):
    if model_cfg.temporal_corr is not None:
        return model_cfg.temporal_corr
    return jakes_temporal_corr(net_cfg)


@dataclass
class Topology:
    """BS and user placement.  Positions are 2-D coordinates in meters."""

    bs_positions: np.ndarray  # (N, 2)
    ue_positions: np.ndarray  # (N, K, 2)
    ue_headings: np.ndarray  # (N, K) radians

    def copy(self):
        return Topology(
            self.bs_positions.copy(),
            self.ue_positions.copy(),
            self.ue_headings.copy(),
        )


def hex_grid(num_sites, spacing):
    """First ``num_sites`` positions of a hexagonal grid, ring by ring.

    Site 0 sits at the origin; ring r holds 6r sites at inter-site distance
    ``spacing`` from their neighbours.
    """
    # Axial hex directions, walked around each ring.
    directions = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]
    coords = [(0, 0)]
    ring = 1
    while len(coords) < num_sites:
        q, r = ring, 0
        for dq, dr in [directions[i % 6] for i in range(2, 8)]:
            for _ in range(ring):
                coords.append((q, r))
                q, r = q + dq, r + dr
        ring += 1
    coords = coords[:num_sites]
    out = np.empty((num_sites, 2))
    for i, (q, r) in enumerate(coords):
        out[i, 0] = spacing * (q + 0.5 * r)
        out[i, 1] = spacing * (np.sqrt(3.0) / 2.0) * r
    return out


def init_topology(cfg: NetworkConfig, rng_seed):
    """Drop BSs on the hex grid and users uniformly inside their cells.

    Deterministic for a given seed.  Users land in the annulus between the
    BS-exclusion radius and the cell edge, with uniform headings.
    """
    rng = np.random.default_rng(rng_seed)
    bs = hex_grid(cfg.num_cells, 2.0 * cfg.cell_radius)
    n, k = cfg.num_cells, cfg.users_per_cell
    r_lo, r_hi = BS_EXCLUSION_RADIUS, cfg.cell_radius
    # Uniform over the annulus area: r = sqrt(u*(hi^2-lo^2)+lo^2).
    u = rng.random((n, k))
    radii = np.sqrt(u * (r_hi**2 - r_lo**2) + r_lo**2)
    angles = rng.uniform(0.0, 2.0 * np.pi, (n, k))
    offsets = radii[..., None] * np.stack(
        [np.cos(angles), np.sin(angles)], axis=-1
    )
    ue = bs[:, None, :] + offsets
    headings = rng.uniform(0.0, 2.0 * np.pi, (n, k))
    return Topology(bs_positions=bs, ue_positions=ue, ue_headings=headings)


def ura_steering(azimuth, elevation, array_rows, array_cols):
    """Half-wavelength URA response, unit norm.

    Element (m1, m2) of an array_rows x array_cols grid contributes phase
    pi * (m1*sin(el) + m2*cos(el)*sin(az)); entries are scaled by 1/sqrt(M)
    so the response has unit Euclidean norm.
    """
    m1 = np.arange(array_rows)[:, None]
    m2 = np.arange(array_cols)[None, :]
    phase = np.pi * (m1 * np.sin(elevation) + m2 * np.cos(elevation) * np.sin(azimuth))
    m = array_rows * array_cols
    return (np.exp(1j * phase) / np.sqrt(m)).reshape(m)


def path_loss_db(distance, cfg: ChannelModelConfig):
    """Log-distance path loss: PL0 + 10*n*log10(d/d0) in dB.

    Distances below the reference are clamped to it (logged once per call
    site at warning level).
    """
    d0 = cfg.pathloss_ref_dist
    distance = np.asarray(distance, dtype=float)
    if np.any(distance < d0):
        logger.warning("distance below reference %.3g m clamped", d0)
        distance = np.maximum(distance, d0)
    return cfg.pathloss_ref_db + 10.0 * cfg.pathloss_exponent * np.log10(distance / d0)


def _marginal_draw(topology, model_cfg, net_cfg, rng):
    """One fresh draw of the full (N, N, K, M) channel tensor.

    Per-coefficient-vector power is M * pathloss, i.e. unit average power per
    antenna element before path loss.
    """
    n, k = net_cfg.num_cells, net_cfg.users_per_cell
    m1, m2 = net_cfg.array_rows, net_cfg.array_cols
    m = m1 * m2
    spread = np.deg2rad(model_cfg.angular_spread_deg)
    h = np.empty((n, n, k, m), dtype=np.complex128)
    for bs in range(n):
        for cell in range(n):
            for user in range(k):
                offset = topology.ue_positions[cell, user] - topology.bs_positions[bs]
                d = np.linalg.norm(offset)
                pl_lin = 10.0 ** (-path_loss_db(d, model_cfg) / 10.0)
                if model_cfg.model_kind == "geometric-ura":
                    # Rays cluster around the geometric BS -> UE direction
                    # (all arrays face +x), mimicking the narrow per-link
                    # angular spread of a macro-cell BS.
                    rays = model_cfg.num_rays
                    az_los = np.arctan2(offset[1], offset[0])
                    az = az_los + spread * rng.uniform(-1.0, 1.0, rays)
                    el = spread * rng.uniform(-0.5, 0.5, rays)
                    gains = (
                        rng.standard_normal(rays) + 1j * rng.standard_normal(rays)
                    ) / np.sqrt(2.0)
                    vec = np.zeros(m, dtype=np.complex128)
                    for ray in range(rays):
                        vec += gains[ray] * ura_steering(az[ray], el[ray], m1, m2)
                    h[bs, cell, user] = np.sqrt(pl_lin * m / rays) * vec
                else:
                    vec = (
                        rng.standard_normal(m) + 1j * rng.standard_normal(m)
                    ) / np.sqrt(2.0)
                    h[bs, cell, user] = np.sqrt(pl_lin) * vec
    return h


def _advance_positions(topology, net_cfg):
    """Move every user by v*T_s along its heading, reflecting at cell edges."""
    step = net_cfg.ue_speed * net_cfg.slot_duration
    n, k = topology.ue_positions.shape[:2]
    for cell in range(n):
        center = topology.bs_positions[cell]
        for user in range(k):
            heading = topology.ue_headings[cell, user]
            direction = np.array([np.cos(heading), np.sin(heading)])
            pos = topology.ue_positions[cell, user] + step * direction
            radial = pos - center
            dist = np.linalg.norm(radial)
            if dist > net_cfg.cell_radius:
                # Fold the overshoot back inside and mirror the heading about
                # the tangent at the crossing point.
                normal = radial / dist
                pos = center + normal * (2.0 * net_cfg.cell_radius - dist)
                reflected = direction - 2.0 * np.dot(direction, normal) * normal
                topology.ue_headings[cell, user] = np.arctan2(
                    reflected[1], reflected[0]
                )
            topology.ue_positions[cell, user] = pos


def generate_slot(topology, prev, model_cfg, net_cfg, rng):
    """Generate the next ChannelState, updating user positions in place.

    The first slot (``prev is None``) draws the marginal at the initial
    positions.  Later slots advance the users one step, then mix the previous
    coefficients with a fresh marginal draw at correlation ``rho_c``.  The
    iid-rayleigh model ignores the correlation knob and redraws every slot.
    """
    if prev is not None:
        expected = (
            net_cfg.num_cells,
            net_cfg.num_cells,
            net_cfg.users_per_cell,
            net_cfg.num_antennas,
        )
        if prev.h.shape != expected:
            raise ValueError(
                f"previous slot has shape {prev.h.shape}, expected {expected}"
            )
        _advance_positions(topology, net_cfg)
    fresh = _marginal_draw(topology, model_cfg, net_cfg, rng)
    if prev is None or model_cfg.model_kind == "iid-rayleigh":
        return ChannelState(slot_index=0 if prev is None else prev.slot_index + 1, h=fresh)
    rho = resolve_temporal_corr(model_cfg, net_cfg)
    h = rho * prev.h + np.sqrt(max(0.0, 1.0 - rho * rho)) * fresh
    return ChannelState(slot_index=prev.slot_index + 1, h=h)


def config_fingerprint(model_cfg, net_cfg):
    """64-bit hash of every parameter that shapes the channel statistics."""
    canon = "|".join(
        [
            f"{net_cfg.num_cells},{net_cfg.users_per_cell}",
            f"{net_cfg.array_rows},{net_cfg.array_cols}",
            f"{net_cfg.carrier_freq:.17g},{net_cfg.cell_radius:.17g}",
            f"{net_cfg.slot_duration:.17g},{net_cfg.ue_speed:.17g}",
            model_cfg.model_kind,
            "auto"
            if model_cfg.temporal_corr is None
            else f"{model_cfg.temporal_corr:.17g}",
            f"{model_cfg.pathloss_exponent:.17g}",
            f"{model_cfg.pathloss_ref_db:.17g}",
            f"{model_cfg.pathloss_ref_dist:.17g}",
            f"{model_cfg.num_rays}",
            f"{model_cfg.angular_spread_deg:.17g}",
            f"{model_cfg.rng_seed}",
        ]
    )
    digest = hashlib.sha256(canon.encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class ChannelTrace:
    """A stored sequence of channel realizations, shape (T, N, N, K, M)."""

    num_cells: int
    users_per_cell: int
    num_antennas: int
    cfg_hash: int
    h: np.ndarray

    @property
    def num_slots(self):
        return self.h.shape[0]

    def slot(self, t):
        return ChannelState(slot_index=t, h=self.h[t])


class ChannelProcess:
    """Stateful slot-by-slot channel generator with checkpoint support."""

    def __init__(self, net_cfg, model_cfg, topology_seed=None):
        self.net_cfg = net_cfg
        self.model_cfg = model_cfg
        seed = model_cfg.rng_seed if topology_seed is None else topology_seed
        self.topology = init_topology(net_cfg, seed)
        self.rng = np.random.default_rng(model_cfg.rng_seed)
        self.current = None

    def next_slot(self):
        self.current = generate_slot(
            self.topology, self.current, self.model_cfg, self.net_cfg, self.rng
        )
        return self.current

    def state_dict(self):
        return {
            "slot": -1 if self.current is None else self.current.slot_index,
            "h": None if self.current is None else self.current.h.copy(),
            "ue_positions": self.topology.ue_positions.copy(),
            "ue_headings": self.topology.ue_headings.copy(),
            "rng_state": json.dumps(self.rng.bit_generator.state),
        }

    def load_state_dict(self, state):
        slot = int(state["slot"])
        self.current = (
            None if slot < 0 else ChannelState(slot_index=slot, h=state["h"])
        )
        self.topology.ue_positions[...] = state["ue_positions"]
        self.topology.ue_headings[...] = state["ue_headings"]
        self.rng.bit_generator.state = json.loads(state["rng_state"])


class TraceStream:
    """Reads a stored trace slot by slot, starting at ``offset``."""

    def __init__(self, trace, offset=0):
        self.trace = trace
        self.cursor = offset

    def next_slot(self):
        if self.cursor >= self.trace.num_slots:
            raise IndexError("channel trace exhausted")
        state = self.trace.slot(self.cursor)
        self.cursor += 1
        return state

    def state_dict(self):
        return {"cursor": self.cursor}

    def load_state_dict(self, state):
        self.cursor = int(state["cursor"])


def generate_trace(net_cfg, model_cfg, num_slots, topology_seed=None):
    """Generate ``num_slots`` correlated slots as an in-memory trace."""
    proc = ChannelProcess(net_cfg, model_cfg, topology_seed=topology_seed)
    n, k, m = net_cfg.num_cells, net_cfg.users_per_cell, net_cfg.num_antennas
    h = np.empty((num_slots, n, n, k, m), dtype=np.complex128)
    for t in range(num_slots):
        h[t] = proc.next_slot().h
    return ChannelTrace(
        num_cells=n,
        users_per_cell=k,
        num_antennas=m,
        cfg_hash=config_fingerprint(model_cfg, net_cfg),
        h=h,
    )


def save_trace(trace, path):
    """Write a trace as fixed-width little-endian binary with a CRC32 footer."""
    header = _HEADER.pack(
        trace.num_cells,
        trace.users_per_cell,
        trace.num_antennas,
        trace.num_slots,
        trace.cfg_hash,
    )
    payload = np.ascontiguousarray(trace.h, dtype="<c16").tobytes()
    body = TRACE_MAGIC + header + payload
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def load_trace(path):
    """Read a trace file back, verifying magic, dimensions and checksum."""
    with open(path, "rb") as fh:
        blob = fh.read()
    min_len = len(TRACE_MAGIC) + _HEADER.size + 4
    if len(blob) < min_len:
        raise TraceFormatError("trace file truncated: shorter than header")
    if blob[: len(TRACE_MAGIC)] != TRACE_MAGIC:
        raise TraceFormatError("bad magic: not a channel trace file")
    n, k, m, num_slots, cfg_hash = _HEADER.unpack_from(blob, len(TRACE_MAGIC))
    payload_len = num_slots * n * n * k * m * 16
    expected = len(TRACE_MAGIC) + _HEADER.size + payload_len + 4
    if len(blob) != expected:
        raise TraceFormatError(
            f"dimension mismatch: header implies {expected} bytes, file has {len(blob)}"
        )
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise TraceFormatError("checksum mismatch: trace file corrupted")
    start = len(TRACE_MAGIC) + _HEADER.size
    h = (
        np.frombuffer(blob[start : start + payload_len], dtype="<c16")
        .reshape(num_slots, n, n, k, m)
        .astype(np.complex128)
    )
    return ChannelTrace(
        num_cells=int(n),
        users_per_cell=int(k),
        num_antennas=int(m),
        cfg_hash=int(cfg_hash),
        h=h,
    )
