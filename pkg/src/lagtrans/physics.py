"""Per-particle process modules.

Every module operates only on the particles of a given WorkRange, reads
no state of other particles, and is bit-reproducible, so applying it to
the ranges of a disjoint partition (in any order or concurrently) is
equivalent to applying it to the full range at once.
"""

from __future__ import annotations

import numpy as np

from .model_state import CacheState, ClimData, Control, MeteoField, ParticleEnsemble
from .partition import WorkRange
from .rng import RandomBatch

RE = 6_371_000.0          # m, Earth radius
G0 = 9.80665              # m/s^2
R_AIR = 287.058           # J/(kg K)
ETA_AIR = 1.8205e-5       # Pa s, dynamic viscosity
KAPPA = 0.2857            # R/cp for dry air
DEG_PER_M = 180.0 / (np.pi * RE)

_COS_LAT_MIN = np.cos(np.deg2rad(89.999))  # pole-singularity clamp


def _cos_lat(lat_deg):
    return np.maximum(np.cos(np.deg2rad(lat_deg)), _COS_LAT_MIN)


def _locate(grid: np.ndarray, x: np.ndarray):
    """Cell index and fractional position on a strictly increasing grid,
    with x clamped to the grid hull."""
    x = np.clip(x, grid[0], grid[-1])
    i = np.clip(np.searchsorted(grid, x) - 1, 0, len(grid) - 2)
    f = (x - grid[i]) / (grid[i + 1] - grid[i])
    return i, f


def _interp_snapshot(met: MeteoField, lon, lat, p, fields):
    """Trilinear interpolation of the named met fields at particle positions."""
    i, fx = _locate(met.lons, lon)
    j, fy = _locate(met.lats, lat)
    # levels decrease with index; locate on the reversed axis
    k_rev, fz = _locate(met.levs[::-1], p)
    k = len(met.levs) - 2 - k_rev
    fz = 1.0 - fz

    w000 = (1 - fx) * (1 - fy) * (1 - fz)
    w100 = fx * (1 - fy) * (1 - fz)
    w010 = (1 - fx) * fy * (1 - fz)
    w110 = fx * fy * (1 - fz)
    w001 = (1 - fx) * (1 - fy) * fz
    w101 = fx * (1 - fy) * fz
    w011 = (1 - fx) * fy * fz
    w111 = fx * fy * fz

    out = []
    for name in fields:
        a = getattr(met, name)
        val = (w000 * a[i, j, k] + w100 * a[i + 1, j, k]
               + w010 * a[i, j + 1, k] + w110 * a[i + 1, j + 1, k]
               + w001 * a[i, j, k + 1] + w101 * a[i + 1, j, k + 1]
               + w011 * a[i, j + 1, k + 1] + w111 * a[i + 1, j + 1, k + 1])
        out.append(val)
    return out


def interpolate_met(met0: MeteoField, met1: MeteoField, t, lon, lat, p,
                    fields=("u", "v", "w", "T")):
    """Trilinear interpolation in space within each snapshot, then linear in
    time between snapshots. Positions outside the grid hull are clamped."""
    vals0 = _interp_snapshot(met0, lon, lat, p, fields)
    if met1.t_met == met0.t_met:
        return tuple(vals0)
    vals1 = _interp_snapshot(met1, lon, lat, p, fields)
    wt = np.clip((np.asarray(t, dtype=np.float64) - met0.t_met)
                 / (met1.t_met - met0.t_met), 0.0, 1.0)
    return tuple((1.0 - wt) * v0 + wt * v1 for v0, v1 in zip(vals0, vals1))


def module_timesteps(ctl: Control, ens: ParticleEnsemble, t_next: float,
                     work: WorkRange, dt: np.ndarray) -> None:
    """Per-particle timestep: full dt_model, shortened near t_stop, zero
    for finished particles."""
    s = work.slice
    dt[s] = np.clip(np.minimum(ctl.dt_model, ctl.t_stop - ens.time[s]),
                    0.0, ctl.dt_model)


def module_advection(ctl: Control, ens: ParticleEnsemble, met0: MeteoField,
                     met1: MeteoField, dt: np.ndarray, work: WorkRange) -> None:
    """Explicit midpoint integration of the kinematic trajectory."""
    s = work.slice
    dts = dt[s]
    active = dts > 0.0
    if not np.any(active):
        return
    lon, lat, p, t = ens.lon[s], ens.lat[s], ens.p[s], ens.time[s]

    u0, v0, w0 = interpolate_met(met0, met1, t, lon, lat, p, fields=("u", "v", "w"))
    half = 0.5 * dts
    lon_m = lon + u0 * half * DEG_PER_M / _cos_lat(lat)
    lat_m = lat + v0 * half * DEG_PER_M
    p_m = p + w0 * half

    u1, v1, w1 = interpolate_met(met0, met1, t + half, lon_m, lat_m, p_m,
                                 fields=("u", "v", "w"))
    dlon = u1 * dts * DEG_PER_M / _cos_lat(lat_m)
    dlat = v1 * dts * DEG_PER_M
    dp = w1 * dts

    ens.lon[s] = np.where(active, lon + dlon, lon)
    ens.lat[s] = np.where(active, lat + dlat, lat)
    ens.p[s] = np.where(active, p + dp, p)
    ens.time[s] = np.where(active, t + dts, t)


def module_diffusion_turb(ctl: Control, ens: ParticleEnsemble, met0: MeteoField,
                          met1: MeteoField, dt: np.ndarray, rnd: RandomBatch,
                          work: WorkRange) -> None:
    """Gaussian displacements with prescribed diffusivities: sqrt(2 K dt)
    times a standard normal, horizontally in metres and vertically
    converted to pressure hydrostatically."""
    if ctl.turb_dx == 0.0 and ctl.turb_dz == 0.0:
        return
    s = work.slice
    dts = dt[s]
    active = dts > 0.0
    if not np.any(active):
        return
    xi = rnd.diff_turb.reshape(-1, 3)[s]
    lon, lat, p = ens.lon[s], ens.lat[s], ens.p[s]

    if ctl.turb_dx > 0.0:
        sig_h = np.sqrt(2.0 * ctl.turb_dx * dts)
        dlon = sig_h * xi[:, 0] * DEG_PER_M / _cos_lat(lat)
        dlat = sig_h * xi[:, 1] * DEG_PER_M
        ens.lon[s] = np.where(active, lon + dlon, lon)
        ens.lat[s] = np.where(active, lat + dlat, lat)

    if ctl.turb_dz > 0.0:
        (T,) = interpolate_met(met0, met1, ens.time[s], lon, lat, p, fields=("T",))
        dz = np.sqrt(2.0 * ctl.turb_dz * dts) * xi[:, 2]
        rho = 100.0 * p / (R_AIR * T)
        dp = -(rho * G0 * dz) / 100.0
        ens.p[s] = np.where(active, p + dp, p)


def module_diffusion_meso(ctl: Control, ens: ParticleEnsemble, met0: MeteoField,
                          met1: MeteoField, dt: np.ndarray, rnd: RandomBatch,
                          cache: CacheState, work: WorkRange) -> None:
    """AR(1) subgrid wind perturbations, scaled by the local wind variability
    over the eight nodes of the enclosing met0 grid cell."""
    if ctl.turb_meso == 0.0:
        return
    s = work.slice
    dts = dt[s]
    active = dts > 0.0
    if not np.any(active):
        return
    xi = rnd.diff_meso.reshape(-1, 3)[s]
    lon, lat, p = ens.lon[s], ens.lat[s], ens.p[s]

    i, _ = _locate(met0.lons, lon)
    j, _ = _locate(met0.lats, lat)
    k_rev, _ = _locate(met0.levs[::-1], p)
    k = len(met0.levs) - 2 - k_rev

    r = np.clip(1.0 - 2.0 * dts / ctl.met_dt, 0.0, 1.0)
    amp = np.sqrt(1.0 - r * r)

    di = np.array([0, 1, 0, 1, 0, 1, 0, 1])
    dj = np.array([0, 0, 1, 1, 0, 0, 1, 1])
    dk = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    for c, name in enumerate(("u", "v", "w")):
        a = getattr(met0, name)
        nodes = a[i[:, None] + di, j[:, None] + dj, k[:, None] + dk]
        sigma = ctl.turb_meso * np.std(nodes, axis=1)
        pert = cache.uvwp[c, s]
        cache.uvwp[c, s] = np.where(active, r * pert + amp * sigma * xi[:, c], pert)

    dlon = cache.uvwp[0, s] * dts * DEG_PER_M / _cos_lat(lat)
    dlat = cache.uvwp[1, s] * dts * DEG_PER_M
    dp = cache.uvwp[2, s] * dts
    ens.lon[s] = np.where(active, lon + dlon, lon)
    ens.lat[s] = np.where(active, lat + dlat, lat)
    ens.p[s] = np.where(active, p + dp, p)


def module_convection(ctl: Control, ens: ParticleEnsemble, dt: np.ndarray,
                      rnd: RandomBatch, work: WorkRange) -> None:
    """Random vertical redistribution below conv_p_top; the same uniform
    drives both the hit decision and the new pressure."""
    if ctl.conv_prob == 0.0:
        return
    s = work.slice
    r = rnd.convection[s]
    hit = (dt[s] > 0.0) & (ens.p[s] > ctl.conv_p_top) & (r < ctl.conv_prob)
    if not np.any(hit):
        return
    p_new = ctl.conv_p_top + (r / ctl.conv_prob) * (ctl.p_surf - ctl.conv_p_top)
    ens.p[s] = np.where(hit, p_new, ens.p[s])


def module_sedi(ctl: Control, ens: ParticleEnsemble, met0: MeteoField,
                met1: MeteoField, dt: np.ndarray, work: WorkRange) -> None:
    """Stokes gravitational settling, applied as a downward pressure change."""
    if ctl.sedi_radius == 0.0:
        return
    s = work.slice
    dts = dt[s]
    active = dts > 0.0
    if not np.any(active):
        return
    p = ens.p[s]
    (T,) = interpolate_met(met0, met1, ens.time[s], ens.lon[s], ens.lat[s], p,
                           fields=("T",))
    rho = 100.0 * p / (R_AIR * T)
    v_s = 2.0 * ctl.sedi_radius ** 2 * (ctl.sedi_density - rho) * G0 / (9.0 * ETA_AIR)
    dp = (rho * G0 * v_s * dts) / 100.0
    ens.p[s] = np.where(active, p + dp, p)


def module_isosurf_init(ctl: Control, ens: ParticleEnsemble, met0: MeteoField,
                        met1: MeteoField, cache: CacheState,
                        work: WorkRange) -> None:
    """Record the conserved isosurface value at simulation start."""
    s = work.slice
    if ctl.isosurf_mode == "pressure":
        cache.iso_var[s] = ens.p[s]
    elif ctl.isosurf_mode == "theta":
        (T,) = interpolate_met(met0, met1, ens.time[s], ens.lon[s], ens.lat[s],
                               ens.p[s], fields=("T",))
        cache.iso_var[s] = T * (1000.0 / ens.p[s]) ** KAPPA


def module_isosurf(ctl: Control, ens: ParticleEnsemble, met0: MeteoField,
                   met1: MeteoField, cache: CacheState, work: WorkRange) -> None:
    """Pull particles back onto their isosurface.

    Theta mode solves theta(p) = iso_var by the fixed-point iteration
    p <- 1000 * (T(p) / iso_var)^(1/kappa), at most 10 iterations or
    |dp| < 0.1 hPa; non-convergence keeps the last iterate and bumps
    cache.iso_nonconverged.
    """
    s = work.slice
    if ctl.isosurf_mode == "pressure":
        ens.p[s] = cache.iso_var[s]
    elif ctl.isosurf_mode == "theta":
        p = ens.p[s].copy()
        theta0 = cache.iso_var[s]
        pending = np.ones(len(p), dtype=bool)
        for _ in range(10):
            if not np.any(pending):
                break
            (T,) = interpolate_met(met0, met1, ens.time[s], ens.lon[s],
                                   ens.lat[s], p, fields=("T",))
            p_new = 1000.0 * (T / theta0) ** (1.0 / KAPPA)
            dp = np.where(pending, p_new - p, 0.0)
            p = np.where(pending, p_new, p)
            pending = pending & (np.abs(dp) >= 0.1)
        cache.iso_nonconverged += int(np.count_nonzero(pending))
        ens.p[s] = p


def module_position(ctl: Control, ens: ParticleEnsemble, work: WorkRange) -> None:
    """Keep particles inside the model domain: reflect over the poles, wrap
    longitude into [-180, 180), clamp pressure to [p_top, p_surf].

    In-range coordinates pass through bit-exactly, so the operation is
    idempotent.
    """
    s = work.slice
    lat = ens.lat[s]
    lon = ens.lon[s]
    while True:
        over = np.abs(lat) > 90.0
        if not np.any(over):
            break
        lat = np.where(over, np.sign(lat) * (180.0 - np.abs(lat)), lat)
        lon = np.where(over, lon + 180.0, lon)
    out = (lon < -180.0) | (lon >= 180.0)
    lon = np.where(out, np.mod(lon + 180.0, 360.0) - 180.0, lon)
    ens.lat[s] = lat
    ens.lon[s] = lon
    ens.p[s] = np.clip(ens.p[s], ctl.p_top, ctl.p_surf)


def module_meteo(ctl: Control, ens: ParticleEnsemble, met0: MeteoField,
                 met1: MeteoField, clim: ClimData, work: WorkRange) -> None:
    """Sample meteo and climatology along the trajectories into the quantity
    slots: T, u, v, HNO3 vmr, stratosphere flag."""
    s = work.slice
    T, u, v = interpolate_met(met0, met1, ens.time[s], ens.lon[s], ens.lat[s],
                              ens.p[s], fields=("T", "u", "v"))
    ens.q[0, s] = T
    ens.q[1, s] = u
    ens.q[2, s] = v
    ens.q[3, s] = clim.hno3(ens.lat[s], ens.p[s])
    ens.q[4, s] = np.where(ens.p[s] < clim.p_trop(ens.lat[s]), 1.0, 0.0)
