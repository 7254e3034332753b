"""Core model data types shared by every other module.

All particle state is held as structure-of-arrays (one numpy array per
property) so kernels can operate on contiguous index ranges.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

ISOSURF_MODES = ("off", "pressure", "theta")
RNG_MODES = ("faithful", "counter")


@dataclass
class Control:
    """Model control parameters (the simulation's run configuration)."""

    np_max: int = 100000          # particle capacity
    nq: int = 5                   # number of quantity fields
    t_start: float = 0.0          # s, model time
    t_stop: float = 86400.0       # s
    dt_model: float = 180.0       # s, nominal timestep
    met_dt: float = 21600.0       # s between meteo snapshots
    turb_dx: float = 50.0         # m^2/s horizontal turbulent diffusivity
    turb_dz: float = 0.1          # m^2/s vertical turbulent diffusivity
    turb_meso: float = 0.16       # mesoscale wind-fluctuation factor
    conv_prob: float = 0.0        # per-step convection probability
    conv_p_top: float = 300.0     # hPa, top of convective redistribution
    p_surf: float = 1013.25       # hPa
    p_top: float = 10.0           # hPa
    sedi_radius: float = 0.0      # m, 0 disables sedimentation
    sedi_density: float = 1000.0  # kg/m^3
    isosurf_mode: str = "off"     # off | pressure | theta
    mpi_rank: int = 0             # only feeds RNG seeding
    num_devices_requested: int = -1  # negative: all available
    rng_mode: str = "faithful"    # faithful | counter
    rng_seed_global: int = 0      # base seed for counter mode
    output_dt: float = 3600.0     # s between outputs
    grid_nx: int = 36             # output grid columns (0 disables grid)
    grid_ny: int = 18             # output grid rows
    ens_group_slot: int = -1      # q slot holding group ids, <0 disables


def validate_control(ctl: Control) -> list[str]:
    """Return a list of invariant violations; empty means the Control is valid."""
    violations = []
    if ctl.np_max < 0:
        violations.append("np_max >= 0 violated")
    if ctl.t_stop < ctl.t_start:
        violations.append("t_stop >= t_start violated")
    if not ctl.dt_model > 0:
        violations.append("dt_model > 0 violated")
    if not ctl.met_dt > 0:
        violations.append("met_dt > 0 violated")
    if ctl.turb_dx < 0:
        violations.append("turb_dx >= 0 violated")
    if ctl.turb_dz < 0:
        violations.append("turb_dz >= 0 violated")
    if not 0.0 <= ctl.turb_meso <= 1.0:
        violations.append("turb_meso in [0, 1] violated")
    if not 0.0 <= ctl.conv_prob <= 1.0:
        violations.append("conv_prob in [0, 1] violated")
    if not ctl.p_top > 0:
        violations.append("p_top > 0 violated")
    if not ctl.p_top < ctl.p_surf:
        violations.append("p_top < p_surf violated")
    if ctl.conv_p_top < ctl.p_top:
        violations.append("conv_p_top >= p_top violated")
    if ctl.sedi_radius < 0:
        violations.append("sedi_radius >= 0 violated")
    if not ctl.sedi_density > 0:
        violations.append("sedi_density > 0 violated")
    if ctl.isosurf_mode not in ISOSURF_MODES:
        violations.append("isosurf_mode in {off, pressure, theta} violated")
    if ctl.rng_mode not in RNG_MODES:
        violations.append("rng_mode in {faithful, counter} violated")
    if ctl.nq < 5:
        violations.append("nq >= 5 violated (meteo sampling needs slots 0..4)")
    if not ctl.output_dt > 0:
        violations.append("output_dt > 0 violated")
    if ctl.grid_nx < 0 or ctl.grid_ny < 0:
        violations.append("grid_nx, grid_ny >= 0 violated")
    if ctl.num_devices_requested == 0:
        violations.append("num_devices_requested != 0 violated")
    return violations


@dataclass
class ParticleEnsemble:
    """Structure-of-arrays particle state.

    Quantity slot convention: q[0]=temperature K, q[1]=u m/s, q[2]=v m/s,
    q[3]=HNO3 vmr, q[4]=stratosphere flag; further slots are free.
    """

    np: int
    time: np.ndarray   # s
    p: np.ndarray      # hPa
    zeta: np.ndarray   # carried, written only by isosurface bookkeeping
    lon: np.ndarray    # deg, in [-180, 180)
    lat: np.ndarray    # deg, in [-90, 90]
    q: np.ndarray      # shape (nq, np)

    def array_lengths(self) -> list[int]:
        return [len(self.time), len(self.p), len(self.zeta),
                len(self.lon), len(self.lat), self.q.shape[1]]


class CapacityError(ValueError):
    pass


def ensemble_allocate(ctl: Control, n: int) -> ParticleEnsemble:
    """Allocate a zero-initialized ensemble of n particles."""
    if n > ctl.np_max:
        raise CapacityError(f"requested {n} particles exceeds np_max={ctl.np_max}")
    z = lambda: np.zeros(n, dtype=np.float64)
    return ParticleEnsemble(np=n, time=z(), p=z(), zeta=z(), lon=z(), lat=z(),
                            q=np.zeros((ctl.nq, n), dtype=np.float64))


@dataclass
class MeteoField:
    """One gridded wind/temperature snapshot on a lon x lat x pressure grid."""

    t_met: float        # s, snapshot validity time
    lons: np.ndarray    # deg, strictly increasing
    lats: np.ndarray    # deg, strictly increasing
    levs: np.ndarray    # hPa, strictly decreasing (surface first)
    u: np.ndarray       # m/s, shape (nx, ny, nz)
    v: np.ndarray       # m/s
    w: np.ndarray       # hPa/s pressure tendency
    T: np.ndarray       # K

    def validate(self) -> None:
        nx, ny, nz = len(self.lons), len(self.lats), len(self.levs)
        if nx < 2 or ny < 2 or nz < 2:
            raise ValueError("meteo grid needs nx, ny, nz >= 2")
        if not np.all(np.diff(self.lons) > 0):
            raise ValueError("longitudes must be strictly increasing")
        if not np.all(np.diff(self.lats) > 0):
            raise ValueError("latitudes must be strictly increasing")
        if not np.all(np.diff(self.levs) < 0):
            raise ValueError("pressure levels must be strictly decreasing")
        for name in ("u", "v", "w", "T"):
            if getattr(self, name).shape != (nx, ny, nz):
                raise ValueError(f"{name} shape does not match grid dimensions")
        if not np.all(self.T > 0):
            raise ValueError("temperature must be positive everywhere")


@dataclass
class ClimData:
    """Built-in climatology: HNO3 vmr table and tropopause pressure table."""

    lat_grid: np.ndarray       # deg
    p_grid: np.ndarray         # hPa, increasing
    hno3_tab: np.ndarray       # vmr, shape (nlat, np_levels)
    p_trop_tab: np.ndarray     # hPa, shape (nlat,)

    def p_trop(self, lat):
        """Tropopause pressure at latitude, linear lookup."""
        return np.interp(lat, self.lat_grid, self.p_trop_tab)

    def hno3(self, lat, p):
        """HNO3 volume mixing ratio at (lat, p), bilinear lookup with clamping."""
        lat = np.clip(np.asarray(lat, dtype=np.float64),
                      self.lat_grid[0], self.lat_grid[-1])
        p = np.clip(np.asarray(p, dtype=np.float64),
                    self.p_grid[0], self.p_grid[-1])
        i = np.clip(np.searchsorted(self.lat_grid, lat) - 1, 0, len(self.lat_grid) - 2)
        j = np.clip(np.searchsorted(self.p_grid, p) - 1, 0, len(self.p_grid) - 2)
        fi = (lat - self.lat_grid[i]) / (self.lat_grid[i + 1] - self.lat_grid[i])
        fj = (p - self.p_grid[j]) / (self.p_grid[j + 1] - self.p_grid[j])
        t = self.hno3_tab
        return ((1 - fi) * (1 - fj) * t[i, j] + fi * (1 - fj) * t[i + 1, j]
                + (1 - fi) * fj * t[i, j + 1] + fi * fj * t[i + 1, j + 1])


@dataclass
class CacheState:
    """Per-particle scratch state carried between timesteps."""

    uvwp: np.ndarray      # mesoscale perturbations (u' m/s, v' m/s, w' hPa/s), (3, np)
    iso_var: np.ndarray   # conserved isosurface value per particle
    iso_nonconverged: int = 0  # diagnostic: theta-isosurface iteration failures


def cache_allocate(n: int) -> CacheState:
    return CacheState(uvwp=np.zeros((3, n), dtype=np.float64),
                      iso_var=np.zeros(n, dtype=np.float64))


def deep_copy(obj):
    """Storage-independent copy of any model-state object (arrays duplicated)."""
    return copy.deepcopy(obj)
