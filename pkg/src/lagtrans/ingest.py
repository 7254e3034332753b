"""File ingestion: control files, initial particle data, meteo snapshots,
plus the built-in analytic climatology."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .model_state import (
    ClimData,
    Control,
    MeteoField,
    ParticleEnsemble,
    ensemble_allocate,
    validate_control,
)


class ParseError(ValueError):
    """Input file could not be parsed; message names file and line."""


# ctl key -> (Control attribute, converter)
_CTL_KEYS = {
    "NP_MAX": ("np_max", int),
    "NQ": ("nq", int),
    "T_START": ("t_start", float),
    "T_STOP": ("t_stop", float),
    "DT": ("dt_model", float),
    "MET_DT": ("met_dt", float),
    "TURB_DX": ("turb_dx", float),
    "TURB_DZ": ("turb_dz", float),
    "TURB_MESO": ("turb_meso", float),
    "CONV_PROB": ("conv_prob", float),
    "CONV_P_TOP": ("conv_p_top", float),
    "P_SURF": ("p_surf", float),
    "P_TOP": ("p_top", float),
    "SEDI_RADIUS": ("sedi_radius", float),
    "SEDI_DENSITY": ("sedi_density", float),
    "ISOSURF": ("isosurf_mode", lambda s: {"0": "off", "1": "pressure", "2": "theta"}[s]),
    "MPI_RANK": ("mpi_rank", int),
    "NUM_DEVICES": ("num_devices_requested", int),
    "RNG_MODE": ("rng_mode", lambda s: {"faithful": "faithful", "counter": "counter"}[s]),
    "RNG_SEED": ("rng_seed_global", int),
    "OUTPUT_DT": ("output_dt", float),
    "GRID_NX": ("grid_nx", int),
    "GRID_NY": ("grid_ny", int),
    "ENS_GROUP_SLOT": ("ens_group_slot", int),
}


def read_ctl(path) -> Control:
    """Read "KEY = value" control file; unspecified keys keep defaults."""
    ctl = Control()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'KEY = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _CTL_KEYS:
                raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
            attr, conv = _CTL_KEYS[key]
            try:
                setattr(ctl, attr, conv(value))
            except (ValueError, KeyError):
                raise ParseError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    violations = validate_control(ctl)
    if violations:
        raise ParseError(f"{path}: invalid control: " + "; ".join(violations))
    return ctl


def wrap_lon(lon):
    """Wrap longitudes into [-180, 180).

    In-range values pass through untouched so the operation is bit-exact
    on already-wrapped data.
    """
    lon = np.asarray(lon, dtype=np.float64)
    out_of_range = (lon < -180.0) | (lon >= 180.0)
    return np.where(out_of_range, np.mod(lon + 180.0, 360.0) - 180.0, lon)


def read_atm(path, ctl: Control) -> ParticleEnsemble:
    """Read initial particle data from CSV (header time,p,zeta,lon,lat[,q0..])."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty atm file") from None
        header = [h.strip() for h in header]
        if header[:5] != ["time", "p", "zeta", "lon", "lat"]:
            raise ParseError(f"{path}:1: header must start with time,p,zeta,lon,lat")
        n_q_cols = len(header) - 5
        if n_q_cols > ctl.nq:
            raise ParseError(f"{path}:1: {n_q_cols} q columns exceeds nq={ctl.nq}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: malformed row") from None
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} columns")

    if len(rows) > ctl.np_max:
        raise ParseError(f"{path}: {len(rows)} particles exceeds np_max={ctl.np_max}")
    ens = ensemble_allocate(ctl, len(rows))
    if rows:
        data = np.asarray(rows, dtype=np.float64)
        ens.time[:] = data[:, 0]
        ens.p[:] = data[:, 1]
        ens.zeta[:] = data[:, 2]
        ens.lon[:] = wrap_lon(data[:, 3])
        ens.lat[:] = data[:, 4]
        if np.any(np.abs(ens.lat) > 90.0):
            bad = int(np.argmax(np.abs(ens.lat) > 90.0))
            raise ParseError(f"{path}: latitude out of [-90, 90] at particle {bad}")
        for k in range(n_q_cols):
            ens.q[k, :] = data[:, 5 + k]
    return ens


def read_met(path) -> MeteoField:
    """Read one meteo snapshot in the MET text format."""
    with open(path, encoding="utf-8") as fh:
        tokens_by_line = [line.split() for line in fh]

    lines = [(i + 1, toks) for i, toks in enumerate(tokens_by_line) if toks]
    pos = 0

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"{path}: unexpected end of file")
        lineno, toks = lines[pos]
        pos += 1
        return lineno, toks

    lineno, header = next_line()
    if len(header) != 5 or header[0] != "MET":
        raise ParseError(f"{path}:{lineno}: expected 'MET <t> <nx> <ny> <nz>'")
    try:
        t_met = float(header[1])
        nx, ny, nz = int(header[2]), int(header[3]), int(header[4])
    except ValueError:
        raise ParseError(f"{path}:{lineno}: bad MET header values") from None

    def read_floats(count, what):
        lineno, toks = next_line()
        if len(toks) != count:
            raise ParseError(f"{path}:{lineno}: expected {count} {what} values, "
                             f"got {len(toks)}")
        try:
            return np.array([float(t) for t in toks], dtype=np.float64)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric {what} value") from None

    lons = read_floats(nx, "longitude")
    lats = read_floats(ny, "latitude")
    levs = read_floats(nz, "level")

    fields = {}
    for var in ("U", "V", "W", "T"):
        lineno, toks = next_line()
        if toks != [var]:
            raise ParseError(f"{path}:{lineno}: expected variable marker {var!r}")
        block = np.empty((nx, ny, nz), dtype=np.float64)
        for k in range(nz):
            for j in range(ny):
                block[:, j, k] = read_floats(nx, f"{var} row")
        fields[var] = block
    if pos != len(lines):
        raise ParseError(f"{path}:{lines[pos][0]}: trailing data after T block")

    met = MeteoField(t_met=t_met, lons=lons, lats=lats, levs=levs,
                     u=fields["U"], v=fields["V"], w=fields["W"], T=fields["T"])
    try:
        met.validate()
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return met


def met_periodic(met: MeteoField) -> MeteoField:
    """Close a global longitude grid by duplicating the first column at +360.

    A no-op (the same object is returned) unless the grid spans the full
    circle, i.e. max(lons) - min(lons) + spacing == 360 within 1e-6 deg.
    """
    spacing = met.lons[1] - met.lons[0]
    if not math.isclose(met.lons[-1] - met.lons[0] + spacing, 360.0, abs_tol=1e-6):
        return met
    lons = np.append(met.lons, met.lons[0] + 360.0)
    wrap = lambda a: np.concatenate([a, a[:1, :, :]], axis=0)
    return MeteoField(t_met=met.t_met, lons=lons, lats=met.lats, levs=met.levs,
                      u=wrap(met.u), v=wrap(met.v), w=wrap(met.w), T=wrap(met.T))


def read_clim(ctl: Control) -> ClimData:
    """Build the analytic climatology tables.

    p_trop(lat) = 300 - 200*cos^2(lat) hPa on a 5-degree grid;
    hno3(lat, p) = 1e-8 * exp(-((p-50)/40)^2) * (0.5 + 0.5*cos(lat))
    on a 5-degree x 10-hPa grid.
    """
    lat_grid = np.arange(-90.0, 90.0 + 1e-9, 5.0)
    p_grid = np.arange(10.0, 1000.0 + 1e-9, 10.0)
    lat_rad = np.deg2rad(lat_grid)
    p_trop_tab = 300.0 - 200.0 * np.cos(lat_rad) ** 2
    hno3_tab = (1e-8 * np.exp(-(((p_grid[None, :] - 50.0) / 40.0) ** 2))
                * (0.5 + 0.5 * np.cos(lat_rad))[:, None])
    return ClimData(lat_grid=lat_grid, p_grid=p_grid,
                    hno3_tab=hno3_tab, p_trop_tab=p_trop_tab)


def discover_met_files(met_prefix) -> list[Path]:
    """Met snapshot files named "<prefix><k>.txt" for k = 0, 1, 2, ..."""
    paths = []
    k = 0
    while True:
        p = Path(f"{met_prefix}{k}.txt")
        if not p.exists():
            break
        paths.append(p)
        k += 1
    if not paths:
        raise FileNotFoundError(f"no met files found for prefix {met_prefix!r}")
    return paths
