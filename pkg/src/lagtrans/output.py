"""Particle, gridded, and ensemble-group output writers (CSV)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .model_state import Control, ParticleEnsemble


def _fmt(x: float) -> str:
    """Shortest decimal representation that round-trips the double exactly."""
    return repr(float(x))


def write_atm(ens: ParticleEnsemble, path) -> None:
    """One CSV row per particle, full double-precision round-trip format."""
    nq = ens.q.shape[0]
    lines = ["time,p,zeta,lon,lat," + ",".join(f"q{k}" for k in range(nq))]
    for i in range(ens.np):
        vals = [ens.time[i], ens.p[i], ens.zeta[i], ens.lon[i], ens.lat[i]]
        vals.extend(ens.q[:, i])
        lines.append(",".join(_fmt(v) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_grid(ctl: Control, ens: ParticleEnsemble, path) -> None:
    """Particle counts on a regular lon/lat grid over [-180,180) x [-90,90].

    Upper-edge coordinates land in the last bin, so counts always sum to np.
    """
    nx, ny = ctl.grid_nx, ctl.grid_ny
    wx, wy = 360.0 / nx, 180.0 / ny
    ix = np.clip(np.floor((ens.lon + 180.0) / wx).astype(int), 0, nx - 1)
    iy = np.clip(np.floor((ens.lat + 90.0) / wy).astype(int), 0, ny - 1)
    counts = np.zeros((nx, ny), dtype=np.int64)
    np.add.at(counts, (ix, iy), 1)
    lines = ["lon_center,lat_center,count"]
    for i in range(nx):
        for j in range(ny):
            lines.append(f"{_fmt(-180.0 + (i + 0.5) * wx)},"
                         f"{_fmt(-90.0 + (j + 0.5) * wy)},{counts[i, j]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_ens(ctl: Control, ens: ParticleEnsemble, path) -> None:
    """Per-group statistics (count, mean/std of lon, lat, p), groups sorted
    ascending; group ids come from the configured quantity slot."""
    if not 0 <= ctl.ens_group_slot < ens.q.shape[0]:
        raise ValueError(f"ens_group_slot {ctl.ens_group_slot} is not a valid "
                         f"quantity slot")
    gids = ens.q[ctl.ens_group_slot, :].astype(np.int64)
    if np.any(gids < 0):
        raise ValueError("group ids must be non-negative")
    lines = ["group,count,lon_mean,lon_std,lat_mean,lat_std,p_mean,p_std"]
    for g in np.unique(gids):
        sel = gids == g
        stats = []
        for arr in (ens.lon, ens.lat, ens.p):
            stats.extend([np.mean(arr[sel]), np.std(arr[sel])])
        lines.append(f"{g},{int(np.count_nonzero(sel))},"
                     + ",".join(_fmt(v) for v in stats))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_output(ctl: Control, ens: ParticleEnsemble, t: float, outdir) -> None:
    """Write all configured outputs for model time t into outdir.

    Filenames embed the integer step time: atm_<t>.csv, grid_<t>.csv,
    ens_<t>.csv.
    """
    outdir = Path(outdir)
    if not outdir.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {outdir}")
    tag = int(round(t))
    write_atm(ens, outdir / f"atm_{tag}.csv")
    if ctl.grid_nx * ctl.grid_ny > 0:
        write_grid(ctl, ens, outdir / f"grid_{tag}.csv")
    if ctl.ens_group_slot >= 0:
        write_ens(ctl, ens, outdir / f"ens_{tag}.csv")
