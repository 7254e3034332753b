import numpy as np
import pytest

from lagtrans.model_state import Control, MeteoField, cache_allocate, ensemble_allocate
from lagtrans.partition import calc_device_workload_range


def make_met(t_met=0.0, u=0.0, v=0.0, w=0.0, T=250.0,
             lons=None, lats=None, levs=None):
    """Meteo snapshot with constant or callable(lon, lat, lev) fields."""
    lons = np.asarray(lons if lons is not None
                      else np.arange(-180.0, 180.0, 30.0), dtype=np.float64)
    lats = np.asarray(lats if lats is not None
                      else np.arange(-90.0, 90.0 + 1e-9, 10.0), dtype=np.float64)
    levs = np.asarray(levs if levs is not None
                      else [1000.0, 700.0, 500.0, 300.0, 100.0, 50.0, 10.0],
                      dtype=np.float64)
    LO, LA, LE = np.meshgrid(lons, lats, levs, indexing="ij")

    def expand(val):
        if callable(val):
            return np.asarray(val(LO, LA, LE), dtype=np.float64)
        return np.full(LO.shape, float(val))

    return MeteoField(t_met=t_met, lons=lons, lats=lats, levs=levs,
                      u=expand(u), v=expand(v), w=expand(w), T=expand(T))


def met_to_text(met):
    """Serialize a MeteoField in the MET text input format."""
    lines = [f"MET {met.t_met!r} {len(met.lons)} {len(met.lats)} {len(met.levs)}"]
    for arr in (met.lons, met.lats, met.levs):
        lines.append(" ".join(repr(float(x)) for x in arr))
    for name, a in (("U", met.u), ("V", met.v), ("W", met.w), ("T", met.T)):
        lines.append(name)
        for k in range(a.shape[2]):
            for j in range(a.shape[1]):
                lines.append(" ".join(repr(float(x)) for x in a[:, j, k]))
    return "\n".join(lines) + "\n"


def write_met_series(dirpath, prefix, mets):
    for k, met in enumerate(mets):
        (dirpath / f"{prefix}{k}.txt").write_text(met_to_text(met))
    return str(dirpath / prefix)


def make_ensemble(ctl, n, lon=0.0, lat=0.0, p=500.0, time=0.0, seed=None):
    """Ensemble of n particles, either all at one point or randomized."""
    ens = ensemble_allocate(ctl, n)
    if seed is not None:
        rs = np.random.default_rng(seed)
        ens.lon[:] = rs.uniform(-180.0, 180.0, n)
        ens.lat[:] = rs.uniform(-85.0, 85.0, n)
        ens.p[:] = rs.uniform(ctl.p_top + 1, ctl.p_surf - 1, n)
    else:
        ens.lon[:] = lon
        ens.lat[:] = lat
        ens.p[:] = p
    ens.time[:] = time
    return ens


def full_range(n):
    return calc_device_workload_range(n, 1, 0)


@pytest.fixture
def ctl():
    return Control(np_max=200000)


@pytest.fixture
def const_met():
    return make_met()


def make_state(ctl, n, **kwargs):
    """(ensemble, cache, dt array, full range) bundle for physics tests."""
    ens = make_ensemble(ctl, n, **kwargs)
    return ens, cache_allocate(n), np.zeros(n), full_range(n)
