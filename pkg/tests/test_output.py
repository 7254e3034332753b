import numpy as np
import pytest

from lagtrans import output
from lagtrans.ingest import read_atm
from lagtrans.model_state import Control

from conftest import make_ensemble


class TestWriteAtm:
    def test_single_particle(self, tmp_path):
        ens = make_ensemble(Control(), 1, lon=10.0, lat=20.0)
        path = tmp_path / "atm.csv"
        output.write_atm(ens, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("time,p,zeta,lon,lat,q0")

    def test_empty_ensemble(self, tmp_path):
        ens = make_ensemble(Control(), 0)
        path = tmp_path / "atm.csv"
        output.write_atm(ens, path)
        assert len(path.read_text().splitlines()) == 1

    def test_round_trip_bit_exact(self, tmp_path):
        ctl = Control()
        ens = make_ensemble(ctl, 200, seed=9)
        rs = np.random.default_rng(10)
        ens.time[:] = rs.uniform(0, 1e6, 200)
        ens.q[:] = rs.standard_normal(ens.q.shape) * 1e-8
        path = tmp_path / "atm.csv"
        output.write_atm(ens, path)
        back = read_atm(path, ctl)
        for name in ("time", "p", "zeta", "lon", "lat"):
            assert np.array_equal(getattr(ens, name), getattr(back, name))
        assert np.array_equal(ens.q, back.q)

    def test_deterministic_bytes(self, tmp_path):
        ens = make_ensemble(Control(), 50, seed=2)
        output.write_atm(ens, tmp_path / "a.csv")
        output.write_atm(ens, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestWriteGrid:
    def read_counts(self, path):
        rows = [line.split(",") for line in path.read_text().splitlines()[1:]]
        return {(float(r[0]), float(r[1])): int(r[2]) for r in rows}

    def test_single_particle_bin(self, tmp_path):
        ctl = Control(grid_nx=4, grid_ny=4)
        ens = make_ensemble(ctl, 1, lon=0.0, lat=0.0)
        path = tmp_path / "grid.csv"
        output.write_grid(ctl, ens, path)
        counts = self.read_counts(path)
        assert sum(counts.values()) == 1
        assert counts[(45.0, 22.5)] == 1  # bin [0,90) x [0,45)

    def test_counts_conserve_np(self, tmp_path):
        ctl = Control(grid_nx=7, grid_ny=5)
        ens = make_ensemble(ctl, 500, seed=4)
        path = tmp_path / "grid.csv"
        output.write_grid(ctl, ens, path)
        assert sum(self.read_counts(path).values()) == 500

    def test_upper_edges_land_in_last_bins(self, tmp_path):
        ctl = Control(grid_nx=4, grid_ny=4)
        ens = make_ensemble(ctl, 2)
        ens.lon[:] = [180.0 - 1e-9, -180.0]
        ens.lat[:] = [90.0, -90.0]
        path = tmp_path / "grid.csv"
        output.write_grid(ctl, ens, path)
        counts = self.read_counts(path)
        assert counts[(135.0, 67.5)] == 1   # last column, last row
        assert counts[(-135.0, -67.5)] == 1


class TestWriteEns:
    def test_requires_group_slot(self, tmp_path):
        ctl = Control(ens_group_slot=-1)
        ens = make_ensemble(ctl, 3)
        with pytest.raises(ValueError):
            output.write_ens(ctl, ens, tmp_path / "ens.csv")

    def test_point_group_zero_std(self, tmp_path):
        ctl = Control(ens_group_slot=5, nq=6)
        ens = make_ensemble(ctl, 10, lon=5.0, lat=6.0, p=700.0)
        path = tmp_path / "ens.csv"
        output.write_ens(ctl, ens, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        vals = lines[1].split(",")
        assert vals[0] == "0" and vals[1] == "10"
        assert float(vals[3]) == 0.0  # lon std

    def test_group_stats_match_brute_force(self, tmp_path):
        ctl = Control(ens_group_slot=5, nq=6)
        ens = make_ensemble(ctl, 300, seed=6)
        rs = np.random.default_rng(7)
        gids = rs.integers(0, 4, 300)
        ens.q[5, :] = gids
        path = tmp_path / "ens.csv"
        output.write_ens(ctl, ens, path)
        lines = path.read_text().splitlines()[1:]
        assert len(lines) == 4
        for line in lines:
            vals = line.split(",")
            g = int(vals[0])
            sel = gids == g
            assert int(vals[1]) == int(np.count_nonzero(sel))
            assert float(vals[2]) == pytest.approx(ens.lon[sel].mean())
            assert float(vals[3]) == pytest.approx(ens.lon[sel].std())
            assert float(vals[6]) == pytest.approx(ens.p[sel].mean())


class TestWriteOutput:
    def test_all_outputs_with_naming(self, tmp_path):
        ctl = Control(grid_nx=4, grid_ny=4, ens_group_slot=5, nq=6)
        ens = make_ensemble(ctl, 10, seed=1)
        output.write_output(ctl, ens, 3600.0, tmp_path)
        for name in ("atm_3600.csv", "grid_3600.csv", "ens_3600.csv"):
            assert (tmp_path / name).exists()

    def test_grid_disabled(self, tmp_path):
        ctl = Control(grid_nx=0)
        ens = make_ensemble(ctl, 5, seed=1)
        output.write_output(ctl, ens, 0.0, tmp_path)
        assert (tmp_path / "atm_0.csv").exists()
        assert not (tmp_path / "grid_0.csv").exists()

    def test_missing_outdir(self, tmp_path):
        ctl = Control()
        ens = make_ensemble(ctl, 1)
        with pytest.raises(FileNotFoundError, match="nosuchdir"):
            output.write_output(ctl, ens, 0.0, tmp_path / "nosuchdir")
