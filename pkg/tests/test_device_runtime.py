import threading
import time

import numpy as np
import pytest

from lagtrans.device_runtime import (
    REGION_FIELDS,
    DevicePool,
    DeviceTaskError,
    LifecycleError,
    ModelImage,
    enumerate_devices,
)
from lagtrans.ingest import read_clim
from lagtrans.model_state import Control, cache_allocate
from lagtrans.partition import calc_device_workload_range, partition_all
from lagtrans.rng import batch_allocate

from conftest import make_ensemble, make_met


def make_host(n=100, ctl=None):
    ctl = ctl or Control()
    ens = make_ensemble(ctl, n, seed=1)
    return ModelImage(ctl=ctl, ens=ens, cache=cache_allocate(n),
                      clim=read_clim(ctl), met0=make_met(t_met=0.0),
                      met1=make_met(t_met=3600.0), dt=np.zeros(n),
                      batch=batch_allocate(n))


class TestEnumerateDevices:
    def test_negative_means_all_available(self):
        assert enumerate_devices(-1, available=4) == 4

    def test_explicit_request(self):
        assert enumerate_devices(2, available=4) == 2

    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            enumerate_devices(0)

    def test_hard_cap(self):
        assert enumerate_devices(1000, available=4) == 64
        assert enumerate_devices(-1, available=1000) == 64


class TestRegionLifecycle:
    def test_create(self):
        with DevicePool(2) as pool:
            region = pool.region_create(0, make_host())
            assert region.state == "created"

    def test_double_create(self):
        with DevicePool(2) as pool:
            host = make_host()
            pool.region_create(0, host)
            with pytest.raises(LifecycleError):
                pool.region_create(0, host)

    def test_create_bad_device(self):
        with DevicePool(2) as pool:
            with pytest.raises(ValueError):
                pool.region_create(2, make_host())

    def test_full_lifecycle(self):
        with DevicePool(1) as pool:
            host = make_host()
            region = pool.region_create(0, host)
            pool.region_update_device(region, host, REGION_FIELDS)
            assert region.state == "populated"
            pool.device_wait(0)
            pool.region_delete(region)
            assert region.state == "deleted"
            assert region.image is None

    def test_double_delete(self):
        with DevicePool(1) as pool:
            region = pool.region_create(0, make_host())
            region.state = "populated"
            pool.region_delete(region)
            with pytest.raises(LifecycleError):
                pool.region_delete(region)

    def test_update_after_delete(self):
        with DevicePool(1) as pool:
            host = make_host()
            region = pool.region_create(0, host)
            pool.region_update_device(region, host, ("ens",))
            pool.region_delete(region)
            with pytest.raises(LifecycleError):
                pool.region_update_device(region, host, ("ens",))
            with pytest.raises(LifecycleError):
                pool.region_update_host(region, host,
                                        calc_device_workload_range(100, 1, 0))

    def test_delete_with_in_flight_task(self):
        with DevicePool(1) as pool:
            host = make_host()
            region = pool.region_create(0, host)
            pool.region_update_device(region, host, ("ens",))
            release = threading.Event()
            pool.dispatch(0, release.wait)
            try:
                with pytest.raises(LifecycleError):
                    pool.region_delete(region)
                assert region.state == "populated"  # not corrupted
            finally:
                release.set()
            pool.device_wait(0)
            pool.region_delete(region)

    def test_recreate_after_delete(self):
        with DevicePool(1) as pool:
            host = make_host()
            region = pool.region_create(0, host)
            region.state = "populated"
            pool.region_delete(region)
            assert pool.region_create(0, host).state == "created"


class TestUpdateDevice:
    def test_isolation_from_host(self):
        with DevicePool(1) as pool:
            host = make_host()
            region = pool.region_create(0, host)
            pool.region_update_device(region, host, ("ens",))
            host.ens.lon[0] += 100.0
            assert region.image.ens.lon[0] == host.ens.lon[0] - 100.0

    def test_met_rotation_reaches_image(self):
        with DevicePool(1) as pool:
            host = make_host()
            region = pool.region_create(0, host)
            pool.region_update_device(region, host, REGION_FIELDS)
            host.met0, host.met1 = host.met1, make_met(t_met=7200.0, u=5.0)
            pool.region_update_device(region, host, ("met0", "met1"))
            assert region.image.met0.t_met == 3600.0
            assert np.array_equal(region.image.met1.u, host.met1.u)

    def test_unknown_field(self):
        with DevicePool(1) as pool:
            host = make_host()
            region = pool.region_create(0, host)
            with pytest.raises(ValueError):
                pool.region_update_device(region, host, ("nope",))


class TestUpdateHost:
    def test_range_restricted_copy_back(self):
        # device 1 of 4 owns [25, 50); all other host bytes stay untouched
        with DevicePool(4, debug=True) as pool:
            host = make_host(100)
            ranges = partition_all(100, 4)
            region = pool.region_create(1, host, work_range=ranges[1])
            pool.region_update_device(region, host, REGION_FIELDS)
            region.image.ens.lon[:] = -77.0
            region.image.ens.q[:, :] = 5.0
            region.image.cache.iso_var[:] = 3.0
            before_lon = host.ens.lon.copy()
            before_q = host.ens.q.copy()
            pool.region_update_host(region, host, ranges[1])
            assert np.all(host.ens.lon[25:50] == -77.0)
            assert np.all(host.ens.q[:, 25:50] == 5.0)
            assert np.all(host.cache.iso_var[25:50] == 3.0)
            outside = np.r_[0:25, 50:100]
            assert np.array_equal(host.ens.lon[outside], before_lon[outside])
            assert np.array_equal(host.ens.q[:, outside], before_q[:, outside])

    def test_empty_range_copies_nothing(self):
        with DevicePool(4) as pool:
            host = make_host(3)
            ranges = partition_all(3, 4)
            region = pool.region_create(3, host, work_range=ranges[3])
            pool.region_update_device(region, host, REGION_FIELDS)
            region.image.ens.lon[:] = 99.0
            before = host.ens.lon.copy()
            pool.region_update_host(region, host, ranges[3])
            assert np.array_equal(host.ens.lon, before)

    def test_debug_foreign_range_rejected(self):
        with DevicePool(4, debug=True) as pool:
            host = make_host(100)
            ranges = partition_all(100, 4)
            region = pool.region_create(1, host, work_range=ranges[1])
            pool.region_update_device(region, host, REGION_FIELDS)
            with pytest.raises(LifecycleError):
                pool.region_update_host(region, host, ranges[2])

    def test_multi_device_merge_equals_single_device(self):
        # all devices copying back their own slices reassembles the image
        with DevicePool(4) as pool:
            host = make_host(100)
            ranges = partition_all(100, 4)
            for d in range(4):
                region = pool.region_create(d, host, work_range=ranges[d])
                pool.region_update_device(region, host, REGION_FIELDS)
                region.image.ens.lat[:] = float(d)
            for d in range(4):
                pool.region_update_host(pool.region(d), host, ranges[d])
            for d, work in enumerate(ranges):
                assert np.all(host.ens.lat[work.slice] == float(d))


class TestParallelDispatch:
    def test_all_devices_invoked(self):
        seen = set()
        lock = threading.Lock()
        with DevicePool(4) as pool:
            def task(d):
                with lock:
                    seen.add(d)
            pool.for_each_device_parallel(task)
        assert seen == {0, 1, 2, 3}

    def test_sequential_fallback_equivalent(self):
        results_par = np.zeros(4)
        results_seq = np.zeros(4)
        with DevicePool(4) as pool:
            pool.for_each_device_parallel(lambda d: results_par.__setitem__(d, d * d))
            pool.for_each_device_parallel(lambda d: results_seq.__setitem__(d, d * d),
                                          parallel=False)
        assert np.array_equal(results_par, results_seq)

    def test_single_failure_reported_others_complete(self):
        done = set()
        lock = threading.Lock()
        with DevicePool(3) as pool:
            def task(d):
                if d == 1:
                    raise RuntimeError("boom")
                with lock:
                    done.add(d)
            with pytest.raises(DeviceTaskError) as excinfo:
                pool.for_each_device_parallel(task)
        assert set(excinfo.value.failures) == {1}
        assert done == {0, 2}

    def test_device_wait_happens_before(self):
        flag = []
        with DevicePool(2) as pool:
            pool.dispatch(0, lambda: (time.sleep(0.05), flag.append(True)))
            pool.device_wait(0)
            assert flag == [True]

    def test_wait_is_per_device(self):
        release = threading.Event()
        with DevicePool(2) as pool:
            pool.dispatch(1, release.wait)
            t0 = time.perf_counter()
            pool.device_wait(0)  # must not wait for device 1
            assert time.perf_counter() - t0 < 0.5
            release.set()
            pool.device_wait(1)

    def test_tasks_on_one_device_run_in_order(self):
        order = []
        with DevicePool(1) as pool:
            for k in range(5):
                pool.dispatch(0, lambda k=k: order.append(k))
            pool.device_wait(0)
        assert order == [0, 1, 2, 3, 4]
