"""End-to-end orchestration: CLI parsing, device pool setup, data-region
lifecycle, the timestep loop with per-device parallel dispatch, met
rotation, output cadence, and the timer report."""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import ingest, output, physics
from .device_runtime import (
    REGION_FIELDS,
    DevicePool,
    DeviceTaskError,
    ModelImage,
    enumerate_devices,
)
from .model_state import Control, cache_allocate, validate_control
from .partition import partition_all
from .rng import batch_allocate, generate_random_nums, module_rng_init
from .timers import HOST_SCOPE, TimerRegistry, device_scope, report_timers

ENV_NUM_DEVICES = "SIM_NUM_DEVICES"

# fixed pipeline order; position before meteo so sampling sees in-domain
# coordinates
PIPELINE = ("module_advection", "module_diffusion_turb", "module_diffusion_meso",
            "module_convection", "module_sedi", "module_isosurf",
            "module_position", "module_meteo")

_OUT_EPS = 1e-9  # cadence comparison slack, s


def parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="sim",
        description="Lagrangian particle transport on simulated offload devices")
    parser.add_argument("ctl", help="control file (KEY = value lines)")
    parser.add_argument("atm", help="initial particle CSV")
    parser.add_argument("met_prefix",
                        help="met snapshot prefix; files <prefix><k>.txt")
    parser.add_argument("outdir", help="output directory")
    parser.add_argument("--devices", type=int, default=None,
                        help="device count; negative means all available")
    parser.add_argument("--rng-mode", choices=("faithful", "counter"),
                        default=None)
    parser.add_argument("--seed", type=int, default=None,
                        help="global seed for counter mode")
    return parser.parse_args(argv)


def resolve_num_devices(ctl: Control, cli_value: int | None = None) -> int:
    """Device-count request priority: CLI > SIM_NUM_DEVICES env > ctl file."""
    if cli_value is not None:
        requested = cli_value
    elif os.environ.get(ENV_NUM_DEVICES):
        requested = int(os.environ[ENV_NUM_DEVICES])
    else:
        requested = ctl.num_devices_requested
    return enumerate_devices(requested)


def _load_bracketing_mets(met_prefix, t_start):
    """Load the snapshot pair bracketing t_start; returns (met0, met1,
    remaining paths iterator as a list)."""
    paths = ingest.discover_met_files(met_prefix)
    met0 = ingest.met_periodic(ingest.read_met(paths[0]))
    rest = paths[1:]
    met1 = ingest.met_periodic(ingest.read_met(rest[0])) if rest else met0
    rest = rest[1:]
    while met1.t_met < t_start and rest:
        met0, met1 = met1, ingest.met_periodic(ingest.read_met(rest[0]))
        rest = rest[1:]
    if met0.t_met > t_start:
        raise ValueError(f"first met snapshot ({met0.t_met} s) is after "
                         f"t_start ({t_start} s)")
    return met0, met1, rest


def run_simulation(ctl: Control, atm_path, met_prefix, outdir,
                   num_devices: int | None = None,
                   registry: TimerRegistry | None = None,
                   parallel: bool = True) -> int:
    """Run the full model; returns process exit status (0 = success)."""
    violations = validate_control(ctl)
    if violations:
        print("invalid control: " + "; ".join(violations), file=sys.stderr)
        return 2
    if registry is None:
        registry = TimerRegistry()
    if num_devices is None:
        num_devices = resolve_num_devices(ctl)

    ens = ingest.read_atm(atm_path, ctl)
    clim = ingest.read_clim(ctl)
    met0, met1, met_rest = _load_bracketing_mets(met_prefix, ctl.t_start)

    cache = cache_allocate(ens.np)
    dt = np.zeros(ens.np)
    batch = batch_allocate(ens.np)
    host = ModelImage(ctl=ctl, ens=ens, cache=cache, clim=clim,
                      met0=met0, met1=met1, dt=dt, batch=batch)

    rng = module_rng_init(ctl, num_devices)
    ranges = partition_all(ens.np, num_devices)

    pool = DevicePool(num_devices, debug=True)
    regions = []
    status = 0
    try:
        for d in range(num_devices):
            with registry.timed("ACC_INIT", "INIT", device_scope(d)):
                pool.dispatch(d, lambda: None)
                pool.device_wait(d)
        for d in range(num_devices):
            with registry.timed("CREATE_DATA_REGION", "MEMORY", device_scope(d)):
                regions.append(pool.region_create(d, host, work_range=ranges[d]))
            with registry.timed("UPDATE_DEVICE", "MEMORY", device_scope(d)):
                pool.region_update_device(regions[d], host, REGION_FIELDS)
            img = regions[d].image
            physics.module_isosurf_init(img.ctl, img.ens, img.met0, img.met1,
                                        img.cache, ranges[d])

        with registry.timed("write_output", "IO", HOST_SCOPE):
            output.write_output(ctl, ens, ctl.t_start, outdir)

        n_steps = max(0, math.ceil((ctl.t_stop - ctl.t_start) / ctl.dt_model
                                   - _OUT_EPS))
        t = ctl.t_start
        next_out = ctl.t_start + ctl.output_dt

        for step in range(n_steps):
            t_next = min(t + ctl.dt_model, ctl.t_stop)

            while met1.t_met < t_next:
                if not met_rest:
                    raise ValueError(f"t_stop {ctl.t_stop} s exceeds the last "
                                     f"met snapshot time {met1.t_met} s")
                met0, met1 = met1, ingest.met_periodic(ingest.read_met(met_rest[0]))
                met_rest = met_rest[1:]
                host.met0, host.met1 = met0, met1
                for d in range(num_devices):
                    with registry.timed("UPDATE_DEVICE", "MEMORY", device_scope(d)):
                        pool.region_update_device(regions[d], host,
                                                  ("met0", "met1"))

            def device_step(d, step=step, t_next=t_next):
                img = regions[d].image
                work = ranges[d]
                scope = device_scope(d)
                with registry.timed("module_timesteps", "PHYSICS", scope):
                    physics.module_timesteps(img.ctl, img.ens, t_next, work, img.dt)
                with registry.timed("generate_random_nums", "PHYSICS", scope):
                    generate_random_nums(rng, step, work, d, img.batch)
                with registry.timed("module_advection", "PHYSICS", scope):
                    physics.module_advection(img.ctl, img.ens, img.met0,
                                             img.met1, img.dt, work)
                with registry.timed("module_diffusion_turb", "PHYSICS", scope):
                    physics.module_diffusion_turb(img.ctl, img.ens, img.met0,
                                                  img.met1, img.dt, img.batch,
                                                  work)
                with registry.timed("module_diffusion_meso", "PHYSICS", scope):
                    physics.module_diffusion_meso(img.ctl, img.ens, img.met0,
                                                  img.met1, img.dt, img.batch,
                                                  img.cache, work)
                with registry.timed("module_convection", "PHYSICS", scope):
                    physics.module_convection(img.ctl, img.ens, img.dt,
                                              img.batch, work)
                with registry.timed("module_sedi", "PHYSICS", scope):
                    physics.module_sedi(img.ctl, img.ens, img.met0, img.met1,
                                        img.dt, work)
                with registry.timed("module_isosurf", "PHYSICS", scope):
                    physics.module_isosurf(img.ctl, img.ens, img.met0,
                                           img.met1, img.cache, work)
                with registry.timed("module_position", "PHYSICS", scope):
                    physics.module_position(img.ctl, img.ens, work)
                with registry.timed("module_meteo", "PHYSICS", scope):
                    physics.module_meteo(img.ctl, img.ens, img.met0, img.met1,
                                         img.clim, work)

            pool.for_each_device_parallel(device_step, parallel=parallel)
            t = t_next

            if t >= next_out - _OUT_EPS or t >= ctl.t_stop:
                for d in range(num_devices):
                    with registry.timed("UPDATE_HOST", "MEMORY", device_scope(d)):
                        pool.region_update_host(regions[d], host, ranges[d])
                with registry.timed("write_output", "IO", HOST_SCOPE):
                    output.write_output(ctl, ens, t, outdir)
                while next_out <= t + _OUT_EPS:
                    next_out += ctl.output_dt
    except DeviceTaskError as exc:
        for d, err in sorted(exc.failures.items()):
            print(f"device {d} failed: {err!r}", file=sys.stderr)
        status = 1
    finally:
        for region in regions:
            pool.device_wait(region.device_id)
            if region.state != "deleted":
                with registry.timed("DELETE_DATA_REGION", "MEMORY",
                                    device_scope(region.device_id)):
                    pool.region_delete(region)
        print(report_timers(registry.records, outdir))
        pool.shutdown()
    return status


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        ctl = ingest.read_ctl(args.ctl)
        if args.rng_mode is not None:
            ctl.rng_mode = args.rng_mode
        if args.seed is not None:
            ctl.rng_seed_global = args.seed
        num_devices = resolve_num_devices(ctl, args.devices)
        return run_simulation(ctl, args.atm, args.met_prefix, args.outdir,
                              num_devices=num_devices)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
