"""Command-line entry point: run, ground, ed, analyze, validate."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import time
import traceback
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, ed, kz
from .hamiltonian import build_tfim
from .io import (ConfigError, JsonlWriter, RunConfig, SchemaError, load_config, load_json, load_trajectory_sets,
                 read_jsonl, save_json, write_csv)
from .network import NetworkState, fit_uniform, init_parameters
from .observables import ObservableRecord, measure
from .protocols import QuenchSpec, RampSpec
from .sampler import exact_enumeration, sample
from .tdvp import evolve, ground_state_search

log = logging.getLogger("nqs3d")


# ---------------------------------------------------------------------------
# shared pieces


def _lab_hamiltonian(cfg: RunConfig):
    spec = cfg.protocol_spec()
    if isinstance(spec, RampSpec):
        return spec.hamiltonian(cfg.lattice)
    return build_tfim(cfg.lattice, spec.J, spec.h_final)


def _ground_energy_density(cfg: RunConfig, cache: dict):
    """Instantaneous ground-state energy density by ED, or None."""
    if cfg.ground_energy != "ed":
        return lambda t: None
    H = _lab_hamiltonian(cfg)
    op = ed.DenseOperator(H)
    N = cfg.lattice.n_sites

    def at(t):
        key = round(t, 12)
        if key not in cache:
            cache[key] = ed.ground_state(op, cfg.lattice, t).energy / N
        return cache[key]

    return at


def _initial_state(cfg: RunConfig) -> NetworkState:
    spec = cfg.protocol_spec()
    if isinstance(spec, QuenchSpec) and not spec.initial_is_uniform():
        raise ConfigError("protocol: the initial product state is a single basis configuration in this frame; "
                          "select the rotated frame (or a field-polarised start) for NQS runs")
    arch = cfg.architecture
    psi = init_parameters(arch.spec(), cfg.seed, arch.init_scale, cfg.lattice.dims)
    if arch.init == "uniform":
        psi, _ = fit_uniform(psi, seed=cfg.seed)
    return psi


def _frame(cfg: RunConfig) -> tuple[str, float]:
    spec = cfg.protocol_spec()
    if isinstance(spec, QuenchSpec):
        return spec.frame, spec.h_final
    return "lab", 0.0


def _manifest(cfg: RunConfig, verb: str, timings: dict, extra: dict | None = None) -> dict:
    return {"verb": verb, "config": cfg.to_dict(), "code_version": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "timings": timings, **(extra or {})}


class _Failure:
    """Writes a FAILED marker if the wrapped block raises; outputs written so far are kept."""

    def __init__(self, out: Path):
        self.out = out

    def __enter__(self):
        (self.out / "FAILED").unlink(missing_ok=True)
        return self

    def __exit__(self, kind, exc, tb):
        if exc is not None:
            (self.out / "FAILED").write_text("".join(traceback.format_exception(kind, exc, tb)))
        return False


# ---------------------------------------------------------------------------
# verbs


def run_dynamics(cfg: RunConfig, resume: bool = False) -> Path:
    """NQS-TDVP run; writes manifest.json, trajectory.jsonl, observables.csv.

    With ``resume`` the run continues from ``checkpoint.npz`` in the output
    directory; observables recorded up to the checkpoint time are kept.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    with _Failure(out):
        lattice = cfg.lattice
        spec = cfg.protocol_spec()
        H = spec.hamiltonian(lattice)
        H_lab = _lab_hamiltonian(cfg)
        frame, h = _frame(cfg)
        e_gs = _ground_energy_density(cfg, {})
        t0, t1 = cfg.window()
        integrator = cfg.integrator_config()
        rows: list[ObservableRecord] = []
        steps = [0]
        marks = [t0] + list(cfg.measure_times)
        mode = "w"
        if resume and (out / "checkpoint.npz").exists():
            psi = NetworkState.load(out / "checkpoint.npz")
            ck = load_json(out / "checkpoint.json")
            t0, steps[0] = float(ck["t"]), int(ck["steps"])
            integrator.dt = min(max(float(ck["dt"]), integrator.dt_min), integrator.dt_max)
            # drop records written after the checkpoint, then append from there
            kept = [d for d in read_jsonl(out / "trajectory.jsonl") if d.get("time", d.get("t", 0.0)) <= t0 + 1e-12]
            with JsonlWriter(out / "trajectory.jsonl") as traj:
                for d in kept:
                    traj.write(d["record"], {k: v for k, v in d.items() if k not in ("schema_version", "record")})
            rows = [ObservableRecord(**{k: v for k, v in d.items() if k not in ("schema_version", "record")})
                    for d in kept if d["record"] == "observables"]
            marks = [m for m in marks if m > t0 + 1e-12]
            mode = "a"
            log.info("resuming at t=%.6g after %d steps", t0, steps[0])
        else:
            psi = _initial_state(cfg)
        with JsonlWriter(out / "trajectory.jsonl", mode) as traj:

            def observer(t, p, ens):
                ref = e_gs(t) if frame == "lab" else None
                rec = measure(t, ens, p, lattice, cfg.max_R, frame=frame, h=h, H=H_lab if ref is not None else None,
                              ground_energy_density=ref)
                rows.append(rec)
                traj.write("observables", rec.to_dict())

            def step_log(record):
                steps[0] += 1
                traj.write("step", record)

            def checkpoint(t, theta, dt):
                psi.with_theta(theta).save(out / "checkpoint.npz")
                save_json(out / "checkpoint.json", {"t": t, "steps": steps[0], "dt": dt})
                log.info("checkpoint t=%.5f dt=%.2e", t, dt)

            final = evolve(psi, H, t0, t1, integrator, cfg.sampler_config(), measure_times=marks,
                           observer=observer, step_log=step_log,
                           checkpoint=checkpoint if cfg.checkpoint_every else None,
                           checkpoint_every=cfg.checkpoint_every)
        final.save(out / "final_state.npz")
        write_csv(out / "observables.csv", [r.csv_row() for r in rows])
        save_json(out / "manifest.json", _manifest(cfg, "run", {"wall_seconds": time.time() - started},
                                                   {"steps": steps[0], "resumed": bool(mode == "a")}))
    return out


def run_ground(cfg: RunConfig, max_iters: int = 2000, variance: float = 1e-8, step: float = 0.02) -> Path:
    """Imaginary-time ground-state search for H at the end of the configured window."""
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    with _Failure(out):
        t = cfg.window()[1]
        H = _lab_hamiltonian(cfg).at(t)
        psi = init_parameters(cfg.architecture.spec(), cfg.seed, cfg.architecture.init_scale, cfg.lattice.dims)
        res = ground_state_search(psi, H, cfg.sampler_config(), step=step, max_iters=max_iters,
                                  variance_threshold=variance)
        res.psi.save(out / "ground_state.npz")
        save_json(out / "manifest.json", _manifest(cfg, "ground", {"wall_seconds": time.time() - started}, {
            "energy": res.energy, "energy_error": res.energy_error, "variance_per_site": res.variance_per_site,
            "iterations": res.iterations}))
    return out


def ed_record(t: float, state: ed.DenseState, lattice, max_R: int | None, H=None, e_gs=None) -> ObservableRecord:
    if max_R is None:
        max_R = min(lattice.dims) // 2
    C = ed.correlation_profile(state, lattice, max_R)
    rec = ObservableRecord(t, ed.magnetization(state, "x"), ed.magnetization(state, "z"), ed.qfi_density(state),
                           [float(c) for c in C], correlation_errs=[0.0] * len(C))
    if H is not None and e_gs is not None:
        rec.excess_energy = ed.energy(H, state, t) / lattice.n_sites - e_gs
        rec.excess_energy_err = 0.0
    return rec


def run_ed(cfg: RunConfig, dt: float | None = None) -> Path:
    """Exact propagation in the lab frame with the same output schema as ``run``."""
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    with _Failure(out):
        lattice = cfg.lattice
        spec = cfg.protocol_spec()
        H = _lab_hamiltonian(cfg)
        op = ed.DenseOperator(H)
        e_gs = _ground_energy_density(cfg, {})
        if isinstance(spec, QuenchSpec) and spec.initial == "up":
            state = ed.DenseState.all_up(lattice)
        else:
            state = ed.DenseState.x_product(lattice)
        t0, t1 = cfg.window()
        if dt is None:
            # largest scheduled coupling over the window sets the step
            weights = [abs(w) for t in np.linspace(t0, t1, 65) for w in op.weights(t).values()]
            dt = min(0.05, 0.09 / max(op.max_coupling * max(weights, default=1.0), 1e-12))
        times = []
        for m in sorted({t0, *cfg.measure_times}):
            if not times or m - times[-1] > 1e-9:  # merge times equal up to rounding
                times.append(m)
        rows = []
        with JsonlWriter(out / "trajectory.jsonl") as traj:
            t = t0
            for target in times:
                if target > t:
                    state = ed.propagate(state, op, t, target, dt)
                    t = target
                rec = ed_record(t, state, lattice, cfg.max_R, op, e_gs(t))
                rows.append(rec)
                traj.write("observables", rec.to_dict())
        write_csv(out / "observables.csv", [r.csv_row() for r in rows])
        save_json(out / "manifest.json", _manifest(cfg, "ed", {"wall_seconds": time.time() - started}, {"dt": dt}))
    return out


def run_analysis(data_dir, out_dir, constants=None, fit: bool = True, time_index: int = -1) -> dict:
    """Collapse analysis over every trajectory set under ``data_dir``.

    Writes fig2_correlation.csv, fig3_excess_energy.csv, fig4a_qfi_time.csv,
    fig4b_qfi_size.csv and collapse_report.json.
    """
    sets = load_trajectory_sets(data_dir)
    ramps = [s for s in sets if s.tau_q is not None]
    if not ramps:
        raise ValueError("no ramp trajectories (tau_q) found")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    A, C, mu, K = constants or (0.34673, 81.18926, 0.19376, 0.21475)
    report = {"grid": sorted({(s.L, s.tau_q) for s in ramps}), "input_constants": {"A": A, "C": C, "mu": mu, "K": K}}
    if fit:
        profiles = []
        for s in ramps:
            R, Cr = s.correlation_at(time_index)
            profiles.append((s.L, s.tau_q, np.array(R), np.array(Cr)))
        data = kz.CollapseData.from_profiles(profiles)
        res = kz.fit_collapse(data, init=(A, C, mu, K))
        A, C, mu, K = res.A, res.C, res.mu, res.K
        report["fit"] = res.to_dict()
    fig2, fig3, fig4a, fig4b = [], [], [], []
    for s in ramps:
        scales = kz.freeze_out(s.tau_q, A, C, mu)
        L_eff = kz.effective_size(s.L)
        R, Cr = s.correlation_at(time_index)
        x, y = kz.rescale_observable(np.array(Cr[1:]), scales, kind="correlation", R=np.array(R[1:]))
        fig2 += [{"L": s.L, "tau_q": s.tau_q, "R": r, "x": a, "y": b} for r, a, b in zip(R[1:], x, y)]
        Q = s.column("Q")[time_index]
        if not math.isnan(Q):
            x, y = kz.rescale_observable([Q], scales, L_eff, "excess_energy")
            fig3.append({"L": s.L, "tau_q": s.tau_q, "x": float(x[0]), "y": float(y[0])})
        fq = np.array(s.column("f_Q"))
        x, y = kz.rescale_observable(fq, scales, L_eff, "qfi", t=np.array(s.times))
        fig4a += [{"L": s.L, "tau_q": s.tau_q, "x": a, "y": b} for a, b in zip(x, y)]
        x, y = kz.rescale_observable([fq[time_index]], scales, L_eff, "qfi")
        fig4b.append({"L": s.L, "tau_q": s.tau_q, "x": float(x[0]), "y": float(y[0])})
    for name, rows in (("fig2_correlation", fig2), ("fig3_excess_energy", fig3), ("fig4a_qfi_time", fig4a),
                       ("fig4b_qfi_size", fig4b)):
        if rows:
            write_csv(out / f"{name}.csv", rows)
    report["constants"] = {"A": A, "C": C, "mu": mu, "K": K}
    save_json(out / "collapse_report.json", report)
    return report


# ---------------------------------------------------------------------------
# argument parsing


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "dims", None):
        cfg.dims = tuple(args.dims)
    if getattr(args, "depth", None):
        cfg.architecture.depth = args.depth
    if getattr(args, "channels", None):
        cfg.architecture.channels = args.channels
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    elif os.environ.get("NQS3D_OUTPUT_ROOT") and not Path(cfg.output_dir).is_absolute():
        cfg.output_dir = str(Path(os.environ["NQS3D_OUTPUT_ROOT"]) / cfg.output_dir)
    if getattr(args, "samples", None):
        cfg.sampler = {**(cfg.sampler or {}), "n_samples": args.samples}
    if getattr(args, "exact", False):
        cfg.sampler = None
    return cfg


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return _apply_overrides(cfg, args)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nqs3d", description="Neural-quantum-state dynamics of the 3D transverse-field "
                                                          "Ising model and Kibble-Zurek scaling analysis.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def run_flags(q):
        q.add_argument("config", nargs="?", help="run configuration JSON")
        q.add_argument("--dims", type=int, nargs=3, metavar=("LX", "LY", "LZ"))
        q.add_argument("--depth", type=int)
        q.add_argument("--channels", type=int)
        q.add_argument("--seed", type=int)
        q.add_argument("--samples", type=int, help="Monte Carlo samples per step")
        q.add_argument("--exact", action="store_true", help="exact enumeration instead of sampling")
        q.add_argument("--out", help="output directory")

    r = sub.add_parser("run", help="NQS-TDVP dynamics")
    run_flags(r)
    r.add_argument("--resume", action="store_true", help="continue from checkpoint.npz in the output directory")
    g = sub.add_parser("ground", help="imaginary-time ground-state search")
    run_flags(g)
    g.add_argument("--max-iters", type=int, default=2000)
    g.add_argument("--variance", type=float, default=1e-8)
    e = sub.add_parser("ed", help="exact state-vector reference run")
    run_flags(e)
    e.add_argument("--dt", type=float)
    a = sub.add_parser("analyze", help="Kibble-Zurek collapse over stored trajectories")
    a.add_argument("data_dir")
    a.add_argument("--out", default="analysis")
    a.add_argument("--no-fit", action="store_true", help="rescale with the given constants only")
    a.add_argument("--constants", type=float, nargs=4, metavar=("A", "C", "MU", "K"))
    v = sub.add_parser("validate", help="check a run configuration")
    run_flags(v)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.verb == "analyze":
            report = run_analysis(args.data_dir, args.out, args.constants, fit=not args.no_fit)
            print(json.dumps(report["constants"]))
            return 0
        cfg = _config_from_args(args)
        if args.verb == "validate":
            cfg.validate()
            print("ok")
            return 0
        if args.verb == "run":
            out = run_dynamics(cfg, resume=args.resume)
        elif args.verb == "ground":
            out = run_ground(cfg, args.max_iters, args.variance)
        else:
            out = run_ed(cfg, args.dt)
        print(out)
        return 0
    except (ConfigError, SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported and mapped to a nonzero exit
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
