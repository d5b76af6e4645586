"""Command-line front end: reproducible train / verify / enumerate /
simulate / report runs driven by YAML config files.

Exit codes: 0 ok or valid, 1 falsified or non-converged, 2 usage or config
error, 3 verification unknown.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys as _sys
import time

import numpy as np
import yaml

from . import __version__, generator, nn, report, sim, train
from .enumeration import enumerate_activation_sets
from .system import (
    Benchmark,
    SystemError_,
    load_benchmark,
    regions_from_dict,
    system_from_dict,
)
from .verify import BnbConfig, InputSet, verify

ENV_PREFIX = "SNCBF_"

EXIT_OK = 0
EXIT_FALSIFIED = 1
EXIT_CONFIG = 2
EXIT_UNKNOWN = 3


class ConfigError(Exception):
    pass


_TOP_KEYS = {"benchmark", "system", "regions", "hyper", "mode", "seed", "out",
             "train", "verify", "sim", "input"}


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        loc = f" at line {mark.line + 1}" if mark else ""
        raise ConfigError(f"config parse error{loc}: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return raw


def build_benchmark(cfg: dict) -> Benchmark:
    if "benchmark" in cfg:
        try:
            bench = load_benchmark(cfg["benchmark"])
        except SystemError_ as e:
            raise ConfigError(str(e)) from None
        if "hyper" in cfg:
            bench.hyper.update(cfg["hyper"])
        return bench
    if "system" not in cfg or "regions" not in cfg:
        raise ConfigError("config needs either 'benchmark' or 'system'+'regions'")
    try:
        system = system_from_dict(cfg["system"])
        regions = regions_from_dict(cfg["regions"])
        regions.validate()
    except Exception as e:
        raise ConfigError(f"bad system/regions: {e}") from None
    return Benchmark("inline", system, regions, dict(cfg.get("hyper", {})))


def _bnb_config(cfg: dict) -> BnbConfig:
    section = dict(cfg.get("verify", {}))
    try:
        return BnbConfig(**section)
    except Exception as e:
        raise ConfigError(f"bad verify section: {e}") from None


def _input_set(cfg: dict):
    section = cfg.get("input")
    if not section:
        return None
    try:
        return InputSet.box(section["lo"], section["hi"])
    except Exception as e:
        raise ConfigError(f"bad input section: {e}") from None


def _sim_config(cfg: dict, seed: int) -> sim.SimConfig:
    section = dict(cfg.get("sim", {}))
    section.pop("grid_n", None)
    inp = cfg.get("input")
    try:
        return sim.SimConfig(
            seed=seed,
            input_lo=inp["lo"] if inp else None,
            input_hi=inp["hi"] if inp else None,
            **section,
        )
    except Exception as e:
        raise ConfigError(f"bad sim section: {e}") from None


def _round6(obj):
    if isinstance(obj, dict):
        return {k: _round6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round6(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.6g}")
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round6(obj.tolist())
    return obj


def write_json(path: str, data: dict):
    with open(path, "w") as fh:
        json.dump(_round6(data), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_manifest(out: str, config_path: str, seed: int, threads: int, command: str):
    with open(config_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    write_json(
        os.path.join(out, "manifest.json"),
        {
            "command": command,
            "config_sha256": digest,
            "seed": seed,
            "threads": threads,
            "versions": {
                "package": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
        },
    )


def _write_history_csv(path: str, history: list):
    if not history:
        with open(path, "w", newline="") as fh:
            fh.write("")
        return
    cols = list(history[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in history:
            w.writerow([report.fmt(row[c]) for c in cols])


def cmd_train_smooth(config_path: str, out: str, seed, threads: int) -> int:
    cfg = load_config(config_path)
    bench = build_benchmark(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    try:
        tc = train.SmoothTrainConfig.from_benchmark(
            bench, seed=seed, **dict(cfg.get("train", {}))
        )
    except (KeyError, TypeError) as e:
        raise ConfigError(f"bad train section: {e}") from None
    report.ensure_dir(out)
    write_manifest(out, config_path, seed, threads, "train-smooth")
    t0 = time.monotonic()
    result = train.train_verifiable_smooth(tc, bench)
    elapsed = time.monotonic() - t0
    nn.save(result.net, os.path.join(out, "model.json"))
    _write_history_csv(os.path.join(out, "history.csv"), result.history)
    write_json(
        os.path.join(out, "result.json"),
        {
            "psi_star": result.psi_star,
            "psi": result.psi,
            "L_max": tc.L_max,
            "margin": tc.L_max * tc.eps_bar + result.psi_star,
            "valid": result.valid,
            "certified": result.certified,
            "epochs": len(result.history),
        },
    )
    write_json(os.path.join(out, "timings.json"), {"synthesis_seconds": elapsed})
    return EXIT_OK if result.valid else EXIT_FALSIFIED


def cmd_train_vitl(config_path: str, out: str, seed, threads: int) -> int:
    cfg = load_config(config_path)
    bench = build_benchmark(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    mode = cfg.get("mode") or (
        "relu" if bench.hyper.get("activation") == "relu" else "smooth"
    )
    try:
        vc = train.VitlConfig.from_benchmark(
            bench, seed=seed, **dict(cfg.get("train", {}))
        )
    except (KeyError, TypeError, train.TrainError) as e:
        raise ConfigError(f"bad train section: {e}") from None
    report.ensure_dir(out)
    write_manifest(out, config_path, seed, threads, "train-vitl")
    t0 = time.monotonic()
    result = train.train_vitl(vc, bench, mode, _bnb_config(cfg), _input_set(cfg))
    elapsed = time.monotonic() - t0
    nn.save(result.net, os.path.join(out, "model.json"))
    _write_history_csv(os.path.join(out, "history.csv"), result.history)
    outcome = result.outcome
    write_json(
        os.path.join(out, "result.json"),
        {
            "status": outcome.status,
            "rounds": len(result.history),
            "epochs": result.epochs,
            "counterexamples": len(result.ce_log),
            "counterexample": outcome.counterexample,
        },
    )
    write_json(os.path.join(out, "timings.json"), {"synthesis_seconds": elapsed})
    return EXIT_OK if outcome.status == "valid" else EXIT_FALSIFIED


def cmd_verify(config_path: str, model_path: str, out: str, seed, threads: int) -> int:
    cfg = load_config(config_path)
    bench = build_benchmark(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    net = nn.load(model_path)
    mode = cfg.get("mode") or ("relu" if net.activation == "relu" else "smooth")
    if (mode == "relu") != (net.activation == "relu"):
        raise ConfigError(f"mode {mode!r} does not match activation {net.activation!r}")
    report.ensure_dir(out)
    write_manifest(out, config_path, seed, threads, "verify")
    t0 = time.monotonic()
    outcome = verify(
        net, bench.system, bench.regions, bench.hyper.get("k_alpha", 1.0), mode,
        _bnb_config(cfg), _input_set(cfg), seed,
    )
    elapsed = time.monotonic() - t0
    write_json(
        os.path.join(out, "verification.json"),
        {
            "status": outcome.status,
            "kind": outcome.kind,
            "certified_bound": outcome.certified_bound
            if np.isfinite(outcome.certified_bound)
            else None,
            "gap": outcome.gap,
            "counterexample": outcome.counterexample,
            "regions": outcome.regions,
        },
    )
    write_json(os.path.join(out, "timings.json"), {"verification_seconds": elapsed})
    if outcome.status == "valid":
        return EXIT_OK
    if outcome.status == "counterexample":
        print(f"counterexample: {outcome.counterexample}")
        return EXIT_FALSIFIED
    return EXIT_UNKNOWN


def cmd_enumerate(config_path: str, model_path: str, out: str, seed, threads: int) -> int:
    cfg = load_config(config_path)
    bench = build_benchmark(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    net = nn.load(model_path)
    report.ensure_dir(out)
    write_manifest(out, config_path, seed, threads, "enumerate")
    Q = enumerate_activation_sets(
        net, None, bench.regions.X, bench.regions.X_I, seed=seed
    )
    with open(os.path.join(out, "regions.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["activation_mask"])
        for S in Q:
            w.writerow([S[0]])
    print(f"{len(Q)} activation regions")
    return EXIT_OK


def cmd_simulate(config_path: str, model_path: str, out: str, seed, threads: int) -> int:
    cfg = load_config(config_path)
    bench = build_benchmark(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    net = nn.load(model_path)
    mode = cfg.get("mode") or ("relu" if net.activation == "relu" else "smooth")
    sc = _sim_config(cfg, seed)
    if sc.trials < 100:
        raise ConfigError("sim.trials must be at least 100")
    k = bench.hyper.get("k_alpha", 1.0)
    R = None
    Q = None
    x0 = 0.5 * (bench.regions.X_I.lo + bench.regions.X_I.hi)
    if mode == "relu":
        from .enumeration import enumerate_feasible_regions, super_lp

        Q = [
            S
            for S in enumerate_feasible_regions(net, bench.regions.X)
            if super_lp(net, S, bench.regions.X).feasible
        ]
        R = generator.compute_neuron_bounds(net, bench.regions.X, Q)
    report.ensure_dir(out)
    write_manifest(out, config_path, seed, threads, "simulate")
    trace = sim.simulate(
        mode, net, R, bench.system, bench.regions, k, sc, x0,
        np.random.default_rng(np.random.SeedSequence(sc.seed).spawn(1)[0]),
    )
    sim.write_trace_csv(trace, bench.system, os.path.join(out, "trace.csv"))
    p_hat, wilson = sim.estimate_safety_probability(
        mode, net, R, bench.system, bench.regions, k, sc, x0
    )
    bound = sim.worst_case_bound(
        mode, net, R, x0, sc.horizon, bench.regions, Q, seed=sc.seed
    )
    write_json(
        os.path.join(out, "summary.json"),
        {
            "p_hat": p_hat,
            "wilson_low": wilson[0],
            "wilson_high": wilson[1],
            "bound": bound.bound,
            "c": bound.c,
            "b0": bound.b0,
            "certified_c": bound.certified_c,
            "trials": sc.trials,
            "horizon": sc.horizon,
            "dt": sc.dt,
        },
    )
    return EXIT_OK


def cmd_report(config_path: str, model_path: str, out: str, seed, threads: int) -> int:
    cfg = load_config(config_path)
    bench = build_benchmark(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    net = nn.load(model_path)
    mode = cfg.get("mode") or ("relu" if net.activation == "relu" else "smooth")
    grid_n = int(cfg.get("sim", {}).get("grid_n", 100))
    report.ensure_dir(out)
    write_manifest(out, config_path, seed, threads, "report")
    coverage = sim.coverage_metric(mode, net, bench.regions, grid_n)
    run_dir = os.path.dirname(os.path.abspath(model_path))
    epochs = ""
    synth_s = verif_s = ""
    result_path = os.path.join(run_dir, "result.json")
    if os.path.exists(result_path):
        with open(result_path) as fh:
            epochs = json.load(fh).get("epochs", "")
    timings_path = os.path.join(run_dir, "timings.json")
    if os.path.exists(timings_path):
        with open(timings_path) as fh:
            t = json.load(fh)
        synth_s = t.get("synthesis_seconds", "")
        verif_s = t.get("verification_seconds", "")
    arch = "-".join(str(s) for s in net.layer_sizes) + f" {net.activation}"
    report.write_summary_csv(
        os.path.join(out, "summary.csv"),
        [
            {
                "architecture": arch,
                "epochs": epochs,
                "coverage": coverage,
                "verification_seconds": verif_s,
                "synthesis_seconds": synth_s,
            }
        ],
        ["architecture", "epochs", "coverage", "verification_seconds", "synthesis_seconds"],
    )
    report.render_barrier_figure(net, bench.regions, os.path.join(out, "barrier.png"))
    history = _read_history(os.path.join(run_dir, "history.csv"))
    if history:
        report.render_history_figure(history, os.path.join(out, "history.png"))
    sc = _sim_config(cfg, seed)
    trace = sim.simulate(
        mode,
        net,
        _relu_bounds(net, bench, seed) if mode == "relu" else None,
        bench.system,
        bench.regions,
        bench.hyper.get("k_alpha", 1.0),
        sc,
    )
    report.render_trace_figure(trace, os.path.join(out, "trace.png"))
    print(f"coverage: {report.fmt(coverage)}")
    return EXIT_OK


def _relu_bounds(net, bench, seed):
    Q = enumerate_activation_sets(net, None, bench.regions.X, bench.regions.X_I, seed=seed)
    return generator.compute_neuron_bounds(net, bench.regions.X, Q)


def _read_history(path: str) -> list:
    if not os.path.exists(path):
        return []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {}
        for k, v in row.items():
            try:
                parsed[k] = float(v)
            except (TypeError, ValueError):
                parsed[k] = v
        out.append(parsed)
    return out


def _env_default(name: str, fallback=None):
    return os.environ.get(ENV_PREFIX + name, fallback)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sncbf",
        description="Train, verify, and simulate stochastic neural control barrier functions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_model in (
        ("train-smooth", False),
        ("train-vitl", False),
        ("verify", True),
        ("enumerate", True),
        ("simulate", True),
        ("report", True),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", default=_env_default("CONFIG"), required=_env_default("CONFIG") is None)
        p.add_argument("--out", default=_env_default("OUT", "out"))
        p.add_argument("--seed", type=int, default=_env_default("SEED"))
        p.add_argument("--threads", type=int, default=int(_env_default("THREADS", "1")))
        if needs_model:
            p.add_argument("--model", default=_env_default("MODEL"), required=_env_default("MODEL") is None)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else 0
    handlers = {
        "train-smooth": lambda: cmd_train_smooth(args.config, args.out, args.seed, args.threads),
        "train-vitl": lambda: cmd_train_vitl(args.config, args.out, args.seed, args.threads),
        "verify": lambda: cmd_verify(args.config, args.model, args.out, args.seed, args.threads),
        "enumerate": lambda: cmd_enumerate(args.config, args.model, args.out, args.seed, args.threads),
        "simulate": lambda: cmd_simulate(args.config, args.model, args.out, args.seed, args.threads),
        "report": lambda: cmd_report(args.config, args.model, args.out, args.seed, args.threads),
    }
    try:
        return handlers[args.command]()
    except ConfigError as e:
        print(f"config error: {e}", file=_sys.stderr)
        return EXIT_CONFIG
    except (OSError, nn.NnError, sim.SimError) as e:
        print(f"error: {e}", file=_sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
