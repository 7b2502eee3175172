"""Command-line experiment runner.

Each subcommand reads an INI file whose sections mirror the library modules,
rejects unknown sections and keys, writes the resolved configuration next to
its outputs, and produces CSV time series plus JSON summaries.  Outputs are a
pure function of (config, seed).

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 divergence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "MPGD_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


class InputDataError(OSError):
    """Readable file with unusable contents; reported like other I/O failures."""


class DivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------- value parsers


def _bool(s):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return [float(t) for t in s.replace(",", " ").split()]


def _ints(s):
    return [int(t) for t in s.replace(",", " ").split()]


def _words(s):
    return [t for t in s.replace(",", " ").split()]


def _opt_int(s):
    return None if s.strip().lower() in ("", "none") else int(s)


def _matrix(s):
    rows = [_floats(r) for r in s.split(";") if r.strip()]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ValueError("matrix rows must have equal length")
    return rows


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        if v and isinstance(v[0], list):
            return "; ".join(" ".join(_fmt(x) for x in r) for r in v)
        return ", ".join(_fmt(x) for x in v)
    return str(v)


OPTIMIZER = {
    "eta": (float, 0.01), "mu": (float, 0.02), "sigma": (float, 0.05),
    "gamma1": (float, 0.7), "gamma2": (float, 0.7),
    "beta1": (float, 0.5), "beta2": (float, 0.5),
    "variant": (str, "hadamard"), "coordinate_chains": (_bool, True),
    "sign_rule": (str, "product"), "burn_in": (int, 10000),
    "stop_perturbation_at": (_opt_int, None),
}

SCHEMAS = {
    "chaos-sample": {
        "run": {"seed": (int, 0)},
        "chaos": {"gamma": (float, 0.6), "beta": (float, 0.1), "sign_rule": (str, "product"),
                  "burn_in": (int, 10000), "k": (int, 1000), "n_replicas": (int, 10000),
                  "stream_steps": (int, 2000)},
        "stable": {"tail_fraction": (float, 0.01), "t_min": (float, -2.0),
                   "t_max": (float, 2.0), "t_points": (int, 81)},
    },
    "stable-check": {
        "run": {"seed": (int, 0)},
        "stable": {"alpha": (float, 1.5), "beta": (float, 0.5), "scale": (float, 1.0),
                   "n_samples": (int, 100000), "tail_fraction": (float, 0.01),
                   "t_min": (float, -2.0), "t_max": (float, 2.0), "t_points": (int, 81)},
    },
    "widening-valley": {
        "run": {"seed": (int, 0), "record_every": (int, 100)},
        "widening_valley": {"d_u": (int, 10), "u_scale": (float, 5.0), "steps": (int, 100000),
                            "n_seeds": (int, 5), "schemes": (_words, ["gd", "gaussian", "mpgd"])},
        "optimizer": dict(OPTIMIZER),
    },
    "airfoil": {
        "run": {"seed": (int, 0), "record_every": (int, 100)},
        "airfoil": {"data_path": (str, "data/airfoil_self_noise.dat"), "epochs": (int, 3000),
                    "eta": (float, 0.1), "hidden": (int, 16), "n_seeds": (int, 5),
                    "split_seed": (int, 0), "train_count": (int, 1202),
                    "test_count": (int, 301),
                    "schemes": (_words, ["baseline", "gaussian", "mpgd", "mpgd_sym"]),
                    "gammas": (_floats, [0.55, 0.6, 0.65, 0.7]), "beta": (float, 0.5),
                    "mu": (float, 0.01), "sigma": (float, 0.02),
                    "sym_mu": (float, 0.01), "sym_sigma": (float, 0.01),
                    "gaussian_gamma": (float, 0.6), "coordinate_chains": (_bool, True),
                    "burn_in": (int, 10000)},
    },
    "implicit-reg": {
        "run": {"seed": (int, 0)},
        "implicit_reg": {"A": (_matrix, [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.0]]),
                         "x0": (_floats, [0.0, 0.0, 1.0]), "k": (int, 50),
                         "n_reps": (int, 10000), "eps_grid": (_floats, [0.04, 0.02, 0.01, 0.005]),
                         "max_lag": (int, 200), "include_memory": (_bool, False),
                         "threshold": (float, 2.5)},
        "optimizer": {**OPTIMIZER, "eta": (float, 0.01), "mu": (float, 16.0),
                      "sigma": (float, 1.0), "gamma1": (float, 0.6), "gamma2": (float, 0.6),
                      "beta1": (float, 1.0), "beta2": (float, 1.0),
                      "variant": (str, "scalar_mult"), "coordinate_chains": (_bool, True)},
    },
    "homogenize": {
        "run": {"seed": (int, 0)},
        "homogenization": {"gamma": (float, 0.6), "beta": (float, 0.0),
                           "kind": (str, "additive_constant"), "coef": (float, 1.0),
                           "drift": (str, "ou"), "T": (float, 1.0),
                           "m_list": (_ints, [128, 512, 2048, 8192]),
                           "n_samples": (int, 5000), "reference": (str, "analytic"),
                           "n_reference": (int, 200000), "dt": (float, 1e-3),
                           "x0": (float, 0.0), "mode": (str, "normal"),
                           "burn_in": (int, 10000)},
    },
}


def load_config(subcommand: str, path=None) -> dict:
    """Defaults overlaid with the INI file; unknown sections or keys raise."""
    schema = SCHEMAS[subcommand]
    cfg = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in schema.items()}
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError:
        raise
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for sec in parser.sections():
        if sec not in schema:
            raise ConfigError(f"{path}: unknown section [{sec}] for {subcommand}")
        for key, raw in parser.items(sec):
            if key not in schema[sec]:
                raise ConfigError(f"{path}: unknown key '{key}' in [{sec}]")
            conv = schema[sec][key][0]
            try:
                cfg[sec][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: [{sec}] {key} = {raw!r}: {exc}") from None
    return cfg


def write_config(cfg: dict, path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for sec, keys in cfg.items():
        parser[sec] = {k: _fmt(v) for k, v in keys.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fan_out(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _optimizer_config(sec: dict):
    from .optimizers import MPGDConfig
    try:
        return MPGDConfig(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[optimizer]: {exc}") from None


# ---------------------------------------------------------------- subcommands


def cmd_chaos_sample(cfg, out: Path, threads=1):
    from .chaos import (ThalerParams, birkhoff_sums, chain_init, observable_constants,
                        observable_stream, write_stream_csv)
    from .stable import SampleSet, StableLawSpec, ecf_distance, hill_estimator, hill_side

    c, s = cfg["chaos"], cfg["stable"]
    seed = cfg["run"]["seed"]
    _require(c["n_replicas"] >= 1, "n_replicas must be >= 1")
    _require(c["k"] >= 1, "k must be >= 1")
    try:
        params = ThalerParams(c["gamma"], c["beta"], c["sign_rule"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    consts = observable_constants(params)
    ss = np.random.SeedSequence(seed)
    s_stream, s_sums = ss.spawn(2)

    state = chain_init(s_stream, params, c["burn_in"], 1)
    v, ys, chis = observable_stream(state, consts, c["stream_steps"], record_y=True)
    write_stream_csv(out / "chain_stream.csv", ys, chis, v)

    sums = birkhoff_sums(s_sums, params, c["k"], c["n_replicas"], c["burn_in"])
    SampleSet(sums).to_csv(out / "birkhoff_sums.csv", header="birkhoff_sum")
    target = StableLawSpec(params.alpha, params.beta)
    grid = np.linspace(s["t_min"], s["t_max"], s["t_points"])
    try:
        alpha_hat = hill_estimator(sums, s["tail_fraction"], hill_side(params.beta))
    except ValueError as exc:
        alpha_hat, note = None, str(exc)
    else:
        note = None
    summary = {"gamma": params.gamma, "beta": params.beta, "alpha_target": params.alpha,
               "k": c["k"], "n_replicas": c["n_replicas"], "alpha_hat": alpha_hat,
               "ecf_distance": ecf_distance(sums, target, grid),
               "tail_fraction": s["tail_fraction"], "y_star": consts.y_star,
               "d_alpha": consts.d_alpha, "v_low": consts.v_low, "v_high": consts.v_high}
    if note:
        summary["hill_note"] = note
    _write_json(out / "summary.json", summary)
    return summary


def _quantile_skew(x):
    q05, q50, q95 = np.quantile(x, [0.05, 0.5, 0.95])
    return float((q95 + q05 - 2 * q50) / (q95 - q05))


def cmd_stable_check(cfg, out: Path, threads=1):
    from .chaos import make_rng
    from .stable import SampleSet, StableLawSpec, ecf_distance, hill_estimator, hill_side, sample_stable

    s = cfg["stable"]
    _require(s["n_samples"] >= 1, "n_samples must be >= 1")
    try:
        spec = StableLawSpec(s["alpha"], s["beta"], s["scale"])
        mirror = StableLawSpec(s["alpha"], -s["beta"], s["scale"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    a, b = np.random.SeedSequence(cfg["run"]["seed"]).spawn(2)
    x = sample_stable(spec, make_rng(a), s["n_samples"])
    xm = sample_stable(mirror, make_rng(b), s["n_samples"])
    SampleSet(x).to_csv(out / "samples.csv")
    grid = np.linspace(s["t_min"], s["t_max"], s["t_points"])
    summary = {"alpha": spec.alpha, "beta": spec.beta, "scale": spec.scale,
               "n_samples": s["n_samples"], "ecf_distance": ecf_distance(x, spec, grid),
               "ecf_distance_mirror": ecf_distance(xm, mirror, grid),
               "quantile_skew": _quantile_skew(x), "quantile_skew_mirror": _quantile_skew(xm)}
    if spec.alpha < 2.0:
        try:
            summary["alpha_hat"] = hill_estimator(x, s["tail_fraction"], hill_side(spec.beta))
        except ValueError as exc:
            summary["hill_note"] = str(exc)
    else:
        summary["variance"] = float(np.var(x))
        summary["variance_target"] = 2.0 * spec.scale**2
    _write_json(out / "summary.json", summary)
    return summary


def _wv_job(args):
    from .losses import WideningValley
    from .optimizers import MPGDConfig, run

    scheme, seed, opt, wv, record_every, out = args
    config = MPGDConfig(**opt)
    loss = WideningValley(wv["d_u"])
    rng = np.random.default_rng(seed)
    x0 = np.r_[wv["u_scale"] * rng.random(wv["d_u"]), 0.0]
    rec = run(scheme, loss, x0, wv["steps"], config, seed=seed, record_every=record_every)
    rec.write(Path(out) / f"trajectory_{scheme}_seed{seed}")
    summ = rec.summary()
    tr = np.asarray(rec.hessian_trace)
    summ["min_trace"] = None if rec.diverged else float(tr.min())
    return summ


def cmd_widening_valley(cfg, out: Path, threads=1):
    wv, opt = cfg["widening_valley"], cfg["optimizer"]
    _optimizer_config(opt)
    for sch in wv["schemes"]:
        _require(sch in ("gd", "gaussian", "mpgd", "mpgd_sym"), f"unknown scheme {sch}")
    base = cfg["run"]["seed"]
    jobs = [(sch, base + i, opt, wv, cfg["run"]["record_every"], str(out))
            for sch in wv["schemes"] for i in range(wv["n_seeds"])]
    rows = _fan_out(_wv_job, jobs, threads)
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", "seed", "initial_trace", "final_trace", "min_trace",
                    "diverged"])
        for r in rows:
            w.writerow([r["kind"], r["seed"], r["initial_trace"], r["final_trace"],
                        r["min_trace"], r["diverged"]])
    _write_json(out / "summary.json", {"runs": rows})
    if any(r["diverged"] for r in rows):
        raise DivergenceError("at least one widening-valley run diverged")
    return rows


def _airfoil_job(args):
    from .losses import MLPLoss, ShallowMLP
    from .optimizers import MPGDConfig, run

    label, kind, opt, seed, data, a, record_every = args
    net = ShallowMLP(data.n_features, a["hidden"])
    loss = MLPLoss(data, net)
    config = MPGDConfig(**opt)
    x0 = net.init(seed)
    rec = run(kind, loss, x0, a["epochs"], config, seed=seed, record_every=record_every)
    row = {"scheme": label, "seed": seed, "diverged": rec.diverged}
    if rec.diverged:
        row.update(train_rmse=None, test_rmse=None, rmse_gap=None)
    else:
        x = rec.final_iterate
        tr, te = loss.rmse(x, "train"), loss.rmse(x, "test")
        row.update(train_rmse=tr, test_rmse=te, rmse_gap=te - tr)
    return row


def airfoil_schemes(a: dict, burn_in: int):
    """(label, run kind, optimizer kwargs) for every configured scheme."""
    common = dict(eta=a["eta"], burn_in=burn_in, coordinate_chains=a["coordinate_chains"])
    out = []
    for sch in a["schemes"]:
        if sch == "baseline":
            out.append(("baseline", "gd", dict(common)))
        elif sch == "gaussian":
            g = a["gaussian_gamma"]
            out.append(("gaussian", "gaussian", dict(common, mu=a["mu"], sigma=a["sigma"],
                                                     gamma1=g, gamma2=g)))
        elif sch in ("mpgd", "mpgd_sym"):
            sym = sch == "mpgd_sym"
            for g in a["gammas"]:
                out.append((f"{sch}_g{g}", "mpgd", dict(
                    common, mu=a["sym_mu"] if sym else a["mu"],
                    sigma=a["sym_sigma"] if sym else a["sigma"], gamma1=g, gamma2=g,
                    beta1=a["beta"], beta2=a["beta"],
                    variant="symmetrized" if sym else "hadamard")))
        else:
            raise ConfigError(f"unknown airfoil scheme {sch}")
    return out


def cmd_airfoil(cfg, out: Path, threads=1):
    from .losses import DataParseError, ingest_csv

    a = cfg["airfoil"]
    schemes = airfoil_schemes(a, a["burn_in"])
    for _, _, opt in schemes:
        _optimizer_config(opt)
    try:
        data = ingest_csv(a["data_path"], train_count=a["train_count"],
                          test_count=a["test_count"], seed=a["split_seed"])
    except DataParseError as exc:
        raise InputDataError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(f"[airfoil]: {exc}") from None
    (out / "dataset.json").write_text(data.summary_json())
    base = cfg["run"]["seed"]
    jobs = [(label, kind, opt, base + i, data, a, cfg["run"]["record_every"])
            for label, kind, opt in schemes for i in range(a["n_seeds"])]
    rows = _fan_out(_airfoil_job, jobs, threads)
    with open(out / "per_seed.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["scheme", "seed", "train_rmse", "test_rmse", "rmse_gap",
                                "diverged"])
        w.writeheader()
        w.writerows(rows)
    agg = aggregate_airfoil(rows)
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["scheme", "test_rmse", "rmse_gap", "test_rmse_std",
                                "rmse_gap_std", "n_valid", "n_diverged"])
        w.writeheader()
        w.writerows(agg)
    _write_json(out / "summary.json", {"aggregate": agg, "per_seed": rows})
    if any(r["diverged"] for r in rows):
        raise DivergenceError("at least one airfoil run diverged")
    return agg


def aggregate_airfoil(rows):
    out = []
    for label in dict.fromkeys(r["scheme"] for r in rows):
        sel = [r for r in rows if r["scheme"] == label and not r["diverged"]]
        te = np.array([r["test_rmse"] for r in sel])
        gap = np.array([r["rmse_gap"] for r in sel])
        n_div = sum(1 for r in rows if r["scheme"] == label and r["diverged"])
        ok = te.size > 0
        out.append({"scheme": label, "test_rmse": float(te.mean()) if ok else None,
                    "rmse_gap": float(gap.mean()) if ok else None,
                    "test_rmse_std": float(te.std(ddof=1)) if te.size > 1 else None,
                    "rmse_gap_std": float(gap.std(ddof=1)) if gap.size > 1 else None,
                    "n_valid": int(te.size), "n_diverged": n_div})
    return out


def cmd_implicit_reg(cfg, out: Path, threads=1):
    from .implicit_reg import order_check
    from .losses import QuadraticLoss

    ir = cfg["implicit_reg"]
    config = _optimizer_config(cfg["optimizer"])
    _require(len(ir["eps_grid"]) >= 4, "eps_grid needs at least 4 points")
    try:
        loss = QuadraticLoss(np.array(ir["A"]))
    except ValueError as exc:
        raise ConfigError(f"[implicit_reg] A: {exc}") from None
    _require(len(ir["x0"]) == loss.dim, "x0 length must match A")
    try:
        rep = order_check(loss, np.array(ir["x0"]), config, ir["eps_grid"], ir["k"],
                          ir["n_reps"], seed=cfg["run"]["seed"], max_lag=ir["max_lag"],
                          threshold=ir["threshold"], include_memory=ir["include_memory"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    d = rep.to_dict()
    _write_json(out / "order_report.json", d)
    return d


def cmd_homogenize(cfg, out: Path, threads=1):
    from .chaos import ThalerParams
    from .homogenization import (FastSlowSpec, SDESpec, ou_drift, ou_reference_sample,
                                 weak_convergence_report, zero_drift)
    from .stable import StableLawSpec

    h = cfg["homogenization"]
    ms = h["m_list"]
    _require(len(ms) >= 1, "m_list must not be empty")
    _require(all(b > a for a, b in zip(ms, ms[1:])), "m_list must be strictly increasing")
    _require(h["drift"] in ("ou", "zero"), "drift must be 'ou' or 'zero'")
    _require(h["reference"] in ("analytic", "sde"), "reference must be 'analytic' or 'sde'")
    _require(h["mode"] in ("normal", "identical"), "mode must be 'normal' or 'identical'")
    drift = ou_drift if h["drift"] == "ou" else zero_drift
    try:
        params = ThalerParams(h["gamma"], h["beta"])
        sde = SDESpec(drift, h["kind"], h["coef"], StableLawSpec(params.alpha, params.beta),
                      h["dt"], h["T"], (h["x0"],))
        family = [FastSlowSpec(drift, h["kind"], h["coef"], params, h["T"], m, (h["x0"],),
                               h["burn_in"]) for m in ms]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    seed = cfg["run"]["seed"]
    if h["mode"] == "identical":
        # smoke test: the SDE integrator compared with itself under two seeds
        from .homogenization import WeakConvergenceReport, simulate_stable_sde
        from .stable import ks_distance
        a, b = np.random.SeedSequence(seed).spawn(2)
        xa, _ = simulate_stable_sde(sde, a, h["n_samples"])
        xb, _ = simulate_stable_sde(sde, b, h["n_samples"])
        rep = WeakConvergenceReport(m=[0], ks=[ks_distance(xa[:, 0], xb[:, 0])],
                                    n_effective=[h["n_samples"]], divergence_count=[0],
                                    reference="sde-self")
    else:
        ref = None
        analytic = (h["reference"] == "analytic" and h["drift"] == "ou"
                    and h["kind"] == "additive_constant" and h["x0"] == 0.0)
        if h["reference"] == "analytic" and not analytic:
            raise ConfigError("analytic reference needs OU drift, additive noise and x0 = 0")
        if analytic:
            ref = ou_reference_sample(params.alpha, params.beta, h["coef"], h["n_reference"],
                                      np.random.SeedSequence([seed, 1]), h["T"])
        rep = weak_convergence_report(family, h["n_samples"], seed=seed, sde_ref=sde,
                                      reference_sample=ref)
    rep.write(out / "weak_convergence")
    if any(rep.divergence_count):
        raise DivergenceError("fast-slow samples diverged")
    return rep.to_dict()


COMMANDS = {
    "chaos-sample": cmd_chaos_sample,
    "stable-check": cmd_stable_check,
    "widening-valley": cmd_widening_valley,
    "airfoil": cmd_airfoil,
    "implicit-reg": cmd_implicit_reg,
    "homogenize": cmd_homogenize,
}


def build_parser():
    p = argparse.ArgumentParser(prog="mpgd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI file; defaults are used when omitted")
        sp.add_argument("--seed", type=int, help="overrides [run] seed")
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for fan-out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    if args.seed is not None:
        cfg["run"]["seed"] = args.seed
    if args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / args.command
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_config(cfg, out / "resolved_config.ini")
        result = COMMANDS[args.command](cfg, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        where = exc.filename or ""
        print(f"I/O error: {where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(_brief(result), indent=2, sort_keys=True, default=str))
    return EXIT_OK


def _brief(result):
    if isinstance(result, list) and len(result) > 20:
        return result[:20] + [f"... {len(result) - 20} more"]
    return result


if __name__ == "__main__":
    sys.exit(main())
