"""Command-line interface: ``vdmn <subcommand> [options]``.

Exit codes: 0 success, 1 validation failure (for example a failed
calibration test), 2 usage, schema or runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

__all__ = ["main", "load_config", "oracle_from_config", "CONFIG_SCHEMA"]

log = logging.getLogger("vdmn")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2

CONFIG_SCHEMA = {
    "data": {
        "n_pairs": int, "seed": int, "n_members": int, "depth": int, "angle_jitter": float,
        "weight_jitter": float, "vf_tolerance": float, "split": str, "ensemble_seed": int,
    },
    "train": {
        "epochs": int, "batch_size": int, "lr0": float, "gamma": float, "seed": int, "mean_order": int,
        "mode": str, "scheduler": str, "depth": int, "init_logvar": float, "seeds": str,
    },
    "propagation": {"mean_order": int, "second_order_theta": bool, "allow_unstable": bool},
    "load": {"rate": float, "final_strain": float, "steps": int, "mixed": bool},
    "phase1": {"E": float, "nu": float, "sigma_y": float, "sigma_y_max": float, "delta": float, "K_p": float,
               "N": float, "elastic": bool},
    "phase2": {"E": float, "nu": float, "sigma_y": float, "sigma_y_max": float, "delta": float, "K_p": float,
               "N": float, "elastic": bool},
    "latent": {"mu_E1": float, "logS_E1": float, "mu_E2": float, "logS_E2": float, "nu1": float, "nu2": float,
               "sigma2_meas": float, "n_measurements": int, "components": str, "protocol": str, "seed": int},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_config(path) -> dict:
    """Read and type-check an INI config; returns ``{section: {key: value}}``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        if section not in CONFIG_SCHEMA:
            raise UsageError(f"config: unknown section [{section}]")
        out[section] = {}
        for key, raw in cp.items(section):
            kind = CONFIG_SCHEMA[section].get(key)
            if kind is None:
                raise UsageError(f"config: unknown key {key!r} in [{section}]")
            try:
                if kind is bool:
                    value = cp.getboolean(section, key)
                else:
                    value = kind(raw)
            except ValueError as exc:
                raise UsageError(f"config: [{section}] {key} = {raw!r} is not a valid {kind.__name__}") from exc
            out[section][key] = value
    return out


def _seed(value):
    if value is not None:
        return value
    env = os.environ.get("VDMN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"VDMN_SEED must be an integer, got {env!r}") from exc
    return 0


def _pick(cli_value, cfg: dict, section: str, key: str, default):
    if cli_value is not None:
        return cli_value
    return cfg.get(section, {}).get(key, default)


def _data_file(path) -> Path:
    p = Path(path)
    return p / "dataset.jsonl" if p.is_dir() else p


def _emit(obj):
    print(json.dumps(obj, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, cfg):
    from .datagen import generate_dataset, lhs_orthotropic
    from .io import save_dataset, write_measurements

    d = cfg.get("data", {})
    seed = _seed(args.seed if args.seed is not None else d.get("seed"))
    n = _pick(args.n_pairs, cfg, "data", "n_pairs", 1655)
    split = tuple(float(s) for s in d.get("split", "0.70,0.15,0.15").split(","))
    if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9:
        raise UsageError("split must be three fractions summing to 1")
    oracle, ens, ens_seed, (s_lhs, s_split, s_meas) = oracle_from_config(cfg, seed)
    C1, C2 = lhs_orthotropic(n, s_lhs)
    splits = generate_dataset(oracle, (C1, C2), split, s_split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(splits, out / "dataset.jsonl")
    meta = {"seed": seed, "n_pairs": n, "split": split, "ensemble": asdict(ens), "ensemble_seed": ens_seed,
            "sizes": {k: len(v) for k, v in splits.items()}}
    if "latent" in cfg:
        from .inverse import mask_components, synthesize_measurements

        lat = cfg["latent"]
        latent = _latent_from(lat)
        C = synthesize_measurements(oracle, latent, lat.get("n_measurements", 30), lat.get("seed", s_meas))
        comps = lat.get("components")
        if comps:
            C = mask_components(C, comps.split(","), lat.get("protocol", "combined"), lat.get("seed", s_meas))
        write_measurements(out / "measurements.csv", C)
        meta["latent"] = asdict(latent)
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    _emit(meta["sizes"])
    return EXIT_OK


def oracle_from_config(cfg: dict, seed: int):
    """Rebuild the data-generating ensemble of ``gen-data`` for a config and seed.

    Returns ``(oracle, ensemble_config, ensemble_seed, (lhs_seed, split_seed, measurement_seed))``.
    """
    from .datagen import EnsembleConfig, build_ensemble

    d = cfg.get("data", {})
    ens = EnsembleConfig(
        n_members=d.get("n_members", 30), depth=d.get("depth", 5), angle_jitter=d.get("angle_jitter", 0.02),
        weight_jitter=d.get("weight_jitter", 0.1), vf_tolerance=d.get("vf_tolerance", 0.05),
    )
    ss = np.random.SeedSequence(seed)
    s_lhs, s_ens, s_split, s_meas = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    ens_seed = d.get("ensemble_seed", s_ens)
    return build_ensemble(ens, ens_seed), ens, ens_seed, (s_lhs, s_split, s_meas)


def _latent_from(lat: dict, init=None):
    from .inverse import LatentConstitutiveModel

    keys = ("mu_E1", "logS_E1", "mu_E2", "logS_E2", "nu1", "nu2", "sigma2_meas")
    base = dict(mu_E1=1.0, logS_E1=float(np.log(0.05**2)), mu_E2=2.0, logS_E2=float(np.log(0.15**2)))
    if init is not None:
        base.update(dict(zip(("mu_E1", "logS_E1", "mu_E2", "logS_E2"), init)))
    base.update({k: lat[k] for k in keys if k in lat})
    return LatentConstitutiveModel(**base)


def cmd_train(args, cfg):
    from .io import dataset_hash, load_dataset, save_model
    from .training import TrainConfig, TrainingDiverged, train

    t = cfg.get("train", {})
    data = load_dataset(_data_file(args.data))
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
    elif "seeds" in t:
        seeds = [int(s) for s in t["seeds"].split(",")]
    else:
        seeds = [_seed(args.seed if args.seed is not None else t.get("seed"))]
    depth = _pick(args.depth, cfg, "train", "depth", 7)
    out = Path(args.out)
    results = []
    for seed in seeds:
        tc = TrainConfig(
            epochs=_pick(args.epochs, cfg, "train", "epochs", 4000),
            batch_size=_pick(args.batch_size, cfg, "train", "batch_size", 256),
            lr0=_pick(args.lr0, cfg, "train", "lr0", 0.01),
            gamma=t.get("gamma", 1000.0), seed=seed, mean_order=t.get("mean_order", 1),
            mode=_pick(args.mode, cfg, "train", "mode", "riemannian"),
            scheduler=t.get("scheduler", "cosine"), init_logvar=t.get("init_logvar", -6.0),
        )
        try:
            params, hist = train(data, tc, depth=depth)
        except TrainingDiverged as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        fingerprint = {
            "config_hash": hashlib.sha256(json.dumps(asdict(tc), sort_keys=True).encode()).hexdigest(),
            "dataset_hash": dataset_hash(data),
            "config": asdict(tc),
            "depth": depth,
            "best_epoch": hist.best_epoch,
            "final_train_loss": hist.train_loss[-1] if len(hist) else None,
            "best_val_nll": min(hist.val_loss) if len(hist) else None,
        }
        path = out if len(seeds) == 1 else out.with_name(f"{out.stem}-seed{seed}{out.suffix}")
        save_model(params, path, fingerprint)
        results.append({"seed": seed, "path": str(path), "best_val_nll": fingerprint["best_val_nll"]})
    _emit(results)
    return EXIT_OK


def _load_split(args):
    from .io import load_dataset

    data = load_dataset(_data_file(args.data))
    if len(data[args.split]) == 0:
        raise UsageError(f"split {args.split!r} is empty")
    return data[args.split]


def _prop_cfg(cfg):
    from .propagation import PropagationConfig

    p = cfg.get("propagation", {})
    return PropagationConfig(
        mean_order=p.get("mean_order", 1), second_order_theta=p.get("second_order_theta", False),
        allow_unstable=p.get("allow_unstable", False),
    )


def cmd_eval(args, cfg):
    from .calibration import MARGINALS
    from .io import load_model, write_csv
    from .propagation import propagate_batch
    from .riemann import vec
    from .training import evaluate_nll

    params = load_model(args.model)
    ds = _load_split(args)
    pc = _prop_cfg(cfg)
    nll = evaluate_nll(params, ds, args.mode, pc.mean_order)
    mean, cov = propagate_batch(params, ds.c1, ds.c2, pc)
    r = vec(ds.ch) - vec(mean)
    z = {k: r[:, p] / np.sqrt(cov[:, p, p]) for k, p in MARGINALS.items()}
    rows = [(i, nll[i], *(z[k][i] for k in MARGINALS)) for i in range(len(ds))]
    if args.out:
        write_csv(args.out, ["sample", "nll", *(f"z_{k}" for k in MARGINALS)], rows)
    _emit({"split": args.split, "n": len(ds), "mean_nll": float(nll.mean())})
    return EXIT_OK


def cmd_calibrate(args, cfg):
    from .calibration import calibration_test
    from .io import load_model, write_csv
    from .propagation import propagate_batch

    params = load_model(args.model)
    ds = _load_split(args)
    mean, cov = propagate_batch(params, ds.c1, ds.c2, _prop_cfg(cfg))
    rep = calibration_test((mean, cov), ds.ch, n_sim=args.n_sim, seed=_seed(args.seed),
                           simultaneous=not args.pointwise)
    if args.out:
        rows = [r for m in rep.marginals.values() for r in m.to_rows()]
        write_csv(args.out, ["marginal", "grid", "ecdf", "lower", "upper"], rows)
    for name, m in rep.marginals.items():
        print(f"{name}: {'pass' if m.passed else 'FAIL'}")
    for name in rep.skipped:
        print(f"{name}: skipped")
    return EXIT_OK if rep.passed else EXIT_FAIL


def _phase_input(args, k):
    from .laminate import IsoElastic, isotropic_stiffness
    from .riemann import unvec

    c = getattr(args, f"c{k}")
    if c is not None:
        v = np.array([float(x) for x in c.split(",")])
        if v.shape != (6,):
            raise UsageError(f"--c{k} needs six values (11, 22, 33, 12, 13, 23)")
        return unvec(v)
    E, nu = getattr(args, f"e{k}"), getattr(args, f"nu{k}")
    if E is None or nu is None:
        raise UsageError(f"phase {k} needs --c{k} or both --e{k} and --nu{k}")
    return isotropic_stiffness(IsoElastic(E, nu))


def cmd_predict_linear(args, cfg):
    from .datagen import denormalize
    from .io import load_model, write_csv
    from .propagation import propagate_tree, sample_dmns
    from .laminate import tree_homogenize
    from .riemann import vec

    params = load_model(args.model)
    C1, C2 = _phase_input(args, 1), _phase_input(args, 2)
    s = float(C1[0, 0])
    if not s > 0:
        raise UsageError("phase 1 C11 must be positive")
    g = denormalize(propagate_tree(params, C1 / s, C2 / s, _prop_cfg(cfg)), s)
    result = {"mean": g.mean.tolist(), "cov": g.cov.tolist(), "marginal_std": g.marginal_std.tolist()}
    if args.samples:
        topo = sample_dmns(params, args.samples, _seed(args.seed))
        Ch = tree_homogenize(topo, C1, C2)
        result["sample_mean"] = Ch.mean(0).tolist()
        result["sample_std"] = vec(Ch).std(0, ddof=1).tolist()
        if args.out:
            write_csv(args.out, ["sample", "C11", "C22", "C33", "C12", "C13", "C23"],
                      [(i, *v) for i, v in enumerate(vec(Ch))])
    _emit(result)
    return EXIT_OK


def _law(section: dict, default):
    from .constitutive import NortonParams
    from .laminate import IsoElastic

    if not section:
        return default
    if section.get("elastic", False) or "sigma_y" not in section:
        return IsoElastic(section["E"], section["nu"])
    return NortonParams(section["E"], section["nu"], section["sigma_y"], section.get("sigma_y_max", section["sigma_y"]),
                        section.get("delta", 0.0), section.get("K_p", 0.0), section.get("N", 1.0))


def cmd_predict_nonlinear(args, cfg):
    from .constitutive import LoadPath, NortonParams, vdmn_ensemble_simulate
    from .io import load_model, write_csv
    from .laminate import IsoElastic

    laws = (
        _law(cfg.get("phase1"), IsoElastic(100000.0, 0.3)),
        _law(cfg.get("phase2"), NortonParams(200000.0, 0.19, 300.0, 300.0, 0.0, 0.0, 10.0)),
    )
    ld = cfg.get("load", {})
    path = LoadPath.uniaxial(
        rate=_pick(args.rate, cfg, "load", "rate", 0.003),
        final_strain=_pick(args.strain, cfg, "load", "final_strain", 0.02),
        steps=_pick(args.steps, cfg, "load", "steps", 100),
        mixed=args.mixed or ld.get("mixed", False),
    )
    seed = _seed(args.seed)
    histories, failures = [], []
    per = max(1, args.samples // len(args.model))
    for m, model in enumerate(args.model):
        params = load_model(model)
        res = vdmn_ensemble_simulate(params, laws, path, per, [seed, m], workers=args.threads)
        for h in res.histories:
            h.sample_id = m * per + h.sample_id
        histories += res.histories
        failures += res.failures
    if args.out:
        write_csv(args.out, ["step", "time", "eps_xx", "eps_yy", "eps_xy", "sig_xx", "sig_yy", "sig_xy", "sample_id"],
                  [r for h in histories for r in h.rows()])
    stack = np.stack([h.stress for h in histories])
    levels = (0.05, 0.5, 0.95)
    q = np.quantile(stack[:, :, 0], levels, axis=0)
    if args.summary:
        eps = np.mean([h.strain[:, 0] for h in histories], axis=0)
        rows = [(k, eps[k], stack[:, k, 0].mean(), stack[:, k, 0].std(ddof=1) if len(stack) > 1 else 0.0,
                 *q[:, k]) for k in range(stack.shape[1])]
        write_csv(args.summary, ["step", "eps_xx", "mean_sig_xx", "std_sig_xx", "q05", "q50", "q95"], rows)
    _emit({"samples": len(histories), "failures": len(failures),
           "final_sig_xx_mean": float(stack[:, -1, 0].mean()),
           "final_sig_xx_std": float(stack[:, -1, 0].std(ddof=1)) if len(stack) > 1 else 0.0})
    return EXIT_OK


def _measurements(args, cfg):
    from .inverse import mask_components
    from .io import read_measurements

    C = read_measurements(args.measurements)
    if args.components:
        lat = cfg.get("latent", {})
        C = mask_components(C, args.components.split(","), args.protocol, lat.get("seed", _seed(args.seed)))
    return C


def _init(args, cfg):
    init = None
    if args.init:
        init = [float(x) for x in args.init.split(",")]
        if len(init) != 4:
            raise UsageError("--init needs mu_E1,logS_E1,mu_E2,logS_E2")
    lat = dict(cfg.get("latent", {}))
    if args.sigma2 is not None:
        lat["sigma2_meas"] = args.sigma2
    if init is not None:
        for k in ("mu_E1", "logS_E1", "mu_E2", "logS_E2"):
            lat.pop(k, None)
    return _latent_from(lat, init)


def cmd_invert(args, cfg):
    from .inverse import inverse_fit
    from .io import load_model

    params = load_model(args.model)
    C = _measurements(args, cfg)
    res = inverse_fit(C, params, _init(args, cfg), method=args.method)
    _emit({**asdict(res.model), "nll": res.nll, "success": res.success, "n_iter": res.n_iter})
    return EXIT_OK if res.success else EXIT_FAIL


def _axis(spec: str):
    try:
        name, lo, hi, n = spec.split(":")
        return name, np.linspace(float(lo), float(hi), int(n))
    except ValueError as exc:
        raise UsageError(f"axis {spec!r} must be name:lo:hi:n") from exc


def cmd_landscape(args, cfg):
    from .inverse import likelihood_landscape
    from .io import load_model, write_csv

    params = load_model(args.model)
    C = _measurements(args, cfg)
    (xn, xv), (yn, yv) = _axis(args.x), _axis(args.y)
    land = likelihood_landscape(C, params, _init(args, cfg), xn, xv, yn, yv)
    write_csv(args.out, [xn, yn, "nll"], land.rows())
    bx, by = land.argmin()
    _emit({"argmin": {xn: bx, yn: by}, "missing": int(np.isnan(land.nll).sum())})
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vdmn", description="Variational deep material network toolkit")
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--threads", type=int, default=1, help="maximum worker processes")
    p.add_argument("--seed", type=int, help="global seed (falls back to VDMN_SEED, then 0)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", default=argparse.SUPPRESS)
        sp.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        sp.add_argument("--threads", type=int, default=argparse.SUPPRESS)
        return sp

    g = common(sub.add_parser("gen-data", help="generate the ensemble dataset"))
    g.add_argument("--out", required=True)
    g.add_argument("--n-pairs", type=int)

    t = common(sub.add_parser("train", help="train a VDMN"))
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--depth", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr0", type=float)
    t.add_argument("--mode", choices=("riemannian", "euclidean"))
    t.add_argument("--seeds", help="comma-separated seeds; one model file per seed")

    for name, helptext in (("eval", "per-sample NLL and z-scores"), ("calibrate", "graphical calibration test")):
        e = common(sub.add_parser(name, help=helptext))
        e.add_argument("--model", required=True)
        e.add_argument("--data", required=True)
        e.add_argument("--split", choices=("train", "val", "test"), default="test")
        e.add_argument("--out")
        if name == "eval":
            e.add_argument("--mode", choices=("riemannian", "euclidean"), default="riemannian")
        else:
            e.add_argument("--n-sim", type=int, default=1000)
            e.add_argument("--pointwise", action="store_true", help="unadjusted pointwise envelope")

    pl = common(sub.add_parser("predict-linear", help="analytic stiffness distribution"))
    pl.add_argument("--model", required=True)
    for k in (1, 2):
        pl.add_argument(f"--c{k}", help="six stiffness entries 11,22,33,12,13,23")
        pl.add_argument(f"--e{k}", type=float)
        pl.add_argument(f"--nu{k}", type=float)
    pl.add_argument("--samples", type=int, default=0, help="also draw this many sampled DMNs")
    pl.add_argument("--out")

    pn = common(sub.add_parser("predict-nonlinear", help="sampled elastoviscoplastic ensemble"))
    pn.add_argument("--model", required=True, nargs="+", help="one or more model files (pooled)")
    pn.add_argument("--samples", type=int, default=100)
    pn.add_argument("--rate", type=float)
    pn.add_argument("--strain", type=float)
    pn.add_argument("--steps", type=int)
    pn.add_argument("--mixed", action="store_true", help="traction-free yy and xy")
    pn.add_argument("--out")
    pn.add_argument("--summary")

    for name in ("invert", "landscape"):
        iv = common(sub.add_parser(name, help="inverse fit" if name == "invert" else "likelihood landscape"))
        iv.add_argument("--model", required=True)
        iv.add_argument("--measurements", required=True)
        iv.add_argument("--components", help="e.g. C11,C12")
        iv.add_argument("--protocol", choices=("combined", "single"), default="combined")
        iv.add_argument("--sigma2", type=float, help="known measurement noise variance")
        iv.add_argument("--init", help="mu_E1,logS_E1,mu_E2,logS_E2")
        if name == "invert":
            iv.add_argument("--method", choices=("nelder-mead", "cg"), default="nelder-mead")
        else:
            iv.add_argument("--x", required=True, help="name:lo:hi:n")
            iv.add_argument("--y", required=True, help="name:lo:hi:n")
            iv.add_argument("--out", required=True)
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "calibrate": cmd_calibrate,
    "predict-linear": cmd_predict_linear,
    "predict-nonlinear": cmd_predict_nonlinear,
    "invert": cmd_invert,
    "landscape": cmd_landscape,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .io import FormatError

    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, RuntimeError, OSError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
