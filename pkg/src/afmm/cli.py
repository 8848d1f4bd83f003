"""Command-line interface: ``afmm <command> [flags]``.

Every command writes plot-ready CSV/JSON. Commands that produce a run
directory also write ``manifest.json``, which ``afmm rerun`` replays.
"""
import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .asym_dirichlet import AsymDirichletParams
from .datagen import DataType1Spec, DataType2Spec, default_templates, gen_functional, gen_type1, gen_type2
from .errors import CalibrationError, DataError, DomainError, NumericalError
from .functional import FunctionalHyperparams, FunctionalModelConfig, fit_functional
from .gibbs import UnivariateModelConfig, run_chain
from .induced import AsymFixed, AsymPc, Dpm, MfmmUniformK, SymGamma, SymStatic, induced_kplus_prior
from .metrics import MetricsReport, ari, ccprob_error, mode_bias, posterior_mode, pwss, sd_ccp, u_adjusted_mse
from .pc_prior import PcPriorSpec, calibrate_lambda
from .rng import RngStream

log = logging.getLogger("afmm")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# parser


def _fit_flags(p, functional=False, need_U=True):
    p.add_argument("--data", required=True, help="CSV with column y (or id,t,y for curves)")
    if need_U:
        p.add_argument("--U", type=int, required=True)
    p.add_argument("--K", type=int, default=25)
    p.add_argument("--tp", type=float, default=0.1)
    p.add_argument("--prior", choices=["pc", "gamma", "fixed", "sym-gamma"], default="pc")
    p.add_argument("--alpha1", type=float, help="concentration for --prior fixed")
    p.add_argument("--alpha2", type=float, default=1e-5)
    p.add_argument("--lambda", dest="lam", type=float, help="PC decay rate (skips calibration)")
    p.add_argument("--iters", type=int, default=20000 if functional else 15000)
    p.add_argument("--burn", type=int, default=10000)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=20000, help="calibration replicates")
    p.add_argument("--no-swap", action="store_true", help="disable the block swap move")
    if not functional:
        p.add_argument("--sigma0-sq", type=float, default=100.0)
        p.add_argument("--a0", type=float, default=3.0)
        p.add_argument("--b0", type=float, default=2.0)
        p.add_argument("--mu0", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="afmm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("induced-prior", help="simulate the prior on the number of clusters")
    p.add_argument("--family", required=True,
                   choices=["asym", "asym-pc", "sym", "sym-gamma", "dpm", "mfmm-unifK"])
    p.add_argument("--K", type=int, default=25)
    p.add_argument("--U", type=int)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--alpha1", type=float, help="block-1 (or symmetric, DP) concentration")
    p.add_argument("--alpha2", type=float, default=1e-5)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--tp", type=float)
    p.add_argument("--gamma-a", type=float, default=10.0)
    p.add_argument("--gamma-rate", type=float, help="default 10K")
    p.add_argument("--reps", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prior.csv")

    p = sub.add_parser("calibrate", help="find the PC decay rate for a target tail probability")
    p.add_argument("--U", type=int, required=True)
    p.add_argument("--tp", type=float, required=True)
    p.add_argument("--K", type=int, default=25)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--alpha2", type=float, default=1e-5)
    p.add_argument("--reps", type=int, default=20000)
    p.add_argument("--tol", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output calibration.json")

    p = sub.add_parser("simulate", help="generate synthetic data")
    p.add_argument("--type", required=True, choices=["1", "2", "functional"])
    p.add_argument("--kplus", type=int, default=2, help="clusters for type 1")
    p.add_argument("--U", type=int, default=5, help="type 2 block size")
    p.add_argument("--K", type=int, default=25)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--templates", type=int, default=3)
    p.add_argument("--kappa", type=float, default=0.05)
    p.add_argument("--sigma", type=float, default=0.0005)
    p.add_argument("--grid-size", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("fit", help="fit the univariate Gaussian mixture")
    _fit_flags(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("fit-functional", help="fit the functional clustering model")
    _fit_flags(p, functional=True)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--knots", type=int, default=7)
    p.add_argument("--A", type=float, default=0.001)
    p.add_argument("--A0", type=float, default=0.25)
    p.add_argument("--a-tau", type=float, default=0.01)
    p.add_argument("--U-tau", type=float, default=3.22)
    p.add_argument("--tau-prior-on", choices=["sd", "inverse"], default="sd")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("sensitivity", help="refit over a range of U")
    _fit_flags(p, need_U=False)
    p.add_argument("--U-min", type=int, required=True)
    p.add_argument("--U-max", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("metrics", help="evaluate a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--truth", help="truth.csv (id,label)")
    p.add_argument("--kplus-true", type=int)
    p.add_argument("--out", help="default <run-dir>/metrics.json")

    p = sub.add_parser("rerun", help="replay the command recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", help="write to this directory instead")

    for sp in sub.choices.values():
        sp.add_argument("--config", help="key=value file; flags take precedence")
    return parser


def _read_config(path):
    cfg = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from e
    for i, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{i}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        cfg[k.lstrip("-").replace("-", "_")] = v
    return cfg


def parse_args(argv):
    """Parse with precedence flags > config file > defaults."""
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    subs = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in subs), None)
    if known.config and command:
        sp = subs[command]
        actions = {a.dest: a for a in sp._actions}
        defaults = {}
        for k, v in _read_config(known.config).items():
            k = {"lambda": "lam"}.get(k, k)
            if k not in actions or k in ("help", "config"):
                raise UsageError(f"unknown config key {k!r}")
            a = actions[k]
            try:
                if a.const is True:     # store_true flags
                    defaults[k] = v.lower() in ("1", "true", "yes")
                else:
                    defaults[k] = a.type(v) if a.type else v
            except ValueError:
                raise UsageError(f"config key {k!r}: bad value {v!r}") from None
            if a.choices is not None and defaults[k] not in a.choices:
                raise UsageError(f"config key {k!r}: {v!r} is not one of {sorted(a.choices)}")
            a.required = False
        sp.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# run directories


def _prep_dir(path):
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _config_dict(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}


def _univariate_config(args, U=None):
    return UnivariateModelConfig(
        U=args.U if U is None else U, K=args.K, weight_prior=args.prior, tp=args.tp, lam=args.lam,
        alpha1=args.alpha1, alpha2=args.alpha2, block_swap=not args.no_swap,
        calib_replicates=args.reps, mu0=args.mu0, sigma0_sq=args.sigma0_sq, a0=args.a0, b0=args.b0)


def write_posterior(out, summary, ids):
    n = len(ids)
    io.write_csv(out / "kplus_posterior.csv", ["kplus", "probability"],
                 [(k, p) for k, p in enumerate(summary.kplus_pmf, start=1)])
    io.write_matrix_csv(out / "coclustering.csv", summary.coclustering, ids)
    io.write_csv(out / "partition.csv", ["id", "label"], zip(ids, summary.point_partition))
    io.write_csv(out / "alpha1_trace.csv", ["draw", "alpha1", "kplus"],
                 zip(range(1, summary.n_draws + 1), summary.alpha1_trace, summary.kplus_trace))
    io.write_json(out / "acceptance.json", {**summary.acceptance, "counters": summary.counters,
                                            "retained_draws": summary.n_draws, "n": n})


def _write_calibration(out, model):
    if model.calibration is not None:
        io.write_json(out / "calibration.json", model.calibration.to_dict())


def _fit_univariate(y, config, args, out):
    summary = run_chain(y, config, args.iters, args.burn, args.thin, args.seed)
    ids = list(range(1, y.size + 1))
    write_posterior(out, summary, ids)
    io.write_csv(out / "fitted.csv", ["id", "y", "fitted"], zip(ids, y, summary.fitted_values))
    model = summary.extras["model"]
    _write_calibration(out, model)
    return summary, model


def _with_manifest(args, argv, out, work):
    manifest = io.RunManifest(command=args.command, argv=list(argv), seed=getattr(args, "seed", 0),
                              config=_config_dict(args))
    manifest.write(out)
    try:
        counters, extra = work()
    except Exception:
        manifest.finalize(out, status="failed")
        raise
    manifest.extra.update(extra or {})
    manifest.finalize(out, counters=counters)


# ---------------------------------------------------------------------------
# commands


def cmd_induced_prior(args, argv):
    K, U, n = args.K, args.U, args.n
    fam = args.family
    a1 = args.alpha1
    if fam in ("asym", "asym-pc") and U is None:
        raise UsageError(f"--family {fam} needs --U")
    if fam in ("asym", "sym", "dpm", "mfmm-unifK") and a1 is None:
        raise UsageError(f"--family {fam} needs --alpha1")
    calib = None
    if fam == "asym":
        family = AsymFixed(AsymDirichletParams(K, U, a1, args.alpha2))
    elif fam == "asym-pc":
        lam = args.lam
        if lam is None:
            if args.tp is None:
                raise UsageError("--family asym-pc needs --lambda or --tp")
            calib = calibrate_lambda(U, args.tp, K, n, alpha2_fixed=args.alpha2,
                                     rng=RngStream(args.seed, 1))
            lam = calib.lambda_star
        family = AsymPc(PcPriorSpec(U, K, lam, alpha2_fixed=args.alpha2))
    elif fam == "sym":
        family = SymStatic(K, a1)
    elif fam == "sym-gamma":
        family = SymGamma(K, args.gamma_a, args.gamma_rate if args.gamma_rate else 10.0 * K)
    elif fam == "dpm":
        family = Dpm(a1)
    else:
        family = MfmmUniformK(a1, K_max=K)
    res = induced_kplus_prior(family, n, args.reps, RngStream(args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_csv(out, ["kplus", "probability", "mc_se"], zip(res.kplus, res.pmf, res.mc_se))
    if calib is not None:
        io.write_json(out.with_name(out.stem + "_calibration.json"), calib.to_dict())
    log.info("mode %d, mean %.4f", res.mode, res.mean())


def cmd_calibrate(args, argv):
    res = calibrate_lambda(args.U, args.tp, args.K, args.n, alpha2_fixed=args.alpha2,
                           mc_replicates=args.reps, tolerance=args.tol, rng=RngStream(args.seed, 1))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_json(out, res.to_dict())
    log.info("lambda* = %.6g, tail %.4f", res.lambda_star, res.achieved_tail)


def cmd_simulate(args, argv):
    out = _prep_dir(args.out_dir)
    rng = RngStream(args.seed)

    def work():
        if args.type == "functional":
            data, truth, _ = gen_functional(default_templates(args.templates), n=args.n,
                                            kappa=args.kappa, sigma=args.sigma,
                                            grid=np.linspace(0, 1, args.grid_size), rng=rng)
            ids, t, y = data.to_long()
            io.write_csv(out / "data.csv", ["id", "t", "y"], zip(ids, t, y))
            io.write_csv(out / "truth.csv", ["id", "label"], zip(data.ids, truth))
            return {}, {}
        if args.type == "1":
            y, truth = gen_type1(DataType1Spec(args.kplus, args.n), rng)
        else:
            y, truth = gen_type2(DataType2Spec(U=args.U, n=args.n, K=args.K), rng)
        io.write_csv(out / "data.csv", ["y"], ((v,) for v in y))
        io.write_csv(out / "truth.csv", ["id", "label"], zip(range(1, y.size + 1), truth))
        return {}, {"kplus_true": int(np.unique(truth).size)}

    _with_manifest(args, argv, out, work)


def cmd_fit(args, argv):
    y = io.read_univariate_csv(args.data)
    out = _prep_dir(args.out_dir)

    def work():
        summary, model = _fit_univariate(y, _univariate_config(args), args, out)
        return summary.counters, {"K": model.K, "U": args.U, "mu0": model.mu0,
                                  "kplus_mode": summary.kplus_mode}

    _with_manifest(args, argv, out, work)


def cmd_fit_functional(args, argv):
    data = io.read_functional_csv(args.data)
    out = _prep_dir(args.out_dir)
    config = FunctionalModelConfig(
        U=args.U, K=args.K, weight_prior=args.prior, tp=args.tp, lam=args.lam, alpha1=args.alpha1,
        alpha2=args.alpha2, block_swap=not args.no_swap, calib_replicates=args.reps,
        degree=args.degree, interior_knots=args.knots)
    hyper = FunctionalHyperparams(A=args.A, A0=args.A0, a_tau=args.a_tau, U_tau=args.U_tau,
                                  tau_prior_on=args.tau_prior_on)

    def work():
        fit = fit_functional(data, config, hyper, args.iters, args.burn, args.thin, args.seed)
        s = fit.summary
        write_posterior(out, s, data.ids)
        ids, t, y = data.to_long()
        io.write_csv(out / "fitted.csv", ["id", "t", "y", "fitted"], zip(ids, t, y, s.fitted_values))
        tg = fit.time_grid()
        io.write_csv(out / "subject_fits.csv", ["id", "t", "fitted"],
                     ((sid, tt, v) for sid, curve in zip(data.ids, fit.subject_curves)
                      for tt, v in zip(tg, curve)))
        io.write_csv(out / "cluster_means.csv", ["cluster", "t", "mean"],
                     ((c, tt, v) for c, curve in sorted(fit.cluster_means.items())
                      for tt, v in zip(tg, curve)))
        _write_calibration(out, fit.model)
        return s.counters, {"K": config.K, "U": config.U, "t_offset": data.t_offset,
                            "t_scale": data.t_scale, "hyper": asdict(hyper),
                            "kplus_mode": s.kplus_mode}

    _with_manifest(args, argv, out, work)


def _sensitivity_one(y, config, args, out):
    summary, model = _fit_univariate(y, config, args, out)
    mse = (u_adjusted_mse(y, summary.fitted_values, config.K, config.U)
           if config.U < config.K else float("nan"))
    return (config.U, summary.kplus_mode, summary.n_clusters_point, mse, sd_ccp(summary.coclustering))


def cmd_sensitivity(args, argv):
    if not 1 <= args.U_min <= args.U_max:
        raise UsageError("need 1 <= --U-min <= --U-max")
    y = io.read_univariate_csv(args.data)
    out = _prep_dir(args.out_dir)
    Us = list(range(args.U_min, args.U_max + 1))

    def work():
        jobs = []
        for U in Us:
            d = _prep_dir(out / f"U{U}")
            jobs.append((y, _univariate_config(args, U), args, d))
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as ex:
                rows = list(ex.map(_sensitivity_one, *zip(*jobs)))
        else:
            rows = [_sensitivity_one(*j) for j in jobs]
        io.write_csv(out / "sensitivity.csv", ["U", "kplus_mode", "n_clusters", "mse", "sd_ccp"], rows)
        return {}, {}

    _with_manifest(args, argv, out, work)


def compute_run_metrics(run_dir, truth=None, kplus_true=None):
    """MetricsReport for a run directory; truth-dependent entries are omitted without truth."""
    run = Path(run_dir)
    manifest = io.read_json(run / "manifest.json")
    K, U = manifest["extra"]["K"], manifest["extra"]["U"]
    pmf = np.array([r[1] for r in _csv_rows(run / "kplus_posterior.csv")])
    _, cc = io.read_matrix_csv(run / "coclustering.csv")
    point = np.array([int(r[1]) for r in _csv_rows(run / "partition.csv")])
    fitted = np.array(_csv_rows(run / "fitted.csv"))
    rep = MetricsReport(sd_ccp=sd_ccp(cc), kplus_mode=posterior_mode(pmf),
                        n_clusters_point=int(point.max()))
    if U < K:
        rep.mse = u_adjusted_mse(fitted[:, -2], fitted[:, -1], K, U)
    if truth is not None:
        if truth.size != point.size:
            raise DataError(f"truth has {truth.size} labels, run has {point.size} units")
        rep.ccprob_error = ccprob_error(cc, truth)
        rep.ari = ari(point, truth)
        if kplus_true is None:
            kplus_true = int(np.unique(truth).size)
    if kplus_true is not None:
        rep.pwss = pwss(pmf, kplus_true)
        rep.mode_bias = mode_bias(pmf, kplus_true)
    return rep


def _csv_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))[1:]
    try:
        return [[float(v) for v in r] for r in rows]
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e


def cmd_metrics(args, argv):
    truth = io.read_truth_csv(args.truth) if args.truth else None
    rep = compute_run_metrics(args.run_dir, truth, args.kplus_true)
    io.write_json(Path(args.out) if args.out else Path(args.run_dir) / "metrics.json", rep.to_dict())


def cmd_rerun(args, argv):
    m = io.read_json(args.manifest)
    old = list(m["argv"])
    if args.out_dir:
        if "--out-dir" in old:
            old[old.index("--out-dir") + 1] = args.out_dir
        elif "--out" in old:
            i = old.index("--out") + 1
            old[i] = str(Path(args.out_dir) / Path(old[i]).name)
    return main(old)


COMMANDS = {
    "induced-prior": cmd_induced_prior, "calibrate": cmd_calibrate, "simulate": cmd_simulate,
    "fit": cmd_fit, "fit-functional": cmd_fit_functional, "sensitivity": cmd_sensitivity,
    "metrics": cmd_metrics, "rerun": cmd_rerun,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"afmm: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:     # argparse already printed the message
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = COMMANDS[args.command](args, argv)
        return int(rc or 0)
    except UsageError as e:
        print(f"afmm: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as e:
        print(f"afmm: invalid argument: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"afmm: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, CalibrationError) as e:
        print(f"afmm: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
