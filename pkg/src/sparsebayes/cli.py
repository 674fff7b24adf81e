"""Batch command-line front end.

Every command reads its inputs, runs one fit or sampler and writes a JSON
result document (``--output``) plus, where there is one, a plot-ready CSV
trace (``--trace``, default ``<output>.trace.csv``). Documents carry
``schema_version`` and ``status``; only the ``timing`` field depends on the
run, so reruns with the same seed are byte-identical elsewhere.

Exit statuses: 0 success, 2 parse error (bad arguments or malformed input
file), 3 validation error (missing file, out-of-range value), 4 non-convergence
(partial results are still written), 5 internal error. Failures print a JSON
error record on stderr.

The default seed comes from ``SPARSEBAYES_SEED`` (else 0).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import __version__
from . import io as sio
from ._errors import DomainError, NumericalError, ParseError

__all__ = ["Metrics", "build_parser", "main", "metrics", "run"]

SCHEMA_VERSION = 1
SEED_ENV = "SPARSEBAYES_SEED"

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_NOT_CONVERGED, EXIT_INTERNAL = 0, 2, 3, 4, 5


class Metrics(NamedTuple):
    """Test-set errors; ``mape`` is in percent over the points with nonzero truth."""

    mse: float
    mape: float
    excluded: int


def metrics(y_true, y_pred) -> Metrics:
    """Mean squared error and mean absolute percentage error.

    Points with ``y_true == 0`` are left out of the MAPE and counted in
    ``excluded``; if every point is excluded the MAPE is NaN.

    Examples
    --------
    >>> metrics([1.0, 2.0], [2.0, 2.0])
    Metrics(mse=0.5, mape=50.0, excluded=0)
    """
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.size == 0:
        raise DomainError("metrics need at least one point")
    if y_true.shape != y_pred.shape:
        raise DomainError("y_true and y_pred differ in length")
    err = y_pred - y_true
    keep = y_true != 0
    mape = float(np.mean(np.abs(err[keep]) / np.abs(y_true[keep])) * 100) if keep.any() else math.nan
    return Metrics(float(np.mean(err ** 2)), mape, int((~keep).sum()))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _report(EXIT_PARSE, "usage", message)
        self.print_usage(sys.stderr)
        sys.exit(EXIT_PARSE)


class NotConverged(Exception):
    """Raised after partial results are written."""


def _report(code, kind, message, **extra):
    rec = {"schema_version": SCHEMA_VERSION, "status": "error", "exit_code": code,
           "error": {"type": kind, "message": str(message), **extra}}
    print(json.dumps(sio.to_plain(rec), sort_keys=True), file=sys.stderr)


def _default_seed():
    return os.environ.get(SEED_ENV, "0")


def _seed(text):
    try:
        value = int(text)
    except (TypeError, ValueError):
        raise DomainError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise DomainError("seed must be a 64-bit unsigned value")
    return value


def _common(p, trace=True):
    p.add_argument("-o", "--output", required=True, help="result document path (JSON)")
    if trace:
        p.add_argument("--trace", default=None, help="trace CSV path (default: <output>.trace.csv)")
    p.add_argument("--seed", default=None,
                   help=f"random seed, 0 <= seed < 2^64 (default: ${SEED_ENV} or 0)")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults only for options that have one and do not describe it already."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default:" in text or action.default in (None, argparse.SUPPRESS) or not action.option_strings:
            return text
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for all subcommands."""
    fmt = _Formatter
    parser = _Parser(prog="sparsebayes", description=__doc__.split("\n\n")[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("blr", help="Bayesian linear regression", formatter_class=fmt)
    p.add_argument("input", help="CSV: feature columns then a target column (optional header)")
    p.add_argument("--alpha", type=float, default=1.0, help="prior precision of every coefficient")
    p.add_argument("--beta", type=float, default=1.0, help="noise precision")
    p.add_argument("--ard", action="store_true", help="fit per-coefficient precisions and noise by evidence")
    p.add_argument("--holdout", type=int, default=0, help="last N rows are the test set")
    p.add_argument("--tol", type=float, default=1e-8, help="ARD relative evidence tolerance")
    p.add_argument("--max-iters", type=int, default=500, help="ARD iteration cap")
    p.add_argument("--prune-threshold", type=float, default=1e-8, help="ARD variance pruning level")
    _common(p)

    for name, helptext in (("gp-fit", "sparse spectral-mixture GP fit on a time series"),):
        p = sub.add_parser(name, help=helptext, formatter_class=fmt)
        p.add_argument("input", help="time-series CSV with header t,value")
        p.add_argument("--solver", choices=("mm", "admm", "seq"), default="mm",
                       help="mm: majorization-minimization, admm: ADMM, seq: sequential coordinate ascent")
        p.add_argument("--kernel", default=None, help="kernel spec JSON file (overrides --Q/--sigma/--freq-range)")
        p.add_argument("--Q", type=int, default=50, help="number of grid components")
        p.add_argument("--sigma", type=float, default=1e-3, help="component standard deviation in frequency")
        p.add_argument("--freq-range", type=float, nargs=2, default=(0.0, 0.5), metavar=("LO", "HI"),
                       help="grid frequency range [LO, HI)")
        p.add_argument("--holdout", type=int, default=20, help="last N points are the test horizon")
        p.add_argument("--noise-var", type=float, default=None,
                       help="initial noise variance (fixed for seq, required there)")
        p.add_argument("--tol", type=float, default=1e-9, help="relative objective tolerance")
        p.add_argument("--max-iters", type=int, default=None,
                       help="iteration cap (default: 500 for mm, 5000 for admm, 200 sweeps for seq)")
        p.add_argument("--prune-threshold", type=float, default=1e-6, help="relative weight pruning level")
        p.add_argument("--rho-init", type=float, default=1.0, help="ADMM initial penalty")
        _common(p)

    p = sub.add_parser("gp-predict", help="predict with a fitted GP", formatter_class=fmt)
    p.add_argument("--model", required=True, help="result document written by gp-fit")
    p.add_argument("--train", required=True, help="training time series (t,value) used by gp-fit")
    p.add_argument("input", help="query CSV with header t or t,value")
    _common(p, trace=False)

    for name, helptext in (("cpd-fit", "Bayesian CP decomposition with rank pruning"),
                           ("cpd-complete", "tensor completion with Bayesian CP")):
        p = sub.add_parser(name, help=helptext, formatter_class=fmt)
        p.add_argument("input", help="tensor text file (dims line, then 'i1 .. iP value' lines)")
        p.add_argument("--rank", type=int, default=10, help="initial number of columns L")
        p.add_argument("--tol", type=float, default=1e-6, help="relative ELBO tolerance")
        p.add_argument("--max-iters", type=int, default=500, help="sweep cap")
        p.add_argument("--prune-threshold", type=float, default=1e-6, help="column power relative to the mean")
        if name == "cpd-complete":
            p.add_argument("--dense-out", required=True, help="dense completed tensor (same text format)")
            p.add_argument("--var-out", default=None, help="predictive variances (default: <dense-out>.var)")
            p.add_argument("--truth", default=None, help="reference tensor for error metrics on missing entries")
        _common(p)

    p = sub.add_parser("lwta-train", help="train a stochastic LWTA network", formatter_class=fmt)
    p.add_argument("input", help="CSV: feature columns then an integer label column (labels 1..C)")
    p.add_argument("--model-out", required=True, help="trained network file (.npz)")
    p.add_argument("--test", default=None, help="test CSV for accuracy")
    p.add_argument("--classes", type=int, default=None, help="number of classes (default: largest label)")
    p.add_argument("--blocks", type=int, nargs="+", default=[8, 8], help="blocks K per layer")
    p.add_argument("--units", type=int, default=2, help="units J per block")
    p.add_argument("--alpha", type=float, default=None, help="IBP strength (default: K of each layer)")
    p.add_argument("--epochs", type=int, default=300, help="training epochs")
    p.add_argument("--learning-rate", type=float, default=0.01, help="Adam step size")
    p.add_argument("--batch-size", type=int, default=64, help="minibatch size")
    p.add_argument("--tau-gs", type=float, default=0.67, help="Gumbel-softmax temperature")
    p.add_argument("--tau-z", type=float, default=0.5, help="relaxed Bernoulli temperature")
    p.add_argument("--mc-samples", type=int, default=1, help="samples per gradient step")
    _common(p)

    p = sub.add_parser("lwta-prune", help="prune links of a trained LWTA network", formatter_class=fmt)
    p.add_argument("--model", required=True, help="network file written by lwta-train")
    p.add_argument("--model-out", required=True, help="pruned network file")
    p.add_argument("--tau", type=float, default=0.01, help="utility cut-off in (0, 1)")
    p.add_argument("--input", default=None, help="CSV dataset for accuracy before and after pruning")
    p.add_argument("--max-bits", type=int, default=23, help="bit-precision report ceiling")
    _common(p, trace=False)

    p = sub.add_parser("ibp-sample", help="truncated stick-breaking IBP draw", formatter_class=fmt)
    p.add_argument("--alpha", type=float, required=True, help="IBP strength")
    p.add_argument("--rows", type=int, required=True, help="number of rows (customers)")
    p.add_argument("--truncation", type=int, default=100, help="number of dishes kept")
    p.add_argument("--matrix-out", default=None, help="CSV of the binary matrix Z")
    _common(p, trace=False)
    return parser


# -- commands -------------------------------------------------------------------------


def _trace_path(args):
    return args.trace or f"{args.output}.trace.csv"


def _input(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return path


def _split(n, holdout):
    if holdout < 0 or holdout >= n:
        raise DomainError(f"holdout must lie in 0..{n - 1}, got {holdout}")
    return n - holdout


def _metrics_doc(y_true, y_pred):
    m = metrics(y_true, y_pred)
    return {"mse": m.mse, "mape": m.mape, "mape_excluded": m.excluded}


def _cmd_blr(args, doc):
    from .linmodel import LinRegData, LinRegPrior, ard_fit, bic_score, blr_evidence_log, blr_posterior

    X, y, _ = sio.read_table(_input(args.input))
    n_train = _split(len(y), args.holdout)
    data = LinRegData(X[:n_train], y[:n_train])
    converged = True
    if args.ard:
        res = ard_fit(data, max_iters=args.max_iters, tol=args.tol, prune_eps=args.prune_threshold)
        post, beta, converged = res.posterior, res.beta, res.converged
        doc["hyperparameters"] = {"variances": res.variances, "beta": beta}
        doc["active"] = res.active
        doc["trace"] = res.trace
        evidence = res.trace[-1] if res.trace else None
        sio.write_trace(_trace_path(args), {"iteration": list(range(len(res.trace))), "log_evidence": res.trace})
    else:
        prior = LinRegPrior(np.full(X.shape[1], args.alpha))
        beta = args.beta
        post = blr_posterior(data, prior, beta)
        evidence = blr_evidence_log(data, prior, beta)
        doc["hyperparameters"] = {"alpha": args.alpha, "beta": beta}
        doc["active"] = list(range(X.shape[1]))
    resid = data.y - data.X @ post.mean
    loglik = 0.5 * n_train * math.log(beta / (2 * math.pi)) - 0.5 * beta * float(resid @ resid)
    doc["posterior"] = {"mean": post.mean, "variance": np.diag(post.cov)}
    doc["log_evidence"] = evidence
    doc["bic"] = bic_score(loglik, len(doc["active"]), n_train)
    if args.holdout:
        Xt, yt = X[n_train:], y[n_train:]
        mean = Xt @ post.mean
        var = 1.0 / beta + np.einsum("ni,ij,nj->n", Xt, post.cov, Xt)
        doc["predictions"] = {"mean": mean, "variance": var}
        doc["metrics"] = _metrics_doc(yt, mean)
    return converged


def _gp_kernel(args):
    from .kernels import grid_make, kernel_from_json

    if args.kernel:
        with open(_input(args.kernel)) as fh:
            try:
                return kernel_from_json(fh.read())
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, args.kernel, exc.lineno, exc.colno) from None
    return grid_make(args.Q, tuple(args.freq_range), args.sigma)


def _cmd_gp_fit(args, doc):
    from .gpinfer import admm_fit, gamma_fit, gp_predict, mm_fit
    from .kernels import kernel_to_dict, with_weights

    t, y = sio.read_series(_input(args.input))
    n_train = _split(len(y), args.holdout)
    spec = _gp_kernel(args)
    tt, yy = t[:n_train], y[:n_train]
    common = dict(tol=args.tol, eps_w=args.prune_threshold)
    cap = {} if args.max_iters is None else {"max_sweeps" if args.solver == "seq" else "max_iters": args.max_iters}
    if args.solver == "mm":
        fit = mm_fit(tt, yy, spec, noise_var=args.noise_var, **cap, **common)
    elif args.solver == "admm":
        fit = admm_fit(tt, yy, spec, noise_var=args.noise_var, rho_init=args.rho_init, **cap, **common)
    else:
        if args.noise_var is None:
            raise DomainError("the seq solver needs --noise-var")
        fit = gamma_fit(tt, yy, spec, noise_var=args.noise_var, **cap, **common)
    kernel = with_weights(spec, np.where(fit.pruned, 0.0, fit.alpha))
    doc["model"] = {"kernel": kernel_to_dict(kernel), "noise_var": fit.noise_var, "n_train": n_train}
    doc["hyperparameters"] = {"weights": fit.alpha, "noise_var": fit.noise_var}
    doc["active"] = fit.active
    doc["log_evidence"] = fit.evidence
    doc["trace"] = {"objective": fit.trace.objective, "active": fit.trace.active}
    doc["timing"]["solver_seconds"] = fit.trace.wall_time[-1] if fit.trace.wall_time else 0.0
    sio.write_trace(_trace_path(args), {"iteration": list(range(len(fit.trace.objective))),
                                        "objective": fit.trace.objective, "active": fit.trace.active})
    if args.holdout:
        from .gpinfer import GpModel

        post = gp_predict(tt, yy, t[n_train:], GpModel(kernel, fit.noise_var))
        doc["predictions"] = {"t": t[n_train:], "mean": post.mean, "variance": post.var + fit.noise_var}
        doc["metrics"] = _metrics_doc(y[n_train:], post.mean)
    return fit.converged


def _cmd_gp_predict(args, doc):
    from .gpinfer import GpModel, gp_predict
    from .kernels import kernel_from_dict

    try:
        with open(_input(args.model)) as fh:
            model_doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, args.model, exc.lineno, exc.colno) from None
    try:
        m = model_doc["model"]
        kernel = kernel_from_dict(m["kernel"])
        n_train = int(m["n_train"])
        model = GpModel(kernel, m["noise_var"])
    except (KeyError, TypeError) as exc:
        raise DomainError(f"{args.model} is not a gp-fit result document ({exc})") from None
    t, y = sio.read_series(_input(args.train))
    if len(t) < n_train:
        raise DomainError(f"training series has {len(t)} points, the model was fitted on {n_train}")
    tq, yq = sio.read_times(_input(args.input))
    post = gp_predict(t[:n_train], y[:n_train], tq, model)
    doc["predictions"] = {"t": tq, "mean": post.mean, "variance": post.var + model.noise_var}
    if yq is not None:
        doc["metrics"] = _metrics_doc(yq, post.mean)
    return True


def _cpd_opts(args):
    from .cpd import CpdFitOptions

    if args.rank < 1 or args.max_iters < 1 or args.tol <= 0:
        raise DomainError("rank and max-iters must be >= 1 and tol > 0")
    return CpdFitOptions(max_iters=args.max_iters, tol=args.tol, prune_threshold=args.prune_threshold)


def _cpd_doc(doc, model, args):
    doc["rank"] = model.rank
    doc["converged"] = model.converged
    doc["n_sweeps"] = model.n_sweeps
    doc["elbo"] = model.elbo_trace[-1] if model.elbo_trace else None
    doc["hyperparameters"] = {"lambda_mean": model.lam_mean, "beta_mean": model.beta_mean}
    doc["factors"] = model.means
    doc["prune_sweeps"] = model.prune_sweeps
    doc["trace"] = {"elbo": model.elbo_trace}
    sio.write_trace(_trace_path(args), {"sweep": list(range(1, len(model.elbo_trace) + 1)),
                                        "elbo": model.elbo_trace})


def _cmd_cpd_fit(args, doc):
    from .cpd import cpd_fit

    data = sio.read_tensor(_input(args.input))
    model = cpd_fit(data, args.rank, _cpd_opts(args), args.seed)
    _cpd_doc(doc, model, args)
    return model.converged


def _cmd_cpd_complete(args, doc):
    from .cpd import cpd_complete

    data = sio.read_tensor(_input(args.input))
    truth = sio.read_tensor(_input(args.truth)) if args.truth else None
    mean, var, model = cpd_complete(data, args.rank, _cpd_opts(args), args.seed)
    _cpd_doc(doc, model, args)
    var_out = args.var_out or f"{args.dense_out}.var"
    sio.write_dense_tensor(args.dense_out, mean)
    sio.write_dense_tensor(var_out, var)
    doc["completion"] = {"observed": data.n_obs, "entries": int(np.prod(data.dims))}
    if truth is not None:
        if tuple(truth.dims) != tuple(data.dims):
            raise DomainError("truth tensor dims differ from the input")
        ref = truth.dense(np.nan)
        hidden = ~data.mask & truth.mask
        if hidden.any():
            diff = mean[hidden] - ref[hidden]
            doc["metrics"] = {**_metrics_doc(ref[hidden], mean[hidden]),
                              "relative_error": float(np.linalg.norm(diff) / np.linalg.norm(ref[hidden]))}
    return model.converged


def _cmd_lwta_train(args, doc):
    from .lwta import TrainConfig, TrainingDiverged, lwta_accuracy, lwta_init, lwta_train, save_network

    X, labels = sio.read_dataset(_input(args.input))
    test = sio.read_dataset(_input(args.test)) if args.test else None
    C = args.classes or int(labels.max())
    if C < 2:
        raise DomainError("need at least 2 classes")
    cfg = TrainConfig(learning_rate=args.learning_rate, tau_gs=args.tau_gs, tau_z=args.tau_z, epochs=args.epochs,
                      batch_size=args.batch_size, seed=args.seed, mc_samples=args.mc_samples)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed).spawn(2)[1])
    net = lwta_init(X.shape[1], C, blocks=args.blocks, units=args.units, alpha=args.alpha, rng=rng)
    converged = True
    try:
        res = lwta_train(net, X, labels, cfg)
        net, trace = res.net, res.trace
    except TrainingDiverged as exc:
        trace, converged = exc.trace, False
        doc["error"] = str(exc)
    smooth = np.convolve(trace, np.ones(50) / 50, mode="valid") if len(trace) >= 50 else np.asarray(trace)
    doc["trace"] = {"elbo": trace}
    doc["elbo_smoothed_final"] = smooth[-1] if len(smooth) else None
    sio.write_trace(_trace_path(args), {"step": list(range(1, len(trace) + 1)), "elbo": trace})
    if converged:
        save_network(net, args.model_out)
        doc["model_file"] = str(args.model_out)
        eval_rng = np.random.SeedSequence(args.seed).spawn(3)[2]
        doc["metrics"] = {"train_accuracy": lwta_accuracy(net, X, labels, rng=eval_rng)}
        if test is not None:
            doc["metrics"]["test_accuracy"] = lwta_accuracy(net, test[0], test[1], rng=eval_rng)
    return converged


def _cmd_lwta_prune(args, doc):
    from .lwta import load_network, lwta_accuracy, lwta_bit_report, lwta_prune, save_network

    net = load_network(_input(args.model))
    data = sio.read_dataset(_input(args.input)) if args.input else None
    pruned, stats = lwta_prune(net, args.tau)
    save_network(pruned, args.model_out)
    doc["retained_fraction"] = stats
    doc["bit_report"] = [{"histogram": r["histogram"], "mean": r["mean"]}
                         for r in lwta_bit_report(pruned, max_bits=args.max_bits)]
    doc["model_file"] = str(args.model_out)
    if data is not None:
        seed = np.random.SeedSequence(args.seed).spawn(1)[0]
        doc["metrics"] = {"accuracy_before": lwta_accuracy(net, *data, rng=seed),
                          "accuracy_after": lwta_accuracy(pruned, *data, rng=seed)}
    return True


def _cmd_ibp_sample(args, doc):
    from .priors import IbpConfig, ibp_expected_row_sum, ibp_sample, ibp_truncation_bound

    cfg = IbpConfig(args.alpha, args.rows, args.truncation)
    draw = ibp_sample(cfg, args.seed)
    row_sums = draw.Z.sum(axis=1)
    doc["sticks"] = draw.sticks
    doc["probs"] = draw.probs
    doc["row_sum_mean"] = float(row_sums.mean())
    doc["expected_row_sum"] = ibp_expected_row_sum(cfg)
    doc["truncation_bound"] = ibp_truncation_bound(cfg)
    doc["active_dishes"] = int(np.count_nonzero(draw.Z.any(axis=0)))
    if args.matrix_out:
        np.savetxt(args.matrix_out, draw.Z, fmt="%d", delimiter=",")
    return True


_COMMANDS = {
    "blr": _cmd_blr,
    "gp-fit": _cmd_gp_fit,
    "gp-predict": _cmd_gp_predict,
    "cpd-fit": _cmd_cpd_fit,
    "cpd-complete": _cmd_cpd_complete,
    "lwta-train": _cmd_lwta_train,
    "lwta-prune": _cmd_lwta_prune,
    "ibp-sample": _cmd_ibp_sample,
}

_PATH_ONLY = {"output", "trace", "dense_out", "var_out", "model_out", "matrix_out"}


def run(args) -> int:
    """Execute a parsed command; returns the exit status."""
    args.seed = _seed(_default_seed() if args.seed is None else args.seed)
    t0 = time.perf_counter()
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "config": {k: v for k, v in sorted(vars(args).items()) if k not in _PATH_ONLY},
        "timing": {},
    }
    converged = _COMMANDS[args.command](args, doc)
    doc["status"] = "ok" if converged else "not_converged"
    doc["timing"]["seconds"] = time.perf_counter() - t0
    sio.write_json(args.output, doc)
    if not converged:
        raise NotConverged(f"{args.command} did not converge; partial results in {args.output}")
    return EXIT_OK


def main(argv=None) -> int:
    """Console entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except ParseError as exc:
        _report(EXIT_PARSE, "parse", exc, path=exc.path, line=exc.line, column=exc.column)
        return EXIT_PARSE
    except (DomainError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        _report(EXIT_VALIDATION, "validation", exc)
        return EXIT_VALIDATION
    except NotConverged as exc:
        _report(EXIT_NOT_CONVERGED, "not_converged", exc)
        return EXIT_NOT_CONVERGED
    except NumericalError as exc:
        _report(EXIT_NOT_CONVERGED, "numerical", exc)
        return EXIT_NOT_CONVERGED
    except Exception as exc:  # noqa: BLE001 - last-resort classification
        _report(EXIT_INTERNAL, "internal", f"{type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
