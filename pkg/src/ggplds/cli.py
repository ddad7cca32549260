"""Command-line pipelines: simulate, train, forecast, decompose, report.

Every command is deterministic given its inputs and --seed. Exit codes:
0 success, 1 runtime or numeric failure, 2 usage error. GGPLDS_OUT, when
set, provides the default output location.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import datasets, forecast as fc, prior
from .errors import ChainAborted, ModeError, ParseError, SchemaError, SingularMatrixError
from .gibbs import progress_record, run_chain
from .persist import load_posterior, save_posterior
from .samplers import RngStream
from .state import GAUSSIAN, NEGATIVE_BINOMIAL, Hyperparameters, TimeSeriesData


class UsageError(Exception):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _out_or_env(args, parser, flag="--out"):
    if args.out is not None:
        return args.out
    env = os.environ.get("GGPLDS_OUT")
    if env:
        return env
    parser.error(f"{flag} is required (or set GGPLDS_OUT)")


def cmd_simulate(args, parser):
    out_dir = _out_or_env(args, parser)
    os.makedirs(out_dir, exist_ok=True)
    rng = RngStream(args.seed)

    if args.system == "lorenz":
        # wide init box + small step keep the damped transient alive across
        # the whole emitted window, so the series visits both spirals
        x_init = rng.gen.uniform(-48.0, 48.0, size=3)
        latent = datasets.lorenz_generate(
            x_init=x_init, T=args.t, dt=args.dt, discard=args.discard
        )
        labels = ["x1", "x2", "x3"]
    else:
        v0, w0 = rng.gen.uniform(-2.0, 2.0, size=2)
        latent = datasets.fhn_generate(
            v_init=v0, w_init=w0, T=args.t, dt=args.dt, discard=args.discard
        )
        labels = ["v", "w"]

    precision = np.inf if args.noise_std == 0 else 1.0 / args.noise_std**2
    Y, D_true = datasets.project_observations(latent, args.obs_dim, precision, rng)

    datasets.save_csv(
        TimeSeriesData(Y=Y, dimension_labels=[f"y{v}" for v in range(args.obs_dim)]),
        os.path.join(out_dir, "observations.csv"),
    )
    datasets.save_csv(
        TimeSeriesData(Y=latent, dimension_labels=labels),
        os.path.join(out_dir, "latent.csv"),
    )
    np.savetxt(os.path.join(out_dir, "d_true.csv"), D_true, delimiter=",", fmt="%.17g")
    print(f"wrote observations.csv, latent.csv, d_true.csv to {out_dir}")
    return 0


def _chain_worker(payload):
    data, hyper, chain_id = payload
    records = []

    def progress(rec):
        rec = dict(rec)
        rec["chain"] = chain_id
        records.append(rec)

    samples = run_chain(data, hyper, RngStream(hyper.seed, chain_id), progress=progress)
    return samples, records


def cmd_train(args, parser):
    out_path = _out_or_env(args, parser)
    kind = GAUSSIAN if args.model == "lds" else NEGATIVE_BINOMIAL
    try:
        data = datasets.load_csv(args.data, kind="count" if kind == NEGATIVE_BINOMIAL else "real")
    except ParseError as exc:
        raise ParseError(f"data not usable for model {args.model}: {exc}") from exc
    if kind == GAUSSIAN and np.all(data.Y == np.round(data.Y)) and np.all(data.Y >= 0):
        print("warning: data look like counts; continuing with the Gaussian model",
              file=sys.stderr)

    try:
        hyper = Hyperparameters(
            V=data.Y.shape[0], K=args.k, S=args.s,
            iters=args.iters, burnin=args.burnin, thin=args.thin,
            seed=args.seed, observation_kind=kind,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    payloads = [(data, hyper, c) for c in range(args.chains)]
    if args.chains == 1:
        results = [_chain_worker(payloads[0])]
    else:
        with ProcessPoolExecutor(max_workers=args.chains) as pool:
            results = list(pool.map(_chain_worker, payloads))

    chains = [samples for samples, _ in results]
    save_posterior(out_path, hyper, data.Y.shape[1], chains)
    with open(out_path + ".log", "w", encoding="utf-8") as fh:
        for _, records in results:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    total = sum(len(c) for c in chains)
    print(f"wrote {total} samples ({args.chains} chain(s)) to {out_path}")
    return 0


def _band_csv(path, per_sample, labels):
    ens = fc.EnsembleForecast(
        mean=per_sample.mean(axis=0),
        lo=np.quantile(per_sample, 0.025, axis=0, method="lower"),
        hi=np.quantile(per_sample, 0.975, axis=0, method="higher"),
        per_sample=per_sample,
    )
    fc.write_prediction_csv(path, ens, labels)
    return ens


def cmd_forecast(args, parser):
    out_dir = _out_or_env(args, parser)
    os.makedirs(out_dir, exist_ok=True)
    doc = load_posterior(args.posterior)
    samples = doc.pooled_samples(chain=args.chain)
    count_model = doc.kind == NEGATIVE_BINOMIAL

    truth = None
    if args.truth:
        truth = datasets.load_csv(args.truth, kind="count" if count_model else "real")
        if truth.Y.shape[1] < args.horizon:
            raise ValueError(
                f"truth has {truth.Y.shape[1]} steps, fewer than horizon {args.horizon}"
            )

    if args.mode == "rollout":
        per = np.stack([fc.rollout_forecast(s, args.horizon)[0] for s in samples])
    else:
        if count_model:
            raise ModeError("filter mode requires a Gaussian-model posterior")
        if truth is None:
            raise UsageError("--mode filter needs --truth to reveal observations step by step")
        per = np.stack(
            [fc.one_step_at_a_time([s], truth.Y[:, : args.horizon]) for s in samples]
        )

    labels = truth.dimension_labels if truth is not None else None
    ens = _band_csv(os.path.join(out_dir, "predictions.csv"), per, labels)
    datasets.save_csv(
        TimeSeriesData(Y=ens.mean, dimension_labels=labels),
        os.path.join(out_dir, "point_forecast.csv"),
    )
    written = ["predictions.csv", "point_forecast.csv"]

    if truth is not None:
        y_true = truth.Y[:, : args.horizon]
        if count_model:
            name, values = "mare", fc.mare(y_true, ens.mean)
        else:
            name, values = "mae", fc.mae(y_true, ens.mean)
        fc.write_metrics_csv(os.path.join(out_dir, "metrics.csv"), name, values)
        written.append("metrics.csv")
    print(f"wrote {', '.join(written)} to {out_dir}")
    return 0


def cmd_decompose(args, parser):
    out_dir = _out_or_env(args, parser)
    os.makedirs(out_dir, exist_ok=True)
    doc = load_posterior(args.posterior)
    samples = doc.pooled_samples(chain=args.chain)
    if args.sample == "last":
        index = len(samples) - 1
    else:
        index = int(args.sample)
    if index < 0 or index >= len(samples):
        raise IndexError(f"sample index {index} out of range (have {len(samples)})")
    sample = samples[index]

    order = prior.export_community_grids(sample, out_dir, top=args.top)
    top = min(args.top, len(order.community_order))
    A = prior.community_strength(sample.ggp)
    x_hat, y_hat = prior.decompose(sample.traj, sample.trans, sample.obs, A)

    observed = datasets.load_csv(args.data, kind="count" if doc.kind == NEGATIVE_BINOMIAL else "real") if args.data else None
    labels = (observed.dimension_labels if observed is not None
              else [f"y{v}" for v in range(y_hat.shape[1])])

    top_ks = order.community_order[:top]
    for rank, k in enumerate(top_ks, start=1):
        datasets.save_csv(
            TimeSeriesData(Y=y_hat[k], dimension_labels=labels),
            os.path.join(out_dir, f"subsequence_{rank}.csv"),
        )

    if doc.kind == NEGATIVE_BINOMIAL:
        superposition = sample.obs.nb_dispersion * np.exp(
            (sample.obs.D @ x_hat[top_ks].sum(axis=0))
        )
    else:
        superposition = y_hat[top_ks].sum(axis=0)

    sup_labels = [f"{lab}_fit" for lab in labels]
    sup = superposition
    if observed is not None:
        sup = np.vstack([superposition, observed.Y])
        sup_labels = sup_labels + [f"{lab}_observed" for lab in labels]
    datasets.save_csv(
        TimeSeriesData(Y=sup, dimension_labels=sup_labels),
        os.path.join(out_dir, "superposition.csv"),
    )
    print(f"wrote community grids and {top} sub-sequences to {out_dir}")
    return 0


def _load_prediction_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
    if first.startswith("horizon,dimension,point"):
        rows = {}
        labels = []
        import csv as _csv

        with open(path, "r", encoding="utf-8", newline="") as fh:
            for rec in _csv.DictReader(fh):
                h = int(rec["horizon"])
                rows.setdefault(h, {})[rec["dimension"]] = float(rec["point"])
                if rec["dimension"] not in labels:
                    labels.append(rec["dimension"])
        H = max(rows)
        Y = np.array([[rows[h][lab] for h in range(1, H + 1)] for lab in labels])
        return Y
    return datasets.load_csv(path).Y


def cmd_report(args, parser):
    pred = _load_prediction_file(args.pred)
    truth = datasets.load_csv(args.truth).Y
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if args.metric == "mare":
        if np.any(truth != np.round(truth)):
            print("warning: mare on non-integer truth; formula applied anyway",
                  file=sys.stderr)
        values = fc.mare(truth, pred)
    else:
        values = fc.mae(truth, pred)
    print("horizon,metric,value")
    for h, v in enumerate(values, start=1):
        print(f"{h},{args.metric},{v:.6g}")
    if args.out:
        fc.write_metrics_csv(args.out, args.metric, values)
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ggplds",
        description="Graph-gamma-process dynamical systems: simulate, train, forecast, decompose, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic benchmark dataset")
    p_sim.add_argument("system", choices=["lorenz", "fhn"])
    p_sim.add_argument("--t", type=_positive_int, default=None)
    p_sim.add_argument("--dt", type=float, default=None)
    p_sim.add_argument("--obs-dim", type=_positive_int, default=None)
    p_sim.add_argument("--noise-std", type=float, default=0.1)
    p_sim.add_argument("--discard", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_train = sub.add_parser("train", help="run Gibbs chains on a CSV series")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--model", choices=["lds", "nbds"], default="lds")
    p_train.add_argument("--k", type=_positive_int, default=16)
    p_train.add_argument("--s", type=_positive_int, default=30)
    p_train.add_argument("--iters", type=_positive_int, default=6000)
    p_train.add_argument("--burnin", type=int, default=3000)
    p_train.add_argument("--thin", type=_positive_int, default=60)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--chains", type=_positive_int, default=1)
    p_train.add_argument("--out", default=None)
    p_train.set_defaults(func=cmd_train)

    p_fc = sub.add_parser("forecast", help="multi-horizon prediction from a posterior")
    p_fc.add_argument("--posterior", required=True)
    p_fc.add_argument("--horizon", type=_positive_int, default=10)
    p_fc.add_argument("--mode", choices=["rollout", "filter"], default="rollout")
    p_fc.add_argument("--truth", default=None)
    p_fc.add_argument("--chain", type=int, default=None)
    p_fc.add_argument("--out", default=None)
    p_fc.set_defaults(func=cmd_forecast)

    p_dec = sub.add_parser("decompose", help="community grids and sub-sequences")
    p_dec.add_argument("--posterior", required=True)
    p_dec.add_argument("--sample", default="last")
    p_dec.add_argument("--top", type=_positive_int, default=4)
    p_dec.add_argument("--chain", type=int, default=None)
    p_dec.add_argument("--data", default=None)
    p_dec.add_argument("--out", default=None)
    p_dec.set_defaults(func=cmd_decompose)

    p_rep = sub.add_parser("report", help="per-horizon error table")
    p_rep.add_argument("--pred", required=True)
    p_rep.add_argument("--truth", required=True)
    p_rep.add_argument("--metric", choices=["mae", "mare"], default="mae")
    p_rep.add_argument("--out", default=None)
    p_rep.set_defaults(func=cmd_report)

    return parser


_SIM_DEFAULTS = {
    "lorenz": dict(t=578, dt=0.0107, obs_dim=10, discard=0),
    "fhn": dict(t=800, dt=0.1, obs_dim=2, discard=0),
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "simulate":
        for name, value in _SIM_DEFAULTS[args.system].items():
            if getattr(args, name) is None:
                setattr(args, name, value)
    try:
        return args.func(args, parser)
    except SystemExit as exc:  # parser.error inside a command
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, SchemaError, ModeError, SingularMatrixError, ChainAborted,
            ValueError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
