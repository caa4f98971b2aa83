"""Command-line driver: ``wrgm simulate | fit | evaluate | distance``.

Errors are reported on stderr as a single ``E_CODE: message`` line with a
nonzero exit status.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .config import build_run_config, load_config_file
from .datagen import build_sim_scenario, load_csv, parse_filter, sample_mixture
from .errors import ArgumentError, ConfigError, DataError, WrgmError
from .evaluation import (
    DensityGrid,
    default_grid_axes,
    evaluate,
    finite_summary,
    posterior_mean_density,
)
from .gaussian import GaussianComponent, bures_squared, hellinger_squared, w2_squared
from .rng import RngStream
from .sampler import run_chain

log = logging.getLogger("wrgm")

MAX_GRID_POINTS = 2_000_000


def _floats(text, what):
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError:
        raise ArgumentError(f"malformed {what}: {text!r}") from None


def _matrix(text, p, what):
    vals = _floats(text, what)
    if len(vals) == p * p:
        m = np.array(vals).reshape(p, p)
    elif len(vals) == p * (p + 1) // 2:
        m = io.from_lower_tri(vals, p)
    else:
        raise ArgumentError(f"{what} needs {p * p} (full) or {p * (p + 1) // 2} "
                            f"(lower-triangular) entries, got {len(vals)}")
    return m


def _read_data(path, columns=None, filt=None):
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        header = [h.strip() for h in fh.readline().split(",")]
    label_col = "label" if "label" in header and (columns is None or "label" not in columns) \
        else None
    return load_csv(path, columns=columns, filter=filt, label_column=label_col)


# --- simulate ---------------------------------------------------------------

def cmd_simulate(args):
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scen_rng, data_rng = RngStream(args.seed).split(2)
    mix = build_sim_scenario(args.ks, scen_rng)
    ds = sample_mixture(mix, args.n, data_rng)
    header = [f"y{j + 1}" for j in range(ds.p)] + ["label"]
    rows = [list(map(float, pt)) + [int(lab)] for pt, lab in zip(ds.points, ds.labels)]
    data_path = out / f"{args.prefix}data.csv"
    io.write_csv(data_path, header, rows)
    truth = mix.to_dict()
    truth.update({"seed": args.seed, "n": args.n, "ks": args.ks})
    io.write_json(out / f"{args.prefix}truth.json", truth)
    print(f"wrote {data_path} ({ds.n} rows) and {out / (args.prefix + 'truth.json')} "
          f"({len(mix.components)} components)")
    return 0


# --- fit --------------------------------------------------------------------

_FLAG_FIELDS = {
    "model": "model", "covariance": "covariance", "seed": "seed",
    "n_iter": "n_iter", "burn_in": "burn_in", "thinning": "thinning",
    "g0": "g0", "beta": "dirichlet_beta", "tau": "mean_scale", "nu": "iw_dof",
    "lambda_": "poisson_lambda", "eig_lo": "eig_lo", "eig_hi": "eig_hi",
    "n_aux": "n_aux", "zk_draws": "zk_draws", "chains": "chains",
    "output_dir": "output_dir", "data": "data", "init": "init",
    "init_clusters": "init_clusters", "repulsion_kind": "repulsion_kind",
}


def _run_one(payload):
    points, cfg_dict, seq = payload
    run = build_run_config(cfg_dict)
    return run_chain(points, run.sampler, RngStream(seq))


def cmd_fit(args):
    file_cfg = load_config_file(args.config) if args.config else {}
    overrides = {field: getattr(args, attr, None) for attr, field in _FLAG_FIELDS.items()}
    run = build_run_config(file_cfg, overrides)
    if run.data is None:
        raise ConfigError("no input data (use --data or the config 'data' key)", field="data")
    filt = parse_filter(args.filter) if args.filter else None
    columns = args.columns.split(",") if args.columns else None
    ds = _read_data(run.data, columns, filt)
    run.prior.check_dim(ds.p)
    out = Path(run.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    seqs = [s._seq for s in RngStream(run.sampler.seed).split(run.chains)]
    cfg_dict = run.to_dict()
    payloads = [(ds.points, cfg_dict, q) for q in seqs]
    if run.chains == 1:
        chains = [_run_one(payloads[0])]
    else:
        with ProcessPoolExecutor(max_workers=min(run.chains, os.cpu_count() or 1)) as ex:
            chains = list(ex.map(_run_one, payloads))

    for idx, chain in enumerate(chains):
        suffix = "" if run.chains == 1 else f"_{idx}"
        chain_path = out / f"chain{suffix}.jsonl"
        io.write_chain(chain_path, chain)
        meta = dict(chain.meta)
        meta["run_config"] = cfg_dict
        meta["chain_index"] = idx
        meta["data_source"] = ds.source
        io.write_meta(out / f"meta{suffix}.json", meta)
        print(f"wrote {chain_path} ({len(chain)} samples)")
    return 0


# --- evaluate ---------------------------------------------------------------

def _grid_axes(points, resolution):
    p = points.shape[1]
    res = resolution
    while res**p > MAX_GRID_POINTS and res > 2:
        res -= 1
    return default_grid_axes(points, res)


def cmd_evaluate(args):
    chain = io.read_chain(args.chain)
    filt = parse_filter(args.filter) if args.filter else None
    columns = args.columns.split(",") if args.columns else None
    ds = _read_data(args.data, columns, filt)
    if len(chain) == 0:
        raise DataError(f"{args.chain}: chain has no samples")
    p_chain = chain.samples[0].means.shape[1]
    if p_chain != ds.p:
        raise DataError(f"chain dimension {p_chain} does not match data dimension {ds.p}")
    if any(s.assignments.shape[0] != ds.n for s in chain.samples):
        raise DataError(f"chain assignments do not match the {ds.n} data rows")
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    report = evaluate(chain, ds)
    grid = posterior_mean_density(chain, _grid_axes(ds.points, args.grid_resolution))
    map_s = chain.samples[report.map_sample_index]

    report_d = {
        "log_cpo": report.log_cpo,
        "map_sample_index": report.map_sample_index,
        "map_sweep": map_s.sweep,
        "map_t": map_s.t,
        "k_posterior": {str(k): v for k, v in report.k_posterior.items()},
        "ari": report.ari,
        "min_mean_dist": finite_summary(report.min_mean_dist),
        "min_w2_dist": finite_summary(report.min_w2_dist),
        "n_samples": len(chain),
        "n_data": ds.n,
    }
    io.write_json(out / "report.json", report_d)
    _write_grid(out / "density_grid.csv", grid)
    io.write_csv(out / "map_assignments.csv",
                 [f"y{j + 1}" for j in range(ds.p)] + ["cluster"],
                 [list(map(float, pt)) + [int(c)] for pt, c in zip(ds.points, map_s.assignments)])
    io.write_csv(out / "min_distances.csv",
                 ["sample", "sweep", "t", "min_mean_dist", "min_w2_dist"],
                 [[j, s.sweep, s.t, float(a), float(b)] for j, (s, a, b) in
                  enumerate(zip(chain.samples, report.min_mean_dist, report.min_w2_dist))])
    print(f"log-CPO {report.log_cpo:.6f}; MAP sample {report.map_sample_index} "
          f"(t={map_s.t}); wrote {out}/report.json")
    return 0


def _write_grid(path, grid: DensityGrid):
    pts = grid.points()
    header = [f"y{j + 1}" for j in range(pts.shape[1])] + ["density"]
    io.write_csv(path, header, [list(map(float, r)) + [float(v)]
                                for r, v in zip(pts, grid.values.ravel())])


# --- distance ---------------------------------------------------------------

def cmd_distance(args):
    ma = np.array(_floats(args.mean_a, "--mean-a"))
    mb = np.array(_floats(args.mean_b, "--mean-b"))
    if ma.shape != mb.shape or ma.size == 0:
        raise ArgumentError(f"means must have equal non-zero length, got {ma.size} and {mb.size}")
    p = ma.size
    a = GaussianComponent(ma, _matrix(args.cov_a, p, "--cov-a"))
    b = GaussianComponent(mb, _matrix(args.cov_b, p, "--cov-b"))
    print(f"W2^2 {w2_squared(a, b):.10g}")
    print(f"Bures^2 {bures_squared(a.cov, b.cov):.10g}")
    print(f"Hellinger^2 {hellinger_squared(a, b):.10g}")
    return 0


# --- parser -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"E_USAGE: {' '.join(message.split())}\n")


def build_parser():
    parser = _Parser(prog="wrgm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("simulate", help="simulate a scenario dataset and its truth")
    sp.add_argument("--ks", type=int, required=True, help="number of random components")
    sp.add_argument("--n", type=int, default=500)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--output-dir", default=".")
    sp.add_argument("--prefix", default="", help="file name prefix")
    sp.set_defaults(func=cmd_simulate)

    fp = sub.add_parser("fit", help="run the Gibbs sampler and write chain files")
    fp.add_argument("--config")
    fp.add_argument("--data")
    fp.add_argument("--columns", help="comma-separated columns to keep")
    fp.add_argument("--filter", help="row filter such as 'CD3>300'")
    fp.add_argument("--seed", type=int)
    fp.add_argument("--model", choices=("wrgm", "rgm", "mfm"))
    fp.add_argument("--covariance", choices=("full", "diagonal"))
    fp.add_argument("--n-iter", type=int)
    fp.add_argument("--burn-in", type=int)
    fp.add_argument("--thinning", type=int)
    fp.add_argument("--g0", type=float)
    fp.add_argument("--beta", type=float)
    fp.add_argument("--tau", type=float)
    fp.add_argument("--nu", type=float)
    fp.add_argument("--lambda", dest="lambda_", type=float)
    fp.add_argument("--eig-lo", type=float)
    fp.add_argument("--eig-hi", type=float)
    fp.add_argument("--n-aux", type=int)
    fp.add_argument("--zk-draws", type=int)
    fp.add_argument("--repulsion-kind", choices=("min", "geometric_mean"))
    fp.add_argument("--init", choices=("single", "kmeans"))
    fp.add_argument("--init-clusters", type=int)
    fp.add_argument("--chains", type=int)
    fp.add_argument("--output-dir")
    fp.set_defaults(func=cmd_fit)

    ep = sub.add_parser("evaluate", help="summarize a chain against its data")
    ep.add_argument("--chain", required=True)
    ep.add_argument("--data", required=True)
    ep.add_argument("--columns")
    ep.add_argument("--filter")
    ep.add_argument("--grid-resolution", type=int, default=128)
    ep.add_argument("--output-dir", default=".")
    ep.set_defaults(func=cmd_evaluate)

    dp = sub.add_parser("distance", help="closed-form distances between two Gaussians")
    dp.add_argument("--mean-a", required=True)
    dp.add_argument("--cov-a", required=True)
    dp.add_argument("--mean-b", required=True)
    dp.add_argument("--cov-b", required=True)
    dp.set_defaults(func=cmd_distance)
    return parser


def _setup_logging():
    level = os.environ.get("WRGM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WrgmError as exc:
        print(f"{exc.code}: {_one_line(exc)}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"E_IO: {_one_line(exc)}", file=sys.stderr)
        return 3


def _one_line(exc):
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
