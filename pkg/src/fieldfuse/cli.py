"""Command-line entry points for the reconstruction pipeline.

Subcommands: ingest, fit, interpolate, depend, bench.  Every run reads an
optional config file (see configio), applies flag overrides (flags win), and
echoes the resolved configuration.  Exit codes: 0 success, 2 usage or config
error, 3 non-convergence, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

import fieldfuse
from fieldfuse import configio, dependence, ingest, sblue, simbench
from fieldfuse.configio import ConfigError
from fieldfuse.covariance import (
    LowRankCovariance,
    BasisCoefficients,
    VariogramFitError,
    kernel_config_dict,
    kernel_from_config,
    make_anchors,
)
from fieldfuse.lowrank_em import EMConfig, fit_em
from fieldfuse.sblue import FusionAssemblyError, SingularMomentMatrix

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONVERGENCE = 3
EXIT_NUMERICAL = 4

TWEET_SCHEMA = {"text": "text", "user": "user", "lon": "lon", "lat": "lat",
                "time": "time", "retweet": "retweet"}
STATION_SCHEMA = {"station": "station", "lon": "lon", "lat": "lat",
                  "time": "time", "temperature": "temperature"}


def _fmt(x) -> str:
    return f"{float(x):.10g}"


def _echo(section, resolved, stream=None):
    for line in configio.echo_lines(section, resolved):
        print(line, file=stream if stream is not None else sys.stdout)


def _load_points_values(path):
    """Read (lon, lat, t, value) rows from a headered delimited file."""
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {name: i for i, name in enumerate(header)}
        for need in ("lon", "lat", "t", "value"):
            if need not in cols:
                raise ConfigError(f"{path}: missing column {need!r} in {header}")
        pts, vals = [], []
        for row in reader:
            if not row:
                continue
            pts.append([float(row[cols["lon"]]), float(row[cols["lat"]]),
                        float(row[cols["t"]])])
            vals.append(float(row[cols["value"]]))
    return np.asarray(pts, dtype=float), np.asarray(vals, dtype=float)


def _load_binary(path):
    """Read (lon, lat, t, report) rows; report must be 0 or 1."""
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {name: i for i, name in enumerate(header)}
        for need in ("lon", "lat", "t", "report"):
            if need not in cols:
                raise ConfigError(f"{path}: missing column {need!r} in {header}")
        out = []
        for row in reader:
            if not row:
                continue
            r = int(row[cols["report"]])
            if r not in (0, 1):
                raise ConfigError(f"{path}: report values must be 0 or 1, got {r}")
            out.append((ingest.SpaceTimePoint(float(row[cols["lon"]]),
                                              float(row[cols["lat"]]),
                                              float(row[cols["t"]])), r))
    return out


# ---------------------------------------------------------------- ingest


def cmd_ingest(args, config) -> int:
    resolved = configio.resolve(config, "ingest", {
        "tweets": args.tweets, "stations": args.stations,
        "lexicon": args.lexicon, "out_dir": args.out_dir,
    })
    _echo("ingest", resolved)
    for need in ("tweets", "stations", "out_dir"):
        if need not in resolved:
            print(f"error: missing required setting {need!r}", file=sys.stderr)
            return EXIT_USAGE

    lex_path = resolved.get("lexicon")
    if lex_path is not None:
        try:
            lexicon = ingest.Lexicon.from_file(lex_path)
        except OSError:
            print(f"error: cannot read lexicon file {lex_path}", file=sys.stderr)
            return EXIT_USAGE
    else:
        lexicon = ingest.Lexicon.default()

    try:
        with open(resolved["tweets"], encoding="utf-8") as fh:
            tweets, tweet_errors = ingest.parse_tweets(fh, TWEET_SCHEMA)
        with open(resolved["stations"], encoding="utf-8") as fh:
            readings, station_errors = ingest.parse_stations(fh, STATION_SCHEMA)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ingest.SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    kept = [t for t in tweets if not ingest.is_retweet(t)]
    flags = [ingest.match_hot(t, lexicon) for t in kept]
    hot_rate = float(np.mean(flags)) if flags else float("nan")

    if readings:
        model, residuals = ingest.detrend(readings, np.ones((len(readings), 1)))
    else:
        residuals = []

    import os
    os.makedirs(resolved["out_dir"], exist_ok=True)
    cont_path = os.path.join(resolved["out_dir"], "continuous.csv")
    bin_path = os.path.join(resolved["out_dir"], "binary.csv")
    report_path = os.path.join(resolved["out_dir"], "ingest_report.txt")

    with open(cont_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lon", "lat", "t", "value"])
        for r, resid in zip(readings, residuals):
            p = r.where_when
            w.writerow([_fmt(p.lon), _fmt(p.lat), _fmt(p.t), _fmt(resid)])
    with open(bin_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lon", "lat", "t", "report"])
        for t, flag in zip(kept, flags):
            p = t.where_when
            w.writerow([_fmt(p.lon), _fmt(p.lat), _fmt(p.t), flag])

    lines = [
        f"tweets_parsed = {len(tweets)}",
        f"tweets_kept = {len(kept)}",
        f"retweets_dropped = {len(tweets) - len(kept)}",
        f"tweet_row_errors = {len(tweet_errors)}",
        f"hot_count = {int(np.sum(flags)) if flags else 0}",
        f"hot_rate = {hot_rate:.6g}",
        f"station_readings = {len(readings)}",
        f"station_row_errors = {len(station_errors)}",
    ]
    for e in tweet_errors + station_errors:
        lines.append(f"row_error line {e.line_number}: {e.message}")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# ------------------------------------------------------------------- fit


def cmd_fit(args, config) -> int:
    resolved = configio.resolve(config, "fit", {
        "engine": args.engine, "observations": args.observations,
        "out": args.out, "seed": args.seed,
    })
    _echo("fit", resolved)
    engine = resolved.get("engine")
    if engine not in ("kernel", "basis"):
        print(f"error: --engine must be 'kernel' or 'basis', got {engine!r}",
              file=sys.stderr)
        return EXIT_USAGE
    for need in ("observations", "out"):
        if need not in resolved:
            print(f"error: missing required setting {need!r}", file=sys.stderr)
            return EXIT_USAGE
    try:
        pts, vals = _load_points_values(resolved["observations"])
    except (OSError, ValueError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out_path = resolved["out"]
    if engine == "kernel":
        try:
            kernel, nugget = simbench.fit_kernel_engine(
                pts, vals,
                bin_count=int(resolved.get("bin_count", 12)),
                max_lag=float(resolved.get("max_lag", 0.8)),
            )
        except (VariogramFitError, ValueError) as exc:
            print(f"error: kernel fit failed: {exc}", file=sys.stderr)
            return EXIT_CONVERGENCE
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("[params]\nengine = kernel\n")
            for k, v in kernel_config_dict(kernel, nugget).items():
                fh.write(f"{k} = {_fmt(v)}\n")
        print(f"wrote {out_path}")
        return EXIT_OK

    g = int(resolved.get("anchor_grid", 3))
    lo = float(resolved.get("anchor_lo", 0.1))
    hi = float(resolved.get("anchor_hi", 0.9))
    tc = int(resolved.get("temporal_anchors", 1))
    window = (float(resolved.get("window_lo", 0.0)),
              float(resolved.get("window_hi", 0.0)))
    gx = np.linspace(lo, hi, g)
    anchors = [(float(x), float(y)) for y in gx for x in gx]
    layout = make_anchors(anchors, tc, window)
    cfg = EMConfig(
        max_iterations=int(resolved.get("max_iterations", 500)),
        tolerance=float(resolved.get("tolerance", 1e-6)),
        seed=int(resolved.get("seed", 0)),
    )
    res = fit_em(pts, vals, layout, cfg)
    trace_path = out_path + ".trace"
    with open(trace_path, "w", encoding="utf-8") as fh:
        fh.write("iteration,loglik\n")
        for i, ll in enumerate(res.loglik_trace):
            fh.write(f"{i},{_fmt(ll)}\n")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("[params]\nengine = basis\n")
        fh.write(f"anchor_grid = {g}\nanchor_lo = {_fmt(lo)}\n")
        fh.write(f"anchor_hi = {_fmt(hi)}\ntemporal_anchors = {tc}\n")
        fh.write(f"window_lo = {_fmt(window[0])}\nwindow_hi = {_fmt(window[1])}\n")
        fh.write(f"sigma2 = {_fmt(res.coeffs.sigma2)}\n")
        fh.write("b = " + ",".join(_fmt(x) for x in res.coeffs.b) + "\n")
        fh.write(f"iterations = {res.iterations}\n")
        fh.write(f"converged = {res.converged}\n")
    if not res.converged:
        print(f"error: EM did not converge within {cfg.max_iterations} "
              f"iterations; log-likelihood trace at {trace_path}",
              file=sys.stderr)
        return EXIT_CONVERGENCE
    print(f"wrote {out_path}")
    return EXIT_OK


def _load_params(path):
    parser = __import__("configparser").ConfigParser(interpolation=None)
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    return dict(parser.items("params"))


def _rebuild_model(params):
    """Return (cov, default sigma2) from a parameter file mapping."""
    engine = params.get("engine")
    if engine == "kernel":
        kernel, nugget = kernel_from_config(params)
        sigma2 = max(nugget, 1e-9 * max(kernel.sill, 1.0))
        return kernel, sigma2
    if engine == "basis":
        g = int(params["anchor_grid"])
        lo, hi = float(params["anchor_lo"]), float(params["anchor_hi"])
        tc = int(params["temporal_anchors"])
        window = (float(params["window_lo"]), float(params["window_hi"]))
        gx = np.linspace(lo, hi, g)
        anchors = [(float(x), float(y)) for y in gx for x in gx]
        layout = make_anchors(anchors, tc, window)
        b = np.array([float(x) for x in params["b"].split(",")])
        coeffs = BasisCoefficients(b=b, sigma2=float(params["sigma2"]))
        return LowRankCovariance(coeffs, layout), coeffs.sigma2
    raise ConfigError(f"parameter file has unknown engine {engine!r}")


def _parse_grid(spec):
    """'x0:x1:nx,y0:y1:ny,t0:t1:nt' -> (n, 3) grid points."""
    parts = spec.split(",")
    if len(parts) != 3:
        raise ConfigError(f"grid spec needs 3 comma-separated axes, got {spec!r}")
    axes = []
    for part in parts:
        nums = part.split(":")
        if len(nums) == 1:
            axes.append(np.array([float(nums[0])]))
        elif len(nums) == 3:
            axes.append(np.linspace(float(nums[0]), float(nums[1]), int(nums[2])))
        else:
            raise ConfigError(f"axis spec must be 'value' or 'lo:hi:n', got {part!r}")
    gx, gy, gt = axes
    pts = [(x, y, t) for t in gt for y in gy for x in gx]
    return np.asarray(pts, dtype=float)


# ----------------------------------------------------------- interpolate


def cmd_interpolate(args, config) -> int:
    resolved = configio.resolve(config, "interpolate", {
        "params": args.params, "observations": args.observations,
        "binary": args.binary, "out": args.out, "grid": args.grid,
        "with_binary": True if args.with_binary else None,
        "sensor_t": args.sensor_t,
        "moment_mode": args.moment_mode,
    })
    _echo("interpolate", resolved)
    for need in ("params", "observations", "out", "grid"):
        if need not in resolved:
            print(f"error: missing required setting {need!r}", file=sys.stderr)
            return EXIT_USAGE
    with_binary = str(resolved.get("with_binary", "")).lower() in ("1", "true", "yes")
    try:
        params = _load_params(resolved["params"])
        cov, sigma2_default = _rebuild_model(params)
        pts, vals = _load_points_values(resolved["observations"])
        grid = _parse_grid(resolved["grid"])
        binary = []
        if with_binary:
            if "binary" not in resolved:
                print("error: --with-binary requires a binary report file",
                      file=sys.stderr)
                return EXIT_USAGE
            binary = _load_binary(resolved["binary"])
    except (OSError, ValueError, KeyError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    sigma2 = float(resolved.get("sigma2", sigma2_default))
    sensor = sblue.ExceedanceSensorModel(
        T=float(resolved.get("sensor_t", 0.0)),
        p_given_exceed=float(resolved.get("p_exceed", 0.7)),
        p_given_not=float(resolved.get("p_not", 0.1)),
    )
    mode = resolved.get("moment_mode", "marginal")
    continuous = [(ingest.SpaceTimePoint(*row), val)
                  for row, val in zip(pts.tolist(), vals.tolist())]
    obs = sblue.ObservationSet(continuous, binary)
    problem = sblue.FusionProblem(obs, cov, sigma2, sensor,
                                  np.zeros(obs.m), moment_mode=mode)
    try:
        solver = sblue.FusionSolver(problem)
        rows = []
        for x, y, t in grid:
            est = solver.estimate(ingest.SpaceTimePoint(float(x), float(y), float(t)))
            rows.append((x, y, t, est.f_hat, est.mse))
    except (SingularMomentMatrix, FusionAssemblyError, np.linalg.LinAlgError) as exc:
        print(f"error: fusion system failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    with open(resolved["out"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lon", "lat", "t", "f_hat", "mse"])
        for x, y, t, f_hat, mse in rows:
            w.writerow([_fmt(x), _fmt(y), _fmt(t), _fmt(f_hat), _fmt(mse)])
    print(f"wrote {resolved['out']} ({len(rows)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------- depend


def cmd_depend(args, config) -> int:
    resolved = configio.resolve(config, "depend", {
        "input": args.input, "out": args.out,
        "copula": True if args.copula else None,
    })
    _echo("depend", resolved)
    if "input" not in resolved:
        print("error: missing required setting 'input'", file=sys.stderr)
        return EXIT_USAGE
    try:
        data = np.loadtxt(resolved["input"], delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 2:
            raise ValueError(f"need exactly 2 columns, got {data.shape[1]}")
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if len(data) < 100:
        print(f"error: tail dependence percentile sweep needs n >= 100 rows, "
              f"got {len(data)}", file=sys.stderr)
        return EXIT_USAGE

    ps = dependence.pseudo_observations(data)
    corr = dependence.pearson_correlation(data[:, 0], data[:, 1])
    upper = dependence.tail_dependence(ps, "upper")
    lower = dependence.tail_dependence(ps, "lower")

    lines = [f"n = {len(data)}", f"pearson_correlation = {corr:.6f}",
             f"lambda_upper_mean = {upper.mean_lambda:.6f}",
             f"lambda_lower_mean = {lower.mean_lambda:.6f}"]
    for p in sorted(upper.per_percentile):
        lines.append(f"lambda_upper_p{p} = {upper.per_percentile[p]:.6f}")
    for p in sorted(lower.per_percentile):
        lines.append(f"lambda_lower_p{p} = {lower.per_percentile[p]:.6f}")

    want_copula = str(resolved.get("copula", "")).lower() in ("1", "true", "yes")
    if want_copula:
        nb = int(resolved.get("copula_basis", 8))
        penalty = float(resolved.get("copula_penalty", 1.0))
        try:
            est = dependence.fit_spline_copula(ps, n_basis=(nb, nb), penalty=penalty)
        except (ValueError, dependence.CopulaFitError) as exc:
            print(f"error: copula fit failed: {exc}", file=sys.stderr)
            return EXIT_CONVERGENCE
        gu = np.linspace(0.05, 0.95, 10)
        lines.append("copula_density_grid (10x10, u1 fast):")
        for u2 in gu:
            dens = dependence.copula_density_eval(
                est, np.column_stack([gu, np.full(10, u2)]))
            lines.append(",".join(f"{d:.4f}" for d in np.atleast_1d(dens)))

    text = "\n".join(lines) + "\n"
    if "out" in resolved:
        with open(resolved["out"], "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return EXIT_OK


# ----------------------------------------------------------------- bench


def cmd_bench(args, config) -> int:
    resolved = configio.resolve(config, "bench", {
        "table": args.table, "seed": args.seed, "out": args.out,
        "quick": True if args.quick else None,
        "replications": args.replications,
    })
    _echo("bench", resolved)
    table = str(resolved.get("table", ""))
    if table not in ("5", "6", "7"):
        print(f"error: --table must be 5, 6, or 7, got {table!r}", file=sys.stderr)
        return EXIT_USAGE
    quick = str(resolved.get("quick", "")).lower() in ("1", "true", "yes")
    reps = int(resolved.get("replications", 20 if quick else 200))
    cfg = simbench.SimConfig(replications=reps, seed=int(resolved.get("seed", 0)))
    runner = {"5": simbench.run_table5, "6": simbench.run_table6,
              "7": simbench.run_table7}[table]
    report = runner(cfg)
    print(report.summary())

    if "out" in resolved:
        # deterministic block first, labeled timing block last, so output
        # files are byte-identical across runs except below the marker
        lines = [f"# table: {report.table}", f"# seed: {report.seed}",
                 f"# config_hash: {report.config_hash}",
                 "label\tmean_rmse\trmse_std\tn_ok\tn_failed"]
        for r in report.rows:
            lines.append(f"{r.label}\t{r.mean_rmse:.6f}\t{r.rmse_std:.6f}"
                         f"\t{r.n_ok}\t{r.n_failed}")
        for msg in report.failures:
            lines.append(f"# failure: {msg}")
        lines.append("# timing (hardware-dependent, not reproducible)")
        lines.append(f"# environment: {report.environment}")
        for r in report.rows:
            lines.append(f"# {r.label}\tmean_time_s={r.mean_time:.6f}"
                         f"\tfit_s={r.mean_fit_time:.6f}"
                         f"\tpredict_s={r.mean_predict_time:.6f}")
        with open(resolved["out"], "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"wrote {resolved['out']}")
    return EXIT_OK


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fieldfuse",
        description="Field reconstruction from continuous readings and "
                    "binary exceedance reports.",
    )
    parser.add_argument("--version", action="version",
                        version=f"fieldfuse {fieldfuse.__version__} "
                                f"(numpy {np.__version__})")
    parser.add_argument("--config", help="INI-style run configuration file")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap; 1 gives bitwise reproducibility")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize raw tweet/station files")
    p.add_argument("--tweets")
    p.add_argument("--stations")
    p.add_argument("--lexicon")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit a covariance engine")
    p.add_argument("--engine", choices=["kernel", "basis"])
    p.add_argument("--observations")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("interpolate", help="predict the field on a grid")
    p.add_argument("--params")
    p.add_argument("--observations")
    p.add_argument("--binary")
    p.add_argument("--with-binary", dest="with_binary", action="store_true")
    p.add_argument("--grid", help="x0:x1:nx,y0:y1:ny,t0:t1:nt")
    p.add_argument("--sensor-t", dest="sensor_t", type=float)
    p.add_argument("--moment-mode", dest="moment_mode",
                   choices=["marginal", "plug-in"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("depend", help="tail dependence / copula report")
    p.add_argument("--input")
    p.add_argument("--copula", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_depend)

    p = sub.add_parser("bench", help="run the Monte Carlo benchmarks")
    p.add_argument("--table", choices=["5", "6", "7"])
    p.add_argument("--quick", action="store_true",
                   help="reduce to 20 replications for smoke tests")
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help/--version
        return int(exc.code or 0)

    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        import threadpoolctl
        threadpoolctl.threadpool_limits(args.threads)

    config = {}
    if args.config:
        try:
            config = configio.load_config(args.config)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args, config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
