"""Configuration-driven experiment harness.

One binary, six subcommands, shared flags::

    rpflab <command> [--config PATH] [--seed U64] [--out DIR]
                     [--workers K] [--verbose]

Commands
--------
rpf-check
    Solve the leading eigendata at every configured spectral parameter
    and verify the defining eigen-identities across one cocycle step;
    writes ``rpf_residuals.csv`` and gates each residual against
    ``experiment.residual_tol``.
moments
    Normalized Birkhoff moments over a length grid via the operator-jet
    route, optionally cross-checked by Monte-Carlo bootstrap intervals;
    writes ``moments.csv``.
rates
    Ensemble decay of ``|gamma_{k,n} - gamma_k|`` over independently
    seeded environments; writes ``rates.csv`` and gates the fitted
    log-log slope.
edgeworth
    Expansion-order improvement study: oracle CDF by characteristic-
    function inversion versus Gaussian and order-1..d corrections;
    writes ``edgeworth_distances.csv`` and ``cdf.csv`` (curves at the
    longest block), gates the per-order slope gains.  Lattice
    observables are refused with a diagnostic and exit status 3.
clt-rate
    Sup-distance to the fixed-variance Gaussian over a length grid;
    writes ``clt_rate.csv``, gates slope and fit quality.
decay-check
    Twisted-cocycle norm-decay diagnostic over frequency x length
    grids; writes ``decay.csv`` and reports which frequencies fail to
    drop below ``experiment.decay_threshold``.

Every output file starts with a header echoing the effective
configuration so results are reproducible from their own artifacts;
numeric CSV fields use 17-significant-digit formatting and outputs are
byte-identical for identical configurations on one platform.  A
plain-text ``summary.txt`` with one pass/fail line per invariant is
written next to the CSVs and mirrored to stdout.

Exit status: 0 all gates pass; 1 a gate fails or the model is
degenerate for the requested experiment; 2 configuration, window, or
usage error; 3 the experiment refuses the model (lattice observable).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import (ExperimentConfig, build_env_model, build_operator_spec,
                     build_path, effective_text, parse_config)
from .edgeworth import (build_expansion, cdf_via_characteristic,
                        clt_rate_experiment, expansion_curve, gaussian_curve,
                        order_improvement_experiment, write_cdf_csv,
                        _jets_for_lengths)
from .env import sample_path
from .errors import (ConfigError, OutOfWindowError, RefusalError,
                     RpflabError)
from .moments import (build_moment_report, jet_at_zero,
                      moment_rate_experiment, write_moment_csv)
from .operators import norm_estimate
from .rpf import (gibbs_triplet, reject_small_spectral_gap, solve_triplet,
                  verify_rpf_identities)

__all__ = ["main"]

_COMMANDS = ("rpf-check", "moments", "rates", "edgeworth", "clt-rate",
             "decay-check")

EXIT_OK = 0
EXIT_GATE = 1
EXIT_USAGE = 2
EXIT_REFUSED = 3


def _g(x) -> str:
    """Fixed 17-significant-digit decimal rendering of one number."""
    return f"{float(x):.17g}"


def _header(command: str, cfg: ExperimentConfig) -> str:
    lines = [f"# rpflab {command}"]
    lines += ["# " + line if line else "#"
              for line in effective_text(cfg).splitlines()]
    return "\n".join(lines) + "\n"


def _write_artifact(out_dir: str, name: str, command: str,
                    cfg: ExperimentConfig, body: str) -> str:
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_header(command, cfg))
        fh.write(body)
    return path


def _stamp_artifact(path: str, command: str, cfg: ExperimentConfig) -> None:
    """Prepend the config-echo header to a file written by a CSV helper."""
    with open(path, "r", encoding="ascii") as fh:
        body = fh.read()
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_header(command, cfg))
        fh.write(body)


class _Runner:
    """Shared context for one harness invocation."""

    def __init__(self, command: str, cfg: ExperimentConfig,
                 out_dir: str, workers: int, verbose: bool) -> None:
        self.command = command
        self.cfg = cfg
        self.out_dir = out_dir
        self.workers = workers
        self.verbose = verbose
        self.lines: list[str] = []
        self.failed = False

    def log(self, message: str) -> None:
        if self.verbose:
            print(f"[rpflab {self.command}] {message}", file=sys.stderr)

    def info(self, message: str) -> None:
        self.lines.append(f"INFO {message}")

    def gate(self, ok: bool, message: str) -> None:
        self.lines.append(("PASS " if ok else "FAIL ") + message)
        if not ok:
            self.failed = True

    def numeric(self, key: str):
        return self.cfg.get("numeric", key)

    def experiment(self, key: str):
        return self.cfg.get("experiment", key)

    def write(self, name: str, body: str) -> None:
        _write_artifact(self.out_dir, name, self.command, self.cfg, body)

    def pmap(self, fn, items):
        """Map preserving input order, parallel over the worker pool."""
        items = list(items)
        if self.workers <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))

    def finish(self) -> int:
        body = "".join(line + "\n" for line in self.lines)
        self.write("summary.txt", body)
        sys.stdout.write(body)
        return EXIT_GATE if self.failed else EXIT_OK


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _cmd_rpf_check(run: _Runner) -> int:
    cfg = run.cfg
    spec = build_operator_spec(cfg)
    gaps = np.atleast_1d(reject_small_spectral_gap(
        spec, min_gap=run.numeric("min_gap")))
    run.info(f"spectral gaps per symbol: "
             f"{' '.join(_g(v) for v in gaps)} (min_gap "
             f"{_g(run.numeric('min_gap'))})")
    path = build_path(cfg)
    path_next = path.shift(1 if spec.variant == "transfer" else -1)
    depth = run.numeric("depth")
    tol = run.numeric("tol")
    z_values = run.experiment("z_list")

    def solve_one(z):
        run.log(f"solving eigendata at z = {z}")
        first = solve_triplet(path, spec, z, depth=depth, tol=tol)
        second = solve_triplet(path_next, spec, z, depth=depth, tol=tol)
        return verify_rpf_identities(path, spec, first, second)

    residuals = run.pmap(solve_one, z_values)
    rows = ["z_re,z_im,res_h,res_nu,res_norm"]
    tol_gate = run.experiment("residual_tol")
    for z, (res_h, res_nu, res_norm) in zip(z_values, residuals):
        rows.append(",".join([_g(z.real), _g(z.imag), _g(res_h),
                              _g(res_nu), _g(res_norm)]))
        worst = max(res_h, res_nu, res_norm)
        run.gate(worst < tol_gate,
                 f"rpf-identities z = {_g(z.real)}+{_g(z.imag)}i: "
                 f"max residual {_g(worst)} < {_g(tol_gate)}")
    run.write("rpf_residuals.csv", "".join(r + "\n" for r in rows))
    return run.finish()


def _cmd_moments(run: _Runner) -> int:
    cfg = run.cfg
    spec = build_operator_spec(cfg)
    path = build_path(cfg)
    depth = run.numeric("depth")
    tol = run.numeric("tol")
    k_list = run.experiment("k_list")
    n_values = run.experiment("n_grid")
    order = max(max(k_list), run.numeric("jet_order"), 2)
    run.log(f"extracting order-{order} pressure jet")
    jet = jet_at_zero(path, spec, order=order, radius=run.numeric("radius"),
                      points=run.numeric("points"), depth=depth, tol=tol)
    mc_samples = run.experiment("mc_samples")
    gibbs = None
    rngs = [None] * len(k_list)
    if mc_samples > 0:
        gibbs = gibbs_triplet(path, spec, depth=depth, tol=tol)
        children = np.random.SeedSequence(run.experiment("seed")).spawn(
            len(k_list))
        rngs = [np.random.default_rng(c) for c in children]

    def measure(item):
        k, rng = item
        run.log(f"measuring gamma_{{{k},n}} over {len(n_values)} lengths")
        return build_moment_report(path, spec, k, n_values, jet,
                                   mc_samples=mc_samples, rng=rng,
                                   gibbs=gibbs, radius=run.numeric("radius"),
                                   points=run.numeric("points"),
                                   depth=depth, tol=tol)

    reports = run.pmap(measure, zip(k_list, rngs))
    csv_path = os.path.join(run.out_dir, "moments.csv")
    write_moment_csv(reports, csv_path)
    _stamp_artifact(csv_path, run.command, cfg)
    run.info(f"jet extraction discrepancies: pressure "
             f"{_g(jet.pi_errors.max())}, boundary {_g(jet.w_errors.max())}")
    for rep in reports:
        run.info(f"moment k = {rep.k}: gamma_limit {_g(rep.gamma_limit)}, "
                 f"sigma2 {_g(rep.sigma2)}, deviation slope "
                 f"{_g(rep.rate_exponent)}")
        if mc_samples > 0:
            inside = [(lo <= op <= hi) or not np.isfinite(lo)
                      for op, lo, hi in zip(rep.operator_values, rep.mc_lo,
                                            rep.mc_hi)]
            run.gate(all(inside),
                     f"moment k = {rep.k}: operator route inside the "
                     f"Monte-Carlo interval at {sum(inside)}/{len(inside)} "
                     f"lengths")
        else:
            finite = np.isfinite(rep.operator_values).all()
            run.gate(bool(finite),
                     f"moment k = {rep.k}: operator route finite at all "
                     f"{len(rep.n_values)} lengths")
    return run.finish()


def _cmd_rates(run: _Runner) -> int:
    cfg = run.cfg
    spec = build_operator_spec(cfg)
    model = build_env_model(cfg)
    n_paths = run.experiment("paths")
    children = np.random.SeedSequence(run.experiment("seed")).spawn(n_paths)
    seeds = [int(c.generate_state(1)[0]) for c in children]
    run.log(f"sampling {n_paths} environment paths")
    paths = [sample_path(model, seed=s,
                         n_past=run.experiment("n_past"),
                         n_future=run.experiment("n_future"))
             for s in seeds]
    depth = run.numeric("depth")
    tol = run.numeric("tol")
    n_values = run.experiment("n_grid")
    gate = run.experiment("slope_gate")

    rows = ["k,n,median_abs_error,mean_abs_error"]
    for k in run.experiment("k_list"):
        run.log(f"fitting deviation rate for k = {k}")
        rep = moment_rate_experiment(
            paths, spec, k, n_values,
            gamma_limit=run.experiment("gamma_limit"),
            radius=run.numeric("radius"), points=run.numeric("points"),
            depth=depth, tol=tol)
        for i, n in enumerate(rep.n_values):
            rows.append(f"{k},{n},{_g(rep.median_abs[i])},"
                        f"{_g(rep.mean_abs[i])}")
        run.gate(bool(np.isfinite(rep.slope) and rep.slope <= gate),
                 f"moment-deviation rate k = {k}: slope {_g(rep.slope)} "
                 f"<= {_g(gate)} (r^2 {_g(rep.r_squared)}, gamma_limit "
                 f"{_g(rep.gamma_limit)})")
    run.write("rates.csv", "".join(r + "\n" for r in rows))
    return run.finish()


def _cmd_edgeworth(run: _Runner) -> int:
    cfg = run.cfg
    spec = build_operator_spec(cfg)
    path = build_path(cfg)
    depth = run.numeric("depth")
    tol = run.numeric("tol")
    d = run.experiment("d")
    n_values = sorted({int(n) for n in run.experiment("n_grid")})
    run.log(f"order-improvement study d = {d} over n = {n_values}")
    report = order_improvement_experiment(
        path, spec, n_values, d, s_points=run.numeric("s_points"),
        t_max=run.numeric("t_max"), t_nodes=run.numeric("t_nodes"),
        radius=run.numeric("radius"), points=run.numeric("points"),
        depth=depth, tol=tol)

    rows = ["n," + ",".join(
        ["dist_gauss"] + [f"dist_order{k}" for k in range(1, d + 1)])]
    for i, n in enumerate(report.n_values):
        rows.append(f"{int(n)}," + ",".join(
            _g(report.distances[k, i]) for k in range(d + 1)))
    run.write("edgeworth_distances.csv", "".join(r + "\n" for r in rows))

    n_max = n_values[-1]
    run.log(f"rebuilding CDF curves at n = {n_max}")
    jets = _jets_for_lengths(path, spec, [n_max], d + 2,
                             run.numeric("radius"), run.numeric("points"),
                             depth, tol)
    models = [build_expansion(jets[n_max], n_max, k)
              for k in range(1, d + 1)]
    v_ref = build_expansion(jets[n_max], n_max, d).variance
    s_lim = max(8.0 * float(np.sqrt(v_ref)), 4.0)
    s_grid = np.linspace(-s_lim, s_lim, run.numeric("s_points"))
    oracle = cdf_via_characteristic(path, spec, n_max,
                                    run.numeric("t_max"),
                                    run.numeric("t_nodes"),
                                    s_grid=s_grid, depth=depth, tol=tol)
    curves = [("oracle", oracle),
              ("gauss", gaussian_curve(models[0].variance, s_grid))]
    curves += [(f"order{k}", expansion_curve(model, s_grid))
               for k, model in enumerate(models, start=1)]
    csv_path = os.path.join(run.out_dir, "cdf.csv")
    write_cdf_csv(curves, csv_path)
    _stamp_artifact(csv_path, run.command, cfg)

    run.info(f"block variances: {' '.join(_g(v) for v in report.variances)}")
    run.info(f"lattice probe floors: "
             f"{' '.join(_g(v) for v in report.lattice_floor)}")
    for k in range(d + 1):
        name = "gaussian" if k == 0 else f"order-{k}"
        run.info(f"{name} distance slope {_g(report.slopes[k])} "
                 f"(r^2 {_g(report.r_squared[k])})")
    steps = " ".join(_g(s) for s in report.slope_steps)
    run.gate(report.passes,
             f"each expansion order steepens the distance decay "
             f"(slope steps {steps})")
    return run.finish()


def _cmd_clt_rate(run: _Runner) -> int:
    cfg = run.cfg
    spec = build_operator_spec(cfg)
    path = build_path(cfg)
    run.log("measuring CLT sup-distance over the length grid")
    report = clt_rate_experiment(
        path, spec, run.experiment("n_grid"),
        sigma2=run.experiment("sigma2"), s_points=run.numeric("s_points"),
        t_max=run.numeric("t_max"), t_nodes=run.numeric("t_nodes"),
        radius=run.numeric("radius"), points=run.numeric("points"),
        depth=run.numeric("depth"), tol=run.numeric("tol"))
    rows = ["n,distance,envelope_constant"]
    for i, n in enumerate(report.n_values):
        rows.append(f"{int(n)},{_g(report.distances[i])},"
                    f"{_g(report.envelope_constants[i])}")
    run.write("clt_rate.csv", "".join(r + "\n" for r in rows))
    gate = run.experiment("slope_gate")
    run.info(f"limit variance {_g(report.sigma2)}")
    run.gate(bool(np.isfinite(report.slope) and report.slope <= gate),
             f"CLT distance slope {_g(report.slope)} <= {_g(gate)}")
    run.gate(bool(report.r_squared >= 0.9),
             f"log-log fit r^2 {_g(report.r_squared)} >= 0.9")
    return run.finish()


def _cmd_decay_check(run: _Runner) -> int:
    cfg = run.cfg
    spec = build_operator_spec(cfg)
    path = build_path(cfg)
    freqs = [float(t) for t in run.experiment("frequencies")]
    lens = sorted({int(n) for n in run.experiment("lengths")})
    run.log(f"norm sweep over {len(freqs)} frequencies x {len(lens)} lengths")
    estimates = norm_estimate(path, spec, lens, freqs)
    rows = ["t,n,estimate"]
    for i, t in enumerate(freqs):
        for j, n in enumerate(lens):
            rows.append(f"{_g(t)},{n},{_g(estimates[i, j])}")
    run.write("decay.csv", "".join(r + "\n" for r in rows))
    threshold = run.experiment("decay_threshold")
    floors = estimates.min(axis=1)
    for t, floor in zip(freqs, floors):
        run.gate(bool(floor <= threshold),
                 f"twisted norm at t = {_g(t)} decays below "
                 f"{_g(threshold)} (floor {_g(floor)} at n <= {lens[-1]})")
    return run.finish()


_DISPATCH = {
    "rpf-check": _cmd_rpf_check,
    "moments": _cmd_moments,
    "rates": _cmd_rates,
    "edgeworth": _cmd_edgeworth,
    "clt-rate": _cmd_clt_rate,
    "decay-check": _cmd_decay_check,
}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rpflab",
        description="Numerical laboratory for quenched limit theorems of "
                    "random transfer- and Markov-operator cocycles.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{" + ",".join(_COMMANDS) + "}")
    for name in _COMMANDS:
        cmd = sub.add_parser(name, help=f"run the {name} experiment")
        cmd.add_argument("--config", metavar="PATH", default=None,
                         help="sectioned key=value configuration file "
                              "(defaults apply when omitted)")
        cmd.add_argument("--seed", metavar="U64", type=int, default=None,
                         help="override experiment.seed")
        cmd.add_argument("--out", metavar="DIR", default="rpflab-out",
                         help="output directory (default: rpflab-out)")
        cmd.add_argument("--workers", metavar="K", type=int,
                         default=os.cpu_count() or 1,
                         help="worker threads (default: available "
                              "parallelism; results are independent of K)")
        cmd.add_argument("--verbose", action="store_true",
                         help="progress logging on stderr")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.config is None:
            text = ""
        else:
            try:
                with open(args.config, "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config file: {exc}") from None
        cfg = parse_config(text)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(f"--seed must be >= 0, got {args.seed}")
            cfg.experiment["seed"] = args.seed
        if args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
        os.makedirs(args.out, exist_ok=True)
        run = _Runner(args.command, cfg, args.out, args.workers,
                      args.verbose)
        return _DISPATCH[args.command](run)
    except RefusalError as exc:
        print(f"rpflab {args.command}: refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (ConfigError, OutOfWindowError) as exc:
        print(f"rpflab {args.command}: configuration error: {exc}",
              file=sys.stderr)
        return EXIT_USAGE
    except RpflabError as exc:
        print(f"rpflab {args.command}: {exc}", file=sys.stderr)
        return EXIT_GATE


if __name__ == "__main__":  # pragma: no cover - module execution hook
    sys.exit(main())
