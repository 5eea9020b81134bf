"""Command-line pipeline: validate, derive-qas, simulate, fit, diagnose,
assess, evaluate, report.

One JSON config document describes an analysis (data paths, family spec,
priors, sampler settings, seeds, k grid, n_mc); command-line flags override
individual fields.  Every failure exits nonzero after printing a single
stderr line of the form ``error code=<token>: <text>``; exit status is 2
for validation problems, 3 for an unreliable sampler run, 4 for anything
unexpected.  Reruns with identical inputs, config and seed write
byte-identical CSV files.
"""

import argparse
import csv
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import __version__
from . import diagnostics, econ
from .assess import assess_fit, ppc_replicate, write_assessment_csv
from .data import DataError, load_trial_csv, save_trial_csv
from .model import ModelSpec, build_model
from .qas import SeriesError, derive_outcomes, read_series_csv
from .sampler import SamplerConfig, read_draws_csv, sample, write_draws_csv
from .synth import amputate, default_truth, generate, truth_config
from ._util import fmt_float

__all__ = ["main", "CliError"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SAMPLER = 3
EXIT_INTERNAL = 4


class CliError(Exception):
    """Failure with a machine-parseable token and an exit status."""

    def __init__(self, token, message, code=EXIT_VALIDATION):
        super().__init__(message)
        self.token = token
        self.code = code


def _fail(token, message, code=EXIT_VALIDATION):
    raise CliError(token, message, code)


class _Parser(argparse.ArgumentParser):
    """Routes argument errors through the one-line error contract."""

    def error(self, message):
        raise CliError("args", message)


def _cfg_num(cfg, key, default, caster, minimum=None):
    try:
        v = caster(cfg.get(key, default))
    except (TypeError, ValueError):
        _fail("config", "%r must be a number" % key)
    if minimum is not None and v < minimum:
        _fail("config", "%r must be >= %s" % (key, minimum))
    return v


# -- configuration -----------------------------------------------------------------


def _load_config(args, required):
    if args.config is None:
        if required:
            _fail("config", "this command needs --config <run-config.json>")
        return {}
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as e:
        _fail("config", "cannot read config: %s" % e)
    except json.JSONDecodeError as e:
        _fail("config", "config is not valid JSON: %s" % e)
    if not isinstance(cfg, dict):
        _fail("config", "config root must be a JSON object")
    return cfg


def _resolve_spec(args, cfg):
    """ModelSpec from the --spec flag and the config document."""
    priors = cfg.get("priors", {})
    if not isinstance(priors, dict):
        _fail("config", "'priors' must be an object")
    choice = args.spec if getattr(args, "spec", None) else cfg.get("spec",
                                                                   "original")
    kwargs = dict(priors)
    try:
        if choice == "custom":
            fams = cfg.get("spec")
            if not isinstance(fams, dict):
                _fail("config", "--spec custom needs a 'spec' object in the config")
            kwargs.update(fams)
            return ModelSpec(**kwargs)
        if isinstance(choice, dict):
            kwargs.update(choice)
            return ModelSpec(**kwargs)
        if choice == "original":
            return ModelSpec.original(**kwargs)
        if choice == "alternative":
            return ModelSpec.alternative(**kwargs)
    except (TypeError, ValueError) as e:
        _fail("config", "bad model spec: %s" % e)
    _fail("config", "unknown spec %r (use original, alternative or custom)"
          % (choice,))


def _master_seed(args, cfg):
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(cfg.get("seed", 0))


def _out_dir(args, cfg):
    out = getattr(args, "out", None) or cfg.get("out") or "psweave-out"
    os.makedirs(out, exist_ok=True)
    return out


def _sampler_config(args, cfg, seed):
    s = dict(cfg.get("sampler", {}))
    if not isinstance(s, dict):
        _fail("config", "'sampler' must be an object")
    if getattr(args, "chains", None) is not None:
        s["chains"] = args.chains
    if getattr(args, "iters", None) is not None:
        s["iterations"] = args.iters
    if getattr(args, "warmup", None) is not None:
        s["warmup"] = args.warmup
    # an explicit --seed wins over a seed recorded in the config
    if getattr(args, "seed", None) is not None:
        s["seed"] = int(args.seed)
    else:
        s.setdefault("seed", seed)
    try:
        return SamplerConfig(**s)
    except (TypeError, ValueError) as e:
        _fail("config", "bad sampler settings: %s" % e)


def _data_path(args, cfg, key="data"):
    path = getattr(args, "input", None) or cfg.get(key)
    if not path:
        _fail("config", "no input path: pass one or set %r in the config" % key)
    return path


def _load_dataset(path):
    try:
        return load_trial_csv(path)
    except OSError as e:
        _fail("data", "cannot read %s: %s" % (path, e))
    except DataError as e:
        _fail("data", "%s: %s" % (path, e))


def _draws_path(cfg, out, arm):
    section = cfg.get("draws", {})
    if isinstance(section, dict) and section.get("arm%d" % arm):
        return section["arm%d" % arm]
    return os.path.join(out, "draws_arm%d.csv" % arm)


def _read_draws(path):
    try:
        return read_draws_csv(path)
    except OSError as e:
        _fail("data", "cannot read draws %s: %s (run `fit` first)" % (path, e))
    except ValueError as e:
        _fail("data", "bad draws file %s: %s" % (path, e))


def _k_grid(cfg):
    g = cfg.get("k_grid")
    if g is None:
        return econ.default_k_grid()
    if isinstance(g, dict):
        try:
            start = float(g.get("start", 0.0))
            stop = float(g["stop"])
            step = float(g.get("step", 1000.0))
        except (KeyError, TypeError, ValueError):
            _fail("config", "'k_grid' object needs numeric start/stop/step")
        if step <= 0 or stop <= start:
            _fail("config", "'k_grid' needs step > 0 and stop > start")
        return np.arange(start, stop + step / 2.0, step)
    if isinstance(g, list) and g:
        return np.asarray(g, dtype=float)
    _fail("config", "'k_grid' must be an object or a non-empty list")


def _say(path):
    print("wrote %s" % path)


# -- commands ----------------------------------------------------------------------


def cmd_validate(args):
    cfg = _load_config(args, required=False)
    path = _data_path(args, cfg)
    d = _load_dataset(path)
    print("ok validate: %d records (%d + %d), %d covariates"
          % (len(d.records), len(d.arm_records(1)), len(d.arm_records(2)),
             len(d.records[0].covariates)))
    return EXIT_OK


def cmd_derive_qas(args):
    cfg = _load_config(args, required=False)
    path = _data_path(args, cfg, key="series")
    out = _out_dir(args, cfg)
    time_unit = _cfg_num(cfg, "time_unit", 1.0, float)
    try:
        series_by_id, arm_by_id = read_series_csv(path)
        rows = derive_outcomes(series_by_id, arm_by_id, time_unit)
    except OSError as e:
        _fail("data", "cannot read %s: %s" % (path, e))
    except SeriesError as e:
        _fail("data", "%s: %s" % (path, e))
    dest = os.path.join(out, "qas.csv")
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "arm", "e_pfs", "e_pps"])
        for pid, arm, e_pfs, e_pps in rows:
            writer.writerow([pid, arm, fmt_float(e_pfs), fmt_float(e_pps)])
    _say(dest)
    print("ok derive-qas: %d patients" % len(rows))
    return EXIT_OK


def cmd_simulate(args):
    cfg = _load_config(args, required=False)
    out = _out_dir(args, cfg)
    seed = _master_seed(args, cfg)
    sim = cfg.get("simulate", {})
    if not isinstance(sim, dict):
        _fail("config", "'simulate' must be an object")
    spec = _resolve_spec(args, cfg)
    truth = sim.get("truth", "default")
    if truth == "default":
        truth = default_truth()
    elif isinstance(truth, dict):
        try:
            truth = {int(a): dict(t) for a, t in truth.items()}
        except (TypeError, ValueError):
            _fail("config", "'simulate.truth' must map arms to parameter objects")
    else:
        _fail("config", "'simulate.truth' must be \"default\" or an object")
    n = sim.get("n_per_arm", 150)
    sim_seed = int(sim.get("seed", seed))
    try:
        d = generate(truth, n, seed=sim_seed, spec=spec)
    except (KeyError, ValueError) as e:
        _fail("config", "cannot simulate: %s" % e)

    realized = {}
    missing = sim.get("missing")
    if missing:
        rates = missing.get("rates", {})
        try:
            d, realized = amputate(d, rates, depend=missing.get("depend"),
                                   seed=int(missing.get("seed", sim_seed + 1)))
        except ValueError as e:
            _fail("config", "cannot amputate: %s" % e)

    data_path = os.path.join(out, "trial.csv")
    save_trial_csv(d, data_path)
    _say(data_path)
    truth_path = os.path.join(out, "truth.json")
    doc = truth_config(truth, spec=spec, seed=sim_seed, n_by_arm=n)
    if realized:
        doc["realized_missingness"] = realized
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _say(truth_path)
    print("ok simulate: %d records" % len(d.records))
    return EXIT_OK


def cmd_fit(args):
    cfg = _load_config(args, required=True)
    out = _out_dir(args, cfg)
    seed = _master_seed(args, cfg)
    spec = _resolve_spec(args, cfg)
    d = _load_dataset(_data_path(args, cfg))
    _say(_echo_config(out, cfg, args))
    unreliable = []
    for arm in (1, 2):
        m = build_model(spec, d, arm=arm)
        scfg = _sampler_config(args, cfg, seed)
        scfg = dataclasses.replace(scfg, seed=scfg.seed + (arm - 1))
        chains = sample(m, scfg)
        path = _draws_path(cfg, out, arm)
        write_draws_csv(path, chains)
        _say(path)
        idx_path = os.path.join(out, "params_arm%d.csv" % arm)
        m.index_map_csv(idx_path)
        _say(idx_path)
        print("arm %d: %d chains x %d draws, divergence rate %s"
              % (arm, chains.n_chains, chains.n_draws,
                 fmt_float(chains.divergence_rate)))
        if chains.unreliable:
            unreliable.append(arm)
    if unreliable:
        _fail("sampler-unreliable",
              "arm%s %s exceeded the 10%% divergence threshold; draws were "
              "written for inspection" % ("s" if len(unreliable) > 1 else "",
                                          unreliable), EXIT_SAMPLER)
    print("ok fit")
    return EXIT_OK


def _do_diagnose(args, cfg, out):
    written = []
    for arm in (1, 2):
        chains = _read_draws(_draws_path(cfg, out, arm))
        path = os.path.join(out, "diagnostics_arm%d.csv" % arm)
        diagnostics.write_summary_csv(path, chains)
        written.append(path)
        plot_dir = os.path.join(out, "trace_arm%d" % arm)
        os.makedirs(plot_dir, exist_ok=True)
        written.extend(diagnostics.trace_density_export(chains, plot_dir))
    return written


def cmd_diagnose(args):
    cfg = _load_config(args, required=False)
    out = _out_dir(args, cfg)
    for path in _do_diagnose(args, cfg, out):
        _say(path)
    print("ok diagnose")
    return EXIT_OK


def _do_assess(args, cfg, out):
    spec = _resolve_spec(args, cfg)
    d = _load_dataset(_data_path(args, cfg))
    seed = _master_seed(args, cfg)
    n_rep = _cfg_num(cfg, "n_rep", 200, int, minimum=1)
    written = []
    for arm in (1, 2):
        m = build_model(spec, d, arm=arm)
        chains = _read_draws(_draws_path(cfg, out, arm))
        try:
            fa = assess_fit(m, chains)
        except ValueError as e:
            _fail("data", "draws do not fit the configured model: %s" % e)
        path = os.path.join(out, "assessment_arm%d.csv" % arm)
        write_assessment_csv(path, fa)
        written.append(path)
        ppc_dir = os.path.join(out, "ppc_arm%d" % arm)
        os.makedirs(ppc_dir, exist_ok=True)
        ppc_replicate(m, chains, n_rep, seed=seed + arm, out_dir=ppc_dir)
        for name in sorted(os.listdir(ppc_dir)):
            written.append(os.path.join(ppc_dir, name))
    return written


def cmd_assess(args):
    cfg = _load_config(args, required=True)
    out = _out_dir(args, cfg)
    for path in _do_assess(args, cfg, out):
        _say(path)
    print("ok assess")
    return EXIT_OK


def _do_evaluate(args, cfg, out):
    spec = _resolve_spec(args, cfg)
    d = _load_dataset(_data_path(args, cfg))
    seed = _master_seed(args, cfg)
    n_mc = args.n_mc if getattr(args, "n_mc", None) is not None \
        else _cfg_num(cfg, "n_mc", 1000, int, minimum=1)
    k = args.k if getattr(args, "k", None) is not None \
        else _cfg_num(cfg, "k", econ.DEFAULT_WTP, float)
    grid = _k_grid(cfg)
    arms = []
    for arm in (1, 2):
        m = build_model(spec, d, arm=arm)
        chains = _read_draws(_draws_path(cfg, out, arm))
        if list(chains.names) != list(m.param_names):
            _fail("data", "draws for arm %d do not match the configured model"
                  % arm)
        try:
            arms.append(econ.marginal_means(m, chains, n_mc=n_mc,
                                            seed=seed + arm))
        except ValueError as e:
            _fail("config", "cannot integrate marginal means: %s" % e)
    try:
        summary = econ.summarize(arms[0], arms[1], k=k, k_grid=grid)
    except ValueError as e:
        _fail("data", "cannot summarize increments: %s" % e)
    written = []
    path = os.path.join(out, "econ.csv")
    econ.write_econ_csv(path, summary)
    written.append(path)
    path = os.path.join(out, "cep.svg")
    econ.cep_plot(path, summary.delta_e, summary.delta_c, summary.k,
                  summary.sustainable)
    written.append(path)
    path = os.path.join(out, "ceac.csv")
    econ.write_ceac_csv(path, summary.k_grid, summary.ceac)
    written.append(path)
    path = os.path.join(out, "ceac.svg")
    econ.ceac_plot(path, summary.k_grid, summary.ceac)
    written.append(path)
    icer_txt = "undefined" if math.isnan(summary.icer) \
        else fmt_float(summary.icer)
    print("icer %s, sustainable %s at k=%s"
          % (icer_txt, fmt_float(summary.sustainable), fmt_float(summary.k)))
    return written


def cmd_evaluate(args):
    cfg = _load_config(args, required=True)
    out = _out_dir(args, cfg)
    for path in _do_evaluate(args, cfg, out):
        _say(path)
    print("ok evaluate")
    return EXIT_OK


def _echo_config(out, cfg, args):
    """Reproducibility echo: the resolved config next to the outputs."""
    echo = dict(cfg)
    for key in ("seed", "chains", "iters", "warmup", "k", "n_mc", "spec"):
        v = getattr(args, key, None)
        if v is not None:
            echo["flag_%s" % key] = v
    path = os.path.join(out, "run_config.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def cmd_report(args):
    cfg = _load_config(args, required=True)
    out = _out_dir(args, cfg)
    written = [(_echo_config(out, cfg, args), "config")]
    for arm in (1, 2):
        p = _draws_path(cfg, out, arm)
        if os.path.exists(p):
            written.append((p, "draws"))
    written += [(p, "diagnostics") for p in _do_diagnose(args, cfg, out)]
    written += [(p, "assessment") for p in _do_assess(args, cfg, out)]
    written += [(p, "economics") for p in _do_evaluate(args, cfg, out)]
    index = os.path.join(out, "index.csv")
    with open(index, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "kind"])
        for path, kind in written:
            writer.writerow([os.path.relpath(path, out), kind])
    _say(index)
    print("ok report: %d files" % (len(written) + 1))
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run-config JSON document")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--out", help="output directory")
    common.add_argument("--chains", type=int, help="number of chains")
    common.add_argument("--iters", type=int, help="iterations per chain")
    common.add_argument("--warmup", type=int, help="warmup iterations")
    common.add_argument("--k", type=float, help="willingness-to-pay threshold")
    common.add_argument("--n-mc", dest="n_mc", type=int,
                        help="Monte Carlo draws per posterior draw")
    common.add_argument("--spec", choices=("original", "alternative", "custom"),
                        help="family combination to fit")

    ap = _Parser(
        prog="psweave",
        description="Partitioned-survival cost-utility analysis pipeline")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("validate", parents=[common],
                       help="check a trial CSV against the data contract")
    p.add_argument("input", nargs="?", help="trial CSV (default: config data)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("derive-qas", parents=[common],
                       help="quality-adjusted survival from utility series")
    p.add_argument("input", nargs="?",
                   help="utility series CSV (default: config series)")
    p.set_defaults(func=cmd_derive_qas)

    p = sub.add_parser("simulate", parents=[common],
                       help="generate a synthetic trial (optionally with "
                            "missingness)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common],
                       help="sample the posterior of both arm models")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", parents=[common],
                       help="convergence summaries and trace/density plots")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("assess", parents=[common],
                       help="WAIC/LOOIC table and posterior predictive checks")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("evaluate", parents=[common],
                       help="marginal means, increments, ICER, CEP, CEAC")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common],
                       help="diagnose + assess + evaluate with a file index")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            # --help/--version exit via argparse actions
            return EXIT_OK if e.code == 0 else EXIT_VALIDATION
        return args.func(args)
    except CliError as e:
        print("error code=%s: %s" % (e.token, e), file=sys.stderr)
        return e.code
    except (KeyboardInterrupt, BrokenPipeError):
        return EXIT_INTERNAL
    except Exception as e:  # pragma: no cover - defensive catch-all
        print("error code=internal: %s: %s" % (type(e).__name__, e),
              file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
