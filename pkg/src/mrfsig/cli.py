"""Command line entry point: ``mrfsig {binarize,discover,classify,fitcheck}``.

Exit codes: 0 success, 1 runtime or numerical failure, 2 input or usage error.
"""
import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import pipeline
from .discriminate import evaluate_loo
from .errors import DomainError, MRFError
from .fit_quality import quality_of_fit
from .gibbs_core import AutologisticModel
from .mple import MpleConfig, fit_dataset
from .spectra_io import binarize_all, build_grid, read_matrix_csv, read_peaks_jsonl, restrict, write_matrix_csv

logger = logging.getLogger("mrfsig")

DEFAULTS = {
    "rho": 0.003,
    "b1": None,
    "thr": pipeline.DEFAULT_THR,
    "presence": "min",
    "H": pipeline.DEFAULT_H,
    "chi2_threshold": pipeline.DEFAULT_CHI2_THRESHOLD,
    "mple": {"step": 0.05, "max_iter": 200, "grad_tol": 1e-4, "ci_level": 0.90},
    "gibbs": {"burn_in": 100, "thin": 5},
    "mc": {"z_samples": 10_000},
    "grid": {"loo_margin": pipeline.DEFAULT_LOO_MARGIN, "clique_cap": pipeline.DEFAULT_CLIQUE_CAP},
    "fit_quality": {"replicas": 1000},
    "seed": 0,
}

_PERF = {
    "type": "object",
    "required": ["p_plus", "p_minus", "perf", "method"],
    "properties": {k: {"type": "number", "minimum": 0, "maximum": 1} for k in ("p_plus", "p_minus", "perf")},
}
_COORD = {"type": ["number", "null"]}
SIGNATURE_SCHEMA = {
    "type": "object",
    "required": ["dim", "beta", "intercept", "biomarkers", "cliques", "perf"],
    "properties": {
        "dim": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 4, "maxItems": 4},
        "beta": {"type": "number"},
        "intercept": {"type": "number"},
        "rho": {"type": ["number", "null"]},
        "biomarkers": {"type": "array", "items": {
            "type": "object",
            "required": ["site", "mz", "group", "theta_plus", "theta_minus", "score"],
            "properties": {"site": {"type": "integer", "minimum": 1}, "mz": {"type": "number"},
                           "group": {"enum": ["+", "-"]}, "score": {"type": "number"},
                           "theta_plus": _COORD, "theta_minus": _COORD},
        }},
        "cliques": {"type": "array", "items": {
            "type": "object",
            "required": ["s", "t", "chi2", "score"],
            "properties": {"s": {"type": "integer"}, "t": {"type": "integer"},
                           "chi2": {"type": "number", "minimum": 0}, "score": {"type": "number"}},
        }},
        "perf": _PERF,
    },
}
FIT_QUALITY_SCHEMA = {
    "type": "object",
    "required": ["ll_observed", "quantile_q", "z_stat", "n", "replicas", "histogram"],
    "properties": {"quantile_q": {"type": "number", "minimum": 0, "maximum": 1},
                   "n": {"type": "integer", "minimum": 1}},
}


# -- configuration --------------------------------------------------------------

def _merge(base, extra, path=""):
    for k, v in extra.items():
        if k not in base:
            raise DomainError(f"unknown config key {path}{k}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise DomainError(f"config key {path}{k} must be a mapping")
            _merge(base[k], v, f"{path}{k}.")
        else:
            base[k] = v
    return base


def load_config(path=None, overrides=None):
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise DomainError(f"config file is not valid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise DomainError("config file must hold a mapping")
        _merge(cfg, data)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    return cfg


def pipeline_config(cfg, threads=1, loo=True):
    m = cfg["mple"]
    return pipeline.PipelineConfig(
        thr=float(cfg["thr"]), presence=cfg["presence"], H=int(cfg["H"]),
        chi2_threshold=float(cfg["chi2_threshold"]),
        loo_margin=float(cfg["grid"]["loo_margin"]), clique_cap=int(cfg["grid"]["clique_cap"]),
        loo=loo,
        mple=MpleConfig(float(m["step"]), int(m["max_iter"]), float(m["grad_tol"]), float(m["ci_level"])),
        z_samples=int(cfg["mc"]["z_samples"]), seed=int(cfg["seed"]), threads=int(threads),
    )


# -- output bookkeeping ----------------------------------------------------------

class Outputs:
    """Tracks written files so a failed command leaves nothing behind."""

    def __init__(self):
        self.paths = []

    def path(self, p):
        p = Path(p)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(p)
        return p

    def json(self, p, obj, schema=None):
        if schema is not None:
            jsonschema.validate(obj, schema)
        with open(self.path(p), "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")

    def csv(self, p, header, rows):
        with open(self.path(p), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])

    def discard(self):
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return v


def _perf_row(pf):
    t, l = pf.training, pf.loo
    return [*pf.dim, t.p_plus, t.p_minus, t.perf,
            "" if l is None else l.p_plus, "" if l is None else l.p_minus, "" if l is None else l.perf]


def _write_fit_quality(out, path_stem, report):
    out.json(f"{path_stem}.json", report.to_json(), FIT_QUALITY_SCHEMA)
    edges, counts = report.histogram()
    out.csv(f"{path_stem}_hist.csv", ["lo", "hi", "count"],
            [(edges[i], edges[i + 1], int(c)) for i, c in enumerate(counts)])


# -- commands ----------------------------------------------------------------------

def cmd_binarize(args, cfg, out):
    spectra = read_peaks_jsonl(args.input)
    target = Path(args.out)
    if not spectra:
        out.csv(target, ["id", "group"], [])
        return
    peaks = [p for s in spectra for p in s.peaks]
    b1 = cfg["b1"] if cfg["b1"] is not None else min(peaks)
    grid = build_grid(float(b1), max(max(peaks), float(b1)), float(cfg["rho"]))
    groups = list(dict.fromkeys(s.group for s in spectra))
    out.path(target)
    write_matrix_csv(target, [binarize_all(spectra, grid, g) for g in groups])
    logger.info("wrote %d spectra over %d sites to %s", len(spectra), grid.L, target)


def _groups(args, cfg):
    data = read_matrix_csv(args.matrix, rho=float(cfg["rho"]))
    missing = [g for g in (args.plus, args.minus) if g not in data]
    if missing:
        raise DomainError(f"unknown group label(s) {missing}; available: {sorted(data)}")
    return data[args.plus], data[args.minus]


def cmd_discover(args, cfg, out):
    bin_plus, bin_minus = _groups(args, cfg)
    pc = pipeline_config(cfg, args.threads, args.loo)
    outdir = Path(args.out)
    if args.dim:
        dq = pipeline.DimQuad.parse(args.dim)
        pf = pipeline.fit_pair(bin_plus, bin_minus, dq, pc)
        if args.loo:
            bp, bm = restrict(bin_plus, pf.sites), restrict(bin_minus, pf.sites)
            pf.loo = evaluate_loo(bp, bm, pf.local_cliques_plus, pf.local_cliques_minus, pc.mple,
                                  pf.fit_plus.theta_hat, pf.fit_minus.theta_hat, threads=pc.threads)
        sig = pipeline.build_signature(pf, bin_plus, pipeline._Problem(bin_plus, bin_minus, pc))
        rows, best, stage1 = [pf], pf, [pf]
    else:
        res = pipeline.grid_search(bin_plus, bin_minus, config=pc)
        sig, best, stage1 = res.signature, res.best, res.stage1
        rows = res.stage1
    out.json(outdir / "signature.json", sig.to_json(), SIGNATURE_SCHEMA)
    out.csv(outdir / "performance.csv",
            ["d_plus", "c_plus", "d_minus", "c_minus", "train_p_plus", "train_p_minus", "train_perf",
             "loo_p_plus", "loo_p_minus", "loo_perf"], [_perf_row(pf) for pf in rows])
    models = pipeline.fitted_models(best, pc.z_samples, pc.seed)
    reps, g = int(cfg["fit_quality"]["replicas"]), cfg["gibbs"]
    for name, model, data in (("plus", models.plus, bin_plus), ("minus", models.minus, bin_minus)):
        report = quality_of_fit(model, restrict(data, best.sites), reps, pc.seed,
                                int(g["burn_in"]), int(g["thin"]))
        _write_fit_quality(out, outdir / f"fit_quality_{name}", report)
    if args.kl_scan:
        scan = pipeline.kl_scan(bin_plus, bin_minus, config=pc, pair_fits=stage1)
        pipeline.write_scan_csv(out.path(outdir / "kl_scan.csv"), scan)
        logger.info("kl scan: %d rows, spearman %.3f", len(scan), pipeline.scan_correlation(scan))
    logger.info("dim_opt %s, perf %.3f (%s)", sig.dim, sig.perf.perf, sig.perf.method)


def _load_signature(path):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        jsonschema.validate(obj, SIGNATURE_SCHEMA)
    except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
        raise DomainError(f"malformed signature {path}: {getattr(exc, 'message', exc)}") from None
    return pipeline.Signature.from_json(obj)


def cmd_classify(args, cfg, out):
    sig = _load_signature(args.signature)
    spectra = read_peaks_jsonl(args.peaks)
    rows = []
    for s in spectra:
        label, t = pipeline.classify(sig, s)
        rows.append((s.id, t, label))
    out.csv(args.out, ["id", "tsco", "label"], rows)


def _parse_cliques(text):
    pairs = []
    for item in filter(None, (text or "").split(",")):
        try:
            s, t = (int(v) for v in item.split("-"))
        except ValueError:
            raise DomainError(f"clique {item!r} must look like s-t") from None
        pairs.append((s, t))
    return pairs


def cmd_fitcheck(args, cfg, out):
    data = read_matrix_csv(args.matrix, rho=float(cfg["rho"]))
    if args.group not in data:
        raise DomainError(f"unknown group label {args.group!r}; available: {sorted(data)}")
    ds = data[args.group]
    if args.signature:
        sig = _load_signature(args.signature)
        sites = sig.sites
        side = args.side or "+"
        cliques = [(c["s"], c["t"]) for c in sig.cliques if c.get("group", side) == side]
    elif args.sites:
        sites = [int(s) for s in args.sites.split(",") if s]
        cliques = _parse_cliques(args.cliques)
    else:
        raise DomainError("fitcheck needs --signature or --sites")
    pos = {s: i for i, s in enumerate(sites)}
    try:
        local = [(pos[s], pos[t]) for s, t in cliques]
    except KeyError as exc:
        raise DomainError(f"clique site {exc.args[0]} is not among the sites") from None
    sub = restrict(ds, sites)
    pc = pipeline_config(cfg)
    result = fit_dataset(sub, local, pc.mple)
    model = AutologisticModel.from_theta(result.theta_hat, n_samples=pc.z_samples, seed=pc.seed)
    g = cfg["gibbs"]
    report = quality_of_fit(model, sub, int(cfg["fit_quality"]["replicas"]), pc.seed,
                            int(g["burn_in"]), int(g["thin"]))
    outdir = Path(args.out)
    out.json(outdir / "fit.json", {"sites": sites, "cliques": [list(c) for c in cliques],
                                   "fit": result.to_json(), "log_z": model.log_z,
                                   "log_z_method": model.log_z_method})
    _write_fit_quality(out, outdir / "fit_quality", report)


# -- argument parsing ----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--rho", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mrfsig", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("binarize", parents=[common], help="peak lists (JSON lines) to a binary matrix CSV")
    b.add_argument("input")
    b.add_argument("--out", required=True)

    d = sub.add_parser("discover", parents=[common], help="search the optimal signature")
    d.add_argument("matrix")
    d.add_argument("--plus", required=True, help="label of group G+")
    d.add_argument("--minus", required=True, help="label of group G-")
    d.add_argument("--thr", type=float)
    d.add_argument("--H", type=int)
    d.add_argument("--dim", help="pin the quadruplet d+,c+,d-,c-")
    d.add_argument("--kl-scan", action="store_true")
    d.add_argument("--loo", action=argparse.BooleanOptionalAction, default=True)
    d.add_argument("--out", required=True, help="output directory")

    c = sub.add_parser("classify", parents=[common], help="score spectra with a signature")
    c.add_argument("signature")
    c.add_argument("peaks")
    c.add_argument("--out", required=True)

    f = sub.add_parser("fitcheck", parents=[common], help="quality of fit of one group model")
    f.add_argument("matrix")
    f.add_argument("--group", required=True)
    f.add_argument("--signature")
    f.add_argument("--side", choices=["+", "-"])
    f.add_argument("--sites", help="comma-separated site numbers")
    f.add_argument("--cliques", help="comma-separated s-t pairs")
    f.add_argument("--out", required=True, help="output directory")
    return p


COMMANDS = {"binarize": cmd_binarize, "discover": cmd_discover, "classify": cmd_classify, "fitcheck": cmd_fitcheck}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Outputs()
    try:
        if args.threads < 1:
            raise DomainError("--threads must be >= 1")
        overrides = {"seed": args.seed, "rho": args.rho,
                     "thr": getattr(args, "thr", None), "H": getattr(args, "H", None)}
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](args, cfg, out)
        return 0
    except (DomainError, OSError, ValueError) as exc:
        out.discard()
        print(f"mrfsig: error: {exc}", file=sys.stderr)
        return 2
    except (MRFError, ArithmeticError, np.linalg.LinAlgError, jsonschema.ValidationError) as exc:
        out.discard()
        print(f"mrfsig: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
