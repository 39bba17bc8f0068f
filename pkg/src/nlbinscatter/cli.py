"""Command line interface: ``nlbinscatter <subcommand> [flags]``.

Every run writes one JSON document with stable top-level keys. The
document records the normalized configuration, so ``--config result.json``
re-runs an earlier analysis and reproduces the same bytes.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .basis import BasisSpec
from .data import load_csv
from .errors import BinscatterError, NumericalError, ValidationError
from .estimator import fit, make_eval_point
from .inference import (
    SHAPES,
    InferenceConfig,
    compare_groups,
    confidence_band,
    prepare,
    shape_test,
    spec_test,
)
from .models import parse_model
from .partition import check_quasi_uniform, make_partition, user_knots
from .plot import bin_dots, render_svg
from .selector import p_select, select

SUBCOMMANDS = ("fit", "select", "band", "test-spec", "test-shape", "compare")
NEEDS_SEED = ("band", "test-spec", "test-shape", "compare")
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nlbinscatter", description="Nonlinear binscatter estimation and inference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="re-run the configuration recorded in a previous JSON result")
        sp.add_argument("--data")
        sp.add_argument("--y")
        sp.add_argument("--x")
        sp.add_argument("--w", default="", help="comma-separated control columns")
        sp.add_argument("--group")
        sp.add_argument("--model", default=None, help="ls | logit | quantile:<tau> | huber:<tau>")
        sp.add_argument("--p", type=int, default=0)
        sp.add_argument("--s", default="0", help="0 or p")
        sp.add_argument("--v", type=int, default=0)
        nb = sp.add_mutually_exclusive_group()
        nb.add_argument("--nbins", type=int)
        nb.add_argument("--nbins-select", choices=("rot", "dpi"))
        sp.add_argument("--pselect", help="<pmin>:<pmax>, used with --nbins")
        sp.add_argument("--binspos", default="qs", help="qs | es | user:<csv>")
        sp.add_argument("--level", type=float, default=0.05, help="significance level alpha")
        sp.add_argument("--nsims", type=int, default=50000)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--at", default="mean", help="mean | median | value:<csv>")
        sp.add_argument("--target", default="level", choices=("level", "mu", "marginal"))
        sp.add_argument("--null", default="poly:1", help="poly:<q> or const:<value>")
        sp.add_argument("--shape", choices=SHAPES)
        sp.add_argument("--bound", type=float, help="constant upper bound for level-upper")
        sp.add_argument("--per-bin", type=int, default=20)
        sp.add_argument("--no-rbc", action="store_true")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--out")
        sp.add_argument("--plot")
    return parser


def _csv_floats(text: str, what: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValidationError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise ValidationError(f"{what}: expected finite numbers, got {text!r}")
    return vals


def normalize_config(args) -> dict:
    """Validate flag combinations and return the canonical run configuration."""
    cfg = vars(args).copy() if not isinstance(args, dict) else dict(args)
    cfg.pop("config", None)
    sub = cfg.get("subcommand")
    if sub not in SUBCOMMANDS:
        raise ValidationError(f"subcommand must be one of {', '.join(SUBCOMMANDS)}")
    for key in ("data", "y", "x", "out"):
        if not cfg.get(key):
            raise ValidationError(f"--{key} is required")
    if not cfg.get("model"):
        raise ValidationError("--model is required")
    model = parse_model(cfg["model"])
    p, v = int(cfg["p"]), int(cfg["v"])
    if p < 0 or v < 0:
        raise ValidationError("--p and --v must be nonnegative")
    s_text = str(cfg["s"])
    s = p if s_text == "p" else int(s_text) if s_text.lstrip("-").isdigit() else None
    if s is None or s not in (0, p):
        raise ValidationError(f"--s must be 0 or p (={p}), got {s_text!r}")
    if v > p:
        raise ValidationError(f"--v={v} exceeds --p={p}")
    if cfg.get("nbins") is not None and cfg.get("nbins_select"):
        raise ValidationError("--nbins and --nbins-select are mutually exclusive")
    if cfg.get("nbins") is not None and int(cfg["nbins"]) < 1:
        raise ValidationError("--nbins must be positive")
    binspos = cfg.get("binspos") or "qs"
    if binspos.startswith("user:"):
        knots = _csv_floats(binspos[5:], "--binspos user")
        if cfg.get("nbins") is not None and int(cfg["nbins"]) != len(knots) - 1:
            raise ValidationError("--nbins does not match the number of user knots")
    elif binspos not in ("qs", "es"):
        raise ValidationError(f"--binspos must be qs, es or user:<csv>, got {binspos!r}")
    if cfg.get("pselect"):
        if cfg.get("nbins") is None:
            raise ValidationError("--pselect needs a fixed --nbins")
        try:
            lo, hi = (int(t) for t in cfg["pselect"].split(":"))
        except ValueError:
            raise ValidationError("--pselect must look like <pmin>:<pmax>") from None
        if not 0 <= lo <= hi:
            raise ValidationError("--pselect needs 0 <= pmin <= pmax")
        if s not in (0,) and s_text != "p":
            raise ValidationError("--pselect supports --s 0 or --s p")
    if sub in NEEDS_SEED and cfg.get("seed") is None:
        raise ValidationError(f"--seed is required for {sub}")
    if cfg.get("seed") is not None and not 0 <= int(cfg["seed"]) < 2**64:
        raise ValidationError("--seed must be an unsigned 64-bit integer")
    if sub == "compare" and not cfg.get("group"):
        raise ValidationError("compare needs --group")
    if sub == "test-shape":
        if not cfg.get("shape"):
            raise ValidationError("test-shape needs --shape")
        if cfg["shape"] == "level-upper" and cfg.get("bound") is None:
            raise ValidationError("--shape level-upper needs --bound")
    if sub == "test-spec":
        _parse_null(cfg.get("null") or "poly:1")
    at = cfg.get("at") or "mean"
    if at.startswith("value:"):
        _csv_floats(at[6:], "--at value")
    elif at not in ("mean", "median"):
        raise ValidationError(f"--at must be mean, median or value:<csv>, got {at!r}")
    target = cfg.get("target") or "level"
    if target == "marginal" and p + (0 if cfg.get("no_rbc") else 1) < 1:
        raise ValidationError("--target marginal needs p >= 1 (or robust bias correction)")
    InferenceConfig(alpha=float(cfg["level"]), nsims=int(cfg["nsims"]),
                    seed=int(cfg.get("seed") or 0), per_bin=int(cfg["per_bin"]))
    if int(cfg.get("jobs") or 1) < 1:
        raise ValidationError("--jobs must be positive")
    del model
    keys = ("subcommand", "data", "y", "x", "w", "group", "model", "p", "s", "v", "nbins",
            "nbins_select", "pselect", "binspos", "level", "nsims", "seed", "at", "target",
            "null", "shape", "bound", "per_bin", "no_rbc", "jobs", "out", "plot")
    out = {k: cfg.get(k) for k in keys}
    out["s"] = s_text
    out["binspos"] = binspos
    out["at"] = at
    out["target"] = target
    out["null"] = cfg.get("null") or "poly:1"
    out["w"] = cfg.get("w") or ""
    out["no_rbc"] = bool(cfg.get("no_rbc"))
    out["jobs"] = int(cfg.get("jobs") or 1)
    return out


def _parse_null(text):
    kind, _, arg = text.partition(":")
    if kind == "poly":
        try:
            q = int(arg)
        except ValueError:
            raise ValidationError(f"--null poly:<q> needs an integer, got {text!r}") from None
        if q < 0:
            raise ValidationError("--null polynomial degree must be >= 0")
        return ("poly", q)
    if kind == "const":
        return _csv_floats(arg, "--null const")[0]
    raise ValidationError(f"--null must be poly:<q> or const:<value>, got {text!r}")


def _clean(obj):
    """JSON-ready copy: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        return val if math.isfinite(val) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _partition_for(cfg, data, model, p, s, v):
    """Resolve the bins: user knots, fixed J, or an IMSE selector (rot by default)."""
    binspos = cfg["binspos"]
    scheme = {"qs": "quantile", "es": "even"}.get(binspos, "user")
    if scheme == "user":
        part = user_knots(_csv_floats(binspos[5:], "--binspos user"))
        return part, None
    if cfg["nbins"] is not None:
        return make_partition(data.x, int(cfg["nbins"]), scheme), None
    method = cfg["nbins_select"] or "rot"
    sel = select(data, model, p, s, v, method, scheme)
    return make_partition(data.x, sel.J, scheme), sel


def run(config: dict) -> tuple[str, str | None]:
    """Execute a normalized configuration; returns (JSON text, SVG text or None)."""
    cfg = normalize_config(config)
    doc = {
        "meta": {"version": __version__, "seed": cfg["seed"], "config": cfg},
        "partition": None,
        "fit": None,
        "selector": None,
        "band": None,
        "tests": [],
        "warnings": [],
    }
    svg = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        svg = _execute(cfg, doc)
    seen = []
    for w in caught:
        msg = f"{w.category.__name__}: {w.message}"
        if msg not in seen:
            seen.append(msg)
    doc["warnings"] = seen
    text = json.dumps(_clean(doc), indent=2, allow_nan=False) + "\n"
    return text, svg


def _execute(cfg, doc):
    w_cols = [c.strip() for c in cfg["w"].split(",") if c.strip()]
    data = load_csv(cfg["data"], cfg["y"], cfg["x"], w_cols, cfg["group"])
    model = parse_model(cfg["model"])
    p, v = int(cfg["p"]), int(cfg["v"])
    s = p if cfg["s"] == "p" else int(cfg["s"])
    at = cfg["at"]
    ep_values = _csv_floats(at[6:], "--at value") if at.startswith("value:") else None
    eval_point = make_eval_point(data, "user" if ep_values else at, ep_values)
    inf_cfg = InferenceConfig(alpha=float(cfg["level"]), nsims=int(cfg["nsims"]),
                              seed=int(cfg["seed"] or 0), rbc=not cfg["no_rbc"],
                              per_bin=int(cfg["per_bin"]), n_jobs=cfg["jobs"])
    target = cfg["target"]
    sub = cfg["subcommand"]

    if sub == "compare":
        scheme = {"qs": "quantile", "es": "even"}.get(cfg["binspos"])
        if scheme is None:
            raise ValidationError("compare supports --binspos qs or es")
        method = cfg["nbins_select"] or "rot"
        test, band = compare_groups(data, model, p, target, inf_cfg, v, s, cfg["nbins"],
                                    scheme, method, eval_point)
        doc["selector"] = {"method": "fixed" if cfg["nbins"] else method, "J": test.J,
                           "V": None, "B": None}
        doc["band"] = _band_json(band)
        doc["tests"].append(_test_json(test))
        return None

    if cfg["pselect"]:
        lo, hi = (int(t) for t in cfg["pselect"].split(":"))
        p = p_select(data, model, int(cfg["nbins"]), v, range(lo, hi + 1),
                     cfg["nbins_select"] or "rot", smooth=cfg["s"] == "p")
        s = p if cfg["s"] == "p" else 0
        doc["selector"] = {"method": "pselect", "J": int(cfg["nbins"]), "V": None, "B": None, "p": p}

    part, sel = _partition_for(cfg, data, model, p, s, v)
    check_quasi_uniform(part)
    doc["partition"] = {"knots": part.knots}
    if sel is not None:
        doc["selector"] = {"method": sel.method, "J": sel.J, "V": sel.variance_constant,
                           "B": sel.bias_constant}
    elif doc["selector"] is None:
        doc["selector"] = {"method": "fixed", "J": part.nbins, "V": None, "B": None}
    if sub == "select":
        return None

    point = fit(data, BasisSpec(p, s, part), model, eval_point)
    doc["fit"] = {"beta": point.beta, "gamma": point.gamma, "converged": point.converged,
                  "iterations": point.iterations}
    dots = bin_dots(point)
    if sub == "fit":
        return render_svg(*dots, title="binscatter") if cfg["plot"] else None

    prep = prepare(data, model, p, s, v, inf_cfg.rbc, partition=part, eval_point=eval_point)
    common = dict(cfg=inf_cfg, v=v, s=s, partition=part, eval_point=eval_point, prepared=prep)
    band = None
    if sub == "band":
        band = confidence_band(data, model, p, target=target, **common)
        doc["band"] = _band_json(band)
    elif sub == "test-spec":
        test = spec_test(data, model, p, null=_parse_null(cfg["null"]), target=target, **common)
        doc["tests"].append(_test_json(test))
    else:
        shape = cfg["shape"]
        tgt = target if target != "level" or shape == "level-upper" else None
        test = shape_test(data, model, p, shape, tgt, bound=cfg["bound"], **common)
        doc["tests"].append(_test_json(test))
    if not cfg["plot"]:
        return None
    if band is None:
        return render_svg(*dots, title="binscatter")
    show_dots = dots if target == "level" else (np.zeros(0), np.zeros(0))
    return render_svg(*show_dots, band=(band.grid, band.lower, band.upper),
                      center=(band.grid, band.center), title="binscatter")


def _band_json(band):
    return {"grid": band.grid, "estimate": band.estimate, "center": band.center, "se": band.se,
            "cval": band.critical_value, "lower": band.lower, "upper": band.upper}


def _test_json(test):
    return {"kind": test.kind, "statistic": test.statistic, "p_value": test.p_value}


def _load_config(path):
    try:
        doc = json.loads(Path(path).read_text())
        return doc["meta"]["config"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ValidationError(f"cannot read a recorded configuration from {path}: {exc}") from None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand is None:
            raise ValidationError("a subcommand is required")
        config = _load_config(args.config) if args.config else vars(args)
        text, svg = run(config)
        cfg = normalize_config(config)
        try:
            Path(cfg["out"]).write_text(text)
            if cfg["plot"] and svg is not None:
                Path(cfg["plot"]).write_text(svg)
        except OSError as exc:
            raise ValidationError(f"cannot write output: {exc}") from None
    except ValidationError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BinscatterError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
