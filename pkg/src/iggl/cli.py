"""Batch command-line interface.

Four subcommands: ``fit`` (one penalty or BIC-selected), ``path`` (full
penalty path with a per-penalty table), ``simulate`` (synthetic data with
known ground truth), and ``metrics`` (compare two precision matrices).
Inputs are headered CSV plus a JSON config; outputs are result JSON, DOT
graphs, and CSV tables.  Exit codes: 0 success, 1 input or config error,
2 non-convergence (the result file is still written, flagged).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .core import FitProblem, fit, first_iteration_s
from .datagen import GENERATOR_ID, GraphPattern, make_precision, sample_gaussian, sample_glm
from .losses import LOSS_KINDS, loss_from_config
from .select import EDGE_EPS, bregman_sym, degrees_of_freedom, edge_metrics, fit_path, lambda_grid

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NONCONVERGED = 2


class InputError(ValueError):
    """Bad data, config, or command line; maps to exit code 1."""


# ---------------------------------------------------------------------------
# data and config ingestion
# ---------------------------------------------------------------------------

def read_csv_matrix(path):
    """Read a headered numeric CSV into (names, matrix).

    Missing or non-numeric cells are rejected with a line/column diagnostic;
    imputation is out of scope.
    """
    try:
        fh = open(path, "r", newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            names = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        names = [c.strip() for c in names]
        if len(set(names)) != len(names):
            raise InputError(f"{path}: duplicate column names in header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise InputError(f"{path}: line {lineno}: expected {len(names)} fields, got {len(row)}")
            vals = []
            for cell, name in zip(row, names):
                cell = cell.strip()
                if not cell:
                    raise InputError(f"{path}: line {lineno}, column {name}: missing value")
                try:
                    v = float(cell)
                except ValueError:
                    raise InputError(f"{path}: line {lineno}, column {name}: not numeric: {cell!r}") from None
                if not np.isfinite(v):
                    raise InputError(f"{path}: line {lineno}, column {name}: non-finite value")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return names, np.asarray(rows, dtype=float)


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return cfg


def _parse_loss_spec(spec, where):
    """A loss spec is either a kind string or a one-key {kind: params} object."""
    if isinstance(spec, str):
        kind, params = spec, {}
    elif isinstance(spec, dict) and len(spec) == 1:
        kind, params = next(iter(spec.items()))
        if not isinstance(params, dict):
            raise InputError(f"{where}: loss parameters must be an object")
    else:
        raise InputError(f"{where}: loss spec must be a kind string or a one-key object")
    if kind not in LOSS_KINDS:
        raise InputError(f"{where}: unknown loss {kind!r}; expected one of {LOSS_KINDS}")
    return kind, params


def _parse_range(text, m, where):
    try:
        start_s, stop_s = text.split(":")
        start, stop = int(start_s), int(stop_s)
    except ValueError:
        raise InputError(f"{where}: column range must look like 'start:stop'") from None
    if not 0 <= start < stop <= m:
        raise InputError(f"{where}: range {text!r} out of bounds for {m} columns")
    return range(start, stop)


def resolve_column_losses(cfg, names, Y):
    """Assign exactly one loss spec per column, then build the losses.

    Precedence: explicit column names, then index ranges (later entries
    win), then the default.  Label and count domains are validated here so
    errors can name the offending column.
    """
    m = len(names)
    section = cfg.get("losses", "quadratic")
    if isinstance(section, (str,)) or (isinstance(section, dict) and len(section) == 1 and next(iter(section)) in LOSS_KINDS):
        section = {"default": section}
    if not isinstance(section, dict):
        raise InputError("config: 'losses' must be an object")
    specs = [None] * m
    default = section.get("default")
    if default is not None:
        kind_params = _parse_loss_spec(default, "losses.default")
        specs = [kind_params] * m
    for i, entry in enumerate(section.get("ranges", [])):
        where = f"losses.ranges[{i}]"
        if not isinstance(entry, dict) or "columns" not in entry or "loss" not in entry:
            raise InputError(f"{where}: need 'columns' and 'loss'")
        kp = _parse_loss_spec(entry["loss"], where)
        for k in _parse_range(str(entry["columns"]), m, where):
            specs[k] = kp
    by_name = section.get("columns", {})
    if not isinstance(by_name, dict):
        raise InputError("config: 'losses.columns' must be an object")
    index = {name: k for k, name in enumerate(names)}
    for name, spec in by_name.items():
        if name not in index:
            raise InputError(f"losses.columns: no such column {name!r}")
        specs[index[name]] = _parse_loss_spec(spec, f"losses.columns[{name}]")
    missing = [names[k] for k in range(m) if specs[k] is None]
    if missing:
        raise InputError(f"no loss assigned to columns {missing} and no default given")

    losses = []
    for k, (kind, params) in enumerate(specs):
        y = Y[:, k]
        try:
            _check_column_domain(kind, y)
            losses.append(loss_from_config(kind, params, column=y))
        except ValueError as exc:
            raise InputError(f"column {names[k]!r}: {exc}") from None
    return tuple(losses)


def _check_column_domain(kind, y):
    if kind == "bernoulli" and not np.all((y == 0) | (y == 1)):
        raise ValueError("bernoulli loss requires labels in {0, 1}")
    if kind in ("huberized_hinge", "lorenz") and not np.all((y == -1) | (y == 1)):
        raise ValueError(f"{kind} loss requires labels in {{-1, +1}}")
    if kind == "poisson_reparam" and (np.any(y < 0) or np.any(y != np.floor(y))):
        raise ValueError("count loss requires nonnegative integer entries")


def build_problem(cfg, Y, lam):
    M = None
    mean = cfg.get("mean", "intercept")
    if mean != "intercept":
        if not (isinstance(mean, dict) and set(mean) == {"given"}):
            raise InputError("config: 'mean' must be \"intercept\" or {\"given\": \"path.csv\"}")
        _, M = read_csv_matrix(mean["given"])
        if M.shape != Y.shape:
            raise InputError(f"mean matrix shape {M.shape} does not match data shape {Y.shape}")
    return FitProblem(
        Y=Y,
        losses=cfg["_losses"],
        lam=lam,
        M=M,
        phi_c=float(cfg.get("phi_c", 1e-3)),
        outer_tol=float(cfg.get("outer_tol", 1e-6)),
        max_outer=int(cfg.get("max_outer", 200)),
        calibrate=bool(cfg.get("calibrate", False)),
        equalize_lipschitz=bool(cfg.get("equalize_lipschitz", False)),
        penalize_diagonal=bool(cfg.get("penalize_diagonal", False)),
        inner_tol=float(cfg.get("inner_tol", 1e-7)),
        inner_max_iter=int(cfg.get("inner_max_iter", 500)),
    )


def _lambda_plan(cfg):
    lam = cfg.get("lambda", "auto")
    if isinstance(lam, (int, float)) and not isinstance(lam, bool):
        if lam < 0:
            raise InputError("config: lambda must be nonnegative")
        return ("fixed", float(lam))
    if lam == "auto":
        return ("grid", {"n_points": 30, "ratio": 0.01})
    if isinstance(lam, dict):
        grid = {"n_points": int(lam.get("n_points", 30)), "ratio": float(lam.get("ratio", 0.01))}
        return ("grid", grid)
    raise InputError("config: 'lambda' must be a number, \"auto\", or a grid object")


# ---------------------------------------------------------------------------
# output writers
# ---------------------------------------------------------------------------

def _dump_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def edge_list(W, names, eps):
    edges = []
    m = W.shape[0]
    for i in range(m):
        for j in range(i + 1, m):
            if abs(W[i, j]) > eps:
                edges.append({"i": i, "j": j, "source": names[i], "target": names[j], "weight": float(W[i, j])})
    return edges


def write_dot(path, names, edges, drop_isolated=False):
    """Graphviz undirected graph: each edge once, nodes quoted from the header."""
    connected = set()
    for e in edges:
        connected.add(e["i"])
        connected.add(e["j"])
    lines = ["graph {"]
    for k, name in enumerate(names):
        if drop_isolated and k not in connected:
            continue
        lines.append(f'  {_dot_quote(name)};')
    for e in edges:
        lines.append(f'  {_dot_quote(e["source"])} -- {_dot_quote(e["target"])} [weight={e["weight"]!r}];')
    lines.append("}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _dot_quote(name):
    return '"' + str(name).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _loss_public(loss):
    return {"kind": loss.kind, "params": {k: float(v) for k, v in loss.params.items()},
            "scale_factor": float(loss.scale_factor), "lipschitz": float(loss.lipschitz)}


def fit_result_document(result, names, eps, selection=None):
    W = result.estimate.W
    doc = {
        "format": 1,
        "kind": "fit-result",
        "nodes": list(names),
        "lambda": float(result.lam),
        "phi": float(result.phi),
        "converged": bool(result.converged),
        "outer_iterations": int(result.state.k),
        "inner_iterations": [int(v) for v in result.state.inner_iterations],
        "kkt_residual": float(result.estimate.kkt_residual),
        "objective_trace": [float(v) for v in result.state.F_trace],
        "intercepts": None if result.intercepts is None else [float(v) for v in result.intercepts],
        "losses": [_loss_public(l) for l in result.losses],
        "edge_threshold": float(eps),
        "edges": edge_list(W, names, eps),
        "W": [[float(v) for v in row] for row in W],
    }
    if selection is not None:
        doc["selection"] = selection
    return doc


def load_precision_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or "W" not in doc:
        raise InputError(f"{path}: no 'W' entry")
    W = np.asarray(doc["W"], dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise InputError(f"{path}: 'W' must be a square matrix")
    return W


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _opt(args, cfg, key, default=None):
    v = getattr(args, key, None)
    if v is not None:
        return v
    return cfg.get(key, default)


def cmd_fit(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    data = _opt(args, cfg, "data")
    if not data:
        raise InputError("no input data: pass --data or set 'data' in the config")
    names, Y = read_csv_matrix(data)
    cfg["_losses"] = resolve_column_losses(cfg, names, Y)
    cfg["equalize_lipschitz"] = bool(_opt(args, cfg, "equalize_lipschitz", False))
    eps = float(_opt(args, cfg, "edge_threshold", EDGE_EPS))
    drop = bool(_opt(args, cfg, "drop_isolated", False))

    mode, lam_spec = _lambda_plan(cfg)
    selection = None
    if mode == "fixed":
        result = fit(build_problem(cfg, Y, lam_spec))
    else:
        probe = build_problem(cfg, Y, 0.0)
        grid = lambda_grid(first_iteration_s(probe), **lam_spec)
        path = fit_path(probe, grid)
        result = path.fits[path.selected_index]
        selection = {
            "lambdas": [float(v) for v in path.lambdas],
            "bic": [None if not np.isfinite(b) else float(b) for b in path.bic],
            "selected_index": int(path.selected_index),
        }

    out = _opt(args, cfg, "out", "result.json")
    _dump_json(fit_result_document(result, names, eps, selection), out)
    dot = _opt(args, cfg, "dot")
    if dot:
        write_dot(dot, names, edge_list(result.estimate.W, names, eps), drop_isolated=drop)
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def cmd_path(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    data = _opt(args, cfg, "data")
    if not data:
        raise InputError("no input data: pass --data or set 'data' in the config")
    names, Y = read_csv_matrix(data)
    cfg["_losses"] = resolve_column_losses(cfg, names, Y)
    cfg["equalize_lipschitz"] = bool(_opt(args, cfg, "equalize_lipschitz", False))
    eps = float(_opt(args, cfg, "edge_threshold", EDGE_EPS))
    drop = bool(_opt(args, cfg, "drop_isolated", False))

    mode, lam_spec = _lambda_plan(cfg)
    probe = build_problem(cfg, Y, 0.0)
    if mode == "fixed":
        grid = np.array([lam_spec])
    else:
        grid = lambda_grid(first_iteration_s(probe), **lam_spec)
    path = fit_path(probe, grid, warm_start=not args.parallel, parallel=args.parallel)

    table = _opt(args, cfg, "table", "path.csv")
    with open(table, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lambda", "objective", "df", "bic", "converged"])
        for i, lam in enumerate(path.lambdas):
            res = path.fits[i]
            if res is None:
                writer.writerow([repr(float(lam)), "", "", "", "failed"])
            else:
                writer.writerow([
                    repr(float(lam)),
                    repr(float(res.state.F_trace[-1])),
                    degrees_of_freedom(res.estimate.W, eps),
                    repr(float(path.bic[i])),
                    str(bool(res.converged)).lower(),
                ])

    selected = path.fits[path.selected_index]
    selection = {
        "lambdas": [float(v) for v in path.lambdas],
        "bic": [None if not np.isfinite(b) else float(b) for b in path.bic],
        "selected_index": int(path.selected_index),
    }
    out = _opt(args, cfg, "out", "selected.json")
    _dump_json(fit_result_document(selected, names, eps, selection), out)
    dot = _opt(args, cfg, "dot")
    if dot:
        write_dot(dot, names, edge_list(selected.estimate.W, names, eps), drop_isolated=drop)
    return EXIT_OK if selected.converged else EXIT_NONCONVERGED


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("IGGL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"IGGL_SEED must be an integer, got {env!r}") from None
    return 0


def cmd_simulate(args) -> int:
    seed = _resolve_seed(args)
    pattern = GraphPattern(
        kind=args.pattern,
        m=args.m,
        edge_weight=args.edge_weight,
        diagonal_boost=args.diagonal_boost,
        sparsity=args.sparsity,
    )
    try:
        W_star = make_precision(pattern, seed=seed)
        if args.family == "gaussian":
            Y = sample_gaussian(args.n, W_star, mu=args.mu, seed=seed)
        else:
            Y = sample_glm(args.n, W_star, args.family, mu=args.mu, seed=seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None

    os.makedirs(args.out_dir, exist_ok=True)
    names = [f"x{k + 1}" for k in range(args.m)]
    data_path = os.path.join(args.out_dir, "Y.csv")
    with open(data_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        integral = args.family != "gaussian"
        for row in Y:
            writer.writerow([str(int(v)) if integral else repr(float(v)) for v in row])

    _dump_json(
        {"format": 1, "kind": "precision", "nodes": names, "W": [[float(v) for v in row] for row in W_star]},
        os.path.join(args.out_dir, "Wtrue.json"),
    )
    _dump_json(
        {
            "format": 1,
            "kind": "manifest",
            "generator": GENERATOR_ID,
            "version": __version__,
            "pattern": {
                "kind": pattern.kind,
                "m": pattern.m,
                "edge_weight": pattern.edge_weight,
                "diagonal_boost": pattern.diagonal_boost,
                "sparsity": pattern.sparsity,
            },
            "n": args.n,
            "family": args.family,
            "mu": args.mu,
            "seed": seed,
            "outputs": {"data": "Y.csv", "precision": "Wtrue.json"},
        },
        os.path.join(args.out_dir, "manifest.json"),
    )
    return EXIT_OK


def cmd_metrics(args) -> int:
    W_hat = load_precision_json(args.estimate)
    W_true = load_precision_json(args.truth)
    if W_hat.shape != W_true.shape:
        raise InputError(f"dimension mismatch: {W_hat.shape} vs {W_true.shape}")
    try:
        div = bregman_sym(W_hat, W_true)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    em = edge_metrics(W_hat, W_true, eps=args.eps)
    print(json.dumps(
        {
            "bregman_sym": float(div),
            "precision": em.precision,
            "recall": em.recall,
            "f1": em.f1,
            "true_support_size": em.true_support_size,
        },
        indent=2,
        sort_keys=True,
    ))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="iggl", description="Sparse association graphs from mixed-type data")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit at one penalty (or BIC-select with lambda=auto)")
    p_fit.add_argument("--data", help="input CSV (header row = column names)")
    p_fit.add_argument("--config", help="JSON config file")
    p_fit.add_argument("--out", help="result JSON path (default result.json)")
    p_fit.add_argument("--dot", help="also write a Graphviz DOT file")
    p_fit.add_argument("--edge-threshold", dest="edge_threshold", type=float)
    p_fit.add_argument("--drop-isolated", dest="drop_isolated", action="store_const", const=True)
    p_fit.add_argument("--equalize-lipschitz", dest="equalize_lipschitz", action="store_const", const=True,
                       help="rescale losses with bounds below one up to one (faster, changes units)")
    p_fit.set_defaults(func=cmd_fit)

    p_path = sub.add_parser("path", help="fit a penalty path and select by BIC")
    p_path.add_argument("--data", help="input CSV")
    p_path.add_argument("--config", help="JSON config file")
    p_path.add_argument("--out", help="selected-model JSON path (default selected.json)")
    p_path.add_argument("--table", help="per-penalty CSV table (default path.csv)")
    p_path.add_argument("--dot", help="DOT file for the selected model")
    p_path.add_argument("--edge-threshold", dest="edge_threshold", type=float)
    p_path.add_argument("--drop-isolated", dest="drop_isolated", action="store_const", const=True)
    p_path.add_argument("--equalize-lipschitz", dest="equalize_lipschitz", action="store_const", const=True,
                        help="rescale losses with bounds below one up to one (faster, changes units)")
    p_path.add_argument("--parallel", action="store_true", help="fit penalties across threads (cold starts)")
    p_path.set_defaults(func=cmd_path)

    p_sim = sub.add_parser("simulate", help="generate synthetic data with known ground truth")
    p_sim.add_argument("--pattern", choices=["chain", "random", "hub"], required=True)
    p_sim.add_argument("--m", type=int, required=True)
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--family", choices=["gaussian", "bernoulli", "poisson"], default="gaussian")
    p_sim.add_argument("--edge-weight", dest="edge_weight", type=float, default=-0.4)
    p_sim.add_argument("--diagonal-boost", dest="diagonal_boost", type=float, default=0.0)
    p_sim.add_argument("--sparsity", type=float, default=None)
    p_sim.add_argument("--mu", type=float, default=0.0)
    p_sim.add_argument("--seed", type=int, default=None, help="overrides the IGGL_SEED environment variable")
    p_sim.add_argument("--out-dir", dest="out_dir", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_met = sub.add_parser("metrics", help="compare an estimate against a reference precision matrix")
    p_met.add_argument("--estimate", required=True)
    p_met.add_argument("--truth", required=True)
    p_met.add_argument("--eps", type=float, default=EDGE_EPS)
    p_met.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
