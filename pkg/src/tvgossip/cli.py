"""Command-line experiment runner.

    tvgossip --config run.json [--seed S] [--out DIR] [--sweep K]

A run is computed entirely in memory and only then written out, so a failing
run leaves no partial files.  Exit codes: 0 success, 1 unreadable or
schema-invalid config (or a referenced file is missing), 2 a precondition
failed, 3 writing the results failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .consensus import derive_consensus_params, run_consensus
from .decopt import (
    centralized_agd,
    derive_outer_params,
    global_value,
    random_quadratics,
    run_decopt,
)
from .graphs import (
    Graph,
    StructureError,
    WeightedGraph,
    build_laplacian,
    format_graph,
    gershgorin_bound,
    random_connected_graph,
    read_graph,
    shortest_path_weighting,
    spectral_summary,
)
from .lowerbound import (
    first_nonzero_times,
    floor_problem,
    floor_run_decopt,
    floor_run_gossip_gradient,
    transfer_time,
)
from .markov import (
    FamilySpec,
    is_primitive,
    load_family,
    mean_gossip,
    mixing_diagnostic,
    rho_bound,
)

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_IO = 0, 1, 2, 3

_FAMILY = {"type": "string", "minLength": 1}
_POS = {"type": "number", "exclusiveMinimum": 0}
_COUNT = {"type": "integer", "minimum": 1}

PARAM_SCHEMAS = {
    "spectral": {
        "type": "object",
        "properties": {
            "graphs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "random": {
                "type": "object",
                "properties": {
                    "count": _COUNT,
                    "n_min": {"type": "integer", "minimum": 2},
                    "n_max": {"type": "integer", "minimum": 2},
                    "p": {"type": "number", "minimum": 0, "maximum": 1},
                },
                "required": ["count", "n_max"],
                "additionalProperties": False,
            },
            "weighting": {"enum": ["as-is", "shortest-path"]},
        },
        "oneOf": [{"required": ["graphs"]}, {"required": ["random"]}],
        "additionalProperties": False,
    },
    "consensus": {
        "type": "object",
        "properties": {
            "family": _FAMILY,
            "b": _COUNT,
            "N": {"type": "integer", "minimum": 0},
            "gamma": _POS,
            "heuristic": {"type": "boolean"},
            "d": _COUNT,
        },
        "required": ["family", "N"],
        "additionalProperties": False,
    },
    "decopt": {
        "type": "object",
        "properties": {
            "family": _FAMILY,
            "d": _COUNT,
            "mu": _POS,
            "L": _POS,
            "epsilon": _POS,
            "c_T": _POS,
            "b": _COUNT,
            "N": {"type": "integer", "minimum": 0},
            "T": _COUNT,
            "gamma": _POS,
            "heuristic": {"type": "boolean"},
        },
        "required": ["family", "d", "mu", "L", "epsilon"],
        "additionalProperties": False,
    },
    "lowerbound": {
        "type": "object",
        "properties": {
            "n": {"type": "integer", "minimum": 2},
            "mu": _POS,
            "L": _POS,
            "m_max": {"type": "integer", "minimum": 4},
            "chi_min": _POS,
            "flow_m": _COUNT,
            "methods": {
                "type": "array",
                "items": {"enum": ["gossip-gradient", "decopt"]},
                "uniqueItems": True,
            },
            "T": _COUNT,
            "dump_graphs": {"type": "boolean"},
        },
        "required": ["n"],
        "additionalProperties": False,
    },
    "family-diagnose": {
        "type": "object",
        "properties": {"family": _FAMILY, "m_max": _COUNT},
        "required": ["family"],
        "additionalProperties": False,
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": sorted(PARAM_SCHEMAS)},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output": {"type": "string"},
        "params": {"type": "object"},
    },
    "required": ["kind", "params"],
    "additionalProperties": False,
}

HEADERS = {
    "trace": "k,T,dist2,r_gap,potential",
    "decopt": "k,comms,gap,consensus_err",
    "floor": "k,dist2,floor",
}


class ConfigError(Exception):
    pass


def subseed(root: int, label: str) -> int:
    """Per-component seed derived from the root seed and a fixed label."""
    digest = hashlib.sha256(f"{root}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return "%.17g" % float(v)


def format_csv(header: str, rows) -> str:
    lines = [header]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def dump_json(doc) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


@dataclass
class RunResult:
    files: dict = field(default_factory=dict)  # relative path -> text
    manifest: dict = field(default_factory=dict)


def load_config(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
        jsonschema.validate(doc["params"], PARAM_SCHEMAS[doc["kind"]])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema error at {where}: {exc.message}") from exc
    return doc


def _resolve(base: Path, rel: str) -> Path:
    p = (base / rel).resolve()
    if not p.exists():
        raise ConfigError(f"referenced file not found: {p}")
    return p


def _family(base: Path, rel: str) -> FamilySpec:
    path = _resolve(base, rel)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read family file {path}: {exc}") from exc
    for member in doc.get("members", []):
        _resolve(path.parent, member)
    return load_family(path)


def _chain_constants(spec: FamilySpec) -> dict:
    w = mean_gossip(spec.family)
    s = spectral_summary(w)
    return dict(
        w_tilde=w,
        lambda_max=s.lambda_max,
        lambda_min_plus=s.lambda_min_plus,
        chi=s.chi,
        rho=rho_bound(spec.family),
        tau=spec.tau,
        lambda_top=max(float(np.linalg.eigvalsh(x)[-1]) for x in spec.family.laplacians),
    )


def _consensus_params(c: dict, b: int, N: int, gamma, heuristic: bool):
    if heuristic and gamma is None:
        gamma = 3.0 / (4.0 * c["lambda_max"])
    return derive_consensus_params(
        c["lambda_max"], c["lambda_min_plus"], c["rho"], c["tau"], b, N, gamma=gamma, heuristic=heuristic
    )


def _params_dict(p) -> dict:
    return {k: getattr(p, k) for k in ("gamma", "p", "beta", "eta", "theta", "M", "B", "b", "N")}


# ---------------------------------------------------------------------------
# experiment kinds
# ---------------------------------------------------------------------------


def run_spectral(params: dict, seed: int, base: Path) -> RunResult:
    weighting = params.get("weighting", "shortest-path")
    graphs = []
    if "graphs" in params:
        graphs = [read_graph(_resolve(base, g)) for g in params["graphs"]]
    else:
        r = params["random"]
        rng = np.random.default_rng(subseed(seed, "graphs"))
        n_min = r.get("n_min", 2)
        if n_min > r["n_max"]:
            raise ValueError("n_min exceeds n_max")
        for _ in range(r["count"]):
            n = int(rng.integers(n_min, r["n_max"] + 1))
            graphs.append(random_connected_graph(n, rng, r.get("p", 0.1)))
    rows = []
    for idx, g in enumerate(graphs):
        if isinstance(g, Graph):
            g = WeightedGraph.unit(g)
        wg = shortest_path_weighting(g.graph) if weighting == "shortest-path" else g
        s = spectral_summary(build_laplacian(wg))
        D = g.graph.diameter()
        rows.append((idx, g.n, len(g.graph.edges), D, s.lambda_max, s.lambda_min_plus, s.chi,
                     gershgorin_bound(wg), 2 * g.n * D))
    header = "index,n,m,diameter,lambda_max,lambda_min_plus,chi,gershgorin,chi_bound"
    return RunResult({"spectral.csv": format_csv(header, rows)}, {"graphs": len(graphs), "weighting": weighting})


def run_consensus_kind(params: dict, seed: int, base: Path) -> RunResult:
    spec = _family(base, params["family"])
    c = _chain_constants(spec)
    cp = _consensus_params(c, params.get("b", 1), params["N"], params.get("gamma"), params.get("heuristic", False))
    d = params.get("d", 1)
    x0 = np.random.default_rng(subseed(seed, "x0")).standard_normal((spec.family.n, d) if d > 1 else spec.family.n)
    chain = spec.chain(seed=subseed(seed, "chain"))
    _, rows = run_consensus(x0, chain, cp, np.random.default_rng(subseed(seed, "levels")), c["w_tilde"],
                            c["lambda_min_plus"])
    derived = {k: c[k] for k in ("lambda_max", "lambda_min_plus", "chi", "rho", "tau")}
    derived.update(_params_dict(cp))
    return RunResult({"trace.csv": format_csv(HEADERS["trace"], rows)}, {"derived": derived})


def run_decopt_kind(params: dict, seed: int, base: Path) -> RunResult:
    spec = _family(base, params["family"])
    c = _chain_constants(spec)
    mu, L, eps = params["mu"], params["L"], params["epsilon"]
    if not mu <= L:
        raise ValueError(f"need mu <= L, got mu={mu}, L={L}")
    objs = random_quadratics(spec.family.n, params["d"], mu, L, np.random.default_rng(subseed(seed, "objectives")))
    x0 = np.zeros(params["d"])
    x_star = centralized_agd(objs, mu, L, x0)
    f_star = global_value(objs, x_star)
    c0 = max(global_value(objs, x0) - f_star, eps)
    op = derive_outer_params(mu, L, eps, c["tau"], c["chi"], c["rho"], c["lambda_min_plus"], c0,
                             params.get("c_T", 4.0))
    if "N" in params or "T" in params:
        op = type(op)(op.gamma, op.eta, params.get("N", op.N), params.get("T", op.T))
    cp = _consensus_params(c, params.get("b", 1), op.T, params.get("gamma"), params.get("heuristic", False))
    chain = spec.chain(seed=subseed(seed, "chain"))
    _, rows = run_decopt(objs, chain, op, cp, x0, np.random.default_rng(subseed(seed, "levels")), f_star)
    derived = {k: c[k] for k in ("lambda_max", "lambda_min_plus", "chi", "rho", "tau")}
    derived.update({f"consensus_{k}": v for k, v in _params_dict(cp).items()})
    derived.update(outer_gamma=op.gamma, outer_eta=op.eta, outer_N=op.N, inner_T=op.T, c0=c0, f_star=f_star)
    return RunResult({"decopt.csv": format_csv(HEADERS["decopt"], rows)}, {"derived": derived})


def run_lowerbound(params: dict, seed: int, base: Path) -> RunResult:
    n = params["n"]
    mu, L = params.get("mu", 1.0), params.get("L", 100.0)
    m_max = params.get("m_max", 64)
    if m_max % 2:
        raise ValueError("m_max must be even")
    if not L > 16 * mu:
        raise ValueError("need L > 16 mu")
    problem = floor_problem(n, mu, L, m_max, params.get("chi_min", 56.0))
    period = problem.period
    files = {}
    steps = []
    for e in period.entries:
        changed = None if e.changed is None else {"removed": list(e.changed.removed), "added": list(e.changed.added)}
        steps.append(dict(step=e.step, phase=e.phase, a=e.a, b=e.b, changed=changed, chi=e.chi,
                          file=f"sequence/step-{e.step:04d}.txt"))
        if params.get("dump_graphs", True):
            files[f"sequence/step-{e.step:04d}.txt"] = format_graph(e.weighted)
    t = transfer_time(n)
    files["sequence/manifest.json"] = dump_json({"n": n, "t": t, "period": 2 * t, "chi_target": period.chi_target,
                                                 "steps": steps})
    flow = first_nonzero_times(n, params.get("flow_m", 8))
    files["flow.csv"] = format_csv("m,l_m,bound,slack", [(f.m, f.l_m, f.bound, f.slack) for f in flow])
    methods = params.get("methods", ["gossip-gradient", "decopt"])
    violations = {}
    for method in methods:
        if method == "decopt":
            rows = floor_run_decopt(problem, params.get("T", 2), seed=subseed(seed, "levels"))
        else:
            rows = floor_run_gossip_gradient(problem)
        files[f"floor-{method}.csv"] = format_csv(HEADERS["floor"], rows)
        violations[method] = sum(r.dist2 < r.floor for r in rows)
    derived = dict(t=t, chi=period.chi_target, horizon=problem.horizon, mu_g=problem.mu_g, L_g=problem.L_g,
                   dist0=problem.dist0, floor_violations=violations,
                   flow=[dict(m=f.m, l_m=f.l_m, bound=f.bound) for f in flow])
    return RunResult(files, {"derived": derived})


def run_family_diagnose(params: dict, seed: int, base: Path) -> RunResult:
    spec = _family(base, params["family"])
    c = _chain_constants(spec)
    chain = spec.chain(seed=subseed(seed, "chain"))
    rows = []
    for m in range(1, params.get("m_max", 20) + 1):
        diag = mixing_diagnostic(chain, m)
        rows.append((m, diag.delta, diag.bound, diag.ok))
    derived = {k: c[k] for k in ("lambda_max", "lambda_min_plus", "chi", "rho", "tau")}
    derived.update(members=spec.family.size, primitive=is_primitive(spec.kernel),
                   consistent=all(r[3] for r in rows))
    return RunResult({"mixing.csv": format_csv("m,delta,bound,ok", rows)}, {"derived": derived})


RUNNERS = {
    "spectral": run_spectral,
    "consensus": run_consensus_kind,
    "decopt": run_decopt_kind,
    "lowerbound": run_lowerbound,
    "family-diagnose": run_family_diagnose,
}


def run_one(doc: dict, seed: int, base: Path) -> RunResult:
    result = RUNNERS[doc["kind"]](doc["params"], seed, base)
    result.manifest.update(kind=doc["kind"], seed=seed, params=doc["params"], version=__version__)
    result.files["manifest.json"] = dump_json(result.manifest)
    return result


def _merge(results: list[tuple[int, RunResult]]) -> dict:
    merged = {}
    for seed, res in results:
        for name, text in res.files.items():
            merged[f"seed-{seed}/{name}"] = text
    csv_names = sorted({n for _, r in results for n in r.files if n.endswith(".csv") and "/" not in n})
    for name in csv_names:
        header = None
        lines = []
        for seed, res in results:
            body = res.files[name].splitlines()
            header = "seed," + body[0]
            lines += [f"{seed},{line}" for line in body[1:]]
        merged[name] = "\n".join([header] + lines) + "\n"
    merged["sweep.json"] = dump_json({"seeds": [s for s, _ in results], "version": __version__})
    return merged


def write_files(out: Path, files: dict) -> None:
    for name, text in files.items():
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="tvgossip", description="Run a gossip / decentralized optimization experiment.")
    ap.add_argument("--config", required=True, help="JSON experiment description")
    ap.add_argument("--seed", type=int, help="root seed (overrides the config)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--sweep", type=int, default=1, help="run seeds seed .. seed+K-1")
    ap.add_argument("--workers", type=int, default=None, help="threads for sweeps")
    args = ap.parse_args(argv)

    cfg_path = Path(args.config)
    try:
        doc = load_config(cfg_path)
        if args.sweep < 1:
            raise ConfigError("--sweep must be at least 1")
        seed = args.seed if args.seed is not None else doc.get("seed", 0)
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        base = cfg_path.resolve().parent
        out = Path(args.out if args.out is not None else doc.get("output", "out"))
        seeds = [seed + i for i in range(args.sweep)]
        if len(seeds) == 1:
            files = run_one(doc, seed, base).files
        else:
            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                results = list(pool.map(lambda s: (s, run_one(doc, s, base)), seeds))
            files = _merge(results)
    except ConfigError as exc:
        print(f"tvgossip: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StructureError, ValueError, AssertionError, RuntimeError) as exc:
        print(f"tvgossip: precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    try:
        write_files(out, files)
    except OSError as exc:
        print(f"tvgossip: cannot write results: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
