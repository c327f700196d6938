"""Command-line front end: ``python -m pdediscovery <stage> ...``.

Every stage reads and writes artifacts in the output directory::

    simulate   -> dataset.csv, trajectory.csv
    ingest     -> dataset.csv
    fit        -> network.json          (needs dataset.csv)
    discover   -> model.json            (needs network.json)
    gridsearch -> grid_mk.csv, grid_arch.csv
    features   -> features.csv
    rollout    -> rollout.csv, rollout_mse.csv (needs model.json, trajectory.csv)
    report     -> plain-text summary on stdout

JSON artifacts embed the hash of the stage configuration and the SHA-256
of the artifact they were derived from; ``manifest.json`` records both for
every stage together with library versions.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import Dataset
from .derivnet import Mlp
from .discover import (OperatorFitConfig, ResidualConfig, config_hash, emit_symbolic, fit_linear_pde,
                       fit_operator_on_design, model_from_dict)
from .features import LibrarySpec, build_design_matrix, parse_column
from .ingest import (CACHE_ENV, GridSpec, ParseReport, fetch_observations, from_smhi_document,
                     interpolate_to_grid, parse_station_json, read_dataset_csv, write_dataset_csv)
from .optim import QuasiNewtonConfig
from .select import GridSearchConfig, StabilityConfig, feature_report, grid_search_architecture, grid_search_mk, \
    parse_architecture
from .simulate import BurgersConfig, RK45Config, Trajectory, rollout_mse, rollout_ode, solve_burgers, \
    trajectory_to_dataset
from .surrogate import SurrogateFitConfig, fit_surrogate
from .transforms import AffineTransform, back_transform_model, fit_shift_scale

log = logging.getLogger("pdediscovery")

DEFAULTS = {
    "seed": 0,
    "simulate": {"eps": 0.01, "nx": 256, "nt": 1000, "t_end": 1.0, "convection": "conservative"},
    "surrogate": {"hidden": [10, 10, 10, 10, 10], "alpha_p": 0.0, "max_iter": 15000, "memory": 0,
                  "validation_fraction": 0.1, "max_train_rows": 20000, "transform": False},
    "library": {"m": 2, "k": 2, "terms": ["u*u_x", "u_xx"], "include_bias": False, "include_coords": False},
    "residual": {"alpha_q": 0.0, "solver": "auto", "prune_cutoff": 0.0},
    "discover": {"rows": 50000, "operator": None, "max_iter": 3000},
    "gridsearch": {"m": [0, 1, 2, 3, 4], "k": [1, 2, 3, 4], "architectures": [[], [2, 2], [50, 50]],
                   "arch_m": [0, 1, 2], "rows": 20000, "max_iter": 1000},
    "features": {"m": 2, "k": 2, "rows": 50000, "n_subsamples": 100, "fraction": 0.5,
                 "jitter": [0.2, 1.0], "alpha": 0.01},
    "rollout": {"t_end": 2.0, "n_eval": 201},
    "ingest": {"nt": 24, "n_axis1": 16, "n_axis2": 32, "stations": None, "base_url": None, "ids": [],
               "period": "latest-months", "smhi": False},
}


class UsageError(Exception):
    """Wrong invocation or missing prerequisite artifact (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# configuration and artifacts


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file {p} does not exist")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {p} is not valid JSON: {exc}") from None
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config sections: {', '.join(sorted(unknown))}")
    return _merge(DEFAULTS, doc)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise UsageError(f"{path} not found; run '{stage}' first")
    return path


def _versions() -> dict:
    import scipy

    return {"pdediscovery": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _record(out: Path, stage: str, cfg: dict, artifacts: list[Path], parent: str | None = None) -> None:
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {"stages": {}}
    manifest["versions"] = _versions()
    manifest["stages"][stage] = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "parent_sha256": parent,
        "artifacts": {a.name: _sha256(a) for a in artifacts},
    }
    path.write_text(_dump(manifest))


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()] if text else []


def _architectures(text: str) -> list[list[int]]:
    # "linear;2x2;2x50"
    try:
        return [parse_architecture(part) for part in text.split(";")]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# stages


def cmd_simulate(args, cfg, out: Path) -> None:
    sc = cfg["simulate"]
    for key in ("nx", "nt", "t_end", "eps", "convection"):
        if getattr(args, key) is not None:
            sc[key] = getattr(args, key)
    traj = solve_burgers(BurgersConfig(**sc))
    traj.to_csv(out / "trajectory.csv")
    write_dataset_csv(trajectory_to_dataset(traj), out / "dataset.csv")
    _record(out, "simulate", sc, [out / "dataset.csv", out / "trajectory.csv"])
    print(f"wrote {out / 'dataset.csv'} ({sc['nx']} x {sc['nt']} grid)")


def _surrogate_config(cfg: dict) -> SurrogateFitConfig:
    s = cfg["surrogate"]
    return SurrogateFitConfig(hidden=tuple(s["hidden"]), alpha_p=s["alpha_p"],
                              optimizer=QuasiNewtonConfig(memory=s["memory"], max_iter=s["max_iter"]),
                              seed=cfg["seed"], validation_fraction=s["validation_fraction"],
                              max_train_rows=s["max_train_rows"])


def cmd_fit(args, cfg, out: Path) -> None:
    s = cfg["surrogate"]
    if args.hidden is not None:
        s["hidden"] = _ints(args.hidden)
    if args.max_iter is not None:
        s["max_iter"] = args.max_iter
    if args.transform:
        s["transform"] = True
    data_path = _require(Path(args.data) if args.data else out / "dataset.csv", "simulate' or 'ingest")
    data = read_dataset_csv(data_path)
    transform = fit_shift_scale(data) if s["transform"] else None
    stage_cfg = {"surrogate": s, "seed": cfg["seed"]}
    net, rep = fit_surrogate(data, _surrogate_config(cfg), transform)
    doc = {
        "config_hash": config_hash(stage_cfg),
        "data_sha256": _sha256(data_path),
        "network": net.to_dict(),
        "transform": None if transform is None else transform.to_dict(),
        "space_names": list(data.space_names),
        "output_names": list(data.output_names),
        "fit": {"train_mse": rep.train_mse, "validation_mse": rep.validation_mse, "objective": rep.objective,
                "iterations": rep.solve.iterations, "reason": rep.solve.reason},
    }
    (out / "network.json").write_text(_dump(doc))
    _record(out, "fit", stage_cfg, [out / "network.json"], doc["data_sha256"])
    print(f"surrogate {rep.solve.reason} after {rep.solve.iterations} iterations, train mse {rep.train_mse:.3e}")


def _load_network(out: Path, args):
    path = _require(Path(args.network) if getattr(args, "network", None) else out / "network.json", "fit")
    doc = json.loads(path.read_text())
    net = Mlp.from_dict(doc["network"])
    tr = AffineTransform.from_dict(doc["transform"]) if doc.get("transform") else None
    return path, doc, net, tr


def _sample_points(out: Path, doc: dict, n_rows: int, seed: int, data_arg=None) -> np.ndarray:
    data_path = _require(Path(data_arg) if data_arg else out / "dataset.csv", "simulate' or 'ingest")
    data = read_dataset_csv(data_path)
    order = data.canonical_order()
    rng = np.random.default_rng(seed)
    if n_rows and len(order) > n_rows:
        order = np.sort(order[rng.choice(len(order), n_rows, replace=False)])
    return data.inputs[order]


def _library(cfg: dict, net: Mlp, doc: dict, m=None, k=None) -> LibrarySpec:
    lib = cfg["library"]
    names = {}
    if doc.get("output_names") and len(doc["output_names"]) == net.n_outputs:
        names["output_names"] = tuple(doc["output_names"])
    return LibrarySpec(m=lib["m"] if m is None else m, k=lib["k"] if k is None else k,
                       n_space=net.n_inputs - 1, n_out=net.n_outputs, include_coords=lib["include_coords"],
                       include_bias=lib["include_bias"], **names)


def cmd_discover(args, cfg, out: Path) -> None:
    lib, dc = cfg["library"], cfg["discover"]
    if args.m is not None:
        lib["m"] = args.m
    if args.k is not None:
        lib["k"] = args.k
    if args.terms is not None:
        lib["terms"] = None if args.terms in ("", "all") else args.terms.split(",")
    if args.coords:
        lib["include_coords"] = True
    if args.operator is not None:
        dc["operator"] = None if args.operator == "" else _architectures(args.operator)[0]
    if args.alpha_q is not None:
        cfg["residual"]["alpha_q"] = args.alpha_q
    if args.prune is not None:
        cfg["residual"]["prune_cutoff"] = args.prune
    net_path, doc, net, tr = _load_network(out, args)
    spec = _library(cfg, net, doc)
    points = _sample_points(out, doc, dc["rows"], cfg["seed"], args.data)
    if tr is not None:
        points = tr.apply_points(points)
    design = build_design_matrix(net, points, spec)
    if lib["terms"]:
        try:
            names = [str(parse_column(n, spec)) for n in lib["terms"]]
            design = design.select(names)
        except ValueError as exc:
            raise UsageError(f"terms {lib['terms']} not in the m={spec.m}, k={spec.k} library: {exc}") from None
    coords = "transformed" if tr is not None else "physical"
    if dc["operator"] is not None:
        ocfg = OperatorFitConfig(hidden=tuple(dc["operator"]), seed=cfg["seed"],
                                 optimizer=QuasiNewtonConfig(memory=10, max_iter=dc["max_iter"]))
        model = fit_operator_on_design(design, tuple(dc["operator"]), ocfg, coords, tr)
        physical = model
    else:
        rc = cfg["residual"]
        model = fit_linear_pde(design, ResidualConfig(alpha_q=rc["alpha_q"], solver=rc["solver"],
                                                      prune_cutoff=rc["prune_cutoff"]), coords, tr)
        physical = back_transform_model(model) if tr is not None else model
    stage_cfg = {"library": lib, "residual": cfg["residual"], "discover": dc, "seed": cfg["seed"]}
    result = {"config_hash": config_hash(stage_cfg), "network_sha256": _sha256(net_path),
              "model": physical.to_dict()}
    if physical is not model:
        result["transformed_model"] = model.to_dict()
    (out / "model.json").write_text(_dump(result))
    _record(out, "discover", stage_cfg, [out / "model.json"], result["network_sha256"])
    print(emit_symbolic(physical))


def cmd_gridsearch(args, cfg, out: Path) -> None:
    g = cfg["gridsearch"]
    if args.m is not None:
        g["m"] = _ints(args.m)
    if args.k is not None:
        g["k"] = _ints(args.k)
    if args.architectures is not None:
        g["architectures"] = _architectures(args.architectures)
    if args.arch_m is not None:
        g["arch_m"] = _ints(args.arch_m)
    if not g["m"] or not g["k"]:
        raise UsageError("m and k ranges must be non-empty")
    net_path, doc, net, tr = _load_network(out, args)
    points = _sample_points(out, doc, g["rows"], cfg["seed"], args.data)
    if tr is not None:
        points = tr.apply_points(points)
    lib = cfg["library"]
    gcfg = GridSearchConfig(include_bias=lib["include_bias"], include_coords=lib["include_coords"],
                            threads=args.threads,
                            operator=OperatorFitConfig(seed=cfg["seed"],
                                                       optimizer=QuasiNewtonConfig(memory=10,
                                                                                   max_iter=g["max_iter"])))
    names = {"output_names": tuple(doc["output_names"])} if doc.get("output_names") else None
    written = []
    grid = grid_search_mk(net, points, g["m"], g["k"], gcfg, names)
    grid.to_csv(out / "grid_mk.csv")
    written.append(out / "grid_mk.csv")
    if g["architectures"] and g["arch_m"]:
        agrid = grid_search_architecture(net, points, g["architectures"], g["arch_m"], gcfg, names)
        agrid.to_csv(out / "grid_arch.csv")
        written.append(out / "grid_arch.csv")
    stage_cfg = {"gridsearch": g, "library": lib, "seed": cfg["seed"]}
    _record(out, "gridsearch", stage_cfg, written, _sha256(net_path))
    for i, m in enumerate(grid.row_labels):
        cells = " ".join(f"{v:8.3f}" for v in grid.values[i])
        print(f"m={m}: {cells}")


def cmd_features(args, cfg, out: Path) -> None:
    f = cfg["features"]
    if args.m is not None:
        f["m"] = args.m
    if args.k is not None:
        f["k"] = args.k
    net_path, doc, net, tr = _load_network(out, args)
    points = _sample_points(out, doc, f["rows"], cfg["seed"], args.data)
    if tr is not None:
        points = tr.apply_points(points)
    design = build_design_matrix(net, points, _library(cfg, net, doc, f["m"], f["k"]))
    scfg = StabilityConfig(n_subsamples=f["n_subsamples"], fraction=f["fraction"], jitter=tuple(f["jitter"]),
                           alpha=f["alpha"], seed=cfg["seed"])
    rep = feature_report(design, scfg)
    rep.to_csv(out / "features.csv")
    _record(out, "features", {"features": f, "seed": cfg["seed"]}, [out / "features.csv"], _sha256(net_path))
    for n, v, s, r in zip(rep.names, rep.variance, rep.stability, rep.rfe_rank):
        print(f"{n:>12s}  var {v:10.4g}  stability {s:4.2f}  rfe {r}")


def cmd_rollout(args, cfg, out: Path) -> None:
    r = cfg["rollout"]
    if args.t_end is not None:
        r["t_end"] = args.t_end
    model_path = _require(Path(args.model) if args.model else out / "model.json", "discover")
    traj_path = _require(Path(args.reference) if args.reference else out / "trajectory.csv", "simulate")
    model = model_from_dict(json.loads(model_path.read_text())["model"])
    ref = Trajectory.from_csv(traj_path)
    x = ref.x[1:-1]
    t_eval = np.linspace(ref.t[0], r["t_end"], r["n_eval"])
    try:
        traj = rollout_ode(model, ref.u[0, 1:-1], x, (ref.t[0], r["t_end"]), t_eval, RK45Config())
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    traj.to_csv(out / "rollout.csv")
    mse = rollout_mse(traj, Trajectory(ref.t, x, ref.u[:, 1:-1]))
    with open(out / "rollout_mse.csv", "w", encoding="utf-8") as fh:
        fh.write("t,mse\n")
        for t, v in zip(traj.t, mse):
            fh.write(f"{float(t)!r},{'' if np.isnan(v) else repr(float(v))}\n")
    _record(out, "rollout", {"rollout": r}, [out / "rollout.csv", out / "rollout_mse.csv"], _sha256(model_path))
    valid = ~np.isnan(mse)
    print(f"rollout to t={r['t_end']}: mean mse {np.mean(mse[valid]):.3e} over {int(valid.sum())} reference stamps")


def cmd_ingest(args, cfg, out: Path) -> None:
    ic = cfg["ingest"]
    for key in ("stations", "base_url", "period"):
        if getattr(args, key) is not None:
            ic[key] = getattr(args, key)
    if args.ids is not None:
        ic["ids"] = [v for v in args.ids.split(",") if v]
    if args.grid is not None:
        ic["nt"], ic["n_axis1"], ic["n_axis2"] = _ints(args.grid)
    if args.smhi:
        ic["smhi"] = True
    report = ParseReport()
    if ic["stations"]:
        path = _require(Path(ic["stations"]), "fetch")
        records = parse_station_json(path.read_text(), report)
    elif ic["base_url"]:
        res = fetch_observations(ic["base_url"], ic["ids"], ic["period"], args.cache)
        for sid, err in res.errors.items():
            print(f"station {sid}: {err}", file=sys.stderr)
        stations = []
        for body in res.documents.values():
            doc = json.loads(body)
            stations.append(from_smhi_document(doc) if ic["smhi"] else doc)
        records = parse_station_json({"stations": stations}, report)
    else:
        raise UsageError("ingest needs --stations FILE or --base-url with --ids")
    for sid, err in report.errors.items():
        print(f"station {sid}: {err}", file=sys.stderr)
    data, mask = interpolate_to_grid(records, GridSpec(ic["nt"], ic["n_axis1"], ic["n_axis2"]))
    write_dataset_csv(data, out / "dataset.csv")
    _record(out, "ingest", ic, [out / "dataset.csv"])
    print(f"{len(records)} stations -> {len(data)} grid rows ({int(mask.size - mask.sum())} masked)")


def cmd_report(args, cfg, out: Path) -> None:
    lines = []
    data_path, net_path, model_path = out / "dataset.csv", out / "network.json", out / "model.json"
    net_doc = json.loads(net_path.read_text()) if net_path.exists() else None
    if net_doc is not None and data_path.exists() and net_doc["data_sha256"] != _sha256(data_path):
        raise RuntimeError("network.json was not fitted to the dataset.csv in this directory")
    if net_doc is not None:
        f = net_doc["fit"]
        dims = net_doc["network"]["layer_dims"]
        lines.append(f"surrogate: layers {dims}, train mse {f['train_mse']:.4e}, {f['reason']} "
                     f"after {f['iterations']} iterations (config {net_doc['config_hash']})")
    if model_path.exists():
        mdoc = json.loads(model_path.read_text())
        if net_doc is None:
            raise RuntimeError("model.json present without the network.json it was derived from")
        if mdoc["network_sha256"] != _sha256(net_path):
            raise RuntimeError("model.json was not derived from the network.json in this directory")
        model = model_from_dict(mdoc["model"])
        lines.append(f"model ({mdoc['model']['coordinates']} coordinates, config {mdoc['config_hash']}):")
        lines.append("  " + emit_symbolic(model))
        if model.residual is not None:
            lines.append(f"  residual loss {model.residual:.4e}")
    for name in ("grid_mk.csv", "grid_arch.csv", "features.csv", "rollout_mse.csv"):
        if (out / name).exists():
            lines.append(f"{name}: present")
    if not lines:
        raise UsageError(f"no artifacts in {out}")
    print("\n".join(lines))


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (sections as in DEFAULTS)")
    common.add_argument("--seed", type=int, help="global seed for every stochastic component")
    common.add_argument("--out", default="run", help="artifact directory (default: run)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for grid searches")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="pdediscovery", description="Data-driven discovery of PDEs from samples.",
                epilog=f"Station downloads are cached under ${CACHE_ENV} (default ~/.cache/pdediscovery).")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("simulate", parents=[common], help="solve viscous Burgers and export samples")
    s.add_argument("--nx", type=int)
    s.add_argument("--nt", type=int)
    s.add_argument("--t-end", type=float)
    s.add_argument("--eps", type=float)
    s.add_argument("--convection", choices=["conservative", "skew"])

    s = sub.add_parser("fit", parents=[common], help="fit the surrogate network to dataset.csv")
    s.add_argument("--data", help="dataset CSV (default OUT/dataset.csv)")
    s.add_argument("--hidden", help="comma-separated hidden widths, e.g. 10,10,10,10,10")
    s.add_argument("--max-iter", type=int)
    s.add_argument("--transform", action="store_true", help="fit in shift-scale coordinates")

    s = sub.add_parser("discover", parents=[common], help="minimize the PDE residual over a library")
    s.add_argument("--network", help="surrogate JSON (default OUT/network.json)")
    s.add_argument("--data")
    s.add_argument("--m", type=int, help="highest derivative order")
    s.add_argument("--k", type=int, help="highest monomial degree")
    s.add_argument("--terms", help="comma-separated term names, or 'all' for the full library")
    s.add_argument("--coords", action="store_true", help="add t and x as library columns")
    s.add_argument("--operator", help="operator network, e.g. 2x50 for 2 hidden layers of 50 ('linear' for none)")
    s.add_argument("--alpha-q", type=float, help="L1 penalty on standardized coefficients")
    s.add_argument("--prune", type=float, help="zero coefficients below this magnitude")

    s = sub.add_parser("gridsearch", parents=[common], help="residual cost over (m, k) and architectures")
    s.add_argument("--network")
    s.add_argument("--data")
    s.add_argument("--m", help="comma-separated derivative orders")
    s.add_argument("--k", help="comma-separated degrees")
    s.add_argument("--architectures", help="semicolon-separated, e.g. 'linear;2x2;2x50'")
    s.add_argument("--arch-m", help="derivative orders for the architecture grid")

    s = sub.add_parser("features", parents=[common], help="variance, stability and RFE ranking")
    s.add_argument("--network")
    s.add_argument("--data")
    s.add_argument("--m", type=int)
    s.add_argument("--k", type=int)

    s = sub.add_parser("rollout", parents=[common], help="integrate a derivative-free operator in time")
    s.add_argument("--model", help="model JSON (default OUT/model.json)")
    s.add_argument("--reference", help="trajectory CSV giving the initial state (default OUT/trajectory.csv)")
    s.add_argument("--t-end", type=float)

    s = sub.add_parser("ingest", parents=[common], help="grid station observations into dataset.csv")
    s.add_argument("--stations", help="station JSON document in the fixture schema")
    s.add_argument("--base-url", help="observation service root for downloads")
    s.add_argument("--ids", help="comma-separated station ids to download")
    s.add_argument("--period")
    s.add_argument("--smhi", action="store_true", help="downloaded documents use the SMHI layout")
    s.add_argument("--cache", help=f"cache directory (default ${CACHE_ENV})")
    s.add_argument("--grid", help="nt,n_axis1,n_axis2")

    sub.add_parser("report", parents=[common], help="summarize the artifacts in OUT")
    return p


COMMANDS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "discover": cmd_discover, "gridsearch": cmd_gridsearch,
    "features": cmd_features, "rollout": cmd_rollout, "ingest": cmd_ingest, "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
    except UsageError as exc:
        print(f"pdediscovery: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        print(f"pdediscovery {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        log.debug("failure", exc_info=True)
        print(f"pdediscovery {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0
