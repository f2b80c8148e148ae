"""
Command-line front end.

Every subcommand reads an optional JSON run configuration, applies flag
overrides, and writes its outputs (JSON, CSV) into ``--out``.  Tables are
also echoed to stdout as CSV.  Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path


from .basis import (
    MAX_POLY_DEGREE, MAX_WAVELET_ORDER, ORDINARY, ORTHONORMAL, MULTIWAVELET,
    candidate_pool, family_kind, parse_label,
)
from .data import Dataset, ingest_csv, rank_transform, synthetic_returns
from .errors import (
    DataError, DomainError, EmptyBin, InvalidConfig, MinVineError, UnsupportedStructure,
)
from .fit import CopulaFit, FitConfig, PairSample, StepwiseWarning, stepwise_select
from .grid import UnitGrid, d1ad2_project, eval_kernel
from .vine import (
    BinnedConditionalEdge, UnconditionalEdge, VineModel, build_dvine, fit_vine, sample_vine,
)

log = logging.getLogger("minvine")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
COMPARE_FAMILIES = (ORDINARY, ORTHONORMAL, MULTIWAVELET)
_SHORT_NAMES = {ORDINARY: "ordinary", ORTHONORMAL: "orthonormal", MULTIWAVELET: "multiwavelet"}
_FAMILY_TITLES = {
    ORDINARY: "Minimum information copula, ordinary polynomial basis",
    ORTHONORMAL: "Minimum information copula, orthonormal polynomial basis",
    MULTIWAVELET: "Minimum information copula, Legendre multiwavelet basis",
}


@dataclass
class RunConfig:
    order: list | None = None
    pair: list | None = None
    family: str = ORTHONORMAL
    max_degree: int = 5
    wavelet_order: int = MAX_WAVELET_ORDER
    candidates: list | None = None
    k: int = 6
    bins: int = 4
    rerank: bool = True
    min_bin_count: int | None = None
    fit: FitConfig = field(default_factory=FitConfig)
    seed: int = 0
    count: int = 10_000
    synthetic_rows: int = 3000
    compare_families: list = field(default_factory=lambda: list(COMPARE_FAMILIES))

    def validate(self):
        try:
            self.family = family_kind(self.family)
            self.compare_families = [family_kind(f) for f in self.compare_families]
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from None
        if not 1 <= self.max_degree <= MAX_POLY_DEGREE:
            raise InvalidConfig(f"max_degree must lie in 1..{MAX_POLY_DEGREE}")
        if not 0 <= self.wavelet_order <= MAX_WAVELET_ORDER:
            raise InvalidConfig(f"wavelet_order must lie in 0..{MAX_WAVELET_ORDER}")
        if self.k < 1:
            raise InvalidConfig("k must be at least 1")
        if self.bins < 1:
            raise InvalidConfig("bins must be at least 1")
        if self.count < 1 or self.synthetic_rows < 1:
            raise InvalidConfig("count and synthetic_rows must be positive")
        if self.pair is not None and len(self.pair) != 2:
            raise InvalidConfig("pair must name exactly two columns")
        return self

    def pool(self, family: str | None = None) -> list:
        if self.candidates is not None and family is None:
            try:
                return [parse_label(s, self.wavelet_order) for s in self.candidates]
            except (ValueError, MinVineError) as exc:
                raise InvalidConfig(f"bad candidate label: {exc}") from None
        kind = family or self.family
        degree = self.max_degree
        if kind == MULTIWAVELET:
            degree = min(degree, self.wavelet_order + 1)
        pool = candidate_pool(kind, degree, self.wavelet_order)
        if self.k > len(pool):
            raise InvalidConfig(f"k={self.k} exceeds the {len(pool)} candidates of {kind}")
        return pool


def load_config(path, args) -> RunConfig:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise InvalidConfig(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise InvalidConfig("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise InvalidConfig(f"unknown config keys: {', '.join(sorted(unknown))}")
    fit_raw = raw.pop("fit", {}) or {}
    fit_known = {f.name for f in fields(FitConfig)}
    if set(fit_raw) - fit_known:
        raise InvalidConfig(f"unknown fit keys: {', '.join(sorted(set(fit_raw) - fit_known))}")
    if args.grid is not None:
        fit_raw["grid_n"] = args.grid
    try:
        cfg = RunConfig(**raw, fit=FitConfig(**fit_raw))
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None
    for name, flag in (("seed", args.seed), ("k", args.k), ("bins", args.bins),
                       ("family", args.bases)):
        if flag is not None:
            setattr(cfg, name, flag)
    return cfg.validate()


# ------------------------------------------------------------------ output

def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _table_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit_table(out: Path, name: str, header, rows):
    text = _table_text(header, rows)
    (out / name).write_text(text)
    sys.stdout.write(text)


def _fmt(x) -> str:
    return f"{x:.4f}"


def _fmt_vec(xs) -> str:
    return " ".join(_fmt(x) for x in xs)


def _load_dataset(args, cfg) -> Dataset:
    if args.data is None:
        return rank_transform(synthetic_returns(cfg.synthetic_rows, cfg.seed))
    try:
        return rank_transform(ingest_csv(args.data))
    except FileNotFoundError:
        raise DataError(f"data file not found: {args.data}") from None


def _columns(data: Dataset, labels) -> list:
    missing = [s for s in labels if s not in data.labels]
    if missing:
        raise InvalidConfig(f"labels not in the data: {', '.join(missing)}")
    return list(labels)


# ------------------------------------------------------------ pair reports

def stage_rows(stages) -> list:
    """Rows ``(base, parameter values, log-likelihood)``, one per stage."""
    rows = []
    for i, st in enumerate(stages):
        base = st["added"] if i == 0 else f"previous + {st['added']}"
        rows.append([base, _fmt_vec(st["lambdas"]), _fmt(st["loglik"])])
    return rows


def basis_rows(fit: dict) -> list:
    """Rows ``(base, alpha, lambda, log-likelihood)``; the likelihood sits on the first row."""
    rows = []
    for i, (b, a, lam) in enumerate(zip(fit["bases"], fit["alphas"], fit["lambdas"])):
        rows.append([b, _fmt(a), _fmt(lam), _fmt(fit["loglik"]) if i == 0 else ""])
    return rows


# ------------------------------------------------------------ vine reports

def _interval_text(model: VineModel, edge_index: int, combo) -> str:
    e = model.structure.edges[edge_index]
    em = model.edge_models[edge_index]
    if not isinstance(em, BinnedConditionalEdge):
        return "all"
    parts = []
    for var, cuts, b in zip(e.conditioning, em.partition.cuts, combo):
        parts.append(f"{cuts[b]:g}<{model.structure.labels[var]}<{cuts[b + 1]:g}")
    return " ".join(parts)


def vine_edge_rows(model: VineModel) -> list:
    rows = []
    for k, combo, fit, n in model.components():
        edge = model.structure.edge_label(model.structure.edges[k])
        interval = _interval_text(model, k, combo)
        for r in basis_rows(fit.to_dict()):
            rows.append([edge, interval, n] + r)
    return rows


def vine_bin_rows(model: VineModel) -> list:
    rows = []
    for k, combo, fit, n in model.components():
        rows.append([model.structure.edge_label(model.structure.edges[k]),
                     _interval_text(model, k, combo), n,
                     "; ".join(fit.labels), _fmt(fit.log_likelihood)])
    rows.append(["total", "", "", "", _fmt(model.total_log_likelihood)])
    return rows


EDGE_HEADER = ["edge", "interval", "n", "base", "alpha", "lambda", "log_likelihood"]
BIN_HEADER = ["edge", "interval", "n", "bases", "log_likelihood"]


def write_vine_report(out: Path, model: VineModel, prefix: str = ""):
    (out / f"{prefix}edges.csv").write_text(_table_text(EDGE_HEADER, vine_edge_rows(model)))
    _emit_table(out, f"{prefix}bins.csv", BIN_HEADER, vine_bin_rows(model))


# ---------------------------------------------------------------- commands

def cmd_ingest(args, cfg: RunConfig, out: Path) -> int:
    if args.data is None:
        raw = synthetic_returns(cfg.synthetic_rows, cfg.seed)
        raw.write_csv(out / "raw.csv")
    else:
        try:
            raw = ingest_csv(args.data)
        except FileNotFoundError:
            raise DataError(f"data file not found: {args.data}") from None
    pseudo = rank_transform(raw)
    pseudo.write_csv(out / "pseudo.csv")
    n, d = pseudo.shape
    sys.stdout.write(_table_text(["rows", "columns", "labels"], [[n, d, " ".join(pseudo.labels)]]))
    return EXIT_OK


def cmd_fit_pair(args, cfg: RunConfig, out: Path) -> int:
    data = _load_dataset(args, cfg)
    labels = args.pair or cfg.pair or list(data.labels[:2])
    a, b = _columns(data, labels)
    sample = PairSample(data.column(a), data.column(b))
    stages = stepwise_select(cfg.pool(), sample, cfg.k, cfg.fit)
    final = stages[-1]
    trace = [{"added": st.labels[-1], "lambdas": [float(x) for x in st.lambdas],
              "loglik": float(st.log_likelihood)} for st in stages]
    doc = final.to_dict()
    doc.update(pair=[a, b], family=cfg.family, wavelet_order=cfg.wavelet_order, stages=trace)
    _write_json(out / "fit.json", doc)
    final.copula.write_csv(out / "density.csv")
    _emit_table(out, "trace.csv", ["base", "parameter_values", "log_likelihood"], stage_rows(trace))
    return EXIT_OK


def _fit_model(data: Dataset, cfg: RunConfig, family: str | None = None) -> VineModel:
    order = _columns(data, cfg.order or list(data.labels))
    structure = build_dvine(order)
    return fit_vine(data.select(order).values, structure, cfg.pool(family), cfg.k, cfg.bins,
                    cfg.fit, rerank=cfg.rerank, min_bin_count=cfg.min_bin_count,
                    family=family or cfg.family, wavelet_order=cfg.wavelet_order)


def cmd_fit_vine(args, cfg: RunConfig, out: Path) -> int:
    data = _load_dataset(args, cfg)
    if not args.compare:
        model = _fit_model(data, cfg)
        _write_json(out / "model.json", model.to_dict())
        write_vine_report(out, model)
        return EXIT_OK
    rows = []
    for family in cfg.compare_families:
        model = _fit_model(data, cfg, family)
        short = _SHORT_NAMES.get(family, family)
        _write_json(out / f"model-{short}.json", model.to_dict())
        write_vine_report(out, model, prefix=f"{short}-")
        rows.append([_FAMILY_TITLES[family], _fmt(model.total_log_likelihood)])
    _emit_table(out, "comparison.csv", ["model", "log_likelihood"], rows)
    return EXIT_OK


def _read_json(path) -> dict:
    if path is None:
        raise InvalidConfig("--model is required")
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InvalidConfig(f"model file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"model file is not valid JSON: {exc}") from None


def _load_model(doc: dict, cfg: RunConfig):
    """A ``VineModel`` for vine documents, a ``CopulaFit`` for pair documents."""
    try:
        if "edges" in doc:
            return VineModel.from_dict(doc, cfg.fit.dad_tol, cfg.fit.dad_max_iter)
        return CopulaFit.from_dict(doc, int(doc.get("wavelet_order", cfg.wavelet_order)),
                                   cfg.fit.dad_tol, cfg.fit.dad_max_iter)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MinVineError):
            raise
        raise InvalidConfig(f"malformed model document: {exc!r}") from None


def cmd_sample(args, cfg: RunConfig, out: Path) -> int:
    doc = _read_json(args.model)
    model = _load_model(doc, cfg)
    if isinstance(model, CopulaFit):
        # a single pair copula is a two-variable vine
        model = VineModel(build_dvine(doc.get("pair", ["U", "V"])),
                          (UnconditionalEdge(model),), "", model.log_likelihood)
    count = args.count if args.count is not None else cfg.count
    if count < 1:
        raise InvalidConfig("count must be at least 1")
    x = sample_vine(model, count, cfg.seed)
    Dataset(model.structure.labels, x).write_csv(out / "samples.csv")
    sys.stdout.write(_table_text(["rows", "columns"], [[count, len(model.structure.labels)]]))
    return EXIT_OK


def _reproject(fit: CopulaFit, grid_n, cfg: RunConfig):
    if grid_n is None or grid_n == fit.copula.n:
        return fit.copula
    kernel = eval_kernel(fit.lambdas, fit.bases, UnitGrid(grid_n))
    return d1ad2_project(kernel, cfg.fit.dad_tol, cfg.fit.dad_max_iter)


def cmd_export_density(args, cfg: RunConfig, out: Path) -> int:
    model = _load_model(_read_json(args.model), cfg)
    rows = []
    if isinstance(model, CopulaFit):
        cop = _reproject(model, args.grid, cfg)
        cop.write_csv(out / "density.csv")
        rows.append(["pair", "all", "density.csv", cop.n])
    else:
        ddir = out / "density"
        ddir.mkdir(exist_ok=True)
        for k, combo, fit, _ in model.components():
            name = f"edge{k}" + "".join(f"_b{b}" for b in combo) + ".csv"
            cop = _reproject(fit, args.grid, cfg)
            cop.write_csv(ddir / name)
            rows.append([model.structure.edge_label(model.structure.edges[k]),
                         _interval_text(model, k, combo), f"density/{name}", cop.n])
    _emit_table(out, "densities.csv", ["edge", "interval", "file", "grid_n"], rows)
    return EXIT_OK


def cmd_report(args, cfg: RunConfig, out: Path) -> int:
    doc = _read_json(args.model)
    model = _load_model(doc, cfg)
    if isinstance(model, VineModel):
        write_vine_report(out, model)
        return EXIT_OK
    if doc.get("stages"):
        (out / "trace.csv").write_text(
            _table_text(["base", "parameter_values", "log_likelihood"], stage_rows(doc["stages"])))
    _emit_table(out, "pair.csv", ["base", "alpha", "lambda", "log_likelihood"],
                basis_rows(model.to_dict()))
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "fit-pair": cmd_fit_pair,
    "fit-vine": cmd_fit_vine,
    "sample": cmd_sample,
    "export-density": cmd_export_density,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--data", help="headered CSV of observations (synthetic data if omitted)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--bases", help="basis family: ordinary, orthonormal or multiwavelet")
    common.add_argument("--bins", type=int, help="bins per conditioning variable")
    common.add_argument("--k", type=int, help="bases selected per copula")
    common.add_argument("--grid", type=int, help="grid cells per axis")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="minvine", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="rank-transform a CSV to pseudo-observations")
    p = sub.add_parser("fit-pair", parents=[common], help="stepwise fit of one pair copula")
    p.add_argument("--pair", nargs=2, metavar=("U", "V"))
    p = sub.add_parser("fit-vine", parents=[common], help="fit a D-vine over all columns")
    p.add_argument("--compare", action="store_true", help="fit every basis family and compare")
    for name, text in (("sample", "draw rows from a fitted model"),
                       ("export-density", "write density grids of a fitted model"),
                       ("report", "tabulate a fitted model")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--model", help="fit.json or model.json")
        if name == "sample":
            p.add_argument("--count", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for name in ("pair", "compare", "model", "count"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        cfg = load_config(args.config, args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            # skipped candidates are already reported through logging
            warnings.simplefilter("ignore", StepwiseWarning)
            return COMMANDS[args.command](args, cfg, out)
    except (InvalidConfig, UnsupportedStructure) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError, EmptyBin) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (MinVineError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

if __name__ == "__main__":
    sys.exit(main())
