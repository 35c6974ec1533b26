"""
Command-line experiment runner.

Subcommands: generate, fit, embed, reconstruct, eval, sweep. Run
``gse <command> --help`` for the flags of each.

Exit codes: 0 success, 1 invalid configuration, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from gse.errors import (
    DimensionMismatch,
    DisconnectedGraph,
    EigensolverFailure,
    GseError,
    InsufficientNeighbors,
    InvalidConfig,
    ModelFormatError,
    SampleOutsideDomain,
)
from gse.evaluation import EvalReport, evaluate
from gse.manifolds import PointCloud, SyntheticManifold, get_manifold
from gse.model import GseModel
from gse.neighborhoods import OGSE_INITS, VARIANTS, HyperParams
from gse.storage import (
    atomic_write_bytes,
    read_cloud,
    read_matrix,
    load_model,
    save_model,
    write_cloud,
    write_table,
)

log = logging.getLogger("gse")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ERRORS = (DisconnectedGraph, SampleOutsideDomain, DimensionMismatch, InsufficientNeighbors,
               ModelFormatError, OSError)

HINTS = {
    DisconnectedGraph: "increase eps1 or add samples so the neighborhood graph connects",
    SampleOutsideDomain: "lower eps3 or increase eps1 so every local PCA has rank q",
    EigensolverFailure: "increase eps1; check for duplicated or isolated points",
}

SWEEP_COLUMNS = ("n_train", "status", "n_test", "n_failed", "mean_delta", "median_delta",
                 "max_delta", "mean_tangent_error", "delta_h", "objective", "ogse_sweeps", "error")


# -- configuration -----------------------------------------------------------------


@dataclass
class RunConfig:
    """
    Everything an experiment needs; loaded from YAML and overridden by flags.

    Attributes:
        manifold: generator name.
        manifold_options: keyword overrides for the generator (e.g. ``p``, ``q``).
        seed: training-sample seed. test_seed: test-sample seed (must differ).
        eps1, eps2, eps3: explicit thresholds or ``None`` for the default rules.
    """

    manifold: str = "swissroll"
    manifold_options: dict = field(default_factory=dict)
    n_train: int = 450
    n_test: int = 200
    seed: int = 0
    test_seed: int = 1
    variant: str = "ogse"
    ogse_init: str = "synchronized"
    eps1: Optional[float] = None
    eps2: Optional[float] = None
    eps3: Optional[float] = None
    max_iter: int = 200
    tol: float = 1e-9
    reconstruction: str = "jacobian"
    sweep: list = field(default_factory=list)
    out: str = "out"
    plot: bool = False

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        data = dict(data or {})
        man = data.pop("manifold", None)
        if isinstance(man, dict):
            man = dict(man)
            data["manifold"] = man.pop("name", cls.manifold)
            data["manifold_options"] = man.pop("options", {}) or {}
            if man:
                raise InvalidConfig(f"manifold: unknown keys {sorted(man)}")
        elif man is not None:
            data["manifold"] = man
        params = data.pop("params", None)
        if params:
            data.update(params)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfig(f"unknown config keys {unknown}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def manifold_obj(self) -> SyntheticManifold:
        return get_manifold(self.manifold, **self.manifold_options)

    def validate(self) -> None:
        def bad(name, why):
            raise InvalidConfig(f"field '{name}': {why} (got {getattr(self, name)!r})")

        for name in ("n_train", "n_test", "seed", "test_seed", "max_iter"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                bad(name, "must be an integer")
        if self.n_test < 0:
            bad("n_test", "must be >= 0")
        if self.seed < 0 or self.test_seed < 0:
            bad("seed", "seeds must be non-negative")
        if self.seed == self.test_seed:
            bad("test_seed", "must differ from the training seed")
        if self.max_iter < 1:
            bad("max_iter", "must be >= 1")
        if not (isinstance(self.tol, (int, float)) and self.tol > 0):
            bad("tol", "must be a positive number")
        if self.variant not in VARIANTS:
            bad("variant", f"must be one of {VARIANTS}")
        if self.ogse_init not in OGSE_INITS:
            bad("ogse_init", f"must be one of {OGSE_INITS}")
        if self.reconstruction not in ("jacobian", "equivalent"):
            bad("reconstruction", "must be 'jacobian' or 'equivalent'")
        for name in ("eps1", "eps2", "eps3"):
            v = getattr(self, name)
            if v is not None and not isinstance(v, (int, float)):
                bad(name, "must be a number or null")
        if not isinstance(self.manifold_options, dict):
            bad("manifold_options", "must be a mapping")
        q = self.manifold_obj().q
        if self.n_train < q + 2:
            bad("n_train", f"must be >= q + 2 = {q + 2}")
        if not isinstance(self.sweep, list) or any(
                isinstance(n, bool) or not isinstance(n, int) or n < q + 2 for n in self.sweep):
            bad("sweep", f"must be a list of integers >= {q + 2}")
        self.hyperparams()

    def hyperparams(self) -> HyperParams:
        q = self.manifold_obj().q
        return HyperParams(q=q, eps1=self.eps1, eps2=self.eps2, eps3=self.eps3,
                           variant=self.variant, ogse_init=self.ogse_init)

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d.pop("plot")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def load_config(path: Optional[str], args: argparse.Namespace) -> RunConfig:
    data: dict[str, Any] = {}
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise InvalidConfig(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidConfig(f"config {path} must be a mapping at top level")
    cfg = RunConfig.from_mapping(data)
    for name in ("variant", "seed", "out"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "plot", False):
        cfg.plot = True
    cfg.validate()
    return cfg


# -- shared steps ------------------------------------------------------------------


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def fit_model(cfg: RunConfig, X: np.ndarray, source: str) -> GseModel:
    provenance = {"config_sha256": cfg.digest(), "seed": cfg.seed, "source": source,
                  "manifold": cfg.manifold, "manifold_options": cfg.manifold_options}
    return GseModel.fit(X, cfg.hyperparams(), max_iter=cfg.max_iter, tol=cfg.tol,
                        provenance=provenance)


def attach_tangents(cloud: PointCloud, manifold: Optional[SyntheticManifold]) -> PointCloud:
    """Analytic tangents from the hidden coordinates, when both are available."""
    if manifold is None or cloud.params is None or cloud.params.shape[1] != manifold.q:
        return cloud
    if cloud.n == 0:
        return PointCloud(cloud.points, cloud.params, np.zeros((0, manifold.p, manifold.q)))
    return PointCloud(cloud.points, cloud.params, manifold.tangent(cloud.params))


def evaluate_cloud(model: GseModel, cloud: PointCloud, form: str = "jacobian") -> EvalReport:
    if cloud.n and cloud.p != model.p:
        raise DimensionMismatch(f"test points have p={cloud.p}, model expects p={model.p}")
    if form == "jacobian":
        return evaluate(model, cloud)
    return evaluate(_FormModel(model, form), cloud)


class _FormModel:
    """Model view whose ``reconstruct`` uses a fixed reconstruction form."""

    def __init__(self, model: GseModel, form: str):
        self._m, self._form = model, form

    def __getattr__(self, name):
        return getattr(self._m, name)

    def reconstruct(self, y):
        return self._m.reconstruct(y, form=self._form)


def write_eval(report: EvalReport, out: Path, p: int, q: int) -> dict:
    header = (["index"] + [f"x{k + 1}" for k in range(p)] + [f"y{k + 1}" for k in range(q)]
              + [f"xs{k + 1}" for k in range(p)] + ["delta", "tangent_error", "error"])
    rows = []
    for r in report.records:
        y = r.y if r.y is not None else [None] * q
        xs = r.x_star if r.x_star is not None else [None] * p
        rows.append([r.index, *r.x, *y, *xs, r.delta, r.tangent_error, r.error])
    write_table(out / "eval_points.csv", header, rows)
    agg = report.aggregates()
    write_table(out / "eval_summary.csv", list(agg), [list(agg.values())])
    return agg


def _plots(out: Path, cloud: PointCloud, report: EvalReport) -> None:
    from gse import plots

    color = cloud.params[:, 0] if cloud.params is not None and cloud.n else None
    ok = [r for r in report.records if r.ok]
    c_ok = None if color is None else np.array([color[r.index] for r in ok])
    plots.cloud_figure(cloud.points, out / "test_cloud.svg", color, "Test cloud")
    Y = np.array([r.y for r in ok]).reshape(len(ok), -1)
    Xs = np.array([r.x_star for r in ok]).reshape(len(ok), -1)
    plots.embedding_figure(Y, out / "embedding.svg", c_ok, "Embedding of the test cloud")
    plots.cloud_figure(Xs, out / "reconstruction.svg", c_ok, "Reconstruction of the test cloud")


def _print_summary(summary: dict) -> None:
    for k, v in summary.items():
        print(f"{k}: {v}")


# -- commands ----------------------------------------------------------------------


def cmd_generate(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    man = cfg.manifold_obj()
    train = man.sample(cfg.n_train, cfg.seed)
    test = man.sample(cfg.n_test, cfg.test_seed)
    write_cloud(out / "train.csv", train)
    write_cloud(out / "test.csv", test)
    manifest = {
        "config": cfg.canonical(),
        "config_sha256": cfg.digest(),
        "files": {name: _sha256(out / name) for name in ("train.csv", "test.csv")},
        "p": man.p,
        "q": man.q,
    }
    atomic_write_bytes(out / "manifest.json",
                       (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    print(f"wrote {train.n} training and {test.n} test points to {out}")
    return EXIT_OK


def cmd_fit(cfg: RunConfig, data: Optional[str]) -> int:
    out = Path(cfg.out)
    if data:
        cloud = read_cloud(data)
        source = f"{Path(data).name} sha256={_sha256(data)}"
    else:
        cloud = cfg.manifold_obj().sample(cfg.n_train, cfg.seed)
        source = f"generated n={cfg.n_train} seed={cfg.seed}"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = fit_model(cfg, cloud.points, source)
    for w in caught:
        log.warning("%s: %s", w.category.__name__, w.message)
    save_model(model, out / "model.gsem")
    s = model.summary
    write_table(out / "fit_summary.csv", list(s), [list(s.values())])
    _print_summary(s)
    return EXIT_OK


def cmd_embed(model_path: str, input_path: str, out: Path) -> int:
    model = load_model(model_path)
    X = read_matrix(input_path, "x")
    if X.shape[0] and X.shape[1] != model.p:
        raise DimensionMismatch(f"input has p={X.shape[1]}, model expects p={model.p}")
    rows, failed = [], 0
    for i, x in enumerate(X):
        try:
            rows.append([i, *model.embed(x), ""])
        except GseError as exc:
            failed += 1
            rows.append([i, *([None] * model.q), f"{type(exc).__name__}: {exc}"])
    write_table(out / "embedded.csv", ["index"] + [f"y{k + 1}" for k in range(model.q)] + ["error"],
                rows)
    print(f"embedded {len(rows) - failed} of {len(rows)} points")
    return EXIT_OK


def cmd_reconstruct(model_path: str, input_path: str, out: Path, form: str) -> int:
    model = load_model(model_path)
    Y = read_matrix(input_path, "y")
    if Y.shape[0] and Y.shape[1] != model.q:
        raise DimensionMismatch(f"input has q={Y.shape[1]}, model expects q={model.q}")
    rows, failed = [], 0
    for i, y in enumerate(Y):
        try:
            rows.append([i, *model.reconstruct(y, form=form), ""])
        except GseError as exc:
            failed += 1
            rows.append([i, *([None] * model.p), f"{type(exc).__name__}: {exc}"])
    write_table(out / "reconstructed.csv",
                ["index"] + [f"x{k + 1}" for k in range(model.p)] + ["error"], rows)
    print(f"reconstructed {len(rows) - failed} of {len(rows)} points")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, model_path: str, test_path: Optional[str]) -> int:
    out = Path(cfg.out)
    model = load_model(model_path)
    man = cfg.manifold_obj()
    cloud = read_cloud(test_path) if test_path else man.sample(cfg.n_test, cfg.test_seed)
    if cloud.n and cloud.p != model.p:
        raise DimensionMismatch(f"test points have p={cloud.p}, model expects p={model.p}")
    cloud = attach_tangents(cloud, man if man.p == model.p else None)
    report = evaluate_cloud(model, cloud, cfg.reconstruction)
    agg = write_eval(report, out, model.p, model.q)
    if cfg.plot:
        _plots(out, cloud, report)
    _print_summary(agg)
    return EXIT_OK


def run_sweep(cfg: RunConfig):
    """Fit and evaluate at every size in ``cfg.sweep`` on one shared test set."""
    man = cfg.manifold_obj()
    test = man.sample(cfg.n_test, cfg.test_seed)
    rows, timings, errors = [], [], []
    for n in cfg.sweep:
        sub = RunConfig(**{**asdict(cfg), "n_train": n})
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = fit_model(sub, man.sample(n, cfg.seed).points,
                                  f"generated n={n} seed={cfg.seed}")
            t1 = time.perf_counter()
            report = evaluate_cloud(model, test, cfg.reconstruction)
            t2 = time.perf_counter()
        except GseError as exc:
            log.warning("n=%d failed: %s: %s", n, type(exc).__name__, exc)
            errors.append(exc)
            rows.append([n, "failed", test.n, test.n] + [None] * 7 + [f"{type(exc).__name__}: {exc}"])
            timings.append([n, time.perf_counter() - t0, None])
            continue
        a = report.aggregates()
        s = model.summary
        rows.append([n, "ok", a["n_points"], a["n_failed"], a["mean_delta"], a["median_delta"],
                     a["max_delta"], a["mean_tangent_error"], s["delta_h"], s["objective"],
                     s["ogse_sweeps"], ""])
        timings.append([n, t1 - t0, t2 - t1])
    return rows, timings, errors


def cmd_sweep(cfg: RunConfig) -> int:
    if not cfg.sweep:
        raise InvalidConfig("field 'sweep': must be a nonempty list of sample sizes")
    out = Path(cfg.out)
    rows, timings, errors = run_sweep(cfg)
    write_table(out / "sweep.csv", SWEEP_COLUMNS, rows)
    # wall-clock numbers live apart so sweep.csv stays reproducible
    write_table(out / "sweep_timings.csv", ["n_train", "fit_seconds", "eval_seconds"], timings)
    if cfg.plot:
        from gse import plots

        ok = [r for r in rows if r[1] == "ok"]
        plots.sweep_figure([r[0] for r in ok], [r[5] for r in ok], [r[4] for r in ok],
                           out / "sweep.svg")
    for r in rows:
        print(f"n={r[0]}: {r[1]} median_delta={r[5]}")
    if len(errors) == len(rows):
        return exit_code(errors[0])
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidConfig(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--seed", type=int, help="training-sample seed")
    common.add_argument("--plot", action="store_true", help="also write SVG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="gse", description="Tangent bundle manifold learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="sample train/test CSVs")
    p = sub.add_parser("fit", parents=[common], help="fit a model and save it")
    p.add_argument("--data", help="training CSV (default: generate from the config)")
    p = sub.add_parser("embed", parents=[common], help="embed points from a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="CSV with x1..xp columns")
    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct points from a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="CSV with y1..yq columns")
    p.add_argument("--form", choices=("jacobian", "equivalent"), default=None)
    p = sub.add_parser("eval", parents=[common], help="evaluate a model on a test set")
    p.add_argument("--model", required=True)
    p.add_argument("--test", help="test CSV (default: generate from the config)")
    sub.add_parser("sweep", parents=[common], help="error versus training-set size")
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, InvalidConfig):
        return EXIT_CONFIG
    if isinstance(exc, DATA_ERRORS):
        return EXIT_DATA
    if isinstance(exc, ValueError) and not isinstance(exc, GseError):
        return EXIT_DATA  # unparseable input files
    return EXIT_NUMERIC


def _dispatch(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args)
    out = Path(cfg.out)
    if args.command == "generate":
        return cmd_generate(cfg)
    if args.command == "fit":
        return cmd_fit(cfg, args.data)
    if args.command == "embed":
        return cmd_embed(args.model, args.input, out)
    if args.command == "reconstruct":
        return cmd_reconstruct(args.model, args.input, out, args.form or cfg.reconstruction)
    if args.command == "eval":
        return cmd_eval(cfg, args.model, args.test)
    return cmd_sweep(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (GseError, OSError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        code = exit_code(exc)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        hint = next((h for cls, h in HINTS.items() if isinstance(exc, cls)), None)
        if hint:
            print(f"hint: {hint}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
