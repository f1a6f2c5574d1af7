"""Seeded benchmark harness: configs, repeated runs and reports.

A run draws (or splits) a data set per repeat with seed ``base + i``,
optionally maps it through the out-of-bag transform or a PCA projection,
runs the selected estimators and aggregates the mean absolute error of the
estimated class prior.
"""

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources

import jsonschema
import numpy as np
import yaml

from .alphamax import alphamax, alphamax_n
from .base import PriorEstimate, PUDataset
from .datagen import SyntheticSpec, gen_synthetic, load_csv, pu_split, zscore_pca
from .exceptions import (DegenerateComponentError, EstimationFailedError,
                         InvalidInputError)
from .msgmm import fit as msgmm_fit
from .transform import fit_nontraditional, oob_scores

logger = logging.getLogger(__name__)

METHODS = ("msgmm", "alphamax-n", "alphamax")
REPORT_FORMAT = "noisypu.report/1"


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""


@dataclass
class SyntheticSource:
    family: str = "gaussian"
    delta_mu: float = 2.0
    alpha: float = 0.25
    beta: float = 0.95
    n_unlabeled: int = 10000
    n_labeled: int = 1000
    dim: int = 1
    kind: str = "synthetic"


@dataclass
class CsvSource:
    path: str = ""
    label_column: object = None
    positive_label: object = None
    feature_columns: list = None
    binarize: str = None
    n_labeled: int = 1000
    beta: float = 1.0
    max_unlabeled: int = 10000
    kind: str = "csv"


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a benchmark run.

    ``data`` is a :class:`SyntheticSource` or :class:`CsvSource`;
    ``estimators`` lists names from ``msgmm``, ``alphamax-n`` and
    ``alphamax``. ``transform`` and ``pca`` select mutually exclusive
    preprocessing pipelines. ``workers = 0`` uses every CPU.
    """

    data: object = field(default_factory=SyntheticSource)
    estimators: list = field(default_factory=lambda: ["msgmm", "alphamax-n"])
    transform: bool = False
    pca: int = 0
    repeats: int = 50
    seed: int = 0
    workers: int = 0
    output: str = None
    transform_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")
        if self.pca < 0:
            raise ConfigError("pca must be non-negative")
        if self.transform and self.pca:
            raise ConfigError("transform and pca are mutually exclusive")
        if self.workers < 0:
            raise ConfigError("workers must be non-negative (0 = all CPUs)")
        unknown = [m for m in self.estimators if m not in METHODS]
        if unknown or not self.estimators:
            raise ConfigError(f"unknown estimators {unknown}; choose from {list(METHODS)}")

    def to_dict(self):
        d = asdict(self)
        d["data"] = asdict(self.data)
        return d

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        raw = dict(raw)
        data = dict(raw.pop("data", {}) or {})
        kind = data.get("kind", "synthetic")
        src_cls = {"synthetic": SyntheticSource, "csv": CsvSource}.get(kind)
        if src_cls is None:
            raise ConfigError(f"unknown data kind {kind!r}")
        ests = raw.get("estimators", ["msgmm", "alphamax-n"])
        if ests == "all":
            raw["estimators"] = list(METHODS)
        elif isinstance(ests, str):
            raw["estimators"] = [ests]
        try:
            source = src_cls(**data)
            return cls(data=source, **raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text):
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        return cls.from_dict(raw or {})

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def _make_dataset(cfg, seed):
    src = cfg.data
    if isinstance(src, SyntheticSource):
        spec = SyntheticSpec(src.family, src.delta_mu, src.alpha, src.beta,
                             src.n_unlabeled, src.n_labeled, seed, src.dim)
        return gen_synthetic(spec)
    X, y = load_csv(src.path, src.label_column, src.feature_columns,
                    src.positive_label, src.binarize)
    return pu_split(X, y, src.n_labeled, src.beta, seed, src.max_unlabeled)


def _estimate(method, U, L, seed):
    if method == "msgmm":
        return msgmm_fit(PUDataset(U, L), seed=seed).estimate
    if method == "alphamax-n":
        return alphamax_n(U, L)
    a = alphamax(U, L)
    return PriorEstimate(a, None, a, 1.0, "AlphaMax")


def run_repeat(cfg, index):
    """Run one repeat; returns a JSON-ready record and its wall time."""
    seed = int(cfg.seed) + index
    start = time.perf_counter()
    record = {"repeat": index, "seed": seed, "estimates": {}, "failures": {}}
    try:
        ds = _make_dataset(cfg, seed)
    except (InvalidInputError, OSError) as exc:
        record.update(alpha_true=None, beta_true=None, status="failed",
                      reason=f"data: {exc}")
        return record, time.perf_counter() - start
    record["alpha_true"] = ds.truth.alpha_true
    record["beta_true"] = ds.truth.beta_true
    U, L = ds.unlabeled, ds.labeled
    try:
        if cfg.transform:
            model = fit_nontraditional(ds, seed=seed, **cfg.transform_options)
            tp = oob_scores(model, ds)
            U, L = tp.scores_unlabeled, tp.scores_labeled
            record["oob_auc"] = model.oob_auc_
        elif cfg.pca:
            Z = zscore_pca(np.vstack([U, L]), cfg.pca)
            U, L = Z[:len(U)], Z[len(U):]
    except (InvalidInputError, EstimationFailedError) as exc:
        record.update(status="failed", reason=f"preprocessing: {exc}")
        return record, time.perf_counter() - start
    for method in cfg.estimators:
        try:
            est = _estimate(method, U, L, seed)
        except (InvalidInputError, EstimationFailedError,
                DegenerateComponentError, ValueError) as exc:
            record["failures"][method] = str(exc)
            continue
        record["estimates"][method] = {
            k: (None if v is None else float(v))
            for k, v in est.to_dict().items() if k != "method"
        }
    if not record["failures"]:
        record["status"] = "ok"
    else:
        record["status"] = "partial" if record["estimates"] else "failed"
    return record, time.perf_counter() - start


def _run_repeat_star(args):
    return run_repeat(*args)


def aggregate(records, methods):
    """Mean absolute error and its standard error per method."""
    out = {}
    for m in methods:
        errs = [abs(r["estimates"][m]["alpha_star"] - r["alpha_true"])
                for r in records if m in r.get("estimates", {})]
        n = len(errs)
        failed = len(records) - n
        if n == 0:
            out[m] = {"mae": None, "stderr": None, "n_success": 0, "n_failed": failed}
            continue
        mae = math.fsum(errs) / n
        se = float(np.std(errs, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        out[m] = {"mae": mae, "stderr": se, "n_success": n, "n_failed": failed}
    return out


@dataclass
class RunReport:
    config: dict
    records: list
    aggregates: dict
    wall_times: list = field(default_factory=list)

    def to_dict(self):
        # wall times are kept out so that reruns are byte-identical
        return {"format": REPORT_FORMAT, "config": self.config,
                "records": self.records, "aggregates": self.aggregates}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def summary_rows(self):
        src = self.config["data"]
        family = src.get("family", os.path.basename(str(src.get("path", ""))))
        alpha = src.get("alpha", "")
        rows = []
        for m in self.config["estimators"]:
            agg = self.aggregates[m]
            rows.append({"family": family, "alpha": alpha, "beta": src.get("beta", ""),
                         "method": m, "mae": "" if agg["mae"] is None else f"{agg['mae']:.6f}",
                         "stderr": "" if agg["stderr"] is None else f"{agg['stderr']:.6f}",
                         "n_success": agg["n_success"], "n_failed": agg["n_failed"]})
        return rows

    def write(self, path):
        """Write ``path`` (JSON), a ``.csv`` summary and a ``.timing.json`` sidecar."""
        base, _ = os.path.splitext(path)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        rows = self.summary_rows()
        with open(base + ".csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        with open(base + ".timing.json", "w", encoding="utf-8") as fh:
            json.dump({"wall_seconds": self.wall_times}, fh, indent=2)


def run(cfg):
    """Execute every repeat of ``cfg`` and assemble a :class:`RunReport`."""
    jobs = [(cfg, i) for i in range(cfg.repeats)]
    workers = cfg.workers or os.cpu_count() or 1
    if workers > 1 and cfg.repeats > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.repeats)) as pool:
            results = list(pool.map(_run_repeat_star, jobs))
    else:
        results = [run_repeat(*job) for job in jobs]
    records = [r for r, _ in results]
    report = RunReport(cfg.to_dict(), records, aggregate(records, cfg.estimators),
                       [t for _, t in results])
    if cfg.output:
        report.write(cfg.output)
    return report


def report_schema():
    text = resources.files("noisypu").joinpath("schemas/report.schema.json").read_text()
    return json.loads(text)


def validate_report(doc):
    """Raise ``jsonschema.ValidationError`` if ``doc`` breaks the report schema."""
    jsonschema.validate(doc, report_schema())
