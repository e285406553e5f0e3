"""Command-line interface.

Every command resolves its configuration as built-in defaults, then an
optional JSON ``--config`` file, then explicit flags (highest precedence).
Unknown config keys are rejected. Each run writes its reports plus
``manifest.json`` (resolved config and its hash) into the output directory,
which defaults to ``$GANAUDIT_OUT`` or ``./ganaudit-out``.

On failure a JSON error record is printed to stderr (and written to
``error.json`` when possible) and the process exits nonzero.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import click
import numpy as np
from scipy.special import logsumexp

from ganaudit import __version__
from ganaudit.ais import AISConfig, estimate_ll
from ganaudit.analysis import patch_cv, pearson
from ganaudit.autodiff import ShapeError
from ganaudit.density import bits_per_dim, estimate_sigma2, exact_loglik, psnr
from ganaudit.inference import (
    LabeledDataset,
    classification_report,
    get_distance,
    knn1_classify,
    knn1_outlier_score,
    roc_auc,
)
from ganaudit.models import constant_model, linear_model, ppca_fit, random_mlp, sample_dataset, spiral_model
from ganaudit.projection import InversionConfig, project_many
from ganaudit.storage import FormatError, load_dataset, load_model, save_dataset, save_model, write_gten
from ganaudit.svg import PlotError, emit_svg_histogram
from ganaudit.synthetic import make_synthetic
from ganaudit.typicality import EXACT, assemble_report, estimate_entropy, group_lls

OUT_ENV = "GANAUDIT_OUT"
DEFAULT_OUT = "ganaudit-out"


class _Required:
    """Marker for config keys without a default; survives deepcopy as itself."""

    def __deepcopy__(self, memo):
        return self

    def __repr__(self):
        return "<required>"


REQUIRED = _Required()

log = logging.getLogger("ganaudit")


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


AIS_DEFAULTS = {f.name: f.default for f in fields(AISConfig)}
INV_DEFAULTS = {f.name: f.default for f in fields(InversionConfig)}
COMMON = {"seed": 0, "out": None, "workers": 1}

SCHEMAS = {
    "fit-ppca": {"data": REQUIRED, "k": REQUIRED, "name": "ppca"},
    "sample": {"model": REQUIRED, "n": 100, "sigma2": None},
    "project": {"model": REQUIRED, "data": REQUIRED, "inversion": INV_DEFAULTS},
    "ll": {"model": REQUIRED, "data": REQUIRED, "sigma2": None, "sigma2_data": None,
           "estimator": "ais", "trace": False, "ais": AIS_DEFAULTS, "inversion": INV_DEFAULTS},
    "classify": {"method": "ll", "models": [], "data": REQUIRED, "train": None, "sigma2": None,
                 "sigma2_data": None, "estimator": "ais", "distance": "l2",
                 "ais": AIS_DEFAULTS, "inversion": INV_DEFAULTS},
    "outlier": {"method": "ll", "model": None, "train": None, "inliers": REQUIRED, "outliers": REQUIRED,
                "sigma2": None, "sigma2_data": None, "estimator": "ais", "distance": "l2",
                "ais": AIS_DEFAULTS, "inversion": INV_DEFAULTS},
    "typicality": {"model": REQUIRED, "groups": [], "sigma2": None, "sigma2_data": None,
                   "estimator": "ais", "pool": 1000, "group_size": 50, "level": 0.95,
                   "resamples": 10_000, "ais": AIS_DEFAULTS, "inversion": INV_DEFAULTS},
    "cv": {"data": REQUIRED, "patch": 8, "lls": None},
    "plot": {"csv": REQUIRED, "column": "ll_nats", "bins": 30, "report": None, "centre": None,
             "epsilon": None, "title": ""},
    "make-synthetic": {"kind": REQUIRED, "params": {}},
    "make-model": {"kind": REQUIRED, "params": {}},
}
# keys that do not influence results and so stay out of the config hash
_UNHASHED = ("out", "workers")


# --- configuration ------------------------------------------------------------

def _merge(base: dict, over: dict, schema: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        name = prefix + key
        if key not in schema:
            raise ConfigError(name, "unknown config key")
        if isinstance(schema[key], dict) and schema[key] and key not in ("params",):
            if not isinstance(value, dict):
                raise ConfigError(name, "expected an object")
            out[key] = _merge(out[key], value, schema[key], name + ".")
        else:
            out[key] = value
    return out


def resolve_config(command: str, file_cfg: dict | None, flags: dict) -> dict:
    """Defaults < config file < flags. ``flags`` with value None (or empty) are ignored."""
    schema = {**COMMON, **SCHEMAS[command]}
    cfg = {k: v for k, v in schema.items()}
    if file_cfg:
        if not isinstance(file_cfg, dict):
            raise ConfigError("config", "top level must be a JSON object")
        cfg = _merge(cfg, file_cfg, schema)
    given = {}
    for key, value in flags.items():
        if value is None or value == ():
            continue
        if "." in key:
            section, sub = key.split(".", 1)
            given.setdefault(section, {})[sub] = value
        else:
            given[key] = list(value) if isinstance(value, tuple) else value
    cfg = _merge(cfg, given, schema)
    for key, value in cfg.items():
        if value is REQUIRED:
            raise ConfigError(key, "required but not given")
    if cfg["out"] is None:
        cfg["out"] = os.environ.get(OUT_ENV, DEFAULT_OUT)
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    if not isinstance(cfg["workers"], int) or cfg["workers"] < 1:
        raise ConfigError("workers", "must be a positive integer")
    cfg["command"] = command
    return cfg


def config_hash(cfg: dict) -> str:
    material = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    blob = json.dumps(material, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _ais(cfg) -> AISConfig:
    try:
        return AISConfig(**cfg["ais"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("ais", str(exc)) from None


def _inv(cfg) -> InversionConfig:
    try:
        return InversionConfig(**cfg["inversion"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("inversion", str(exc)) from None


# --- helpers ------------------------------------------------------------------

def _path(cfg, key) -> Path:
    p = Path(cfg[key])
    if not p.exists():
        raise ConfigError(key, f"file not found: {p}")
    return p


def _load_model(cfg, key="model", value=None):
    path = Path(value if value is not None else cfg[key])
    if not path.exists():
        raise ConfigError(key, f"file not found: {path}")
    return load_model(path)


def _load_data(cfg, key, value=None):
    path = Path(value if value is not None else cfg[key])
    if not path.exists():
        raise ConfigError(key, f"file not found: {path}")
    return load_dataset(path)


def _check_shape(model, xs, key):
    if tuple(xs.shape[1:]) != model.output_shape:
        raise ConfigError(key, f"sample shape {tuple(xs.shape[1:])} does not match model output "
                               f"shape {model.output_shape}")


def _resolve_sigma2(cfg, model, stored, data=None) -> float:
    """Number, "estimate" (mean squared projection residual) or the model's stored value."""
    value = cfg["sigma2"]
    if value is None:
        if stored is None:
            raise ConfigError("sigma2", "not given and the model manifest stores none")
        return float(stored)
    if value == "estimate":
        if cfg.get("sigma2_data"):
            xs, _, _ = _load_data(cfg, "sigma2_data")
        elif data is not None:
            xs = data
        else:
            raise ConfigError("sigma2_data", "needed to estimate sigma2")
        _check_shape(model, xs, "sigma2_data")
        _, results = project_many(model, xs, _inv(cfg), cfg["seed"], workers=cfg["workers"])
        return estimate_sigma2([r.error for r in results], model.output_dim)
    try:
        s = float(value)
    except (TypeError, ValueError):
        raise ConfigError("sigma2", f"expected a number or 'estimate', got {value!r}") from None
    if not s > 0:
        raise ConfigError("sigma2", "must be positive")
    return s


def _lls(cfg, model, xs, sigma2, ids=None):
    """Per-sample (ll, extra-columns) using the configured estimator."""
    if cfg["estimator"] == "exact":
        try:
            return [(float(exact_loglik(model, sigma2, x)), {}) for x in xs]
        except ValueError as exc:
            raise ConfigError("estimator", str(exc)) from None
    if cfg["estimator"] != "ais":
        raise ConfigError("estimator", f"expected 'ais' or 'exact', got {cfg['estimator']!r}")
    ests = estimate_ll(model, xs, sigma2, _ais(cfg), cfg["seed"], ids=ids, workers=cfg["workers"])
    return [(e.ll, {"chain_spread": e.spread, "mean_acceptance": e.acceptance_rate,
                    "divergences": int(e.divergences.sum()), "flagged": e.flagged,
                    "_trace": logsumexp(e.trace, axis=1) - np.log(e.trace.shape[1])}) for e in ests]


class Run:
    """Collects outputs and writes them once at the end."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.out = Path(cfg["out"])
        self.files: list[str] = []

    def path(self, name) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return self.out / name

    def csv(self, name, header, rows):
        with open(self.path(name), "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])

    def json(self, name, obj):
        self.path(name).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def manifest(self):
        cfg = {k: v for k, v in self.cfg.items()}
        body = {"command": cfg["command"], "version": __version__, "config": cfg,
                "config_hash": config_hash(cfg), "outputs": sorted(self.files)}
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifest.json").write_text(json.dumps(_plain(body), indent=2, sort_keys=True) + "\n",
                                                encoding="utf-8")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    return obj


# --- commands -------------------------------------------------------------------

def _save_model(run: Run, model, sigma2):
    save_model(model, run.path("model.json"), sigma2)
    manifest = json.loads((run.out / "model.json").read_text(encoding="utf-8"))
    run.files += [w["file"] for w in manifest["weights"]]


def cmd_fit_ppca(cfg, run: Run):
    xs, _, _ = _load_data(cfg, "data")
    try:
        k = int(cfg["k"])
    except (TypeError, ValueError):
        raise ConfigError("k", "must be an integer") from None
    flat = xs.reshape(len(xs), -1)
    model, sigma2 = ppca_fit(flat, k, cfg["name"])
    if xs.ndim > 2:
        model = linear_model(model.params["weight"], model.params["mean"], model.name, xs.shape[1:])
    _save_model(run, model, sigma2)
    run.json("fit.json", {"sigma2": sigma2, "psnr_db": psnr(sigma2), "k": k, "n": len(xs),
                          "dim": model.output_dim})


def cmd_sample(cfg, run: Run):
    model, stored = _load_model(cfg)
    sigma2 = cfg["sigma2"]
    sigma2 = float(stored if sigma2 is None and stored is not None else (sigma2 or 0.0))
    if sigma2 < 0:
        raise ConfigError("sigma2", "must be non-negative")
    n = int(cfg["n"])
    if n < 1:
        raise ConfigError("n", "must be >= 1")
    xs = sample_dataset(model, sigma2, n, cfg["seed"])
    save_dataset(run.path("samples.gten"), xs, group="generated")
    run.files.append("samples.gten.json")
    run.json("sample.json", {"n": n, "sigma2": sigma2, "shape": list(xs.shape[1:])})


def cmd_project(cfg, run: Run):
    model, _ = _load_model(cfg)
    xs, labels, group = _load_data(cfg, "data")
    _check_shape(model, xs, "data")
    ids, results = project_many(model, xs, _inv(cfg), cfg["seed"], workers=cfg["workers"])
    dim = model.output_dim
    run.csv("project.csv", ["sample_id", "group_label", "label", "error", "winner_restart"],
            [(i, group, int(lab), r.error, r.winner)
             for i, lab, r in zip(ids, labels, results)])
    write_gten(run.path("latents.gten"), np.stack([r.z_star for r in results]))
    errs = np.array([r.error for r in results])
    s2 = estimate_sigma2(errs, dim)
    run.json("project.json", {"n": len(errs), "mean_error": errs.mean(), "median_error": np.median(errs),
                              "sigma2_estimate": s2, "psnr_db": psnr(s2) if s2 > 0 else float("inf")})


def cmd_ll(cfg, run: Run):
    model, stored = _load_model(cfg)
    xs, labels, group = _load_data(cfg, "data")
    _check_shape(model, xs, "data")
    sigma2 = _resolve_sigma2(cfg, model, stored, xs)
    res = _lls(cfg, model, xs, sigma2)
    dim = model.output_dim
    extra = ["chain_spread", "mean_acceptance", "divergences", "flagged"] if cfg["estimator"] == "ais" else []
    rows = [(i, group, int(lab), ll, float(bits_per_dim(ll, dim)), *[e[c] for c in extra])
            for i, (lab, (ll, e)) in enumerate(zip(labels, res))]
    run.csv("ll.csv", ["sample_id", "group", "label", "ll_nats", "ll_bits_per_dim", *extra], rows)
    if cfg["trace"]:
        if cfg["estimator"] != "ais":
            raise ConfigError("trace", "per-step traces need the ais estimator")
        run.csv("trace.csv", ["sample_id", "step", "ll_nats"],
                [(i, t + 1, v) for i, (_, e) in enumerate(res) for t, v in enumerate(e["_trace"])])
    lls = np.array([r[0] for r in res])
    run.json("ll.json", {"n": len(lls), "sigma2": sigma2, "mean_ll_nats": lls.mean(),
                         "mean_ll_bpd": float(bits_per_dim(lls.mean(), dim)),
                         "flagged": int(sum(e.get("flagged", False) for _, e in res)),
                         "config_hash": config_hash(cfg)})


def _class_models(cfg):
    if len(cfg["models"]) < 2:
        raise ConfigError("models", "need at least two class models")
    loaded = [_load_model(cfg, "models", p) for p in cfg["models"]]
    shapes = {m.output_shape for m, _ in loaded}
    if len(shapes) != 1:
        raise ConfigError("models", "class models disagree on output shape")
    return loaded


def _class_scores(cfg, xs, models, ids):
    """Score matrix (n, classes) where larger means more likely, plus per-class sigma2."""
    cols, sig = [], []
    for c, (m, stored) in enumerate(models):
        _check_shape(m, xs, "data")
        if cfg["method"] == "ll":
            s2 = _resolve_sigma2(cfg, m, stored)
            cols.append([ll for ll, _ in _lls(cfg, m, xs, s2, ids)])
            sig.append(s2)
        else:
            _, results = project_many(m, xs, _inv(cfg), cfg["seed"], ids=ids, workers=cfg["workers"])
            dist = get_distance(cfg["distance"])
            cols.append([-dist(x, r.reconstruction) for x, r in zip(xs, results)])
    return np.array(cols).T, sig


def cmd_classify(cfg, run: Run):
    xs, labels, _ = _load_data(cfg, "data")
    method = cfg["method"]
    ids = list(range(len(xs)))
    if method == "1nn":
        if not cfg["train"]:
            raise ConfigError("train", "required for method 1nn")
        txs, tlabels, _ = _load_data(cfg, "train")
        train = LabeledDataset(txs, tlabels)
        pred = np.array([knn1_classify(train, x, cfg["distance"]) for x in xs])
        n_classes = int(max(labels.max(), tlabels.max())) + 1
        scores = np.zeros((len(xs), 0))
        ties = []
    elif method in ("ll", "projection"):
        models = _class_models(cfg)
        scores, _ = _class_scores(cfg, xs, models, ids)
        pred = np.argmax(scores, axis=1)
        ties = [i for i, row in enumerate(scores) if np.sum(row == row.max()) > 1]
        for i in ties:
            log.info("sample %d: tie between classes, picked %d", i, pred[i])
        n_classes = max(len(models), int(labels.max()) + 1)
    else:
        raise ConfigError("method", f"expected ll, projection or 1nn, got {method!r}")
    report = classification_report(labels, pred, n_classes, method, scores, ties)
    header = ["sample_id", "true", "predicted", *[f"score_{c}" for c in range(scores.shape[1])]]
    run.csv("classify.csv", header, [(i, int(t), int(p), *s) for i, t, p, s in
                                     zip(ids, labels, pred, scores)])
    run.json("classify.json", {"method": method, "accuracy": report.accuracy,
                               "confusion": report.confusion, "ties": ties, "n": len(xs),
                               "config_hash": config_hash(cfg)})


def cmd_outlier(cfg, run: Run):
    ins, _, _ = _load_data(cfg, "inliers")
    outs, _, _ = _load_data(cfg, "outliers")
    method = cfg["method"]
    both = np.concatenate([ins, outs])
    ids = list(range(len(both)))
    if method == "1nn":
        if not cfg["train"]:
            raise ConfigError("train", "required for method 1nn")
        train, _, _ = _load_data(cfg, "train")
        scores = np.array([knn1_outlier_score(train, x, cfg["distance"]) for x in both])
    elif method in ("ll", "projection"):
        if not cfg["model"]:
            raise ConfigError("model", f"required for method {method}")
        model, stored = _load_model(cfg)
        _check_shape(model, both, "inliers")
        if method == "ll":
            s2 = _resolve_sigma2(cfg, model, stored)
            scores = -np.array([ll for ll, _ in _lls(cfg, model, both, s2, ids)])
        else:
            _, results = project_many(model, both, _inv(cfg), cfg["seed"], ids=ids, workers=cfg["workers"])
            dist = get_distance(cfg["distance"])
            scores = np.array([dist(x, r.reconstruction) for x, r in zip(both, results)])
    else:
        raise ConfigError("method", f"expected ll, projection or 1nn, got {method!r}")
    groups = ["inlier"] * len(ins) + ["outlier"] * len(outs)
    run.csv("outlier.csv", ["sample_id", "group", "score"], list(zip(ids, groups, scores)))
    auc = roc_auc(scores[:len(ins)], scores[len(ins):])
    run.json("outlier.json", {"method": method, "auc": auc, "n_inliers": len(ins), "n_outliers": len(outs),
                              "config_hash": config_hash(cfg)})


def cmd_typicality(cfg, run: Run):
    model, stored = _load_model(cfg)
    sigma2 = _resolve_sigma2(cfg, model, stored)
    if cfg["estimator"] == "exact":
        est_cfg = EXACT
    elif cfg["estimator"] == "ais":
        est_cfg = _ais(cfg)
    else:
        raise ConfigError("estimator", f"expected 'ais' or 'exact', got {cfg['estimator']!r}")
    try:
        ent = estimate_entropy(model, sigma2, int(cfg["pool"]), est_cfg, cfg["seed"], cfg["workers"])
    except ValueError as exc:
        raise ConfigError("pool", str(exc)) from None
    groups = {}
    for k, path in enumerate(cfg["groups"]):
        xs, _, _ = _load_data(cfg, "groups", path)
        _check_shape(model, xs, "groups")
        name = Path(path).name.removesuffix(".gten")
        if name in groups or name == "generated":
            name = f"{name}-{k}"
        ids = [(k + 1) * 10_000_000 + i for i in range(len(xs))]
        groups[name] = group_lls(model, xs, sigma2, est_cfg, cfg["seed"], ids, cfg["workers"])
    try:
        report = assemble_report(ent, groups, est_cfg, int(cfg["group_size"]), float(cfg["level"]),
                                 int(cfg["resamples"]), cfg["seed"], dim=model.output_dim)
    except ValueError as exc:
        raise ConfigError("group_size", str(exc)) from None
    dim = model.output_dim
    rows = []
    for name, lls in {"generated": ent.lls, **groups}.items():
        rows += [(name, i, ll, float(bits_per_dim(ll, dim))) for i, ll in enumerate(lls)]
    run.csv("typicality.csv", ["group", "sample_id", "ll_nats", "ll_bits_per_dim"], rows)
    body = report.to_dict()
    body.update({"sigma2": sigma2, "entropy_bpd": float(bits_per_dim(ent.value, dim)),
                 "config_hash": config_hash(cfg)})
    run.json("typicality.json", body)


def cmd_cv(cfg, run: Run):
    xs, _, group = _load_data(cfg, "data")
    try:
        cvs = [patch_cv(x, int(cfg["patch"])) for x in xs]
    except ValueError as exc:
        raise ConfigError("patch", str(exc)) from None
    header = ["sample_id", "group", "cv"]
    rows = [[i, group, c] for i, c in enumerate(cvs)]
    summary = {"n": len(cvs), "mean_cv": float(np.mean(cvs))}
    if cfg["lls"]:
        lls = _read_column(_path(cfg, "lls"), "ll_nats", "lls")
        if len(lls) != len(cvs):
            raise ConfigError("lls", f"{len(lls)} log-likelihoods for {len(cvs)} images")
        header.append("ll_nats")
        for r, ll in zip(rows, lls):
            r.append(ll)
        summary["pearson"] = pearson(cvs, lls)
    run.csv("cv.csv", header, rows)
    run.json("cv.json", summary)


def _read_column(path: Path, column: str, key: str) -> list[float]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ConfigError(key, f"{path} has no {column!r} column")
        try:
            return [float(row[column]) for row in reader]
        except ValueError as exc:
            raise ConfigError(key, f"{path}: {exc}") from None


def cmd_plot(cfg, run: Run):
    centre, eps = cfg["centre"], cfg["epsilon"]
    if cfg["report"]:
        rep = json.loads(_path(cfg, "report").read_text(encoding="utf-8"))
        centre = -rep["entropy"] if centre is None else centre
        eps = rep["epsilon"] if eps is None else eps
    emit_svg_histogram(_path(cfg, "csv"), run.path("plot.svg"), cfg["column"], int(cfg["bins"]),
                       None if centre is None else float(centre), None if eps is None else float(eps),
                       title=cfg["title"])


def cmd_make_synthetic(cfg, run: Run):
    sets = make_synthetic(cfg["kind"], cfg["params"], cfg["seed"])
    for s in sets:
        save_dataset(run.path(f"{s.name}.gten"), s.samples, s.labels, s.group)
        run.files.append(f"{s.name}.gten.json")


def cmd_make_model(cfg, run: Run):
    p = dict(cfg["params"])
    kind = cfg["kind"]
    sigma2 = p.pop("sigma2", None)
    try:
        if kind == "constant":
            model = constant_model(np.asarray(p.pop("value")), int(p.pop("latent_dim", 1)))
        elif kind == "spiral":
            model = spiral_model(**p)
            p = {}
        elif kind == "mlp":
            model = random_mlp(int(p.pop("latent_dim")), [int(h) for h in p.pop("hidden", [])],
                               int(p.pop("output_dim")), p.pop("activation", "tanh"), cfg["seed"],
                               float(p.pop("gain", 1.0)), p.pop("output_shape", None))
        elif kind == "linear":
            model = linear_model(np.asarray(p.pop("weight")), p.pop("mean", None))
        else:
            raise ConfigError("kind", f"expected constant, spiral, mlp or linear, got {kind!r}")
    except (KeyError, TypeError) as exc:
        raise ConfigError("params", f"missing or invalid parameter {exc}") from None
    if p:
        raise ConfigError("params", f"unknown parameter(s): {', '.join(sorted(p))}")
    _save_model(run, model, sigma2)


COMMANDS = {
    "fit-ppca": cmd_fit_ppca, "sample": cmd_sample, "project": cmd_project, "ll": cmd_ll,
    "classify": cmd_classify, "outlier": cmd_outlier, "typicality": cmd_typicality, "cv": cmd_cv,
    "plot": cmd_plot, "make-synthetic": cmd_make_synthetic, "make-model": cmd_make_model,
}

_EXIT_CONFIG = 2
_EXIT_RUNTIME = 1


def run_command(command: str, file_cfg: dict | None = None, flags: dict | None = None) -> dict:
    """Resolve the config, run ``command`` and write its manifest; returns the resolved config."""
    cfg = resolve_config(command, file_cfg, flags or {})
    run = Run(cfg)
    COMMANDS[command](cfg, run)
    run.manifest()
    return cfg


def _error_record(exc: BaseException, command: str) -> tuple[dict, int]:
    code = _EXIT_CONFIG if isinstance(exc, (ConfigError, FormatError, ShapeError, PlotError)) else _EXIT_RUNTIME
    rec = {"status": "error", "command": command, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        rec["field"] = exc.field
    return rec, code


def _invoke(command: str, config_file, out_override, flags: dict):
    file_cfg = None
    try:
        if config_file:
            try:
                file_cfg = json.loads(Path(config_file).read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError("config", f"invalid JSON: {exc}") from None
            except OSError as exc:
                raise ConfigError("config", str(exc)) from None
        run_command(command, file_cfg, flags)
    except Exception as exc:  # every failure becomes an error record
        log.debug("command failed", exc_info=True)
        rec, code = _error_record(exc, command)
        click.echo(json.dumps(rec), err=True)
        out = out_override or (file_cfg.get("out") if isinstance(file_cfg, dict) else None)
        out = out or os.environ.get(OUT_ENV, DEFAULT_OUT)
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(json.dumps(rec, indent=2) + "\n", encoding="utf-8")
        except OSError:
            pass
        sys.exit(code)


# --- click wiring -----------------------------------------------------------------

def _common(fn):
    fn = click.option("--config", "config_file", type=click.Path(dir_okay=False), help="JSON config file.")(fn)
    fn = click.option("--seed", type=int, help="Master seed (default 0).")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), help=f"Output directory (default ${OUT_ENV}).")(fn)
    fn = click.option("--workers", type=int, help="Worker processes (default 1).")(fn)
    return fn


def _ais_opts(fn):
    fn = click.option("--ais-steps", type=int, help="Annealing levels T.")(fn)
    fn = click.option("--ais-chains", type=int, help="Chains per sample.")(fn)
    fn = click.option("--leapfrog-steps", type=int)(fn)
    fn = click.option("--estimator", type=click.Choice(["ais", "exact"]))(fn)
    return fn


def _inv_opts(fn):
    fn = click.option("--iterations", type=int, help="Adam iterations per restart.")(fn)
    fn = click.option("--restarts", type=int)(fn)
    return fn


def _sigma_opts(fn):
    fn = click.option("--sigma2", help="Noise variance, or 'estimate'.")(fn)
    fn = click.option("--sigma2-data", type=click.Path(), help="Data for sigma2=estimate.")(fn)
    return fn


def _flags(kw: dict) -> tuple:
    config_file = kw.pop("config_file", None)
    renames = {"ais_steps": "ais.steps", "ais_chains": "ais.chains", "leapfrog_steps": "ais.leapfrog_steps",
               "iterations": "inversion.iterations", "restarts": "inversion.restarts"}
    flags = {}
    for k, v in kw.items():
        if k == "sigma2" and v is not None and v != "estimate":
            try:
                v = float(v)
            except ValueError:
                pass
        if k == "params" and v is not None:
            try:
                v = json.loads(v)
            except json.JSONDecodeError as exc:
                raise click.BadParameter(f"invalid JSON: {exc}", param_hint="--params") from None
        flags[renames.get(k, k)] = v
    return config_file, kw.get("out"), flags


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="More logging.")
def main(verbose):
    """Audit generative decoders through likelihood estimates and manifold projections."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose, format="%(levelname)s %(name)s: %(message)s")


def _register(name, *decorators, help=""):
    def wrap(fn):
        def body(**kw):
            config_file, out, flags = _flags(kw)
            _invoke(name, config_file, out, flags)
        body.__doc__ = help or fn.__doc__
        cmd = body
        for d in reversed(decorators):
            cmd = d(cmd)
        return main.command(name)(cmd)
    return wrap


@_register("fit-ppca", _common, click.option("--data", type=click.Path()), click.option("--k", type=int),
           click.option("--name"))
def _fit_ppca():
    """Fit a PPCA decoder to a dataset; writes model.json and the ML sigma2."""


@_register("sample", _common, click.option("--model", type=click.Path()), click.option("--n", type=int),
           click.option("--sigma2", type=float))
def _sample():
    """Draw noisy samples from a model."""


@_register("project", _common, _inv_opts, click.option("--model", type=click.Path()),
           click.option("--data", type=click.Path()))
def _project():
    """Project samples onto the model manifold; reports l2 reconstruction errors."""


@_register("ll", _common, _ais_opts, _inv_opts, _sigma_opts, click.option("--model", type=click.Path()),
           click.option("--data", type=click.Path()),
           click.option("--trace", is_flag=True, default=None, help="Also write per-step running estimates."))
def _ll():
    """Per-sample log-likelihood (nats and bits/dim)."""


@_register("classify", _common, _ais_opts, _inv_opts, _sigma_opts,
           click.option("--method", type=click.Choice(["ll", "projection", "1nn"])),
           click.option("--model", "models", multiple=True, type=click.Path(), help="One per class, in order."),
           click.option("--data", type=click.Path()), click.option("--train", type=click.Path()),
           click.option("--distance"))
def _classify():
    """Generative or nearest-neighbour classification of a labelled dataset."""


@_register("outlier", _common, _ais_opts, _inv_opts, _sigma_opts,
           click.option("--method", type=click.Choice(["ll", "projection", "1nn"])),
           click.option("--model", type=click.Path()), click.option("--train", type=click.Path()),
           click.option("--inliers", type=click.Path()), click.option("--outliers", type=click.Path()),
           click.option("--distance"))
def _outlier():
    """Outlier scores for inliers and outliers plus ROC AUC."""


@_register("typicality", _common, _ais_opts, _inv_opts, _sigma_opts, click.option("--model", type=click.Path()),
           click.option("--group", "groups", multiple=True, type=click.Path()),
           click.option("--pool", type=int), click.option("--group-size", type=int),
           click.option("--level", type=float), click.option("--resamples", type=int))
def _typicality():
    """Typical-set test of each dataset group against the model."""


@_register("cv", _common, click.option("--data", type=click.Path()), click.option("--patch", type=int),
           click.option("--lls", type=click.Path(), help="ll.csv to correlate against."))
def _cv():
    """Mean patch coefficient of variation per image."""


@_register("plot", _common, click.option("--csv", type=click.Path()), click.option("--column"),
           click.option("--bins", type=int), click.option("--report", type=click.Path()),
           click.option("--centre", type=float), click.option("--epsilon", type=float), click.option("--title"))
def _plot():
    """SVG histogram per group, with mean lines and an optional eps band."""


@_register("make-synthetic", _common, click.option("--kind"), click.option("--params", help="JSON object."))
def _make_synthetic():
    """Write a synthetic dataset (GTEN plus label sidecar)."""


@_register("make-model", _common, click.option("--kind"), click.option("--params", help="JSON object."))
def _make_model():
    """Write a constant, spiral, linear or random MLP model."""


if __name__ == "__main__":
    main()
