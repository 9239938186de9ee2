"""Command-line pipeline: synth -> extract -> train-clf -> train-gan -> evaluate -> explain.

Every stage reads and writes plain files.  Outputs are written atomically
(temporary file, then rename) and each artifact records the run
configuration and seed that produced it.

Configuration file format (``--config``), one ``key = value`` per line,
``#`` starts a comment::

    seed = 7
    synth.n_sessions = 20
    synth.noise = 0.1
    synth.segment_s = 10, 30
    clf.epochs = 60
    gan.epochs = 200
    lime.n_samples = 1000

``--set key=value`` (repeatable) overrides the file.  Run ``engagecf
config`` to print every key with its default.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cfgan, classifier
from .data import (FEATURE_NAMES, HIGH, LABEL_NAMES, LOW, Dataset, check_feature_vector, dataset_from_csv,
                   dataset_to_csv, fit_normalizer, normalize, normalize_dataset, split_by_session, to_native)
from .errors import EngageError
from .evalx import importance_change_correlation, render_table, summary
from .explain import LimeConfig
from .features import WindowSpec, extract_corpus
from .recommend import load_templates, render, top_k_changes
from .synthgen import EngagementProfile, generate_corpus, load_stream, stream_to_jsonl

# -- run configuration ------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    n_sessions: int = 20
    profile: EngagementProfile = EngagementProfile(noise=0.1)
    window: WindowSpec = WindowSpec()
    train_fraction: float = 0.7
    clf: classifier.TrainConfig = classifier.TrainConfig()
    gan: cfgan.GanConfig = cfgan.GanConfig()
    lime: LimeConfig = LimeConfig()
    eval_max_samples: int = 200
    k: int = 3

    def seeded(self) -> "RunConfig":
        """Propagate the run seed into every stage config."""
        return dataclasses.replace(
            self,
            clf=dataclasses.replace(self.clf, seed=self.seed),
            gan=dataclasses.replace(self.gan, seed=self.seed),
            lime=dataclasses.replace(self.lime, seed=self.seed),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "synth": {"n_sessions": self.n_sessions, **self.profile.to_dict()},
            "window": dataclasses.asdict(self.window),
            "split": {"train_fraction": self.train_fraction},
            "clf": dataclasses.asdict(self.clf),
            "gan": self.gan.to_dict(),
            "lime": dataclasses.asdict(self.lime),
            "eval": {"max_samples": self.eval_max_samples},
            "explain": {"k": self.k},
        }


# config key prefix -> RunConfig attribute holding that section's dataclass
_SECTIONS = {"synth": "profile", "window": "window", "clf": "clf", "gan": "gan", "lime": "lime"}
_TOP = {"seed": "seed", "synth.n_sessions": "n_sessions", "split.train_fraction": "train_fraction",
        "eval.max_samples": "eval_max_samples", "explain.k": "k"}
_RESERVED = {"clf.seed", "gan.seed", "lime.seed"}


def config_keys() -> dict[str, object]:
    base = RunConfig()
    keys = {k: getattr(base, attr) for k, attr in _TOP.items()}
    for sec, attr in _SECTIONS.items():
        for f in dataclasses.fields(getattr(base, attr)):
            key = f"{sec}.{f.name}"
            if key not in _RESERVED:
                keys[key] = getattr(getattr(base, attr), f.name)
    return keys


def _convert(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(v) if kind is not int else int(v.strip()) for v in raw.split(",") if v.strip())
        if isinstance(default, bool):
            words = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}
            if raw.lower() not in words:
                raise ValueError(raw)
            return words[raw.lower()]
        if isinstance(default, int):
            return int(raw)
        return float(raw)
    except ValueError:
        raise EngageError("invalid-config", f"config field {key!r}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config_text(text: str, source: str = "config") -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise EngageError("invalid-config", f"{source}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def build_config(pairs: dict[str, str], seed: int | None = None) -> RunConfig:
    """Apply string ``pairs`` to the defaults; unknown keys and bad values name the field."""
    known = config_keys()
    cfg = RunConfig()
    section_updates: dict[str, dict] = {}
    top_updates = {}
    for key, raw in pairs.items():
        if key in _RESERVED:
            raise EngageError("invalid-config", f"config field {key!r} is set from the run seed; use 'seed' instead")
        if key not in known:
            raise EngageError("invalid-config", f"unknown config field {key!r}")
        value = _convert(key, raw, known[key])
        if key in _TOP:
            top_updates[_TOP[key]] = value
        else:
            sec, name = key.split(".", 1)
            section_updates.setdefault(_SECTIONS[sec], {})[name] = value
    if seed is not None:
        top_updates["seed"] = seed
    for attr, upd in section_updates.items():
        try:
            top_updates[attr] = dataclasses.replace(getattr(cfg, attr), **upd)
        except EngageError as exc:
            sec = next(s for s, a in _SECTIONS.items() if a == attr)
            raise EngageError("invalid-config", f"config section {sec!r}: {exc.message}") from None
    cfg = dataclasses.replace(cfg, **top_updates)
    checks = {
        "synth.n_sessions": cfg.n_sessions >= 2,
        "split.train_fraction": 0.0 < cfg.train_fraction < 1.0,
        "eval.max_samples": cfg.eval_max_samples >= 2,
        "explain.k": 1 <= cfg.k <= len(FEATURE_NAMES),
    }
    for key, ok in checks.items():
        if not ok:
            raise EngageError("invalid-config", f"config field {key!r} out of range")
    return cfg.seeded()


def load_run_config(args) -> RunConfig:
    pairs: dict[str, str] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise EngageError("io-error", f"config file not found: {path}")
        pairs.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise EngageError("invalid-config", f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value
    cfg = build_config(pairs, seed=getattr(args, "seed", None))
    if getattr(args, "k", None) is not None:
        if not 1 <= args.k <= len(FEATURE_NAMES):
            raise EngageError("invalid-config", f"--k must be in [1, {len(FEATURE_NAMES)}]")
        cfg = dataclasses.replace(cfg, k=args.k)
    return cfg


# -- file helpers -----------------------------------------------------------------


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    write_atomic(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise EngageError("io-error", f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EngageError("invalid-file", f"{path} is not valid JSON: {exc}") from None


def _require_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise EngageError("io-error", f"file not found: {path}")
    return path


def _meta_path(csv_path) -> Path:
    return Path(str(csv_path) + ".meta.json")


def _provenance(cfg: RunConfig, stage: str, **extra) -> dict:
    return {"stage": stage, "seed": cfg.seed, "config": cfg.to_dict(), **extra}


def load_csv(path) -> Dataset:
    return dataset_from_csv(_require_file(path).read_text(encoding="utf-8"))


def load_clf(path) -> tuple[classifier.MlpModel, dict]:
    d = read_json(path)
    return classifier.model_from_dict(d), d.get("extra", {})


def load_gan(path) -> tuple[cfgan.CfGanModel, dict]:
    d = read_json(path)
    return cfgan.model_from_dict(d), d.get("extra", {})


def _check_pair(clf: classifier.MlpModel, gan: cfgan.CfGanModel) -> None:
    if clf.norm_stats != gan.norm_stats:
        raise EngageError("incompatible-models", "classifier and cfgan were trained with different NormStats")


def _held_out(ds: Dataset, clf_extra: dict) -> Dataset:
    """Rows whose session was not used to train the classifier (all rows if unknown)."""
    train_sessions = set(clf_extra.get("split", {}).get("train_sessions", []))
    keep = np.array([s not in train_sessions for s in ds.session_ids], dtype=bool)
    if not keep.any():
        raise EngageError("empty-dataset", "no held-out sessions in this dataset")
    return ds.subset(keep)


def _say(msg: str = "") -> None:
    print(msg, flush=True)


# -- stages -------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    streams = generate_corpus(cfg.n_sessions, cfg.seed, cfg.profile)
    paths = []
    for s in streams:
        p = out_dir / f"{s.session_id}.jsonl"
        write_atomic(p, stream_to_jsonl(s))
        paths.append(p)
    write_json(out_dir / "manifest.json", _provenance(cfg, "synth", sessions=[p.name for p in paths]))
    _say(f"wrote {len(paths)} sessions to {out_dir}")
    return paths


def _stream_paths(streams) -> list[Path]:
    streams = Path(streams)
    if streams.is_dir():
        manifest = streams / "manifest.json"
        if manifest.is_file():
            return [streams / name for name in read_json(manifest)["sessions"]]
        paths = sorted(streams.glob("*.jsonl"))
    else:
        paths = [streams]
    if not paths:
        raise EngageError("io-error", f"no stream files found in {streams}")
    return [_require_file(p) for p in paths]


def cmd_extract(cfg: RunConfig, streams, out_csv) -> Dataset:
    paths = _stream_paths(streams)
    ds = extract_corpus([load_stream(p) for p in paths], cfg.window)
    write_atomic(out_csv, dataset_to_csv(ds))
    write_json(_meta_path(out_csv), _provenance(cfg, "extract", streams=[p.name for p in paths], n_windows=len(ds)))
    _say(f"wrote {len(ds)} windows from {len(paths)} sessions to {out_csv}")
    return ds


def cmd_train_clf(cfg: RunConfig, csv, model_out) -> classifier.MlpModel:
    ds = load_csv(csv)
    train_raw, test_raw = split_by_session(ds, cfg.train_fraction, cfg.seed)
    stats = fit_normalizer(train_raw)
    model = classifier.train(normalize_dataset(train_raw, stats), cfg.clf)
    cm = classifier.confusion_matrix(model, normalize_dataset(test_raw, stats))
    acc = float(np.trace(cm) / cm.sum())
    extra = _provenance(cfg, "train-clf", split={"train_sessions": list(train_raw.sessions),
                                                 "test_sessions": list(test_raw.sessions)},
                        test_accuracy=acc, confusion=cm.tolist())
    write_json(model_out, classifier.model_to_dict(model, extra))
    _say(f"train sessions: {len(train_raw.sessions)}  test sessions: {len(test_raw.sessions)}")
    _say(f"loss: {model.loss_trace[0]:.4f} -> {model.loss_trace[-1]:.4f}")
    _say(classifier.format_confusion(cm))
    _say(f"held-out accuracy: {acc:.4f}")
    return model


def cmd_train_gan(cfg: RunConfig, csv, clf_path, model_out) -> cfgan.CfGanModel:
    clf, clf_extra = load_clf(clf_path)
    ds = load_csv(csv)
    train_sessions = set(clf_extra.get("split", {}).get("train_sessions", ds.sessions))
    train = normalize_dataset(ds.subset(np.array([s in train_sessions for s in ds.session_ids])), clf.norm_stats)
    gan = cfgan.train_gan(train.with_class(LOW), train.with_class(HIGH), clf, cfg.gan)
    held = normalize_dataset(_held_out(ds, clf_extra), clf.norm_stats)
    low_pred = held.subset(clf.predict_class(held.X) == LOW)
    flip = cfgan.flip_rate(gan, clf, low_pred) if len(low_pred) else None
    extra = _provenance(cfg, "train-gan", classifier=Path(clf_path).name, flip_rate=flip,
                        n_flip_samples=len(low_pred))
    write_json(model_out, cfgan.model_to_dict(gan, extra))
    step = max(1, cfg.gan.epochs // 10)
    _say("epoch  " + "  ".join(f"{k:>14s}" for k in cfgan.TRACE_KEYS))
    for e in list(range(0, cfg.gan.epochs, step)) + [cfg.gan.epochs - 1]:
        _say(f"{e + 1:5d}  " + "  ".join(f"{gan.loss_traces[k][e]:14.4f}" for k in cfgan.TRACE_KEYS))
    if flip is None:
        _say("flip rate: n/a (no held-out LOW-classified samples)")
    else:
        _say(f"flip rate on {len(low_pred)} held-out LOW-classified samples: {flip:.4f}")
    return gan


def cmd_evaluate(cfg: RunConfig, clf_path, gan_path, csv, report_out) -> dict:
    clf, clf_extra = load_clf(clf_path)
    gan, _ = load_gan(gan_path)
    _check_pair(clf, gan)
    held = normalize_dataset(_held_out(load_csv(csv), clf_extra), clf.norm_stats)
    low_pred = held.subset(clf.predict_class(held.X) == LOW)
    if len(low_pred) < 2:
        raise EngageError("empty-dataset", "fewer than 2 held-out LOW-classified samples")
    flip = cfgan.flip_rate(gan, clf, low_pred)
    step = max(1, int(np.ceil(len(low_pred) / cfg.eval_max_samples)))
    ev = low_pred.subset(np.arange(0, len(low_pred), step))
    report = importance_change_correlation(gan, clf, ev, cfg.lime, dataset_id=Path(csv).name, flip=flip)
    out = report.to_dict()
    out["summary"] = summary(report)
    out["provenance"] = _provenance(cfg, "evaluate", classifier=Path(clf_path).name, cfgan=Path(gan_path).name,
                                    n_low_classified=len(low_pred))
    write_json(report_out, out)
    _say(render_table(report))
    return out


def _parse_vector(text: str) -> np.ndarray:
    try:
        values = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise EngageError("invalid-input", f"cannot parse feature vector {text!r}") from None
    return check_feature_vector(values, "input vector")


def explain_vector(clf: classifier.MlpModel, gan: cfgan.CfGanModel, x, k: int, templates) -> dict:
    """Counterfactual, ranked deltas and recommendation lines for one native-unit vector."""
    x = check_feature_vector(x, "input vector")
    stats = clf.norm_stats
    z = normalize(x, stats)
    proba = clf.predict_proba(z[None, :])[0]
    pred = int(np.argmax(proba))
    out = {"input": x.tolist(), "prediction": LABEL_NAMES[pred], "p_high": float(proba[HIGH])}
    if pred == HIGH:
        out.update(notice="already high engagement", recommendations=[], deltas=[], counterfactual=None)
        return out
    cf_z = cfgan.counterfactual(gan, z, cfgan.Direction.LOW_TO_HIGH)
    cf = to_native(cf_z, stats)
    cf_proba = clf.predict_proba(normalize(cf, stats)[None, :])[0]
    deltas = top_k_changes(x, cf, k, stats)
    out.update(
        counterfactual=cf.tolist(),
        counterfactual_prediction=LABEL_NAMES[int(np.argmax(cf_proba))],
        counterfactual_p_high=float(cf_proba[HIGH]),
        deltas=[d.to_dict() for d in deltas],
        recommendations=render(deltas, templates),
    )
    return out


def _print_explanation(res: dict) -> None:
    _say(f"prediction: {res['prediction']} (p_high = {res['p_high']:.4f})")
    if res.get("notice"):
        _say(res["notice"])
        return
    _say(f"counterfactual prediction: {res['counterfactual_prediction']} (p_high = {res['counterfactual_p_high']:.4f})")
    _say(f"{'feature':<10} {'original':>12} {'counterfact.':>12} {'change':>12} {'|dz|':>8}")
    for d in res["deltas"]:
        _say(f"{d['feature']:<10} {d['original']:12.5g} {d['counterfactual']:12.5g} {d['change']:+12.5g} "
             f"{d['rank_key']:8.3f}")
    _say("recommendations:")
    for i, line in enumerate(res["recommendations"], 1):
        _say(f"  {i}. {line}")
    if not res["recommendations"]:
        _say("  (no template matched the top changes)")


def cmd_explain(cfg: RunConfig, clf_path, gan_path, vector=None, csv=None, index=None, templates=None,
                out=None) -> dict:
    clf, clf_extra = load_clf(clf_path)
    gan, _ = load_gan(gan_path)
    _check_pair(clf, gan)
    tpl = load_templates(templates)
    source: dict = {}
    if vector is not None:
        x = _parse_vector(vector)
        source = {"vector": vector}
    elif csv is not None:
        ds = load_csv(csv)
        if index is None:
            held = _held_out(ds, clf_extra)
            lows = np.flatnonzero(clf.predict_class(normalize(held.X, clf.norm_stats)) == LOW)
            row = int(lows[0]) if len(lows) else 0
            sample = held.samples[row]
        else:
            if not 0 <= index < len(ds):
                raise EngageError("invalid-input", f"--index {index} out of range for {len(ds)} rows")
            sample = ds.samples[index]
        x = sample.features
        source = {"csv": Path(csv).name, "session_id": sample.session_id, "window_index": sample.window_index}
    else:
        raise EngageError("invalid-input", "explain needs --vector or --data")
    res = explain_vector(clf, gan, x, cfg.k, tpl)
    res["source"] = source
    res["provenance"] = _provenance(cfg, "explain", classifier=Path(clf_path).name, cfgan=Path(gan_path).name,
                                    templates=str(templates) if templates else "default")
    _print_explanation(res)
    if out:
        write_json(out, res)
    return res


def cmd_demo(cfg: RunConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    _say("== synth")
    cmd_synth(cfg, out_dir / "streams")
    _say("== extract")
    cmd_extract(cfg, out_dir / "streams", out_dir / "features.csv")
    _say("== train-clf")
    cmd_train_clf(cfg, out_dir / "features.csv", out_dir / "clf.json")
    _say("== train-gan")
    cmd_train_gan(cfg, out_dir / "features.csv", out_dir / "clf.json", out_dir / "cfgan.json")
    _say("== evaluate")
    cmd_evaluate(cfg, out_dir / "clf.json", out_dir / "cfgan.json", out_dir / "features.csv", out_dir / "report.json")
    _say("== explain")
    return cmd_explain(cfg, out_dir / "clf.json", out_dir / "cfgan.json", csv=out_dir / "features.csv",
                       out=out_dir / "explanation.json")


# -- argument parsing ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="run seed (default: 'seed' from config, else 0)")
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    common.add_argument("-v", "--verbose", action="store_true", help="log skipped templates and other notices")

    p = argparse.ArgumentParser(prog="engagecf", description="Counterfactual engagement feedback pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic session streams")
    s.add_argument("--out", required=True, help="output directory for <session>.jsonl files")

    s = sub.add_parser("extract", parents=[common], help="window streams into an 18-feature CSV")
    s.add_argument("--streams", required=True, help="stream directory or single .jsonl file")
    s.add_argument("--out", required=True, help="output CSV")

    s = sub.add_parser("train-clf", parents=[common], help="train the engagement classifier")
    s.add_argument("--data", required=True, help="feature CSV")
    s.add_argument("--out", required=True, help="output model JSON")

    s = sub.add_parser("train-gan", parents=[common], help="train the counterfactual generator")
    s.add_argument("--data", required=True, help="feature CSV")
    s.add_argument("--clf", required=True, help="classifier model JSON")
    s.add_argument("--out", required=True, help="output model JSON")

    s = sub.add_parser("evaluate", parents=[common], help="flip rate and importance-vs-change correlation report")
    s.add_argument("--clf", required=True)
    s.add_argument("--gan", required=True)
    s.add_argument("--data", required=True, help="feature CSV")
    s.add_argument("--out", required=True, help="output report JSON")

    s = sub.add_parser("explain", parents=[common], help="counterfactual and recommendations for one window")
    s.add_argument("--clf", required=True)
    s.add_argument("--gan", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--vector", help="18 comma- or space-separated native feature values")
    src.add_argument("--data", help="feature CSV; without --index the first held-out LOW-classified row is used")
    s.add_argument("--index", type=int, help="row of --data to explain")
    s.add_argument("--k", type=int, default=None, help="number of recommendations (default 3)")
    s.add_argument("--templates", help="template JSON (default: bundled templates)")
    s.add_argument("--out", help="optional JSON output with full delta provenance")

    s = sub.add_parser("demo", parents=[common], help="run every stage with defaults")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--k", type=int, default=None)

    sub.add_parser("config", parents=[common], help="print the effective configuration as key = value lines")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_run_config(args)
        if args.command == "synth":
            cmd_synth(cfg, args.out)
        elif args.command == "extract":
            cmd_extract(cfg, args.streams, args.out)
        elif args.command == "train-clf":
            cmd_train_clf(cfg, args.data, args.out)
        elif args.command == "train-gan":
            cmd_train_gan(cfg, args.data, args.clf, args.out)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.clf, args.gan, args.data, args.out)
        elif args.command == "explain":
            cmd_explain(cfg, args.clf, args.gan, vector=args.vector, csv=args.data, index=args.index,
                        templates=args.templates, out=args.out)
        elif args.command == "demo":
            cmd_demo(cfg, args.out)
        elif args.command == "config":
            for key in config_keys():
                value = _lookup(cfg, key)
                text = ", ".join(str(v) for v in value) if isinstance(value, tuple) else str(value)
                _say(f"{key} = {text}")
    except EngageError as exc:
        print(json.dumps({"error": exc.code, "message": exc.message}), file=sys.stderr)
        return 1
    return 0


def _lookup(cfg: RunConfig, key: str):
    if key in _TOP:
        return getattr(cfg, _TOP[key])
    sec, name = key.split(".", 1)
    return getattr(getattr(cfg, _SECTIONS[sec]), name)


if __name__ == "__main__":
    sys.exit(main())
