"""Command-line entry point: ``aacp <command> [--config FILE] [--key value ...]``.

Options come from a ``key=value`` file and are overridden by flags. Every
key is checked against the command's schema; unknown keys are rejected.
Errors print one line ``aacp-error <code> <kind>: <message>`` to stderr and
exit with 2 (configuration), 3 (data) or 4 (numeric).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import linalg, pnm
from .data import ATTRIBUTES, Corpus, CorpusError, generate_corpus, load_corpus, save_corpus, stratified_split
from .data.attributes import SCORE_MAX
from .eval import GaussianStats, UndefinedMetricError, evaluate_scores, fid, smooth_grad_cam, write_heatmap
from .model import EncoderConfig, ModelConfig
from .model.network import images_to_tensor
from .tensor import no_grad
from .train import (
    REFERENCE_EPOCHS, CheckpointError, ConfigurationError, TrainConfig, load_checkpoint,
    predict_records, run_stage, save_checkpoint, write_metrics_csv,
)

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
OUT_ENV = "AACP_OUT_DIR"


@dataclass(frozen=True)
class Key:
    type: Callable[[str], Any]
    default: Any = None
    help: str = ""
    required: bool = False

    @property
    def type_name(self) -> str:
        return getattr(self.type, "__name__", str(self.type))


def _optional_int(text: str) -> int | None:
    return None if text.lower() in ("", "none") else int(text)


_optional_int.__name__ = "int?"


def _fractions(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


_fractions.__name__ = "floats"


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


_names.__name__ = "names"


def path(text: str) -> str:
    return text


COMMON = {
    "out_dir": Key(path, None, f"output directory (default ${OUT_ENV} or ./aacp-out)"),
    "seed": Key(int, 0, "random seed"),
}

TRAIN_KEYS = {
    "corpus": Key(path, None, "corpus directory", required=True),
    "checkpoint_in": Key(path, None, "checkpoint to start from"),
    "epochs": Key(_optional_int, None, "epochs before scaling (default: reference schedule)"),
    "scale": Key(float, 1.0, "multiplier applied to epochs"),
    "lr": Key(float, 1e-4, "Adam learning rate"),
    "batch": Key(int, 64, "batch size"),
    "mask_ratio": Key(float, 0.75, "masking ratio during pretraining"),
    "refresh_period": Key(_optional_int, None, "optimizer steps between basis refreshes (0: initial refresh only)"),
    "clip_norm": Key(float, 5.0, "global gradient-norm clip"),
    "image_size": Key(int, 64, "input size for a freshly initialised model"),
    "train_subset": Key(str, "train", "split subset used for training"),
    "eval_subset": Key(str, "test", "split subset evaluated each epoch (supervised)"),
    "emd_ordering": Key(str, "dataset", "EMD ordering: dataset or image"),
}

SCHEMAS: dict[str, dict[str, Key]] = {
    "gen-data": {
        **COMMON,
        "count": Key(int, None, "number of paintings", required=True),
        "image_size": Key(int, 64, "canvas size in pixels"),
        "experts": Key(int, 0, "simulated expert annotations per painting (0: exact labels)"),
        "split": Key(_fractions, (0.8, 0.2), "subset fractions: train,test or train,val,test"),
        "bins": Key(int, 10, "mean-score bins for stratification"),
    },
    "pretrain": {**COMMON, **TRAIN_KEYS},
    "finetune": {**COMMON, **TRAIN_KEYS},
    "train": {**COMMON, **TRAIN_KEYS},
    "eval": {
        **COMMON,
        "checkpoint": Key(path, None, "checkpoint to evaluate", required=True),
        "corpus": Key(path, None, "corpus directory", required=True),
        "split": Key(str, "test", "subset to evaluate ('all' for every record)"),
        "emd_ordering": Key(str, "dataset", "EMD ordering: dataset or image"),
    },
    "explain": {
        **COMMON,
        "checkpoint": Key(path, None, "trained checkpoint", required=True),
        "image": Key(path, None, "PPM image", required=True),
        "attributes": Key(_names, ATTRIBUTES, "comma-separated attribute names"),
        "samples": Key(int, 8, "noisy copies averaged"),
        "noise_std": Key(float, 0.1, "noise level relative to pixel range"),
    },
    "fid": {
        **COMMON,
        "checkpoint": Key(path, None, "checkpoint whose encoder provides features", required=True),
        "corpus_a": Key(path, None, "first corpus", required=True),
        "corpus_b": Key(path, None, "second corpus", required=True),
    },
}

STAGE_OF = {"pretrain": "pretrain", "finetune": "finetune", "train": "supervised"}


def read_config_file(file: str) -> dict[str, str]:
    out = {}
    try:
        lines = Path(file).read_text().splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {file}: {exc.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{file}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def resolve(command: str, file_values: dict[str, str], flag_values: dict[str, Any]) -> dict[str, Any]:
    """Merge defaults < file < flags and validate against the schema."""
    schema = SCHEMAS[command]
    unknown = sorted(set(file_values) - set(schema))
    if unknown:
        raise ConfigurationError(f"unknown key(s) for {command}: {', '.join(unknown)}")
    cfg = {k: key.default for k, key in schema.items()}
    for k, raw in file_values.items():
        try:
            cfg[k] = schema[k].type(raw)
        except ValueError:
            raise ConfigurationError(f"key {k}: cannot parse {raw!r} as {schema[k].type_name}") from None
    cfg.update({k: v for k, v in flag_values.items() if v is not None})
    missing = [k for k, key in schema.items() if key.required and cfg[k] is None]
    if missing:
        raise ConfigurationError(f"missing required key: {', '.join(missing)}")
    if cfg.get("out_dir") is None:
        cfg["out_dir"] = os.environ.get(OUT_ENV) or "aacp-out"
    return cfg


def write_snapshot(cfg: dict, out: Path, command: str) -> None:
    lines = [f"# resolved configuration for: aacp {command}"]
    for k in sorted(cfg):
        if k == "out_dir" or cfg[k] is None:
            continue
        v = cfg[k]
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k}={v}")
    (out / f"{command}.config").write_text("\n".join(lines) + "\n")


def _load_corpus(p: str, key: str) -> Corpus:
    if not Path(p).is_dir():
        raise ConfigurationError(f"key {key}: corpus directory {p} does not exist")
    return load_corpus(p)


def _load_ckpt(p: str, key: str):
    if not Path(p).is_file():
        raise ConfigurationError(f"key {key}: checkpoint {p} does not exist")
    return load_checkpoint(p)


# -- commands ---------------------------------------------------------------
def cmd_gen_data(cfg: dict, out: Path) -> None:
    if cfg["count"] < 0:
        raise ConfigurationError("key count: must be >= 0")
    records = generate_corpus(cfg["count"], cfg["seed"], cfg["image_size"], cfg["experts"])
    split = stratified_split(records, cfg["split"], bins=cfg["bins"], seed=cfg["seed"]) if records else None
    save_corpus(Corpus(records, split), out)
    print(f"wrote {len(records)} paintings to {out}")


def cmd_stage(command: str, cfg: dict, out: Path) -> None:
    stage = STAGE_OF[command]
    epochs = cfg["epochs"] if cfg["epochs"] is not None else REFERENCE_EPOCHS[stage]
    if cfg["emd_ordering"] not in ("dataset", "image"):
        raise ConfigurationError("key emd_ordering: expected dataset or image")
    tc = TrainConfig(stage=stage, epochs=epochs, lr=cfg["lr"], batch=cfg["batch"], seed=cfg["seed"],
                     mask_ratio=cfg["mask_ratio"], refresh_period=cfg["refresh_period"],
                     clip_norm=cfg["clip_norm"], scale=cfg["scale"], train_subset=cfg["train_subset"],
                     eval_subset=cfg["eval_subset"], emd_ordering=cfg["emd_ordering"])
    corpus = _load_corpus(cfg["corpus"], "corpus")
    ckpt = _load_ckpt(cfg["checkpoint_in"], "checkpoint_in") if cfg["checkpoint_in"] else None
    model_cfg = ModelConfig(encoder=EncoderConfig.desk(input_size=cfg["image_size"]))
    result = run_stage(tc, corpus, ckpt, model_cfg, log_path=out / "metrics.csv")
    if not result.metrics:
        write_metrics_csv([], out / "metrics.csv")
    save_checkpoint(result.checkpoint, out / f"{stage}.ckpt")
    with open(out / f"{stage}-batches.txt", "w") as fh:
        for ids in result.batch_ids:
            fh.write(" ".join(ids) + "\n")
    last = result.metrics[-1] if result.metrics else None
    summary = f"loss={last['loss']:.6g}" if last else "no epochs run"
    print(f"{stage}: {tc.effective_epochs} epochs, {summary}, checkpoint {out / f'{stage}.ckpt'}")


def cmd_eval(cfg: dict, out: Path) -> None:
    if cfg["emd_ordering"] not in ("dataset", "image"):
        raise ConfigurationError("key emd_ordering: expected dataset or image")
    model = _load_ckpt(cfg["checkpoint"], "checkpoint").build_model()
    corpus = _load_corpus(cfg["corpus"], "corpus")
    name = None if cfg["split"] == "all" else cfg["split"]
    try:
        records = corpus.subset(name)
    except KeyError as exc:
        raise ConfigurationError(f"key split: {exc.args[0]}") from None
    records = [r for r in records if r.labeled]
    if not records:
        raise CorpusError(f"no labeled records in subset {cfg['split']!r}")
    pred = predict_records(model, records)
    gt = np.stack([r.target.to_array() / SCORE_MAX for r in records])
    report = evaluate_scores(pred, gt, cfg["emd_ordering"],
                             config={"checkpoint": cfg["checkpoint"], "corpus": cfg["corpus"], "split": cfg["split"]})
    text = report.to_json()
    (out / "report.json").write_text(text + "\n")
    print(text)


def cmd_explain(cfg: dict, out: Path) -> None:
    bad = [a for a in cfg["attributes"] if a not in ATTRIBUTES]
    if bad or not cfg["attributes"]:
        raise ConfigurationError(f"key attributes: invalid {', '.join(bad) or '(empty)'}; valid names: {', '.join(ATTRIBUTES)}")
    model = _load_ckpt(cfg["checkpoint"], "checkpoint").build_model()
    if not Path(cfg["image"]).is_file():
        raise ConfigurationError(f"key image: {cfg['image']} does not exist")
    image = pnm.read(cfg["image"])
    size = model.config.encoder.input_size
    if image.ndim != 3 or image.shape[:2] != (size, size):
        raise CorpusError(f"image {cfg['image']} has shape {image.shape}, model expects {size}x{size}x3")
    for name in cfg["attributes"]:
        heat = smooth_grad_cam(model, image, ATTRIBUTES.index(name), n=cfg["samples"],
                               noise_std=cfg["noise_std"], seed=cfg["seed"])
        write_heatmap(heat, image, out / f"heatmap-{name}.pgm", out / f"overlay-{name}.ppm")
    print(f"wrote {len(cfg['attributes'])} heatmaps to {out}")


def encoder_features(model, corpus: Corpus) -> np.ndarray:
    """Token-pooled latent of the unmasked encoder, ``[N, E]``."""
    if len(corpus) == 0:
        raise CorpusError("cannot compute features of an empty corpus")
    size = model.config.encoder.input_size
    feats = []
    with no_grad():
        for lo in range(0, len(corpus), 32):
            chunk = corpus.records[lo:lo + 32]
            x = images_to_tensor(np.stack([r.image for r in chunk]), dtype=model.dtype)
            if x.shape[2] != size:
                raise CorpusError(f"corpus images are {x.shape[2]}px, encoder expects {size}px", chunk[0].id)
            feats.append(model.encode(x).data.mean(axis=1))
    return np.concatenate(feats).astype(np.float64)


def cmd_fid(cfg: dict, out: Path) -> None:
    model = _load_ckpt(cfg["checkpoint"], "checkpoint").build_model()
    a = GaussianStats.from_features(encoder_features(model, _load_corpus(cfg["corpus_a"], "corpus_a")))
    b = GaussianStats.from_features(encoder_features(model, _load_corpus(cfg["corpus_b"], "corpus_b")))
    value = fid(a, b)
    (out / "fid.json").write_text(json.dumps({"fid": value, "count_a": a.count, "count_b": b.count,
                                              "dim": a.dim}, indent=2, sort_keys=True) + "\n")
    print(f"{value:.10g}")


COMMANDS = {"gen-data": cmd_gen_data, "eval": cmd_eval, "explain": cmd_explain, "fid": cmd_fid}


# -- argument parsing -------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(EXIT_CONFIG, "config", f"{self.prog}: {message}")
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aacp", description="Children's painting aesthetics pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for command, schema in SCHEMAS.items():
        p = sub.add_parser(command, help=f"run {command}", argument_default=None)
        p.add_argument("--config", metavar="FILE", help="key=value config file [path]")
        for k, key in schema.items():
            default = key.default
            if isinstance(default, tuple):
                default = ",".join(str(v) for v in default)
            suffix = " (required)" if key.required else ("" if default is None else f" (default: {default})")
            p.add_argument(f"--{k.replace('_', '-')}", dest=k, type=key.type, default=None,
                           metavar=key.type_name.upper(), help=f"{key.help} [{key.type_name}]{suffix}")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve(command, file_values, flags)
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        write_snapshot(cfg, out, command)
        if command in STAGE_OF:
            cmd_stage(command, cfg, out)
        else:
            COMMANDS[command](cfg, out)
    except ConfigurationError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (CorpusError, CheckpointError, pnm.PnmError, OSError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except (linalg.LinalgError, UndefinedMetricError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    return 0


def _fail(code: int, kind: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f"aacp-error {code} {kind}: {message}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
