"""Command line: camadapt {gen-data,pretrain,meta-train,adapt,eval,report}.

Errors are printed as a single line ``error: <kind>: <detail>`` on stderr
with a nonzero exit status.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema

from . import harness

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_STAGE = 4


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("camadapt").joinpath("config_schema.json").read_text())


def _key_of(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = err.message.split("'")[1]
        parts.append(missing)
    elif err.validator == "additionalProperties":
        extra = err.message.split("'")[1]
        parts.append(extra)
    return ".".join(parts) or "<root>"


def validate_config(cfg: dict) -> dict:
    validator = jsonschema.Draft7Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(f"{_key_of(err)}: {err.message}")
    if len(cfg["train_cams"]) < 2 and cfg["method"] == "at":
        raise ConfigError("train_cams: AT training needs at least two seen cameras")
    return cfg


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"unreadable config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON (line {exc.lineno})") from None
    if not isinstance(cfg, dict):
        raise ConfigError("<root>: config must be a JSON object")
    return validate_config(cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camadapt",
        description="Camera-configuration generalization for instruction-following navigation.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "gen-data": "generate worlds and the train / val_seen / val_unseen episode files",
        "pretrain": "DAgger-pretrain the navigator and reference encoders at the reference camera",
        "meta-train": "meta-train the perception encoders (method maml or at)",
        "adapt": "k-shot adaptation of the MAML encoder at the test camera",
        "eval": "evaluate the configured method at the test camera on both val splits",
        "report": "run the full pipeline for every report method and write report.json / report.csv",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, help="path to the JSON run configuration")
        p.add_argument("--seed", type=int, help="override the configuration's seed")
        p.add_argument("--out", help="run directory for all artifacts (default: ./run)")
        p.add_argument("--force", action="store_true", help="rebuild this stage even if up to date")
        if name in ("meta-train", "eval"):
            p.add_argument("--method", choices=harness.METHODS, help="override the configured method")
    return parser


def _fail(kind: str, detail: str, code: int) -> int:
    print(f"error: {kind}: {detail}".replace("\n", " "), file=sys.stderr)
    return code


def run(args) -> Path:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "method", None):
        cfg["method"] = args.method
    out = Path(args.out or "run")
    seed = cfg["seed"]
    cmd = args.command
    if cmd == "gen-data":
        harness.stage_data(cfg, out, force=args.force)
        return out / "data"
    if cmd == "pretrain":
        harness.stage_pretrain(cfg, out, force=args.force)
        return out / "pretrain"
    if cmd == "meta-train":
        if cfg["method"] == "baseline":
            raise ConfigError("method: meta-train needs method maml or at")
        harness.stage_meta(cfg, out, cfg["method"], seed, force=args.force)
        return out / "meta" / cfg["method"] / f"seed{seed}"
    if cmd == "adapt":
        harness.stage_adapt(cfg, out, seed, force=args.force)
        return out / "adapt" / f"seed{seed}"
    if cmd == "eval":
        result = harness.stage_eval(cfg, out, cfg["method"], seed)
        path = out / "eval" / cfg["method"] / f"seed{seed}"
        harness.write_report(path, {
            "report_version": harness.REPORT_VERSION,
            "threshold": cfg["threshold"],
            "success_rule": harness.SUCCESS_NOTE,
            "table": [harness._mean_rows([result])],
            "runs": {cfg["method"]: [result]},
        })
        return path
    harness.build_report(cfg, out)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if os.environ.get("CAMADAPT_THREADS"):
        os.environ.setdefault("OMP_NUM_THREADS", os.environ["CAMADAPT_THREADS"])
    try:
        path = run(args)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except harness.StageError as exc:
        return _fail("stage", str(exc), EXIT_STAGE)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_STAGE)
    print(str(path))
    return 0


if __name__ == "__main__":
    sys.exit(main())
