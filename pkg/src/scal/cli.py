"""``scal`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments
from .config import load

VERBS = ("compare", "group", "detect-error", "ablation", "timing", "synth",
         "train", "explain", "embed", "cluster", "rules")


def _common(top):
    # flags are accepted before or after the verb; the verb-level copies must not
    # overwrite values given before it, hence SUPPRESS defaults there
    def d(value):
        return value if top else argparse.SUPPRESS

    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d(None), help="flat 'section.key = value' config file")
    p.add_argument("--seed", type=int, default=d(None), help="global seed (overrides the config)")
    p.add_argument("--out-dir", default=d(None), help="output directory (overrides output.dir)")
    p.add_argument("--format", choices=("csv", "json"), default=d("csv"),
                   help="format of tabular reports")
    p.add_argument("--set", action="append", default=d([]), metavar="KEY=VALUE",
                   help="config override, may be repeated")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser():
    common = _common(False)
    parser = argparse.ArgumentParser(prog="scal", parents=[_common(True)],
                                     description="Explanation-space driven model adaptation.")
    sub = parser.add_subparsers(dest="verb", required=True)
    help_text = {
        "compare": "tune, refine and compare baseline vs adapted model per entity",
        "group": "group entities by mean SHAP profile",
        "detect-error": "flag entities whose explanation space stays one cluster",
        "ablation": "refine with each clustering backend, record test r2 per step",
        "timing": "time each stage of the pipeline",
        "synth": "write a synthetic shifted train/test dataset",
        "train": "fit and save one model per entity",
        "explain": "SHAP values of the training rows for a saved model",
        "embed": "2D embedding of a SHAP CSV",
        "cluster": "cluster a 2D embedding CSV",
        "rules": "decision rules describing the adapted model's clusters",
    }
    verbs = {v: sub.add_parser(v, parents=[common], help=help_text[v]) for v in VERBS}
    verbs["explain"].add_argument("--model", required=True, help="model JSON from 'train'")
    verbs["embed"].add_argument("--shap", required=True, help="SHAP CSV from 'explain'")
    verbs["cluster"].add_argument("--embedding", required=True, help="CSV with x, y columns")
    return parser


def _run(args, cfg):
    v = args.verb
    if v == "compare":
        return experiments.cmd_compare(cfg)
    if v == "group":
        return experiments.cmd_group_entities(cfg, args.format)
    if v == "detect-error":
        return experiments.cmd_detect_data_error(cfg)
    if v == "ablation":
        return experiments.cmd_ablation(cfg, args.format)
    if v == "timing":
        return experiments.cmd_timing(cfg, args.format)
    if v == "synth":
        return experiments.cmd_synth(cfg)
    if v == "train":
        return experiments.cmd_train(cfg)
    if v == "explain":
        return experiments.cmd_explain(cfg, args.model)
    if v == "embed":
        return experiments.cmd_embed(cfg, args.shap)
    if v == "cluster":
        return experiments.cmd_cluster(cfg, args.embedding)
    return experiments.cmd_rules(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config, args.set, seed=args.seed, out_dir=args.out_dir)
        report = _run(args, cfg)
    except (ValueError, OSError, KeyError) as exc:
        print(f"scal {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    if args.verb in ("group", "detect-error", "ablation", "timing", "cluster", "rules", "synth"):
        print(json.dumps(report, indent=2))
    else:
        print(f"wrote results to {cfg.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
