"""Command-line entry point: ``pyramidssl <command> [--config c.json] [--seed S] --out DIR``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as C
from ._parallel import available_threads
from .downstream import tile_rois, tile_test_patients, write_predictions
from .errors import ConfigError, NumericalError, PyramidSSLError
from .evaluation import ablation, evaluate_patients, mean_class_accuracy, write_ablation
from .model import Classifier, SiameseNet, load_model, transfer_encoder
from .pretext import build_dataset, read_dataset
from .synth import generate_cohort, read_cohort
from .train import train_downstream, train_pretext
from .verify import GRAD_TOL, gradient_suite, oracle_check

log = logging.getLogger("pyramidssl")

# config sections each command reads, for --help
READS = {
    "gen-synth": [("synth", None)],
    "gen-pretext": [("pretext", None)],
    "train-pretext": [("model", None), ("train", "pretext")],
    "train-downstream": [("model", None), ("downstream", None), ("train", "downstream")],
    "evaluate": [("downstream", None)],
    "ablate": [("model", None), ("downstream", None), ("train", "downstream"), ("eval", None)],
    "verify": [],
}


def _key_help(command: str) -> str:
    cfg = C.defaults("desk")
    keys = ["seed"]
    for section, sub in READS[command]:
        keys += [k for k in C.keys_of(cfg, section) if sub is None or k.startswith(f"{section}.{sub}.")]
    return "config keys read: " + ", ".join(keys) if len(keys) > 1 else "config keys read: none"


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2))


def cmd_gen_synth(cfg, args) -> None:
    cohort = generate_cohort(C.cohort_config(cfg), args.out, cfg["seed"], args.threads)
    log.info("wrote %d patients to %s", len(cohort.patients), args.out)


def cmd_gen_pretext(cfg, args) -> None:
    cohort = read_cohort(args.cohort)
    p = cfg["pretext"]
    meta = build_dataset(cohort, C.sampler_config(cfg), int(p["count"]), args.out,
                         tuple(p["split_ratio"]), p["task"], args.threads)
    log.info("wrote %d %s samples to %s", meta["count"], meta["task"], args.out)


def cmd_train_pretext(cfg, args) -> None:
    meta, train, val = read_dataset(args.data)
    model = SiameseNet(C.encoder_spec(cfg), meta["task"], train.n, cfg["model"]["hidden"],
                       seed=cfg["seed"])
    result = train_pretext(model, train, val, C.pretext_schedule(cfg), seed=cfg["seed"],
                           out=args.out, task=meta["task"])
    log.info("best validation accuracy %.4f", result.best_val_acc)


def _classifier(cfg, pretrained, num_classes: int) -> Classifier:
    if pretrained:
        return transfer_encoder(pretrained, num_classes, seed=cfg["seed"])
    return Classifier(C.encoder_spec(cfg), num_classes, seed=cfg["seed"])


def cmd_train_downstream(cfg, args) -> None:
    cohort = read_cohort(args.cohort)
    patches = tile_rois(cohort, C.downstream_config(cfg), cfg["seed"])
    num_classes = len({p.class_id for p in cohort.patients})
    tr, va = patches.part("train"), patches.part("val")
    model = _classifier(cfg, args.pretrained, num_classes)
    result = train_downstream(model, tr.images, tr.labels, va.images, va.labels,
                              C.downstream_schedule(cfg), seed=cfg["seed"], out=args.out)
    log.info("best patch validation accuracy %.4f", result.best_val_acc)


def cmd_evaluate(cfg, args) -> None:
    model = load_model(args.model)
    if not isinstance(model, Classifier):
        raise ConfigError(f"{args.model} is not a classifier checkpoint")
    cohort = read_cohort(args.cohort)
    preds, cm = evaluate_patients(model, tile_test_patients(cohort, C.downstream_config(cfg)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(preds, out / "predictions.csv")
    _dump(out / "summary.json", {"confusion": cm.tolist(), "mean_accuracy": mean_class_accuracy(cm)})
    log.info("patient-level mean class accuracy %.4f", mean_class_accuracy(cm))


def cmd_ablate(cfg, args) -> None:
    cohort = read_cohort(args.cohort)
    e = cfg["eval"]
    sources = {"location-ssl": args.location, "pair-ssl": args.pair,
               "external-weights": e["external_weights"], "random-init": None}
    variants = {}
    for v in e["variants"]:
        if v != "random-init" and not sources[v]:
            raise ConfigError(f"variant {v!r} needs a checkpoint (see --location/--pair)")
        variants[v] = sources[v]
    rows, cms = ablation(cohort, variants, tuple(e["fractions"]), int(e["runs"]), cfg["seed"],
                         C.downstream_schedule(cfg), C.downstream_config(cfg), C.encoder_spec(cfg))
    write_ablation(rows, cms, args.out)
    log.info("wrote %d ablation rows to %s", len(rows), args.out)


def cmd_verify(cfg, args) -> None:
    report = oracle_check(args.samples, cfg["seed"])
    log.info("oracle: %d/%d labels reproduced", report.matched, report.total)
    worst = gradient_suite(args.shapes, cfg["seed"])
    for op, err in worst.items():
        log.info("gradcheck %-22s max rel err %.2e", op, err)
    summary = {"oracle_total": report.total, "oracle_matched": report.matched,
               "gradcheck": worst, "tolerance": GRAD_TOL}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _dump(Path(args.out) / "verify.json", summary)
    failed = [op for op, err in worst.items() if not err < GRAD_TOL]
    if not report.ok or failed:
        raise NumericalError(f"verification failed: oracle {report.matched}/{report.total}, "
                             f"gradients {failed or 'ok'}")


COMMANDS = {
    "gen-synth": (cmd_gen_synth, "render a synthetic cohort of pyramids"),
    "gen-pretext": (cmd_gen_pretext, "sample a pretext dataset into shards"),
    "train-pretext": (cmd_train_pretext, "train the siamese pretext model"),
    "train-downstream": (cmd_train_downstream, "fine-tune a subtype classifier on ROI patches"),
    "evaluate": (cmd_evaluate, "patient-level majority-vote evaluation on test patients"),
    "ablate": (cmd_ablate, "label-fraction ablation over pretraining variants"),
    "verify": (cmd_verify, "run the location oracle and gradient checks"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pyramidssl", description=__doc__)
    parser.add_argument("--print-defaults", nargs="?", const="desk", metavar="PROFILE",
                        help="print the default config (desk or full) and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=f"{text}. {_key_help(name)}.")
        p.add_argument("--config", help="JSON config file (defaults to the desk profile)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", required=name != "verify", help="output directory")
        p.add_argument("--threads", type=int, default=available_threads(),
                       help="worker processes (default: available cores)")
        if name in ("gen-pretext", "train-downstream", "evaluate", "ablate"):
            p.add_argument("--cohort", required=True, help="cohort directory from gen-synth")
        if name == "train-pretext":
            p.add_argument("--data", required=True, help="dataset directory from gen-pretext")
        if name == "train-downstream":
            p.add_argument("--pretrained", help="pretext checkpoint directory for the encoder")
        if name == "evaluate":
            p.add_argument("--model", required=True, help="classifier checkpoint directory")
        if name == "ablate":
            p.add_argument("--location", help="location-pretext checkpoint directory")
            p.add_argument("--pair", help="pair-pretext checkpoint directory")
        if name == "verify":
            p.add_argument("--samples", type=int, default=1000, help="oracle samples")
            p.add_argument("--shapes", type=int, default=20, help="random shapes per op")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.print_defaults:
            print(json.dumps(C.defaults(args.print_defaults), indent=2))
            return 0
        if not args.command:
            parser.print_help(sys.stderr)
            return 1
        cfg = C.load(args.config, args.seed)
        if getattr(args, "threads", 1) < 1:
            raise ConfigError("--threads must be positive")
        COMMANDS[args.command][0](cfg, args)
        return 0
    except PyramidSSLError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
