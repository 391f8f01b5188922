"""Command-line surface: dataset generation, training, evaluation, and the
hint-perturbation study.

Every subcommand takes --config (flat JSON file), --seed, and --out, works
entirely inside the output directory, writes the resolved configuration next
to its outputs, and records a manifest of input/output content hashes. All
commands are deterministic given (config, seed); exit codes separate config
(2), dataset (3), and checkpoint (4) failures from unexpected errors (1).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional

import numpy as np

from . import __version__, reports
from .coarse import (CoarseTrainConfig, CoarseTrainState, load_coarse_checkpoint,
                     save_coarse_checkpoint, train_coarse)
from .data import build_dataset, load_dataset, perturb_queries, save_dataset
from .data.serialize import DEFAULT_CONFIG as DATASET_DEFAULTS
from .errors import ConfigError, DataFormatError, GenerationError, HintlocError
from .fine import (FineTrainConfig, FineTrainState, PmcConfig,
                   load_fine_checkpoint, save_fine_checkpoint, train_fine)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4

DATASET_FILE = "dataset.bin"
COARSE_CKPT = "coarse.ckpt"
FINE_CKPT = "fine.ckpt"

log = logging.getLogger("hintloc")

DEFAULTS: dict = {
    **DATASET_DEFAULTS,
    "coarse_batch_size": 64,
    "coarse_epochs": 20,
    "coarse_lr": 5e-4,
    "coarse_embed_dim": 256,
    "tau": 0.1,
    "margin": 0.5,
    "fine_batch_size": 32,
    "fine_epochs": 35,
    "fine_lr": 3e-4,
    "fine_embed_dim": 128,
    "ccat_count": 2,
    "lr_decay": 0.4,
    "lr_decay_every": 7,
    "pmc_alpha": 15.0,
    "pmc_beta": 12.0,
    "pmc_max_mismatch": 1,
    "no_htm": False,
    "no_number_encoder": False,
    "pairwise_ranking_loss": False,
    "no_pmc": False,
    "top_k_candidates": 10,
    "perturb_replace": 1,
    "resume": False,
}

# Scene geometry has no safe default: silently generating a different world
# than intended wastes a training run, so gen-data insists on these.
REQUIRED_FOR_GEN = ("extent", "density")


class CommandFailure(Exception):
    """Carries the exit code for an expected, user-facing failure."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def load_run_config(path: str) -> tuple[dict, set]:
    """Resolved config plus the set of keys the file provided explicitly."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        provided = json.loads(text)
    except ValueError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(provided, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    unknown = sorted(set(provided) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    resolved = dict(DEFAULTS)
    resolved.update(provided)
    return resolved, set(provided)


def write_resolved_config(out_dir: str, command: str, cfg: dict) -> str:
    path = os.path.join(out_dir, f"{command}.config.json")
    reports.write_text(path, reports.dump_json(cfg))
    return path


def _read_dataset(out_dir: str):
    path = os.path.join(out_dir, DATASET_FILE)
    if not os.path.exists(path):
        raise CommandFailure(EXIT_DATA, f"no dataset at {path}; run gen-data first")
    try:
        return load_dataset(path)
    except DataFormatError as e:
        raise CommandFailure(EXIT_DATA, str(e)) from e


def _read_checkpoint(out_dir: str, name: str, loader):
    path = os.path.join(out_dir, name)
    if not os.path.exists(path):
        raise CommandFailure(EXIT_CHECKPOINT, f"no checkpoint at {path}")
    try:
        return loader(path)
    except DataFormatError as e:
        raise CommandFailure(EXIT_CHECKPOINT, str(e)) from e


def _check_vocab(dataset, meta: dict, name: str) -> None:
    have = len(dataset.vocab.tokens)
    want = meta.get("vocab_size")
    if want != have:
        raise CommandFailure(
            EXIT_CHECKPOINT,
            f"{name} was trained with a {want}-token vocabulary "
            f"but the dataset has {have} tokens")


def _coarse_config(cfg: dict, seed: int) -> CoarseTrainConfig:
    return CoarseTrainConfig(
        batch_size=cfg["coarse_batch_size"],
        epochs=cfg["coarse_epochs"],
        base_lr=cfg["coarse_lr"],
        lr_decay=cfg["lr_decay"],
        decay_every=cfg["lr_decay_every"],
        tau=cfg["tau"],
        embed_dim=cfg["coarse_embed_dim"],
        seed=seed,
        use_htm=not cfg["no_htm"],
        use_number_encoder=not cfg["no_number_encoder"],
        loss="pairwise" if cfg["pairwise_ranking_loss"] else "contrastive",
        margin=cfg["margin"],
    )


def _fine_config(cfg: dict, seed: int) -> FineTrainConfig:
    return FineTrainConfig(
        batch_size=cfg["fine_batch_size"],
        epochs=cfg["fine_epochs"],
        base_lr=cfg["fine_lr"],
        lr_decay=cfg["lr_decay"],
        decay_every=cfg["lr_decay_every"],
        embed_dim=cfg["fine_embed_dim"],
        ccat_count=cfg["ccat_count"],
        seed=seed,
        use_pmc=not cfg["no_pmc"],
        use_number_encoder=not cfg["no_number_encoder"],
        pmc=PmcConfig(alpha=cfg["pmc_alpha"], beta=cfg["pmc_beta"],
                      max_mismatch=cfg["pmc_max_mismatch"]),
    )


def cmd_gen_data(out_dir: str, seed: int, cfg: dict, provided: set) -> None:
    missing = [k for k in REQUIRED_FOR_GEN if k not in provided]
    if missing:
        raise ConfigError(f"gen-data config must set: {', '.join(missing)}")
    ds_cfg = {k: cfg[k] for k in DATASET_DEFAULTS}
    dataset = build_dataset(seed, ds_cfg)
    path = os.path.join(out_dir, DATASET_FILE)
    save_dataset(path, dataset)
    print(f"instances {len(dataset.scene)}  submaps {len(dataset.submaps)}  "
          f"train queries {len(dataset.train_queries)}  "
          f"eval queries {len(dataset.eval_queries)}")
    cfg_path = write_resolved_config(out_dir, "gen-data", cfg)
    reports.write_manifest(out_dir, "gen-data", seed, cfg, {},
                           {DATASET_FILE: path, "gen-data.config.json": cfg_path})


def _run_training(out_dir: str, seed: int, cfg: dict, command: str) -> None:
    coarse = command == "train-coarse"
    dataset = _read_dataset(out_dir)
    train_cfg = _coarse_config(cfg, seed) if coarse else _fine_config(cfg, seed)
    train_cfg.validate()
    ckpt_name = COARSE_CKPT if coarse else FINE_CKPT
    loader = load_coarse_checkpoint if coarse else load_fine_checkpoint
    trainer = train_coarse if coarse else train_fine
    saver = save_coarse_checkpoint if coarse else save_fine_checkpoint

    resume_state = None
    if cfg["resume"]:
        resume_state, _, meta = _read_checkpoint(out_dir, ckpt_name, loader)
        _check_vocab(dataset, meta, ckpt_name)
        log.info("resuming %s at epoch %d", ckpt_name, resume_state.epochs_done)

    loss_path = os.path.join(out_dir, "coarse_loss.txt" if coarse else "fine_loss.txt")
    mode = "a" if resume_state is not None else "w"
    ckpt_path = os.path.join(out_dir, ckpt_name)
    with open(loss_path, mode, encoding="utf-8") as loss_file:
        def stream(line: str) -> None:
            loss_file.write(line + "\n")
            loss_file.flush()
            log.info("%s", line)

        state = trainer(dataset, train_cfg, log=stream, resume=resume_state)
    saver(ckpt_path, state, train_cfg)
    print(f"trained {state.epochs_done} epochs; final loss {state.trace[-1]:.4f}")
    cfg_path = write_resolved_config(out_dir, command, cfg)
    reports.write_manifest(
        out_dir, command, seed, cfg, {DATASET_FILE: os.path.join(out_dir, DATASET_FILE)},
        {ckpt_name: ckpt_path, os.path.basename(loss_path): loss_path,
         f"{command}.config.json": cfg_path})


def cmd_train_coarse(out_dir: str, seed: int, cfg: dict, provided: set) -> None:
    _run_training(out_dir, seed, cfg, "train-coarse")


def cmd_train_fine(out_dir: str, seed: int, cfg: dict, provided: set) -> None:
    _run_training(out_dir, seed, cfg, "train-fine")


def _load_models(out_dir: str, dataset):
    """Coarse state is required; fine is optional (retrieval-only reports)."""
    coarse_state, _, meta = _read_checkpoint(out_dir, COARSE_CKPT, load_coarse_checkpoint)
    _check_vocab(dataset, meta, COARSE_CKPT)
    fine_model = None
    if os.path.exists(os.path.join(out_dir, FINE_CKPT)):
        fine_state, _, fine_meta = _read_checkpoint(out_dir, FINE_CKPT, load_fine_checkpoint)
        _check_vocab(dataset, fine_meta, FINE_CKPT)
        fine_model = fine_state.model
    else:
        log.info("no %s; localization sections are skipped", FINE_CKPT)
    return coarse_state.model, fine_model


def cmd_eval(out_dir: str, seed: int, cfg: dict, provided: set) -> None:
    dataset = _read_dataset(out_dir)
    coarse_model, fine_model = _load_models(out_dir, dataset)
    metrics = reports.compute_metrics(dataset, coarse_model, fine_model,
                                      top_k=cfg["top_k_candidates"])
    scatter = reports.descriptor_scatter(coarse_model, dataset)
    paths = {
        "eval_report.json": os.path.join(out_dir, "eval_report.json"),
        "eval_report.txt": os.path.join(out_dir, "eval_report.txt"),
        "descriptor_scatter.json": os.path.join(out_dir, "descriptor_scatter.json"),
    }
    reports.write_text(paths["eval_report.json"], reports.dump_json(metrics))
    reports.write_text(paths["eval_report.txt"],
                       reports.render_metrics(metrics, "evaluation report"))
    reports.write_text(paths["descriptor_scatter.json"], reports.dump_json(scatter))
    print(open(paths["eval_report.txt"], encoding="utf-8").read(), end="")
    cfg_path = write_resolved_config(out_dir, "eval", cfg)
    inputs = {DATASET_FILE: os.path.join(out_dir, DATASET_FILE),
              COARSE_CKPT: os.path.join(out_dir, COARSE_CKPT)}
    if fine_model is not None:
        inputs[FINE_CKPT] = os.path.join(out_dir, FINE_CKPT)
    reports.write_manifest(out_dir, "eval", seed, cfg, inputs,
                           {**paths, "eval.config.json": cfg_path})


def cmd_perturb_eval(out_dir: str, seed: int, cfg: dict, provided: set) -> None:
    dataset = _read_dataset(out_dir)
    coarse_model, fine_model = _load_models(out_dir, dataset)
    replace = int(cfg["perturb_replace"])
    perturbed = perturb_queries(dataset.eval_queries, dataset.scene,
                                dataset.vocab, seed, replace)
    base = reports.compute_metrics(dataset, coarse_model, fine_model,
                                   top_k=cfg["top_k_candidates"])
    pert = reports.compute_metrics(dataset, coarse_model, fine_model,
                                   queries=perturbed, top_k=cfg["top_k_candidates"])
    report = {"replaced_per_query": replace, "base": base, "perturbed": pert,
              "delta": reports.perturbation_deltas(base, pert)}
    paths = {
        "perturb_report.json": os.path.join(out_dir, "perturb_report.json"),
        "perturb_report.txt": os.path.join(out_dir, "perturb_report.txt"),
    }
    reports.write_text(paths["perturb_report.json"], reports.dump_json(report))
    reports.write_text(paths["perturb_report.txt"],
                       reports.render_perturbation(base, pert, replace))
    print(open(paths["perturb_report.txt"], encoding="utf-8").read(), end="")
    cfg_path = write_resolved_config(out_dir, "perturb-eval", cfg)
    inputs = {DATASET_FILE: os.path.join(out_dir, DATASET_FILE),
              COARSE_CKPT: os.path.join(out_dir, COARSE_CKPT)}
    if fine_model is not None:
        inputs[FINE_CKPT] = os.path.join(out_dir, FINE_CKPT)
    reports.write_manifest(out_dir, "perturb-eval", seed, cfg, inputs,
                           {**paths, "perturb-eval.config.json": cfg_path})


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-coarse": cmd_train_coarse,
    "train-fine": cmd_train_fine,
    "eval": cmd_eval,
    "perturb-eval": cmd_perturb_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hintloc",
        description="hint-driven localization on synthetic city point clouds")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="flat JSON run config")
        p.add_argument("--seed", required=True, type=int, help="run seed (u64)")
        p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv: Optional[list] = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, format="%(levelname)s %(message)s",
        level=getattr(logging, os.environ.get("HINTLOC_LOG", "info").upper(),
                      logging.INFO))
    args = build_parser().parse_args(argv)
    if args.seed < 0:
        log.error("seed must be non-negative, got %d", args.seed)
        return EXIT_CONFIG
    try:
        cfg, provided = load_run_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](args.out, args.seed, cfg, provided)
    except ConfigError as e:
        log.error("config: %s", e)
        return EXIT_CONFIG
    except CommandFailure as e:
        log.error("%s", e)
        return e.code
    except GenerationError as e:
        log.error("generation: %s", e)
        return EXIT_CONFIG
    except HintlocError as e:
        log.error("unexpected failure: %s", e)
        return EXIT_UNEXPECTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
