"""Command-line interface.

Subcommands: pretrain-decoder, pretrain-encoder, finetune, sample, evaluate,
fingerprint, mces, canon.  A flat ``key=value`` config file may supply any
option; explicit command-line flags override file keys.  ``FLOWMS_LOG``
controls log verbosity.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import denoiser as dn
from . import molgraph as mg
from . import pipelines as pl
from . import speccond as sc
from .errors import (
    BadMagic,
    BudgetExceeded,
    ConfigError,
    DataError,
    DomainError,
    FlowMSError,
    LengthMismatch,
    MgfParseError,
    NonFiniteGradient,
    ShapeMismatch,
    SingularTime,
    SmilesParseError,
    TruncatedFile,
    VersionMismatch,
)
from .fingerprint import morgan_fingerprint
from .mces import mces_distance

log = logging.getLogger("flowms")

_EXIT_USAGE = 1
_EXIT_DATA = 2
_EXIT_NUMERICAL = 3

_DATA_ERRORS = (
    DataError,
    SmilesParseError,
    MgfParseError,
    BadMagic,
    VersionMismatch,
    TruncatedFile,
    BudgetExceeded,
    LengthMismatch,
    ShapeMismatch,
)
_NUMERICAL_ERRORS = (NonFiniteGradient, SingularTime, DomainError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _load_config_file(path) -> dict[str, str]:
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for lineno, raw in enumerate(handle, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, _, value = line.partition("=")
                values[key.strip().replace("-", "_")] = value.strip()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return values


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"bad boolean value {text!r}")


class Options:
    """Merged view of CLI flags over config-file keys."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file = _load_config_file(args.config) if args.config else {}

    def get(self, name, default=None, cast=str, required=False):
        value = getattr(self.args, name, None)
        if value is None and name in self.file:
            raw = self.file[name]
            value = _parse_bool(raw) if cast is bool else cast(raw)
        if value is None:
            value = default
        if value is None and required:
            raise ConfigError(f"missing required option --{name.replace('_', '-')}")
        return value

    def flag(self, name) -> bool:
        if getattr(self.args, name, False):
            return True
        return bool(self.get(name, default=False, cast=bool))

    def input_path(self, name, required=True):
        path = self.get(name, required=required)
        if path is not None and not os.path.exists(path):
            raise ConfigError(f"--{name.replace('_', '-')}: path does not exist: {path}")
        return path


def _add_common(parser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None)


def _add_train_options(parser):
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)


def _add_arch_options(parser):
    parser.add_argument("--blocks", type=int, default=None)
    parser.add_argument("--heads", type=int, default=None)
    parser.add_argument("--d-node", dest="d_node", type=int, default=None)
    parser.add_argument("--d-edge", dest="d_edge", type=int, default=None)
    parser.add_argument("--d-cond", dest="d_cond", type=int, default=None)
    parser.add_argument("--d-time", dest="d_time", type=int, default=None)
    parser.add_argument("--cond-dim", dest="cond_dim", type=int, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="flowms", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain-decoder", help="fingerprint-conditioned decoder training")
    _add_common(p)
    _add_train_options(p)
    _add_arch_options(p)
    p.add_argument("--corpus", default=None, help="SMILES corpus file")
    p.add_argument("--out", default=None, help="checkpoint output path")
    p.add_argument("--history", default=None, help="loss history CSV path")

    p = sub.add_parser("pretrain-encoder", help="spectrum-to-fingerprint encoder training")
    _add_common(p)
    _add_train_options(p)
    p.add_argument("--mgf", default=None)
    p.add_argument("--pairs", default=None, help="id<TAB>smiles<TAB>formula file")
    p.add_argument("--out", default=None)
    p.add_argument("--history", default=None)
    p.add_argument("--n-bins", dest="n_bins", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--cond-dim", dest="cond_dim", type=int, default=None)

    p = sub.add_parser("finetune", help="end-to-end encoder+decoder training")
    _add_common(p)
    _add_train_options(p)
    p.add_argument("--decoder-ckpt", dest="decoder_ckpt", default=None)
    p.add_argument("--encoder-ckpt", dest="encoder_ckpt", default=None)
    p.add_argument("--mgf", default=None)
    p.add_argument("--pairs", default=None)
    p.add_argument("--out-decoder", dest="out_decoder", default=None)
    p.add_argument("--out-encoder", dest="out_encoder", default=None)
    p.add_argument("--history", default=None)
    p.add_argument("--freeze-encoder", dest="freeze_encoder", action="store_true", default=False)

    p = sub.add_parser("sample", help="generate candidate molecules")
    _add_common(p)
    p.add_argument("--checkpoint", default=None, help="decoder checkpoint")
    p.add_argument("--encoder-ckpt", dest="encoder_ckpt", default=None)
    p.add_argument("--mgf", default=None)
    p.add_argument("--pairs", default=None)
    p.add_argument("--gold-fingerprints", dest="gold_fingerprints", action="store_true", default=False)
    p.add_argument("--out", default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("evaluate", help="score candidates against truth")
    _add_common(p)
    p.add_argument("--candidates", default=None)
    p.add_argument("--pairs", default=None)
    p.add_argument("--out", default=None, help="EvalReport JSON path")

    p = sub.add_parser("fingerprint", help="dump fingerprints for a SMILES file")
    _add_common(p)
    p.add_argument("--smiles", default=None, help="SMILES corpus file")
    p.add_argument("--out", default=None)

    p = sub.add_parser("mces", help="exact MCES distance between two SMILES")
    _add_common(p)
    p.add_argument("smiles_a")
    p.add_argument("smiles_b")

    p = sub.add_parser("canon", help="canonical form of a SMILES string")
    _add_common(p)
    p.add_argument("smiles")

    return parser


def _train_config(opts: Options, default_epochs=None) -> dn.TrainConfig:
    epochs = opts.get("epochs", default_epochs, int, required=True)
    return dn.TrainConfig(
        epochs=epochs,
        batch_size=opts.get("batch_size", 16, int),
        lr=opts.get("lr", 3e-4, float),
        seed=opts.get("seed", 0, int),
    )


def cmd_pretrain_decoder(opts: Options) -> int:
    corpus = opts.input_path("corpus")
    out = opts.get("out", required=True)
    model_cfg = dn.DenoiserConfig(
        blocks=opts.get("blocks", 4, int),
        heads=opts.get("heads", 8, int),
        d_node=opts.get("d_node", 128, int),
        d_edge=opts.get("d_edge", 128, int),
        d_cond=opts.get("d_cond", 128, int),
        d_time=opts.get("d_time", 64, int),
        cond_dim=opts.get("cond_dim", 2048, int),
    )
    train_cfg = _train_config(opts)
    history = pl.pretrain_decoder(corpus, out, model_cfg, train_cfg)
    pl.write_history_csv(opts.get("history", out + ".history.csv"), history)
    print(f"wrote {out}; final epoch loss {history[-1]:.6f}")
    return 0


def cmd_pretrain_encoder(opts: Options) -> int:
    mgf = opts.input_path("mgf")
    pairs = opts.input_path("pairs")
    out = opts.get("out", required=True)
    enc_cfg = sc.EncoderConfig(
        n_bins=opts.get("n_bins", 1000, int),
        hidden=opts.get("hidden", 1024, int),
        out_dim=opts.get("cond_dim", 2048, int),
    )
    train_cfg = sc.EncoderTrainConfig(
        epochs=opts.get("epochs", None, int, required=True),
        batch_size=opts.get("batch_size", 32, int),
        lr=opts.get("lr", 3e-4, float),
        seed=opts.get("seed", 0, int),
    )
    history = pl.pretrain_encoder(mgf, pairs, out, enc_cfg, train_cfg)
    pl.write_history_csv(opts.get("history", out + ".history.csv"), history)
    print(f"wrote {out}; final epoch loss {history[-1]:.6f}")
    return 0


def cmd_finetune(opts: Options) -> int:
    decoder = dn.load_checkpoint(opts.input_path("decoder_ckpt"))
    encoder = sc.load_encoder(opts.input_path("encoder_ckpt"))
    mgf = opts.input_path("mgf")
    pairing = opts.input_path("pairs")
    records = pl.load_pairing_file(pairing)
    graphs = pl.parse_pair_graphs(pairing, records)
    matched = pl.match_spectra(mgf, records)
    pairs = [(spectrum, graphs[rec.id]) for rec, spectrum in matched]
    train_cfg = _train_config(opts)
    freeze = opts.flag("freeze_encoder")
    history = pl.finetune(decoder, encoder, pairs, train_cfg, freeze_encoder=freeze)
    out_decoder = opts.get("out_decoder", required=True)
    out_encoder = opts.get("out_encoder", required=True)
    dn.save_checkpoint(decoder, out_decoder)
    sc.save_encoder(encoder, out_encoder)
    pl.write_history_csv(opts.get("history", out_decoder + ".history.csv"), history)
    print(f"wrote {out_decoder} and {out_encoder}; final epoch loss {history[-1]:.6f}")
    return 0


def cmd_sample(opts: Options) -> int:
    model = dn.load_checkpoint(opts.input_path("checkpoint"))
    pairing = opts.input_path("pairs")
    seed = opts.get("seed", None, int, required=True)
    samples = opts.get("samples", 100, int)
    steps = opts.get("steps", 100, int)
    threads = opts.get("threads", 1, int)
    if opts.flag("gold_fingerprints"):
        records = pl.build_gold_records(pairing, model.cfg.cond_dim)
    else:
        encoder = sc.load_encoder(opts.input_path("encoder_ckpt"))
        if encoder.cfg.out_dim != model.cfg.cond_dim:
            raise DataError(
                f"encoder output {encoder.cfg.out_dim} != decoder conditioning "
                f"{model.cfg.cond_dim}"
            )
        records = pl.build_spectrum_records(pairing, opts.input_path("mgf"), encoder)
    lines = pl.sample_records(model, records, samples, steps, seed, threads)
    out = opts.get("out", required=True)
    with open(out, "w", encoding="utf-8") as handle:
        for line in lines:
            handle.write(line + "\n")
    print(f"wrote {len(lines)} candidates to {out}")
    return 0


def cmd_evaluate(opts: Options) -> int:
    report = pl.evaluate_files(opts.input_path("candidates"), opts.input_path("pairs"))
    out = opts.get("out")
    if out:
        with open(out, "w", encoding="utf-8") as handle:
            json.dump(report.to_json_dict(), handle, indent=2)
            handle.write("\n")
    agg = report.aggregate
    print("top1_accuracy top1_mces top1_tanimoto top10_accuracy top10_mces top10_tanimoto")
    print(
        f"{agg['top1_accuracy']:.2f}% {agg['top1_mces']:.4f} {agg['top1_tanimoto']:.4f} "
        f"{agg['top10_accuracy']:.2f}% {agg['top10_mces']:.4f} {agg['top10_tanimoto']:.4f}"
    )
    if agg["no_candidate_count"]:
        print(f"spectra with no valid candidates: {agg['no_candidate_count']}")
    return 0


def cmd_fingerprint(opts: Options) -> int:
    corpus = pl.parse_corpus(opts.input_path("smiles"))
    out = opts.get("out")
    handle = open(out, "w", encoding="utf-8") if out else sys.stdout
    try:
        for ident, graph in corpus:
            handle.write(f"{ident}\t{morgan_fingerprint(graph).to_hex()}\n")
    finally:
        if out:
            handle.close()
    return 0


def cmd_mces(opts: Options) -> int:
    g1 = mg.parse_smiles(opts.args.smiles_a)
    g2 = mg.parse_smiles(opts.args.smiles_b)
    result = mces_distance(g1, g2)
    print(f"distance={result.distance} common_edges={result.common_edges}")
    return 0


def cmd_canon(opts: Options) -> int:
    print(mg.write_canonical(mg.parse_smiles(opts.args.smiles)))
    return 0


_COMMANDS = {
    "pretrain-decoder": cmd_pretrain_decoder,
    "pretrain-encoder": cmd_pretrain_encoder,
    "finetune": cmd_finetune,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "fingerprint": cmd_fingerprint,
    "mces": cmd_mces,
    "canon": cmd_canon,
}


def _setup_logging() -> None:
    level = os.environ.get("FLOWMS_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](Options(args))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return _EXIT_NUMERICAL
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return _EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    except FlowMSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
