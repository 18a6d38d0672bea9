"""Command-line entry point: ``mumidi <subcommand> ...``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
Every output carries the run configuration: inside checkpoints and MIDI
files (as a marker), and as a ``<output>.meta.json`` sidecar for JSONL.
The environment variable ``POPMAG_SEED`` overrides any configured seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .chords import EmptyInput as NoPitchedNotes
from .chords import infer_chords, lane_to_entries
from .codec import (
    EmptyInput,
    decode,
    encode,
    encode_baseline,
    quantize,
    render_score_to_midi,
)
from .metrics import EvalReport, Granularity, PplMode, evaluate, mean_reports, perplexity
from .midi_io import MidiError, read_midi_file, write_midi_file
from .pipeline import EmptyCorpus, assign_roles, extract_melody, load_pairs, run_pipeline, segment
from .score import ROLES, InvariantViolation, Role, Score, merge_scores
from .tokens import GrammarError, TokenFormatError, TokenSeq, read_jsonl, write_jsonl

log = logging.getLogger("mumidi")

SEED_ENV = "POPMAG_SEED"
OUTPUT_FORMAT = "mumidi-output-1"
RUN_MARKER = "mumidi-run"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    options: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "format_version": OUTPUT_FORMAT,
            "mumidi_version": __version__,
            "command": self.command,
            "seed": self.seed,
            "options": self.options,
        }


def resolve_seed(configured: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return configured
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _options(args: argparse.Namespace) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "command"):
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def write_sidecar(path: Path, run: RunConfig, extra: dict | None = None) -> None:
    meta = {**run.to_json(), **(extra or {})}
    Path(f"{path}.meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_midi(path: Path, s: Score, run: RunConfig) -> None:
    marker = (0, f"{RUN_MARKER} {json.dumps(run.to_json(), sort_keys=True, separators=(',', ':'))}")
    write_midi_file(path, render_score_to_midi(s, markers=[marker]))


def _read_midi(path: Path):
    try:
        return read_midi_file(path)
    except MidiError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc


def _read_jsonl(path: Path) -> list[TokenSeq]:
    try:
        return read_jsonl(path)
    except TokenFormatError as exc:
        raise DataError(str(exc)) from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc


def _decode(seq: TokenSeq, where: str) -> Score:
    try:
        return decode(seq)
    except (GrammarError, InvariantViolation) as exc:
        raise DataError(f"{where}: {exc}") from exc


def midi_to_scores(path: Path, *, infer: bool) -> list[Score]:
    """Quantize each 4/4 segment of a MIDI file; roles come from track names or programs."""
    raw = _read_midi(path)
    scores = []
    for seg in segment(raw):
        try:
            s = quantize(seg, assign_roles(seg, extract_melody(seg)))
        except EmptyInput:
            continue
        if infer and len(s.chords) != 2 * s.n_bars:
            try:
                s = s.with_chords(lane_to_entries(infer_chords(s)))
            except NoPitchedNotes:
                pass
        scores.append(s)
    if not scores:
        raise DataError(f"{path}: no 4/4 segment with notes")
    return scores


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args, run: RunConfig) -> int:
    try:
        result = run_pipeline(
            args.corpus,
            args.out,
            shard_size=args.shard_size,
            condition_roles=[Role(r) for r in args.condition_roles],
            run_config=run.to_json(),
        )
    except EmptyCorpus as exc:
        raise DataError(str(exc)) from exc
    print(json.dumps(result.stats.to_json(), sort_keys=True))
    return 0


def cmd_encode(args, run: RunConfig) -> int:
    scores = midi_to_scores(args.midi, infer=args.infer_chords)
    seqs = [encode(s) for s in scores]
    if args.out is None:
        for t in seqs:
            print(t.dumps())
    else:
        write_jsonl(args.out, seqs)
        write_sidecar(args.out, run)
    return 0


def cmd_decode(args, run: RunConfig) -> int:
    seqs = _read_jsonl(args.jsonl)
    if not 0 <= args.index < len(seqs):
        raise DataError(f"{args.jsonl}: line index {args.index} out of range ({len(seqs)} pieces)")
    s = _decode(seqs[args.index], f"{args.jsonl}:{args.index + 1}")
    _write_midi(args.out, s, run)
    return 0


def length_stats(targets: Sequence[TokenSeq]) -> dict:
    mu = remi = midi = 0
    for t in targets:
        s = decode(t)
        mu += len(t)
        remi += encode_baseline(s, "remi")
        midi += encode_baseline(s, "midi_like")
    n = len(targets)
    return {
        "pieces": n,
        "mumidi": mu / n,
        "remi": remi / n,
        "midi_like": midi / n,
        "ratio_remi": mu / remi if remi else None,
        "ratio_midi_like": mu / midi if midi else None,
    }


def cmd_stats(args, run: RunConfig) -> int:
    try:
        pairs = load_pairs(args.shards)
    except (TokenFormatError, ValueError, OSError) as exc:
        raise DataError(str(exc)) from exc
    if not pairs:
        raise DataError(f"{args.shards}: no shards found")
    print(json.dumps(length_stats([t for _, t in pairs]), sort_keys=True))
    return 0


def load_train_config(path: Path | None) -> tuple[dict, dict]:
    if path is None:
        return {}, {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not isinstance(obj, dict) or set(obj) - {"model", "train"}:
        raise DataError(f"{path}: expected an object with 'model' and/or 'train' keys")
    return obj.get("model", {}), obj.get("train", {})


def cmd_train(args, run: RunConfig) -> int:
    import torch

    from .model import InvalidConfig, ModelConfig, NonFiniteLoss, TrainConfig, save_checkpoint, train

    model_obj, train_obj = load_train_config(args.config)
    if args.steps is not None:
        train_obj["steps"] = args.steps
    # POPMAG_SEED beats --seed, which beats the config file
    run.seed = train_obj["seed"] = resolve_seed(args.seed if args.seed is not None else train_obj.get("seed", 0))
    try:
        cfg = ModelConfig.from_json(model_obj)
        tc = TrainConfig.from_json(train_obj)
    except (InvalidConfig, TypeError) as exc:
        raise UsageError(f"--config: {exc}") from exc
    try:
        pairs = load_pairs(args.shards)
    except (TokenFormatError, ValueError, OSError) as exc:
        raise DataError(str(exc)) from exc
    if not pairs:
        raise DataError(f"{args.shards}: no shards found")
    torch.set_num_threads(max(1, args.threads))
    try:
        result = train(pairs, cfg, tc, on_step=lambda s, l: log.info("step %d loss %.4f", s, l) if s % 100 == 0 else None)
    except NonFiniteLoss as exc:
        raise DataError(str(exc)) from exc
    save_checkpoint(args.out, result, tc, {**run.to_json(), "losses": result.losses})
    print(json.dumps({"steps": result.step, "final_loss": result.losses[-1]}, sort_keys=True))
    return 0


def load_condition(path: Path, condition_roles: frozenset[Role]) -> list[TokenSeq]:
    if path.suffix.lower() in (".mid", ".midi"):
        return [encode(s.restrict(condition_roles, keep_chords=True)) for s in midi_to_scores(path, infer=True)]
    return _read_jsonl(path)


def cmd_generate(args, run: RunConfig) -> int:
    from .model import CheckpointError, RetryExhausted, SamplingConfig, generate, load_checkpoint

    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (CheckpointError, OSError) as exc:
        raise DataError(f"{args.checkpoint}: {exc}") from exc
    cond_roles = frozenset(Role(r) for r in args.condition_roles)
    conditions = load_condition(args.condition, cond_roles)
    try:
        sampling = SamplingConfig(args.top_k, args.temperature, args.max_bars, not args.no_grammar_mask)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    outputs = []
    for i, cond in enumerate(conditions):
        for k in range(args.samples):
            try:
                gen = generate(
                    ckpt.model, cond, sampling,
                    seed=run.seed + 1000 * i + k,
                    target_roles=frozenset(ROLES) - cond_roles,
                )
            except RetryExhausted as exc:
                raise DataError(f"{args.condition}:{i + 1}: {exc}") from exc
            outputs.append((cond, gen))
    write_jsonl(args.out, (g for _, g in outputs))
    write_sidecar(args.out, run, {"checkpoint_step": ckpt.step})
    midi_path = args.midi or args.out.with_suffix(".mid")
    for j, (cond, gen) in enumerate(outputs):
        g = decode(gen)
        # the output stops at --max-bars, which may cut the condition short
        c = truncate_bars(_decode(cond, str(args.condition)), g.n_bars)
        path = midi_path if len(outputs) == 1 else midi_path.with_name(f"{midi_path.stem}-{j:03d}{midi_path.suffix}")
        _write_midi(path, merge_scores(c, g), run)
    return 0


def truncate_bars(s: Score, n_bars: int) -> Score:
    return Score(
        s.tempo,
        n_bars,
        {r: [x for x in notes if x.bar < n_bars] for r, notes in s.tracks.items()},
        [e for e in s.chords if e[0] < n_bars],
    )


def _load_scores(path: Path) -> list[Score]:
    if path.suffix.lower() in (".mid", ".midi"):
        return midi_to_scores(path, infer=False)
    return [_decode(t, f"{path}:{i + 1}") for i, t in enumerate(_read_jsonl(path))]


def cmd_evaluate(args, run: RunConfig) -> int:
    gens, refs = _load_scores(args.gen), _load_scores(args.ref)
    if len(gens) != len(refs):
        raise DataError(f"{args.gen} has {len(gens)} pieces but {args.ref} has {len(refs)}")
    conds = _read_jsonl(args.condition) if args.condition else None
    if conds is not None and len(conds) != len(refs):
        raise DataError(f"{args.condition} has {len(conds)} pieces but {args.ref} has {len(refs)}")
    ppl = None
    if args.checkpoint:
        if conds is None:
            raise UsageError("--checkpoint requires --condition")
        from .model import CheckpointError, load_checkpoint

        try:
            ckpt = load_checkpoint(args.checkpoint)
        except (CheckpointError, OSError) as exc:
            raise DataError(f"{args.checkpoint}: {exc}") from exc
        ppl = perplexity(ckpt.model, list(zip(conds, (encode(r) for r in refs))), args.ppl_mode)
    reports = []
    for i, (g, r) in enumerate(zip(gens, refs)):
        lane = None
        if conds is not None:
            c = _decode(conds[i], f"{args.condition}:{i + 1}")
            if len(c.chords) == 2 * c.n_bars:
                lane = tuple(ch for _, _, ch in c.chords)
        if g.n_bars != r.n_bars:
            raise DataError(f"piece {i + 1}: {g.n_bars} generated bars vs {r.n_bars} reference bars")
        try:
            reports.append(evaluate(g, r, lane=lane, granularity=args.granularity))
        except NoPitchedNotes as exc:
            raise DataError(f"piece {i + 1}: {exc}") from exc
    report = mean_reports(reports)
    report = EvalReport(report.ca, ppl, report.d_p, report.d_v, report.d_d, report.d_ioi, report.skipped_cells)
    print(report.dumps())
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit with 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mumidi", description="Multi-track MIDI tokenization, accompaniment generation and evaluation.")
    p.add_argument("--version", action="version", version=f"mumidi {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    role_names = [r.value for r in ROLES]

    sp = sub.add_parser("preprocess", help="MIDI corpus -> condition/target JSONL shards")
    sp.add_argument("corpus", type=Path)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--shard-size", type=int, default=1000)
    sp.add_argument("--condition-roles", nargs="+", choices=role_names, default=["melody"])
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("encode", help="MIDI file -> MuMIDI JSONL (one line per 4/4 segment)")
    sp.add_argument("midi", type=Path)
    sp.add_argument("--out", type=Path)
    sp.add_argument("--infer-chords", action="store_true", help="fill a missing chord lane with the HMM")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="one JSONL piece -> MIDI file")
    sp.add_argument("jsonl", type=Path)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--index", type=int, default=0, help="0-based line to decode")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("stats", help="average target lengths under MuMIDI, REMI and MIDI-like")
    sp.add_argument("shards", type=Path)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("train", help="train a model on preprocessed shards")
    sp.add_argument("shards", type=Path)
    sp.add_argument("--config", type=Path, help="JSON with optional 'model' and 'train' objects")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("generate", help="sample accompaniment for a condition")
    sp.add_argument("checkpoint", type=Path)
    sp.add_argument("condition", type=Path, help=".mid or condition .jsonl")
    sp.add_argument("--out", type=Path, required=True, help="generated JSONL")
    sp.add_argument("--midi", type=Path, help="MIDI render (default: --out with .mid)")
    sp.add_argument("--top-k", type=int, default=8)
    sp.add_argument("--temperature", type=float, default=1.0)
    sp.add_argument("--max-bars", type=int, default=32)
    sp.add_argument("--samples", type=int, default=1)
    sp.add_argument("--condition-roles", nargs="+", choices=role_names, default=["melody"])
    sp.add_argument("--no-grammar-mask", action="store_true")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="compare generated pieces with references")
    sp.add_argument("gen", type=Path)
    sp.add_argument("ref", type=Path)
    sp.add_argument("--condition", type=Path, help="condition JSONL supplying the chord lane")
    sp.add_argument("--checkpoint", type=Path, help="also report teacher-forced perplexity on (condition, ref)")
    sp.add_argument("--ppl-mode", choices=[m.value for m in PplMode], default="per_step")
    sp.add_argument("--granularity", choices=[g.value for g in Granularity], default="half_bar")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run = RunConfig(args.command, resolve_seed(args.seed if args.seed is not None else 0), _options(args))
        return args.func(args, run)
    except UsageError as exc:
        print(f"mumidi {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"mumidi {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
