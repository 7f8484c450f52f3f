"""Command-line front end: ``naturalist <subcommand> [flags]``.

Every subcommand accepts ``--config FILE`` (a JSON object of flag defaults,
keys spelled like the flags with underscores) and ``--seed``. Each run
writes the resolved configuration next to its main output.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

log = logging.getLogger("naturalist")


class CLIError(Exception):
    pass


def _path(value: str) -> Path:
    # paths may reference environment variables, e.g. $DATA/pairs.jsonl
    return Path(os.path.expandvars(value))


def _existing(value: str) -> Path:
    p = _path(value)
    if not p.exists():
        raise argparse.ArgumentTypeError(f"file not found: {p}")
    return p


def _int_list(value: str) -> list[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from None


def _snapshot(args, target: Path) -> None:
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
                if k not in ("func", "config")}
    target.write_text(json.dumps(resolved, indent=1, sort_keys=True, default=str) + "\n")


def _snapshot_for(args, out: Path) -> None:
    _snapshot(args, out / "config.json" if out.is_dir() else out.with_name(out.name + ".config.json"))


# subcommands -----------------------------------------------------------------

def cmd_cost_model(args):
    from .sampler import annotation_cost

    p = Fraction(args.p)
    p = float(p.limit_denominator(1000) if args.exact else p)
    print(f"{annotation_cost(p, args.strategy):.4g}")


def cmd_synth(args):
    from .corpus import save_grids, write_records
    from .sampler import write_ratings
    from .synthetic import GridEncoder, generate_synthetic_corpus, make_world
    from .visual_index import save_embeddings

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    encoder = GridEncoder(args.d, args.f, args.noise)
    world = make_world(tuple(args.branching), (args.min_images, args.max_images), args.d, args.f,
                       args.noise, args.seed, encoder=encoder)
    corpus = generate_synthetic_corpus(args.pairs, args.d, args.f, args.seed, args.refs, encoder=encoder)
    with (out / "taxonomy.jsonl").open("w") as fh:
        for rec in world.taxonomy.to_records():
            fh.write(json.dumps(rec) + "\n")
    with (out / "images.jsonl").open("w") as fh:
        for img, bird in sorted({**world.birds, **corpus.birds}.items()):
            fh.write(json.dumps({"image_id": img, "class_id": bird.class_id,
                                 "attributes": dict(bird.attributes)}) + "\n")
    save_embeddings(out / "embeddings.jsonl", world.embeddings())
    write_ratings(out / "ratings.jsonl", world.ratings)
    save_grids(out / "grids.jsonl", {**world.grids, **corpus.grids})
    write_records(out / "corpus.jsonl", corpus.records)
    _snapshot(args, out / "config.json")
    print(f"wrote {len(world.birds)} world images, {len(corpus.records)} corpus pairs to {out}")


def cmd_sample(args):
    from .sampler import BranchBudget, PivotSpec, clear_fraction, read_ratings, sample_pairs, write_pairs
    from .taxonomy import Taxonomy
    from .visual_index import build_index, load_embeddings

    taxonomy = Taxonomy.load(args.taxonomy)
    embeddings = load_embeddings(args.embeddings)
    observations: dict = {}
    for e in embeddings:
        if e.class_id not in taxonomy.leaves:
            raise CLIError(f"image {e.image_id}: class {e.class_id!r} is not a leaf of the taxonomy")
        observations.setdefault(e.class_id, []).append(e.image_id)
    clear = None
    if args.ratings:
        threshold = Fraction(args.threshold).limit_denominator(1000)
        clear = {img: f >= threshold for img, f in clear_fraction(read_ratings(args.ratings)).items()}
    if len(args.k_t) > 5:
        raise CLIError("--k-t takes at most five per-level budgets")
    budget = BranchBudget(args.k_v, {l + 1: k for l, k in enumerate(args.k_t)})
    pairs, short = sample_pairs(taxonomy, observations, build_index(embeddings),
                                PivotSpec(args.min_observations, args.pivots, args.seed), budget,
                                clear=clear, strict=args.strict)
    write_pairs(args.out, pairs)
    _snapshot_for(args, args.out)
    print(f"{len(pairs)} pairs from {len({p.i1 for p in pairs})} pivots; {len(short)} pivot(s) short")


def cmd_gate(args):
    from .sampler import apply_clarity_gate, read_pairs, read_ratings, write_pairs

    threshold = Fraction(args.threshold).limit_denominator(1000)
    kept, rate = apply_clarity_gate(read_pairs(args.pairs), read_ratings(args.ratings), threshold)
    write_pairs(args.out, kept)
    _snapshot_for(args, args.out)
    print(f"kept {len(kept)} pairs; retention {rate:.4f}")


def cmd_split(args):
    from .sampler import ImagePair, _read_jsonl, split_dataset

    rows = _read_jsonl(args.pairs)
    pairs = [ImagePair.from_record(r) for r in rows]
    line = {p.pair_id: r for p, r in zip(pairs, rows)}
    parts = split_dataset(pairs, (args.train, args.dev), seed=args.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "dev", "test"), parts):
        with (args.out_dir / f"{name}.jsonl").open("w") as fh:
            for p in part:
                fh.write(json.dumps(line[p.pair_id]) + "\n")
        print(f"{name}: {len({p.pivot_class for p in part})} classes, {len(part)} pairs")
    _snapshot(args, args.out_dir / "config.json")


def _load_images(path) -> dict:
    from .sampler import _read_jsonl

    return {r["image_id"]: r for r in _read_jsonl(path)}


def cmd_annotate(args):
    from .corpus import write_records
    from .sampler import read_pairs
    from .synthetic import annotate

    images = _load_images(args.images)
    records = []
    for p in read_pairs(args.pairs):
        try:
            a, b = images[p.i1]["attributes"], images[p.i2]["attributes"]
        except KeyError as exc:
            raise CLIError(f"pair {p.pair_id}: unknown image {exc}") from None
        records.append(annotate(p, a, b, args.refs, args.seed))
    write_records(args.out, records)
    _snapshot_for(args, args.out)
    print(f"annotated {len(records)} pairs with {args.refs} paragraphs each")


def _training_arrays(records, grids, targets: str):
    from ._validation import stack_pairs

    X = stack_pairs(grids, [r.pair for r in records])
    if targets == "first":
        return X, [r.references[0] for r in records]
    rows = [i for i, r in enumerate(records) for _ in r.references]
    return X[rows], [ref for r in records for ref in r.references]


def cmd_train(args):
    from .corpus import load_grids, read_records
    from .estimator import NeuralNaturalist

    grids = load_grids(args.grids)
    X, y = _training_arrays(read_records(args.records), grids, args.targets)
    dev = None
    if args.dev_records:
        dev = _training_arrays(read_records(args.dev_records), grids, args.targets)
    if args.full_scale:
        args.hidden, args.heads, args.comparative_layers, args.decoder_layers = 512, 8, 6, 6
        args.batch_size, args.steps = 2048, 700_000
    est = NeuralNaturalist(joint_encoding=args.joint, comparative_layers=args.comparative_layers,
                           decoder_layers=args.decoder_layers, hidden_size=args.hidden, n_heads=args.heads,
                           min_freq=args.min_freq, learning_rate=args.lr, lr_decay=args.decay,
                           decay_steps=args.decay_steps, clip=args.clip, batch_size=args.batch_size,
                           max_steps=args.steps, target_loss=args.target_loss, random_state=args.seed)
    est.fit(X, y, dev=dev, log_path=args.log)
    est.save(args.out, dtype="<f8" if args.float64 else "<f4")
    _snapshot(args, args.out / "config.json")
    print(f"trained {est.n_steps_} steps; final train loss {est.trace_[-1].loss:.4f}; saved {args.out}")


def cmd_generate(args):
    from ._validation import stack_pairs
    from .corpus import load_grids
    from .estimator import NeuralNaturalist, dump_predictions
    from .sampler import read_pairs

    est = NeuralNaturalist.load(args.checkpoint)
    est.set_params(decoding=args.mode, beam_width=args.width, temperature=args.temperature,
                   random_state=args.seed)
    pairs = read_pairs(args.pairs)
    texts = est.predict(stack_pairs(load_grids(args.grids), pairs))
    dump_predictions(args.out, [p.pair_id for p in pairs], texts)
    _snapshot_for(args, args.out)
    print(f"wrote {len(texts)} predictions to {args.out}")


def _named_paths(values, flag) -> dict:
    out = {}
    for v in values or ():
        name, sep, path = v.partition("=")
        if not sep:
            raise CLIError(f"{flag} expects NAME=PATH, got {v!r}")
        p = _path(path)
        if not p.exists():
            raise CLIError(f"{flag}: file not found: {p}")
        out[name] = p
    return out


def cmd_evaluate(args):
    from ._validation import as_tokens, stack_pairs
    from .baselines import MostFrequentBaseline, NearestNeighborBaseline, TextOnlyBaseline
    from .corpus import load_grids, read_records
    from .metrics import EvalInstance, evaluate, human_baseline
    from .sampler import _read_jsonl

    splits = {name: read_records(p) for name, p in _named_paths(args.references, "--references").items()}
    if not splits:
        raise CLIError("at least one --references NAME=PATH is required")
    systems: dict = {}
    for name, path in _named_paths(args.predictions, "--predictions").items():
        systems[name] = {r["pair_id"]: r["text"] for r in _read_jsonl(path)}

    if args.train:
        train = read_records(args.train)
        Xtr = np.zeros((len(train), 2, 1, 1, 1))
        ytr = [[" ".join(t) for t in r.references] for r in train]
        every = [r for recs in splits.values() for r in recs]
        ids = [r.pair_id for r in every]
        systems["most_frequent"] = dict(zip(ids, MostFrequentBaseline().fit(Xtr, ytr).predict(every)))
        systems["text_only"] = dict(zip(ids, TextOnlyBaseline(args.seed).fit(Xtr, ytr).predict(every)))
        if args.grids:
            grids = load_grids(args.grids)
            nn = NearestNeighborBaseline(args.seed).fit(stack_pairs(grids, [r.pair for r in train]), ytr,
                                                        pair_ids=[r.pair_id for r in train])
            systems["nearest_neighbor"] = dict(zip(ids, nn.predict(stack_pairs(grids, [r.pair for r in every]))))

    report = {"columns": ["BLEU-4", "ROUGE-L", "CIDEr-D"], "splits": list(splits), "rows": {}}
    for system, preds in systems.items():
        row = {}
        for split, recs in splits.items():
            missing = [r.pair_id for r in recs if r.pair_id not in preds]
            if missing:
                raise CLIError(f"system {system!r} has no prediction for pair {missing[0]!r} ({split})")
            insts = [EvalInstance(r.pair_id, as_tokens(preds[r.pair_id]), r.references) for r in recs]
            row[split] = evaluate(insts).row()
        report["rows"][system] = row
    if args.human_runs:
        human = {}
        for split, recs in splits.items():
            insts = [EvalInstance(r.pair_id, (), r.references) for r in recs if len(r.references) >= 2]
            human[split] = {}
            for key, metric in (("BLEU-4", "bleu4"), ("ROUGE-L", "rougeL"), ("CIDEr-D", "ciderD")):
                m, s = human_baseline(insts, metric, args.human_runs, args.seed)
                human[split][key] = {"mean": m, "std": s}
        report["rows"]["human"] = human
    text = json.dumps(report, indent=1, sort_keys=False)
    if args.out:
        args.out.write_text(text + "\n")
        _snapshot_for(args, args.out)
    print(text)


def cmd_judge_score(args):
    from ._validation import as_tokens
    from .corpus import read_records
    from .judge import programmatic_judge, read_judgments, report_row, score_judgments, write_judgments
    from .sampler import ImagePair, _read_jsonl

    categories = {}
    if args.pairs:
        categories = {p.pair_id: p.category for p in map(ImagePair.from_record, _read_jsonl(args.pairs))}
    if args.judgments:
        judgments = read_judgments(args.judgments)
    else:
        if not (args.predictions and args.images and args.pairs):
            raise CLIError("without --judgments, pass --predictions, --pairs and --images for the programmatic judge")
        images = _load_images(args.images)
        pairs = {p.pair_id: p for p in map(ImagePair.from_record, _read_jsonl(args.pairs))}
        judgments = []
        for rec in _read_jsonl(args.predictions):
            p = pairs[rec["pair_id"]]
            judgments += programmatic_judge(p.pair_id, as_tokens(rec["text"]), images[p.i1]["attributes"],
                                            images[p.i2]["attributes"], p.category, seed=args.seed)
        if args.write_judgments:
            write_judgments(args.write_judgments, judgments)
    scores = score_judgments(judgments, categories)
    report = {"row": report_row(scores),
              "items": {c: s.items for c, s in scores.items()},
              "flagged": {c: s.flagged for c, s in scores.items() if s.flagged}}
    text = json.dumps(report, indent=1)
    if args.out:
        args.out.write_text(text + "\n")
        _snapshot_for(args, args.out)
    print(text)


# parser ----------------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="naturalist", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs: dict = {}

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", type=_existing, help="JSON file of flag defaults")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("cost-model", cmd_cost_model, "annotation-cost multiplier when each image survives vetting with probability p")
    p.add_argument("--p", required=True, help="per-image survival probability in (0, 1]; fractions like 2/3 allowed")
    p.add_argument("--strategy", choices=("paired", "pivot_branch"), default="pivot_branch")
    p.add_argument("--exact", action="store_true", help="snap --p to the nearest simple fraction (0.6667 -> 2/3)")

    p = add("synth", cmd_synth, "write a synthetic world and a synthetic caption corpus")
    p.add_argument("--out", type=_path, required=True, help="output directory")
    p.add_argument("--pairs", type=int, default=64, help="corpus pairs (desk default)")
    p.add_argument("--refs", type=int, default=5, help="reference paragraphs per pair (full scale: five)")
    p.add_argument("--d", type=int, default=4, help="grid side (desk; ResNet-101 gives 7)")
    p.add_argument("--f", type=int, default=16, help="feature width (desk; ResNet-101 gives 2048)")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--branching", type=_int_list, default=[3, 2, 2, 2],
                   help="fan-out below class, order, family, genus")
    p.add_argument("--min-images", type=int, default=5)
    p.add_argument("--max-images", type=int, default=8)

    p = add("sample", cmd_sample, "pivot-branch sampling of image pairs")
    p.add_argument("--taxonomy", type=_existing, required=True)
    p.add_argument("--embeddings", type=_existing, required=True)
    p.add_argument("--ratings", type=_existing, help="clarity ratings; pivots must be clear")
    p.add_argument("--threshold", default="4/5", help="positive-clarity fraction for a clear pivot")
    p.add_argument("--pivots", type=int, default=405, help="pivot classes (full scale: 405)")
    p.add_argument("--min-observations", type=int, default=4, help="full scale: 4")
    p.add_argument("--k-v", type=int, default=2, help="visual branches (full scale: 2)")
    p.add_argument("--k-t", type=_int_list, default=[2, 2, 2, 2, 2],
                   help="taxonomic branches for levels 1..5 (full scale: 2 each)")
    p.add_argument("--strict", action="store_true", help="look-ahead: reject pivots whose branches fall short")
    p.add_argument("--out", type=_path, required=True)

    p = add("gate", cmd_gate, "drop pairs whose images lack enough positive clarity ratings")
    p.add_argument("--pairs", type=_existing, required=True)
    p.add_argument("--ratings", type=_existing, required=True)
    p.add_argument("--threshold", default="4/5", help="full scale: 4/5")
    p.add_argument("--out", type=_path, required=True)

    p = add("split", cmd_split, "split pairs or records by pivot class")
    p.add_argument("--pairs", type=_existing, required=True, help="pairs or records JSONL")
    p.add_argument("--train", type=float, default=0.8, help="full scale: 0.8")
    p.add_argument("--dev", type=float, default=0.1, help="full scale: 0.1; test gets the remainder")
    p.add_argument("--out-dir", type=_path, required=True)

    p = add("annotate", cmd_annotate, "attach synthetic template paragraphs to pairs")
    p.add_argument("--pairs", type=_existing, required=True)
    p.add_argument("--images", type=_existing, required=True, help="images.jsonl from synth")
    p.add_argument("--refs", type=int, default=5)
    p.add_argument("--out", type=_path, required=True)

    p = add("train", cmd_train, "train the captioning model (desk defaults; --full-scale for full sizes)")
    p.add_argument("--records", type=_existing, required=True)
    p.add_argument("--grids", type=_existing, required=True)
    p.add_argument("--dev-records", type=_existing)
    p.add_argument("--targets", choices=("first", "all"), default="all",
                   help="train on the first reference of each pair or on all of them")
    p.add_argument("--joint", default="e1,e2,sub", help="joint-encoding blocks (best full-scale row: mul)")
    p.add_argument("--comparative-layers", type=int, default=2, help="0 = passthrough (full scale: 6)")
    p.add_argument("--decoder-layers", type=int, default=2, help="full scale: 6")
    p.add_argument("--hidden", type=int, default=64, help="full scale: 512")
    p.add_argument("--heads", type=int, default=4, help="full scale: 8")
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.01, help="Adagrad learning rate (full scale: 0.01)")
    p.add_argument("--decay", type=float, default=0.9, help="full scale: 0.9")
    p.add_argument("--decay-steps", type=int, default=20_000, help="full scale: 20000")
    p.add_argument("--clip", type=float, default=5.0, help="global-norm clip (full scale: 5)")
    p.add_argument("--batch-size", type=int, default=16, help="full scale: 2048")
    p.add_argument("--steps", type=int, default=2000, help="full scale: 700000")
    p.add_argument("--target-loss", type=float, help="stop once full train loss drops below this")
    p.add_argument("--full-scale", action="store_true", help="use the full-scale sizes and schedule")
    p.add_argument("--float64", action="store_true", help="store the checkpoint in float64")
    p.add_argument("--log", type=_path, help="training log JSONL")
    p.add_argument("--out", type=_path, required=True, help="checkpoint directory")

    p = add("generate", cmd_generate, "generate paragraphs for pairs")
    p.add_argument("--checkpoint", type=_existing, required=True)
    p.add_argument("--pairs", type=_existing, required=True, help="pairs or records JSONL")
    p.add_argument("--grids", type=_existing, required=True)
    p.add_argument("--mode", choices=("beam", "greedy", "multinomial"), default="beam")
    p.add_argument("--width", type=int, default=5, help="beam width (full scale: 5)")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--out", type=_path, required=True)

    p = add("evaluate", cmd_evaluate, "BLEU-4 / ROUGE-L / CIDEr-D report with baselines and human row")
    p.add_argument("--references", action="append", metavar="SPLIT=PATH", help="records per split")
    p.add_argument("--predictions", action="append", metavar="SYSTEM=PATH", help="predictions per system")
    p.add_argument("--train", type=_existing, help="training records; enables the three baselines")
    p.add_argument("--grids", type=_existing, help="feature grids; enables the nearest-neighbour baseline")
    p.add_argument("--human-runs", type=int, default=25, help="one-vs-rest runs (full scale: 25); 0 disables")
    p.add_argument("--out", type=_path)

    p = add("judge-score", cmd_judge_score, "score rater judgments per sampling category")
    p.add_argument("--judgments", type=_existing)
    p.add_argument("--pairs", type=_existing, help="pairs/records giving each item's category")
    p.add_argument("--predictions", type=_existing, help="run the programmatic judge on these")
    p.add_argument("--images", type=_existing, help="images.jsonl with attributes")
    p.add_argument("--write-judgments", type=_path)
    p.add_argument("--out", type=_path)
    return parser, subs


def main(argv=None) -> int:
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            defaults = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            parser.error(f"{args.config}: invalid JSON ({exc.msg})")
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(defaults) - known)
        if unknown:
            parser.error(f"{args.config}: unknown setting(s) {unknown}")
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CLIError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"naturalist {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
