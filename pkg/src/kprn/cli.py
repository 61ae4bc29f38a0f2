"""Command-line pipeline: synth -> prepare -> extract-paths -> train -> eval / explain.

Every command reads and writes conventional file names inside ``--workdir``.
Exit status: 0 success, 1 usage, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path

from . import synth
from .errors import DataError, NumericError
from .evaluate import EvalList, build_eval_lists, evaluate, evaluate_scores, popularity_scorer
from .explain import explain_pathset, render_explanation
from .graph import (
    InteractionSet,
    build_enriched_graph,
    load_entity_types,
    load_graph,
    load_interactions,
    save_graph,
    split_interactions,
    write_pairs,
)
from .model import load_params, save_params
from .paths import extract_corpus, extract_paths, load_corpus, save_corpus, save_corpus_text
from .train import TrainConfig, train

log = logging.getLogger("kprn")

GRAPH_FILE = "graph.bin"
TRAIN_FILE = "train.tsv"
TEST_FILE = "test.tsv"
EVAL_FILE = "eval_lists.tsv"
CORPUS_FILE = "paths.bin"
CORPUS_TEXT_FILE = "paths.txt"
CORPUS_META = "paths.json"
MODEL_FILE = "model.bin"
TRAIN_LOG = "train_log.jsonl"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment. Keys use flag names."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _k_range(text: str) -> int:
    text = str(text)
    if ".." in text:
        lo, hi = text.split("..", 1)
        if int(lo) != 1:
            raise argparse.ArgumentTypeError("k ranges must start at 1")
        text = hi
    k = int(text)
    if k < 1:
        raise argparse.ArgumentTypeError("k must be >= 1")
    return k


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--workdir", default=".", help="directory holding pipeline files")
    common.add_argument("-v", "--verbose", action="store_true")

    p = Parser(prog="kprn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a planted-preference dataset")
    s.add_argument("--users", type=int, default=200)
    s.add_argument("--items", type=int, default=200)
    s.add_argument("--attributes", type=int, default=20)
    s.add_argument("--rule-strength", type=float, default=0.9)
    s.add_argument("--per-user", type=int, default=10)
    s.add_argument("--noise-tags", type=int, default=0)
    s.add_argument("--contrast", type=_bool, nargs="?", const=True, default=False)

    s = sub.add_parser("prepare", parents=[common], help="build the enriched graph and train/test split")
    s.add_argument("--triplets", help="KG triplet file (default: WORKDIR/kg.tsv)")
    s.add_argument("--interactions", help="interaction file (default: WORKDIR/interactions.tsv)")
    s.add_argument("--types", help="entity-type file (default: WORKDIR/types.tsv if present)")
    s.add_argument("--train-fraction", type=float, default=0.8)

    s = sub.add_parser("extract-paths", parents=[common], help="enumerate paths for training and evaluation pairs")
    s.add_argument("--max-nodes", type=int, default=6)
    s.add_argument("--min-nodes", type=int, default=3, help="3 drops the direct user-item edge")
    s.add_argument("--cap", type=int, default=256, help="per-pair path cap (0 = unlimited)")
    s.add_argument("--eval-negatives", type=int, default=100)
    s.add_argument("--text", type=_bool, nargs="?", const=True, default=False, help="also write the text corpus")

    s = sub.add_parser("train", parents=[common], help="fit the model (grid over comma-separated values)")
    s.add_argument("--lr", type=_floats, default=[0.002])
    s.add_argument("--l2", type=_floats, default=[1e-5])
    s.add_argument("--gamma", type=_floats, default=[1.0])
    s.add_argument("--gamma-sweep", type=_bool, nargs="?", const=True, default=False, help="shorthand for --gamma 0.01,0.1,1,10")
    s.add_argument("--l2-scope", choices=["touched", "all"], default="touched")
    s.add_argument("--pool", choices=["weighted", "mean"], default="weighted")
    s.add_argument("--batch-size", type=int, default=256)
    s.add_argument("--negatives", type=int, default=4)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--patience", type=int, default=5)
    s.add_argument("--monitor", choices=["valid", "test"], default="valid")
    s.add_argument("--valid-fraction", type=float, default=0.1)
    s.add_argument("--monitor-negatives", type=int, default=100)
    s.add_argument("--entity-dim", type=int, default=64)
    s.add_argument("--type-dim", type=int, default=32)
    s.add_argument("--relation-dim", type=int, default=32)
    s.add_argument("--hidden", type=int, default=256)
    s.add_argument("--dense", type=int, default=None)
    s.add_argument("--ablate-relations", type=_bool, nargs="?", const=True, default=False)
    s.add_argument("--shared-recurrent", type=_bool, nargs="?", const=True, default=False)
    s.add_argument("--model", default=MODEL_FILE, help="output snapshot name inside WORKDIR")

    s = sub.add_parser("eval", parents=[common], help="hit@k / ndcg@k on the held-out lists")
    s.add_argument("--k", type=_k_range, default=15, help="largest cutoff, e.g. 15 or 1..15")
    s.add_argument("--model", default=MODEL_FILE)
    s.add_argument("--baseline", type=_bool, nargs="?", const=True, default=False, help="also score item popularity")
    s.add_argument("--out", default="metrics", help="output stem inside WORKDIR")

    s = sub.add_parser("explain", parents=[common], help="per-path explanations for user-item pairs")
    s.add_argument("--user", help="user name (default: every held-out test pair)")
    s.add_argument("--item", help="item name")
    s.add_argument("--top", type=int, default=3)
    s.add_argument("--model", default=MODEL_FILE)
    s.add_argument("--template", help="JSON file {sentence, relations: {name: phrase}}")
    s.add_argument("--format", choices=["json", "text"], default="json")
    return p


GLOBAL_VALUE_FLAGS = ("--config", "--seed", "--threads", "--workdir")


def _hoist_globals(argv):
    """Allow global flags before the subcommand: ``kprn --seed 3 train``."""
    argv = list(argv)
    moved, k = [], 0
    while k < len(argv) and argv[k] not in COMMANDS:
        tok = argv[k]
        name = tok.split("=", 1)[0]
        if name in GLOBAL_VALUE_FLAGS:
            take = 1 if "=" in tok else 2
            moved += argv[k : k + take]
            del argv[k : k + take]
        elif tok in ("-v", "--verbose"):
            moved.append(tok)
            del argv[k]
        else:
            k += 1
    if k < len(argv):
        return argv[: k + 1] + moved + argv[k + 1 :]
    return argv + moved


def parse_args(argv):
    argv = _hoist_globals(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config key(s) for '{args.command}': {', '.join(unknown)}")
        converted = {}
        for a in subparser._actions:
            if a.dest in cfg:
                conv = a.type or (lambda v: v)
                try:
                    converted[a.dest] = conv(cfg[a.dest])
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"config key {a.dest}: {exc}") from None
        subparser.set_defaults(**converted)
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _load_split(workdir: Path, graph) -> InteractionSet:
    train_pairs = load_interactions(workdir / TRAIN_FILE)
    test_pairs = load_interactions(workdir / TEST_FILE)
    train_d, test_d = {}, {}
    for u, i in graph.encode_pairs(train_pairs):
        train_d.setdefault(u, []).append(i)
    for u, i in graph.encode_pairs(test_pairs):
        test_d.setdefault(u, []).append(i)
    return InteractionSet(train=train_d, test=test_d, items=graph.items.tolist())


def _load_eval_lists(path: Path) -> list[EvalList]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                ids = [int(v) for v in line.split()]
            except ValueError:
                ids = []
            if len(ids) < 3:
                raise DataError(f"{path}:{lineno}: expected 'user positive negative...' ids")
            out.append(EvalList(ids[0], ids[1], tuple(ids[2:])))
    return out


def _write_eval_lists(path: Path, lists) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for lst in lists:
            fh.write(" ".join(str(v) for v in (lst.user, lst.positive, *lst.negatives)) + "\n")


def _corpus_with_extractor(workdir: Path, graph):
    try:
        meta = json.loads(_require(workdir / CORPUS_META).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{workdir / CORPUS_META}: invalid JSON ({exc})") from None
    corpus = load_corpus(_require(workdir / CORPUS_FILE))
    cap = meta["cap"] or None
    corpus.extractor = lambda u, i: extract_paths(graph, u, i, meta["max_nodes"], cap, meta["seed"], meta["min_nodes"])
    return corpus, meta


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing input file {path}")
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    data = synth.generate(
        users=args.users,
        items=args.items,
        attributes=args.attributes,
        rule_strength=args.rule_strength,
        per_user=args.per_user,
        noise_tags=args.noise_tags,
        contrast=args.contrast,
        seed=args.seed,
    )
    files = data.write(args.workdir)
    print(f"wrote {len(data.triplets)} triplets and {len(data.interactions)} interactions to {args.workdir}")
    log.debug("files: %s", files)
    return 0


def cmd_prepare(args) -> int:
    wd = Path(args.workdir)
    triplets = _require(Path(args.triplets) if args.triplets else wd / "kg.tsv")
    inter = _require(Path(args.interactions) if args.interactions else wd / "interactions.tsv")
    types_path = Path(args.types) if args.types else wd / "types.tsv"
    if args.types:
        _require(types_path)
    from .graph import load_triplets

    kg = load_triplets(triplets)
    pairs = load_interactions(inter)
    types = load_entity_types(types_path) if types_path.exists() else None
    split = split_interactions(pairs, args.train_fraction, args.seed)
    graph = build_enriched_graph(kg, pairs, types, withhold=split.test_pairs())
    loops = graph.self_loops()
    if loops:
        log.warning("%d self-loop triplet(s), e.g. %s", len(loops), graph.entities.name(loops[0][0]))
    wd.mkdir(parents=True, exist_ok=True)
    save_graph(graph, wd / GRAPH_FILE)
    write_pairs(wd / TRAIN_FILE, split.train_pairs())
    write_pairs(wd / TEST_FILE, split.test_pairs())
    print(
        f"graph: {graph.n_entities} entities, {graph.n_relations} relations, {graph.n_types} types, "
        f"{graph.n_edges} edges; {len(split.train_pairs())} train / {len(split.test_pairs())} test pairs"
    )
    return 0


def cmd_extract(args) -> int:
    wd = Path(args.workdir)
    graph = load_graph(_require(wd / GRAPH_FILE))
    iset = _load_split(wd, graph)
    lists = build_eval_lists(iset, args.eval_negatives, args.seed)
    _write_eval_lists(wd / EVAL_FILE, lists)
    pairs = iset.train_pairs() + [(l.user, i) for l in lists for i in (l.positive, *l.negatives)]
    cap = args.cap or None
    corpus = extract_corpus(graph, pairs, args.max_nodes, cap, args.seed, args.min_nodes, args.threads)
    save_corpus(corpus, wd / CORPUS_FILE)
    if args.text:
        save_corpus_text(corpus, wd / CORPUS_TEXT_FILE)
    meta = {"max_nodes": args.max_nodes, "min_nodes": args.min_nodes, "cap": args.cap, "seed": args.seed}
    (wd / CORPUS_META).write_text(json.dumps(meta, sort_keys=True) + "\n")
    empty = sum(1 for ps in corpus.values() if len(ps) == 0)
    print(
        f"{len(corpus)} pairs, {corpus.n_paths()} paths (mean {corpus.mean_path_nodes():.2f} nodes), "
        f"{empty} pairs without paths"
    )
    return 0


def _train_config(args, lr, l2, gamma) -> TrainConfig:
    kw = {name: getattr(args, name) for name in TrainConfig.field_names() if hasattr(args, name)}
    kw.update(lr=lr, l2=l2, gamma=gamma)
    return TrainConfig(**kw)


def cmd_train(args) -> int:
    wd = Path(args.workdir)
    graph = load_graph(_require(wd / GRAPH_FILE))
    iset = _load_split(wd, graph)
    corpus, _ = _corpus_with_extractor(wd, graph)
    gammas = [0.01, 0.1, 1.0, 10.0] if args.gamma_sweep else args.gamma
    grid = list(itertools.product(args.lr, args.l2, gammas))
    best = None
    with open(wd / TRAIN_LOG, "w", encoding="utf-8", newline="\n") as fh:
        for lr, l2, gamma in grid:
            config = _train_config(args, lr, l2, gamma)
            fh.write(json.dumps({"config": {"lr": lr, "l2": l2, "gamma": gamma}}, sort_keys=True) + "\n")
            result = train(graph, corpus, iset, config, log_file=fh)
            print(f"lr={lr} l2={l2} gamma={gamma}: best epoch {result.best_epoch}, monitor hit@15 {result.best_metric:.4f}")
            if len(grid) > 1:
                save_params(result.params, wd / f"model_lr{lr}_l2{l2}_g{gamma}.bin", config.pool_cfg)
            if best is None or result.best_metric > best[0]:
                best = (result.best_metric, result, config)
    _, result, config = best
    save_params(result.params, wd / args.model, config.pool_cfg)
    print(f"saved {wd / args.model} (lr={config.lr} l2={config.l2} gamma={config.gamma})")
    return 0


def cmd_eval(args) -> int:
    wd = Path(args.workdir)
    graph = load_graph(_require(wd / GRAPH_FILE))
    params, pool_cfg = load_params(_require(wd / args.model))
    corpus, _ = _corpus_with_extractor(wd, graph)
    lists = _load_eval_lists(_require(wd / EVAL_FILE))
    table = evaluate(params, corpus, lists, pool_cfg, args.k)
    (wd / f"{args.out}.csv").write_text(table.to_csv())
    (wd / f"{args.out}.json").write_text(table.to_json())
    if args.baseline:
        pop = evaluate_scores(lists, popularity_scorer(_load_split(wd, graph)), args.k)
        (wd / f"{args.out}_popularity.csv").write_text(pop.to_csv())
        (wd / f"{args.out}_popularity.json").write_text(pop.to_json())
    sys.stdout.write(table.to_csv())
    return 0


def _read_template(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read template {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON template ({exc})") from exc


def cmd_explain(args) -> int:
    if (args.user is None) != (args.item is None):
        raise UsageError("--user and --item go together")
    wd = Path(args.workdir)
    graph = load_graph(_require(wd / GRAPH_FILE))
    params, pool_cfg = load_params(_require(wd / args.model))
    corpus, meta = _corpus_with_extractor(wd, graph)
    template = _read_template(args.template) if args.template else None
    if args.user is not None:
        pairs = [(graph.entity_id(args.user), graph.entity_id(args.item))]
    else:
        pairs = _load_split(wd, graph).test_pairs()
    out_lines = []
    for u, i in pairs:
        ps = corpus[(u, i)] if args.user is None else extract_paths(
            graph, u, i, meta["max_nodes"], meta["cap"] or None, meta["seed"], meta["min_nodes"]
        )
        if len(ps) == 0 and args.user is None:
            continue
        exp = explain_pathset(params, graph, ps, pool_cfg, args.top)
        out_lines.append(exp.to_json() if args.format == "json" else render_explanation(exp, template))
    text = "\n".join(out_lines) + ("\n" if out_lines else "")
    (wd / f"explanations.{'jsonl' if args.format == 'json' else 'txt'}").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "extract-paths": cmd_extract,
    "train": cmd_train,
    "eval": cmd_eval,
    "explain": cmd_explain,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"kprn: usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"kprn: data error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"kprn: usage error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"kprn: invalid argument: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"kprn: data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"kprn: numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
