"""Command-line entry point: ``delicate <subcommand> ...``.

Exit codes: 0 success, 1 internal error, 2 bad input.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace

from delicate import corpus, evaluation, gbt, index, kb, linker, training
from delicate.common import NIL
from delicate.features import read_feature_dump, write_feature_dump

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("delicate")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2

INPUT_ERRORS = (
    ValueError,
    OSError,
    corpus.UnmappedTypeError,
    kb.MissingEntityError,
    index.ProviderError,
    linker.LinkError,
    linker.BatchLinkError,
)


class InputError(Exception):
    pass


def _dump_json(obj, path=None):
    text = json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=False)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# shared option groups


def _add_dataset(p, required=True):
    p.add_argument("--dataset", required=required, help="dataset JSON file")
    p.add_argument("--format", choices=("eneide", "mhercl"), default="eneide")
    p.add_argument("--split", choices=("all", "train", "dev", "test"), default="all",
                   help="use one split of a stratified 70/15/15 partition")
    p.add_argument("--window", type=int, default=32, help="context tokens per side")


def _add_resources(p, model=True):
    p.add_argument("--index", required=True, help="entity embedding file")
    p.add_argument("--lookup", required=True, help="lookup store built by build-lookup")
    p.add_argument("--provider", choices=("hash", "file"), default="hash")
    p.add_argument("--mention-embeddings", help="mention embedding sidecar (file provider)")
    p.add_argument("--hash-seed", type=int, default=0)
    if model:
        p.add_argument("--model", required=True, help="trained model JSON")
    p.add_argument("--preset", choices=sorted(gbt.PRESETS))
    p.add_argument("-k", "--k", type=int, help="candidate block size")
    p.add_argument("--threads", type=int, default=1)


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0)


def _load_mentions(args):
    docs = corpus.load_dataset(args.dataset, args.format)
    if args.format == "mhercl":
        docs = corpus.translate_types(docs)
    if args.split != "all":
        parts = corpus.stratified_split(docs, seed=args.seed)
        docs = next(p.documents for p in parts if p.name == args.split)
    return docs, corpus.extract_mentions(docs, args.window)


def _provider(args, matrix):
    if args.provider == "file":
        if not args.mention_embeddings:
            raise InputError("--provider file needs --mention-embeddings")
        prov = index.FileEmbeddingProvider(args.mention_embeddings)
        if prov.dim != matrix.dim:
            raise InputError(f"mention embeddings have dim {prov.dim}, index has {matrix.dim}")
        return prov
    return index.HashEmbeddingProvider(dim=matrix.dim, seed=args.hash_seed)


def _pipeline(args, model=None, hp=None):
    matrix = index.ingest_embeddings(args.index)
    store = kb.LookupStore.open(args.lookup)
    k = args.k
    if k is None and args.preset:
        k = gbt.PRESETS[args.preset].block_size
    if k is None and hp is not None:
        k = hp.block_size
    if k is None and model is not None and model.hyperparams:
        k = model.hyperparams.block_size
    threshold = getattr(args, "nil_threshold", None)
    if threshold is None:
        threshold = gbt.NIL_THRESHOLDS.get(args.preset, 0.4)
    return linker.PipelineConfig(
        provider=_provider(args, matrix),
        index=matrix,
        lookup=store,
        model=model,
        block_size=k or 50,
        nil_threshold=threshold,
    )


def _hyperparams(args):
    base = gbt.PRESETS[args.preset] if args.preset else gbt.Hyperparams()
    overrides = {
        name: getattr(args, name)
        for name in ("learning_rate", "max_depth", "min_samples_leaf", "min_samples_split",
                     "n_estimators", "c_neg_size")
        if getattr(args, name) is not None
    }
    if args.k is not None:
        overrides["block_size"] = args.k
    return replace(base, **overrides)


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_index(args):
    matrix = index.ingest_embeddings(args.embeddings)
    index.write_embeddings(args.out, matrix.ids, matrix.vectors)
    print(f"indexed {len(matrix)} entities of dim {matrix.dim} -> {args.out}")


def cmd_build_lookup(args):
    roots = kb.read_roots(args.roots) if args.roots else kb.DEFAULT_ROOTS
    edges = kb.read_class_edges(args.edges) if args.edges else []
    closure = kb.build_class_closure(edges, roots)
    store = kb.build_lookup(
        kb.read_entity_dump(args.entities),
        closure,
        kb.read_type_facts(args.types) if args.types else {},
        kb.read_date_facts(args.dates) if args.dates else {},
    )
    store.save(args.out)
    print(f"stored {len(store)} entities ({len(closure)} typed classes) -> {args.out} sha256={store.digest()}")


def cmd_train(args):
    _, mentions = _load_mentions(args)
    hp = _hyperparams(args)
    config = _pipeline(args, hp=hp)
    model, rows = training.train_reranker(mentions, config, hp, seed=args.seed)
    model.save(args.out)
    if args.features_out:
        write_feature_dump(args.features_out, [(r.mention_id, r.entity_id, r.features, r.label) for r in rows])
    n_pos = sum(r.label for r in rows)
    print(f"trained {len(model.trees)} trees on {len(rows)} pairs ({n_pos} positive) -> {args.out}")


def cmd_link(args):
    _, mentions = _load_mentions(args)
    model = gbt.GbtModel.load(args.model)
    config = _pipeline(args, model=model)
    try:
        preds = linker.link_batch(mentions, config, threads=args.threads)
    except linker.BatchLinkError as exc:
        for err in exc.errors:
            logger.error("%s", err)
        linker.write_predictions(args.out, [p for p in exc.predictions if p is not None])
        raise
    linker.write_predictions(args.out, preds)
    n_nil = sum(p.decision == NIL for p in preds)
    print(f"linked {len(preds)} mentions ({n_nil} NIL, threshold {config.nil_threshold}) -> {args.out}")


def cmd_evaluate(args):
    docs = corpus.load_dataset(args.gold, args.format)
    if args.format == "mhercl":
        docs = corpus.translate_types(docs)
    gold = corpus.extract_mentions(docs, 0)
    preds = linker.read_predictions(args.predictions)
    report = {}
    if args.mode in ("ed", "all"):
        ed = evaluation.ed_accuracy(preds, gold)
        report["ed"] = ed.to_json()
        report["nil_recall"] = evaluation.nil_recall(preds, gold)
        if args.table:
            print(ed.render_table(args.name))
        by_key = {m.key: m for m in gold}
        correct = [int(p.decision == (by_key[p.mention_key].gold or NIL)) for p in preds]
        try:
            report["point_biserial"] = evaluation.point_biserial([p.score for p in preds], correct).to_json()
        except evaluation.UndefinedCorrelationError as exc:
            report["point_biserial"] = {"error": str(exc)}
    texts = {d.id: d.text for d in docs}
    for mode in ("exact", "fuzzy"):
        if args.mode in (mode, "all"):
            report[mode] = evaluation.e2e_metrics(
                evaluation.spans_from_predictions(preds),
                evaluation.spans_from_mentions(gold),
                mode=mode,
                overlap=args.overlap,
                texts=texts,
            ).to_json()
    _dump_json(report, args.out)


def _labeled_matrix(args, model):
    if args.features:
        mids, _, X, y = read_feature_dump(args.features)
        return mids, X, y
    if not (args.dataset and args.index and args.lookup):
        raise InputError("explain needs --features or --dataset with --index and --lookup")
    _, mentions = _load_mentions(args)
    config = _pipeline(args, model=model)
    rows = training.labeled_rows(mentions, config)
    X, y = gbt.rows_to_arrays(rows)
    return [r.mention_id for r in rows], X, y


def cmd_explain(args):
    model = gbt.GbtModel.load(args.model)
    groups, X, y = _labeled_matrix(args, model)
    if len(y) == 0:
        raise InputError("no labelled pairs to explain")
    if args.metric == "ed":
        threshold = args.nil_threshold
        if threshold is None:
            threshold = gbt.NIL_THRESHOLDS.get(args.preset, 0.4)
        metric = evaluation.make_ed_metric(groups, threshold)
    else:
        metric = evaluation.pair_accuracy
    imp = evaluation.permutation_importance(model, X, y, metric=metric, n_reps=args.n_reps, seed=args.seed)
    report = {
        "metric": args.metric,
        "permutation_importance": imp.to_json(),
        "gain_importance": gbt.gain_importance(model),
    }
    p = model.predict_proba(X)
    try:
        report["point_biserial"] = evaluation.point_biserial(p, y).to_json()
    except evaluation.UndefinedCorrelationError as exc:
        report["point_biserial"] = {"error": str(exc)}
    _dump_json(report, args.out)


def cmd_prompt(args):
    docs, mentions = _load_mentions(args)
    texts = {d.id: d.text for d in docs}
    config = _pipeline(args)
    records = [linker.prompt_record(m, config, texts[m.doc_id]) for m in mentions]
    linker.write_jsonl(args.out, records)
    print(f"wrote {len(records)} prompts -> {args.out}")


def cmd_parse_responses(args):
    prompts = {r["mention_key"]: r for r in linker.read_jsonl(args.prompts)}
    preds, failures = [], 0
    for obj in linker.read_jsonl(args.responses):
        key = obj["mention_key"]
        if key not in prompts:
            raise InputError(f"response for unknown mention {key}")
        rec = prompts[key]
        try:
            decision = linker.parse_llm_response(obj["response_text"], rec["candidates"])
        except linker.ResponseParseError as exc:
            if args.on_parse_error == "fail":
                raise
            logger.warning("%s: %s; treating as NIL", key, exc)
            failures += 1
            decision = NIL
        preds.append(linker.LinkPrediction(
            mention_key=key, doc_id=rec["doc_id"], start=rec["start"], end=rec["end"],
            etype=rec.get("type"), decision=decision, score=0.0 if decision == NIL else 1.0,
        ))
    linker.write_predictions(args.out, preds)
    print(f"parsed {len(preds)} responses ({failures} unparseable) -> {args.out}")


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="delicate", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML file with default option values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", help="validate an entity embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("build-lookup", help="build the entity lookup store")
    p.add_argument("--entities", required=True, help="entity dump JSONL")
    p.add_argument("--edges", help="subclass edges TSV (child<TAB>parent)")
    p.add_argument("--types", help="entity classes JSONL")
    p.add_argument("--dates", help="entity date facts JSONL")
    p.add_argument("--roots", help="JSON map of type -> root class QIDs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_lookup)

    p = sub.add_parser("train", help="train the re-ranker")
    _add_dataset(p)
    _add_resources(p, model=False)
    _add_seed(p)
    for name, typ in (("learning-rate", float), ("max-depth", int), ("min-samples-leaf", float),
                      ("min-samples-split", float), ("n-estimators", int), ("c-neg-size", int)):
        p.add_argument(f"--{name}", type=typ)
    p.add_argument("--features-out", help="also write the sampled feature rows as TSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("link", help="link every mention of a dataset")
    _add_dataset(p)
    _add_resources(p)
    _add_seed(p)
    p.add_argument("--nil-threshold", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("evaluate", help="score predictions against gold annotations")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--format", choices=("eneide", "mhercl"), default="eneide")
    p.add_argument("--mode", choices=("ed", "exact", "fuzzy", "all"), default="all")
    p.add_argument("--overlap", choices=("char", "token"), default="char")
    p.add_argument("--table", action="store_true", help="print the ED accuracy table")
    p.add_argument("--name", default="DELICATE")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="permutation and gain feature importance")
    p.add_argument("--model", required=True)
    p.add_argument("--features", help="labelled feature TSV (skips retrieval)")
    _add_dataset(p, required=False)
    p.add_argument("--index")
    p.add_argument("--lookup")
    p.add_argument("--provider", choices=("hash", "file"), default="hash")
    p.add_argument("--mention-embeddings")
    p.add_argument("--hash-seed", type=int, default=0)
    p.add_argument("--preset", choices=sorted(gbt.PRESETS))
    p.add_argument("-k", "--k", type=int)
    p.add_argument("--nil-threshold", type=float)
    p.add_argument("--metric", choices=("pair", "ed"), default="pair")
    p.add_argument("--n-reps", type=int, default=30)
    _add_seed(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("prompt", help="dump LLM prompts for offline adjudication")
    _add_dataset(p)
    _add_resources(p, model=False)
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("parse-responses", help="turn LLM responses into predictions")
    p.add_argument("--prompts", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--on-parse-error", choices=("nil", "fail"), default="nil")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_parse_responses)
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    with open(known.config, "rb") as fh:
        conf = tomllib.load(fh)
    sub_actions = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    shared = {k: v for k, v in conf.items() if not isinstance(v, dict)}
    for name, subparser in sub_actions.choices.items():
        values = {**shared, **conf.get(name, {})}
        dests = {a.dest for a in subparser._actions}
        subparser.set_defaults(**{
            k.replace("-", "_"): v for k, v in values.items() if k.replace("-", "_") in dests
        })
        for action in subparser._actions:
            if action.required and action.dest in values:
                action.required = False


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (InputError, gbt.DegenerateTrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
