"""``stepconf`` command line.

Exit codes: 0 success, 1 usage, 2 data error, 3 provider/transport error.
Diagnostics go to stderr as JSON lines; every ``--out`` is written atomically.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from typing import Optional

from . import diagnostics
from .corpus import atomic_write, canonical_dumps, load_corpus, load_graph, save_corpus
from .errors import ConfigError, EmptyInputError, SchemaError, StepconfError
from .gibs import GibsConfig, gradcheck, init_model, load_model, save_model, score, train
from .mcs import (ANCHOR_STRATEGIES, ENGINES, McsParams, consensus_mask, mcs_proportion, run_mcs,
                  select_anchors)
from .metrics import labeled_scores, report
from .nibs import NibsConfig, nibs_score
from .parser import parse_linear, parse_structured
from .selfcorrect import (DEFAULT_TAU_C, answer_equal, dumps_outcomes, feedback_batch, make_client,
                          oracle_for, run_round, success_rate)
from .similarity import make_embedder, make_similarity
from .synth import SynthConfig, synth_corpus
from .trace import Trajectory, TrajectorySet, induced_edges

MASKS_VERSION = 1
CONFIG_SECTIONS = ("rng_seed", "synth", "similarity", "embedding", "entailment", "mcs", "nibs",
                   "gibs", "anchor_strategy", "feedback", "eval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ config


def load_config(path: Optional[str], seed: Optional[int] = None) -> dict:
    cfg = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        unknown = set(cfg) - set(CONFIG_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if seed is not None:
        cfg["rng_seed"] = seed
    return cfg


def _seeded(section: dict, cfg: dict) -> dict:
    section = dict(section or {})
    if "rng_seed" in cfg:
        section["rng_seed"] = cfg["rng_seed"]
    return section


def mcs_params(cfg: dict) -> McsParams:
    sec = dict(cfg.get("mcs") or {})
    unknown = set(sec) - {"tau_e", "tau_v", "k", "engine"}
    if unknown:
        raise ConfigError(f"unknown mcs keys: {sorted(unknown)}")
    provider = make_similarity(cfg.get("entailment"), make_embedder(cfg.get("embedding")))
    return McsParams(tau_e=float(sec.get("tau_e", 0.7)), tau_v=float(sec.get("tau_v", 0.7)),
                     k=int(sec.get("k", 10)), entailment=provider)


def nibs_config(cfg: dict) -> NibsConfig:
    sec = dict(cfg.get("nibs") or {})
    provider = make_similarity(cfg.get("similarity"), make_embedder(cfg.get("embedding")))
    unknown = set(sec) - {"aggregator", "text_mode"}
    if unknown:
        raise ConfigError(f"unknown nibs keys: {sorted(unknown)}")
    return NibsConfig(provider, sec.get("aggregator", "max"), sec.get("text_mode", "both"))


def _strategy(args, cfg) -> str:
    strategy = getattr(args, "strategy", None) or cfg.get("anchor_strategy", "correct-only")
    if strategy == "all":
        strategy = "all-trajectories"
    if strategy not in ANCHOR_STRATEGIES:
        raise ConfigError(f"unknown anchor strategy {strategy!r}")
    return strategy


def _check_distinct(inputs, outputs):
    ins = {os.path.realpath(p) for p in inputs if p}
    for out in outputs:
        if out and os.path.realpath(out) in ins:
            raise ConfigError(f"output path {out} is also an input")


def _emit_stdout(data):
    sys.stdout.write(json.dumps(data, sort_keys=True) + "\n")


# ------------------------------------------------------------------ scores


def dumps_scores(rows) -> str:
    return "".join(json.dumps({"question_id": q, "trajectory_id": t, "scores": list(s)},
                              sort_keys=True) + "\n" for q, t, s in rows)


def load_scores(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (rec["question_id"], rec["trajectory_id"])
                scores = [float(x) for x in rec["scores"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise SchemaError(f"{path}:{lineno}: bad scores record", pointer=f"/{lineno - 1}") from None
            out[key] = scores
    return out


def load_masks(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict) or data.get("version") != MASKS_VERSION:
        raise SchemaError(f"{path}: unsupported masks file", pointer="/version")
    out = {}
    for i, rec in enumerate(data.get("masks", [])):
        try:
            out[(rec["question_id"], rec["trajectory_id"])] = [float(x) for x in rec["mask"]]
        except (KeyError, TypeError, ValueError):
            raise SchemaError(f"{path}: bad mask record", pointer=f"/masks/{i}") from None
    return out


# ------------------------------------------------------------------ commands


def cmd_parse(args, cfg):
    _check_distinct([args.inp], [args.out])
    with open(args.inp, "rb") as fh:
        raw = fh.read()
    qid, tid = args.question_id, args.trajectory_id
    if args.linear:
        lines = raw.decode("utf-8", errors="replace").splitlines()
        graph = parse_linear(lines, qid, tid, args.final_answer or "")
    else:
        graph = parse_structured(raw, qid, tid)
    correct = False
    if args.gold is not None:
        correct = answer_equal(graph.final_answer, args.gold)
    tset = TrajectorySet(qid, args.question or "", args.gold, (Trajectory(graph, correct),))
    save_corpus([tset], args.out)


def cmd_synth(args, cfg):
    sets = synth_corpus(SynthConfig.from_dict(_seeded(cfg.get("synth"), cfg)))
    save_corpus(sets, args.out)


def cmd_nibs(args, cfg):
    _check_distinct([args.corpus, args.config], [args.out])
    sets = load_corpus(args.corpus)
    config = nibs_config(cfg)
    strategy = _strategy(args, cfg)
    rows = []
    for ts in sets:
        anchors = select_anchors(ts, strategy)
        for t in ts.trajectories:
            try:
                cv = nibs_score(t, anchors, config)
            except StepconfError as exc:
                if not args.skip_missing or exc.code != "no-anchors":
                    raise
                diagnostics.warn(exc.code, exc.message, question_id=ts.question_id,
                                 trajectory_id=t.trajectory_id)
                continue
            rows.append((ts.question_id, t.trajectory_id, cv.scores))
    atomic_write(args.out, dumps_scores(rows))


def cmd_consensus(args, cfg):
    _check_distinct([args.corpus, args.config], [args.out])
    sets = load_corpus(args.corpus)
    params = mcs_params(cfg)
    engine = args.engine or (cfg.get("mcs") or {}).get("engine", "heuristic")
    if engine not in ENGINES:
        raise ConfigError(f"unknown MCS engine {engine!r}")
    strategy = _strategy(args, cfg)
    masks = []
    for ts in sets:
        anchors = select_anchors(ts, strategy)
        for t in ts.trajectories:
            try:
                mask = consensus_mask(t.graph, anchors, params, engine)
            except StepconfError as exc:
                if exc.code != "no-anchors":
                    raise
                diagnostics.warn(exc.code, exc.message, question_id=ts.question_id,
                                 trajectory_id=t.trajectory_id)
                continue
            masks.append({"question_id": ts.question_id, "trajectory_id": t.trajectory_id, "mask": mask})
    atomic_write(args.out, canonical_dumps({"version": MASKS_VERSION, "engine": engine,
                                            "strategy": strategy, "masks": masks}))


def cmd_train(args, cfg):
    _check_distinct([args.corpus, args.masks, args.config], [args.out, args.history])
    sets = load_corpus(args.corpus)
    masks = load_masks(args.masks)
    config = GibsConfig.from_dict(_seeded(cfg.get("gibs"), cfg))
    embedding = dict(cfg.get("embedding") or {"kind": "hashed-bow", "dim": config.embed_dim})
    data = []
    for ts in sets:
        for t in ts.trajectories:
            mask = masks.get((ts.question_id, t.trajectory_id))
            if mask is not None:
                data.append((t.graph, mask))
    if not data:
        raise EmptyInputError("no trajectory in the corpus has a mask")
    model = init_model(config, embedding)

    def log(epoch, train_loss, val_loss):
        diagnostics.emit("info", "epoch", f"epoch {epoch}", epoch=epoch, train_loss=train_loss,
                         val_loss=val_loss)

    model, history = train(model, data, make_embedder(embedding), log=log)
    save_model(model, args.out)
    if args.history:
        atomic_write(args.history, canonical_dumps(history.to_dict()))


def cmd_score(args, cfg):
    _check_distinct([args.model, args.corpus], [args.out])
    model = load_model(args.model)
    embedder = make_embedder(model.embedding)
    rows = []
    for ts in load_corpus(args.corpus):
        for t in ts.trajectories:
            rows.append((ts.question_id, t.trajectory_id, score(model, t.graph, embedder).scores))
    atomic_write(args.out, dumps_scores(rows))


def cmd_eval(args, cfg):
    _check_distinct([args.scores, args.corpus], [args.out, args.csv])
    sets = load_corpus(args.corpus)
    scores = load_scores(args.scores)
    ev = cfg.get("eval") or {}
    c = args.acc_at if args.acc_at is not None else ev.get("acc_at", 80)
    bins = args.ece_bins if args.ece_bins is not None else ev.get("ece_bins", 10)
    trajs = [t for ts in sets for t in ts.trajectories]
    missing = [t.trajectory_id for t in trajs if (t.graph.question_id, t.trajectory_id) not in scores]
    if missing:
        diagnostics.warn("missing-scores", f"{len(missing)} trajectories have no scores",
                         trajectory_ids=missing[:10])
    data = labeled_scores(trajs, scores, first_error=args.first_error,
                          key=lambda t: (t.graph.question_id, t.trajectory_id))
    rep = report(data, c, bins)
    atomic_write(args.out, rep.to_json())
    if args.csv:
        atomic_write(args.csv, rep.to_csv())


def cmd_mcs(args, cfg):
    g1 = load_graph(args.g1, trajectory_id="g1")
    g2 = load_graph(args.g2, trajectory_id="g2")
    engine = args.engine or (cfg.get("mcs") or {}).get("engine", "heuristic")
    result = run_mcs(g1, g2, mcs_params(cfg), engine)
    text = json.dumps(result.to_dict(induced_edges(g1), induced_edges(g2)), sort_keys=True, indent=1) + "\n"
    if args.out:
        _check_distinct([args.g1, args.g2, args.config], [args.out])
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_mcs_stats(args, cfg):
    _check_distinct([args.corpus, args.config], [args.out])
    params = mcs_params(cfg)
    engine = args.engine or (cfg.get("mcs") or {}).get("engine", "heuristic")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["question_id", "trajectory_id", "answer_correct", "mcs_proportion"])
    for ts in load_corpus(args.corpus):
        if len(ts.trajectories) < 2:
            diagnostics.warn("too-few-trajectories", "question skipped", question_id=ts.question_id)
            continue
        for tid, ok, value in mcs_proportion(ts, params, engine):
            writer.writerow([ts.question_id, tid, int(ok), repr(value)])
    atomic_write(args.out, buf.getvalue())


def cmd_feedback(args, cfg):
    _check_distinct([args.corpus, args.scores, args.config], [args.out])
    sets = load_corpus(args.corpus)
    scores = load_scores(args.scores) if args.scores else {}
    if args.mode == "stepwise" and not args.scores:
        raise UsageError("stepwise feedback needs --scores")
    fb = dict(cfg.get("feedback") or {})
    tau_c = args.tau_c if args.tau_c is not None else float(fb.get("tau_c", DEFAULT_TAU_C))
    bottom_k = args.bottom_k if args.bottom_k is not None else fb.get("bottom_k")
    items, golds = feedback_batch(sets, scores, args.mode, tau_c, bottom_k, args.limit)
    if not items:
        raise EmptyInputError("corpus has no initially wrong trajectories")
    client_cfg = dict(fb.get("client") or {})
    client_cfg["kind"] = "mock" if args.client == "mock" else "http-chat"
    client = make_client(client_cfg, oracle_for(sets) if args.client == "mock" else None)
    outcomes = run_round(client, items, golds)
    atomic_write(args.out, dumps_outcomes(outcomes))
    _emit_stdout({"mode": args.mode, "items": len(outcomes), "success_rate": success_rate(outcomes)})


def cmd_gradcheck(args, cfg):
    sec = dict(cfg.get("gibs") or {})
    base = {"embed_dim": 8, "hidden_dim": 16, "dropout": 0.0}
    base.update({k: v for k, v in sec.items() if k in ("embed_dim", "hidden_dim", "layers", "eps")})
    result = gradcheck(GibsConfig.from_dict(base), n_graphs=args.graphs,
                       seed=int(cfg.get("rng_seed", 0)))
    result["pass"] = result["max_rel_error"] < 1e-4
    _emit_stdout(result)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stepconf", description="Step-level confidence for reasoning traces.")
    p.add_argument("--seed", type=int, default=None, help="override rng_seed everywhere")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text, config=True, config_required=False):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(func=func)
        if config:
            sp.add_argument("--config", required=config_required, default=None)
        sp.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        return sp

    sp = add("parse", cmd_parse, "parse one LLM response into a corpus file", config=False)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--linear", action="store_true", help="one step per line, no node texts")
    sp.add_argument("--question-id", default="q0")
    sp.add_argument("--trajectory-id", default="t0")
    sp.add_argument("--question", default=None)
    sp.add_argument("--gold", default=None)
    sp.add_argument("--final-answer", default=None)

    sp = add("synth", cmd_synth, "generate a synthetic labelled corpus")
    sp.add_argument("--out", required=True)

    sp = add("nibs", cmd_nibs, "closed-form consensus scores")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--strategy", choices=["correct-only", "all", "all-trajectories", "self-consistency"])
    sp.add_argument("--skip-missing", action="store_true", help="warn instead of failing without anchors")

    sp = add("consensus", cmd_consensus, "MCS consensus masks")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--engine", choices=list(ENGINES))
    sp.add_argument("--strategy", choices=["correct-only", "all", "all-trajectories", "self-consistency"])

    sp = add("train", cmd_train, "train the graph mask predictor")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--masks", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--history", default=None)

    sp = add("score", cmd_score, "score a corpus with a trained model", config=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "step-level metrics report")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--csv", default=None)
    sp.add_argument("--first-error", action="store_true")
    sp.add_argument("--acc-at", type=float, default=None)
    sp.add_argument("--ece-bins", type=int, default=None)

    sp = add("mcs", cmd_mcs, "semantic MCS between two graph files")
    sp.add_argument("--g1", required=True)
    sp.add_argument("--g2", required=True)
    sp.add_argument("--engine", choices=list(ENGINES))
    sp.add_argument("--out", default=None)

    sp = add("mcs-stats", cmd_mcs_stats, "per-trajectory MCS proportions (CSV)")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--engine", choices=list(ENGINES))

    sp = add("feedback", cmd_feedback, "one self-correction round")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--scores", default=None)
    sp.add_argument("--mode", choices=["answer", "stepwise"], required=True)
    sp.add_argument("--client", choices=["mock", "http"], default="mock")
    sp.add_argument("--out", required=True)
    sp.add_argument("--tau-c", type=float, default=None)
    sp.add_argument("--bottom-k", type=int, default=None)
    sp.add_argument("--limit", type=int, default=None)

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of the model gradients")
    sp.add_argument("--graphs", type=int, default=20)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(getattr(args, "config", None), args.seed)
        args.func(args, cfg)
    except UsageError as exc:
        diagnostics.emit("error", "usage", str(exc))
        return 1
    except StepconfError as exc:
        diagnostics.emit(**exc.to_record())
        return exc.exit_code
    except OSError as exc:
        diagnostics.emit("error", "io-error", str(exc), path=getattr(exc, "filename", None))
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
