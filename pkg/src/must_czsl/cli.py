"""Command-line entry point: synth, train, eval, gradcheck, config.

Exit codes: 0 success, 1 runtime or numerical failure, 2 config/format error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ABLATIONS, PROFILES, read_config_file, resolve
from .data import load_bundle, load_checkpoint, save_bundle, save_checkpoint, synth_generate
from .errors import ConfigError, MustError
from .gradcheck import check_full_objective
from .infer import VARIANTS, InferenceRule, ScoreSet, score_pairs
from .metrics import evaluate
from .model import score_all
from .train import train, write_history

log = logging.getLogger("must_czsl")

RESOLVED_CONFIG = "resolved_config.json"


def _load_config(args) -> dict:
    return read_config_file(args.config) if getattr(args, "config", None) else {}


def _set(d: dict, section: str, key: str, value) -> None:
    if value is not None:
        d.setdefault(section, {})[key] = value


def cmd_config(args) -> int:
    rc = resolve(_load_config(args), profile=args.profile)
    sys.stdout.write(rc.dumps())
    return 0


def cmd_synth(args) -> int:
    overrides: dict = {}
    _set(overrides, "synth", "seed", args.seed)
    rc = resolve(_load_config(args), overrides, profile=args.profile)
    bundle = synth_generate(rc.synth)
    out = Path(args.out)
    save_bundle(bundle, out)
    (out / RESOLVED_CONFIG).write_text(rc.dumps())
    print(f"wrote {len(bundle.samples)} samples ({bundle.space.n_seen} seen / "
          f"{bundle.space.n_closed - bundle.space.n_seen} unseen pairs) to {out}")
    return 0


def cmd_train(args) -> int:
    overrides: dict = {}
    if args.ablation is not None:
        overrides["ablation"] = args.ablation
    for key in ("epochs", "seed", "lr", "batch_size", "eval_every", "patience"):
        _set(overrides, "train", key, getattr(args, key))
    _set(overrides, "loss", "gamma", args.gamma)
    _set(overrides, "loss", "lam", args.lam)
    _set(overrides, "loss", "temperature", args.temperature)
    _set(overrides, "loss", "pair_objective", args.pair_objective)
    if args.attached_weights:
        _set(overrides, "loss", "weight_detached", False)
    if args.no_clamp:
        _set(overrides, "loss", "clamp_weights", False)
    _set(overrides, "model", "emb_dim", args.emb_dim)
    rc = resolve(_load_config(args), overrides, profile=args.profile)
    bundle = load_bundle(args.data)
    shape = PROFILES[rc.profile].get("shape", {})
    if shape.get("states") not in (None, bundle.space.n_states) or shape.get("objects") not in (None, bundle.space.n_objects):
        log.warning("bundle shape (%d states, %d objects) differs from profile %s",
                    bundle.space.n_states, bundle.space.n_objects, rc.profile)

    result = train(bundle, rc.model, rc.loss, rc.train, rc.inference)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"best_epoch": result.best_epoch, "best_val_auc": result.best_val_auc}
    save_checkpoint(result.model, out / "model.ckpt", extra)
    write_history(result.history, out / "history.csv")
    resolved = rc.to_dict()
    resolved["model"].update(feat_dim=bundle.feat_dim, word_dim=bundle.word_dim)
    (out / RESOLVED_CONFIG).write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    print(f"trained {len(result.history)} epochs; best val AUC {result.best_val_auc} at epoch {result.best_epoch}")
    return 0


def _write_curve(path: Path, report) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bias", "seen_acc", "unseen_acc"])
        for p in report.curve:
            w.writerow([repr(p.bias), repr(p.seen_acc), repr(p.unseen_acc)])


def cmd_eval(args) -> int:
    variants = list(VARIANTS) if args.inference == "all" else [args.inference]
    if "fixed" in variants and (args.alpha is None or args.beta is None):
        if args.inference == "fixed":
            raise ConfigError("--inference fixed requires --alpha and --beta")
        variants.remove("fixed")
    if args.topk < 1:
        raise ConfigError("--topk must be >= 1")
    bundle = load_bundle(args.data)
    model = load_checkpoint(args.ckpt, expected_space=bundle.space)
    X, st, ob = bundle.split(f"{args.split}_seen", f"{args.split}_unseen")
    scores = ScoreSet(*score_all(model, X))
    labels = model.space.pair_ids(st, ob)

    out = {"split": args.split, "n_samples": int(len(labels)), "variants": {}}
    rows = []
    for v in variants:
        rule = InferenceRule(v, args.alpha, args.beta) if v == "fixed" else InferenceRule(v)
        reports = evaluate(score_pairs(rule, scores, model.space), labels, model.space, args.topk)
        out["variants"][v] = {
            "rule": {"variant": v, "alpha": rule.alpha, "beta": rule.beta},
            "topk": [r.to_dict() for r in reports],
        }
        for r in reports:
            rows.append((v, r))
        if args.curve_csv:
            base = Path(args.curve_csv)
            for r in reports:
                suffix = "" if len(variants) == 1 else f"_{v}"
                suffix += "" if r.k == 1 else f"_top{r.k}"
                _write_curve(base.with_name(f"{base.stem}{suffix}{base.suffix}"), r)

    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    print(f"{'variant':<8} {'k':>2} {'AUC':>7} {'HM':>7} {'seen':>7} {'unseen':>7} {'A_adj':>7} {'A_obj':>7}")
    for v, r in rows:
        print(f"{v:<8} {r.k:>2} {r.auc:7.4f} {r.best_hm:7.4f} {r.best_seen:7.4f} {r.best_unseen:7.4f} "
              f"{r.acc_adj:7.4f} {r.acc_obj:7.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    modes = {"detached": [False], "attached": [True], "both": [False, True]}[args.mode]
    ok = True
    for attached in modes:
        t0 = time.perf_counter()
        rep = check_full_objective(seed=args.seed, tol=args.tol, attached=attached, batch=args.batch,
                                   max_entries=args.max_entries or None)
        print(f"# seed {args.seed}, {'attached' if attached else 'detached'} weights, tol {args.tol:g}")
        print(rep.format())
        log.info("gradcheck took %.2fs", time.perf_counter() - t0)
        for r in rep.rows:
            if not r.passed:
                print(f"FAILED: {r.name} max rel err {r.max_rel_err:.3e} >= {args.tol:g}", file=sys.stderr)
        ok &= rep.passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="must-czsl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    profile_kw = dict(choices=sorted(PROFILES), default=None, help="dataset profile (default: config or synth)")

    c = sub.add_parser("config", help="print the resolved configuration")
    c.add_argument("--config")
    c.add_argument("--profile", **profile_kw)
    c.set_defaults(func=cmd_config)

    s = sub.add_parser("synth", help="generate a synthetic bundle")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--profile", **profile_kw)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model on a bundle")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--profile", **profile_kw)
    t.add_argument("--ablation", choices=sorted(ABLATIONS))
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--gamma", type=float)
    t.add_argument("--lam", type=float)
    t.add_argument("--temperature", type=float)
    t.add_argument("--emb-dim", type=int)
    t.add_argument("--pair-objective", choices=["must", "focal"])
    t.add_argument("--attached-weights", action="store_true", help="let gradients flow through the weights")
    t.add_argument("--no-clamp", action="store_true", help="use unclamped (1 - d)^gamma weights")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint with the bias sweep")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--split", choices=["val", "test"], default="test")
    e.add_argument("--inference", choices=list(VARIANTS) + ["all"], default="must")
    e.add_argument("--alpha", type=float)
    e.add_argument("--beta", type=float)
    e.add_argument("--topk", type=int, default=1)
    e.add_argument("--report")
    e.add_argument("--curve-csv")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--mode", choices=["detached", "attached", "both"], default="both")
    g.add_argument("--batch", type=int, default=16)
    g.add_argument("--max-entries", type=int, default=128, help="entries probed per parameter (0 = all)")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        threadpool_limits = None
    try:
        if threadpool_limits is not None:
            with threadpool_limits(limits=1):
                return args.func(args)
        return args.func(args)
    except MustError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
