"""Command-line entry point.

Subcommands: gen (synthetic multi-domain data), train, eval, ablate (all
eight on/off combinations of pretrained-backbone / mixup / style-bank),
diagnose (style export, 2-D projection, shift proxies), project (test-time
inference over a data tree). Exit status: 0 success, 2 usage error,
1 runtime error. Logs go to stderr; output files are deterministic given
the seed and config.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .config import RunConfig, load_config, override_train
from .metrics import export_styles, macro_scores, pca2d, read_style_csv
from .model import infer_test_time, load_checkpoint, save_checkpoint
from .shiftdiag import build_shift_report, reports_to_csv, reports_to_text, summarize_domain
from .synthdata import (SPLIT_SOURCE, default_layout, read_pgm, read_root, write_pgm,
                        write_root)
from .train import TrainConfig, evaluate, train


def _log(msg: str):
    print(msg, file=sys.stderr)


def _load_runconfig(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = override_train(cfg,
                         epochs=getattr(args, "epochs", None),
                         batch_size=getattr(args, "batch_size", None),
                         lr=getattr(args, "lr", None),
                         lambda_sty=getattr(args, "lambda_sty", None),
                         n_bases=getattr(args, "n_bases", None),
                         channels=getattr(args, "channels", None),
                         seed=getattr(args, "seed", None))
    for name in ("fm", "mixup", "csdm"):
        value = getattr(args, name, None)
        if value is not None:
            cfg = replace(cfg, **{name: value})
    if getattr(args, "pretrain_epochs", None) is not None:
        cfg = replace(cfg, pretrain_epochs=args.pretrain_epochs)
    if getattr(args, "seeds", None):
        cfg = replace(cfg, seeds=tuple(int(s) for s in args.seeds.split(",")))
    if getattr(args, "data", None):
        cfg = replace(cfg, data_dir=args.data)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _arm_config(base: TrainConfig, fm: bool, mixup: bool, csdm: bool) -> TrainConfig:
    return replace(base,
                   style_mode="always" if csdm else "off",
                   lambda_sty=base.lambda_sty if csdm else 0.0,
                   mixup_prob=base.mixup_prob if mixup else 0.0,
                   lora=fm)


def run_pipeline(datasets, base: TrainConfig, fm: bool, mixup: bool, csdm: bool,
                 pretrain_epochs: int, quiet: bool = False):
    """Train one ablation arm; the all-off arm is exactly the plain pipeline."""
    tcfg = _arm_config(base, fm, mixup, csdm)
    if not fm:
        return train(datasets, tcfg, quiet=quiet)
    pre_cfg = replace(tcfg, style_mode="off", lambda_sty=0.0, mixup_prob=0.0,
                      lora=False, epochs=pretrain_epochs)
    backbone, _ = train(datasets, pre_cfg, quiet=True)
    return train(datasets, tcfg, init_from=backbone, quiet=quiet)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _load_runconfig(args)
    seed = cfg.train.seed if args.seed is None else args.seed
    datasets = default_layout(seed, size=args.size or cfg.image_size,
                              source_count=args.source_count or cfg.source_count,
                              target_count=args.target_count or cfg.target_count)
    write_root(datasets, cfg.out_dir)
    total = sum(len(d.samples) for d in datasets)
    _log(f"wrote {len(datasets)} domains / {total} samples to {cfg.out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_runconfig(args)
    datasets = read_root(cfg.data_dir)
    model, report = run_pipeline(datasets, cfg.train, cfg.fm, cfg.mixup, cfg.csdm,
                                 cfg.resolved_pretrain_epochs())
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_checkpoint(model, os.path.join(cfg.out_dir, "checkpoint.t3s"))
    report.to_csv(os.path.join(cfg.out_dir, "report.csv"))
    _log(f"trained {cfg.train.epochs} epochs; final val dice {report.dice[-1]:.4f}; "
         f"artifacts in {cfg.out_dir}")
    return 0


def _eval_with_predictions(datasets, pred_root):
    results = {}
    for ds in datasets:
        scores = []
        for i, sample in enumerate(ds.samples):
            pred_path = os.path.join(pred_root, ds.name, f"msk_{i:04d}.pgm")
            if not os.path.exists(pred_path):
                raise FileNotFoundError(f"missing prediction {pred_path}")
            scores.append(macro_scores(read_pgm(pred_path), sample.mask,
                                       sample.num_classes))
        arr = np.asarray(scores)
        results[ds.name] = (ds.split, float(arr[:, 0].mean()), float(arr[:, 1].mean()),
                            len(ds.samples))
    return results


def cmd_eval(args) -> int:
    cfg = _load_runconfig(args)
    datasets = read_root(cfg.data_dir)
    if args.pred:
        results = _eval_with_predictions(datasets, args.pred)
    else:
        results = evaluate(load_checkpoint(args.ckpt), datasets)
    os.makedirs(cfg.out_dir, exist_ok=True)
    out_path = os.path.join(cfg.out_dir, "eval.csv")
    splits = {}
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("domain,split,count,iou,dice\n")
        for name in sorted(results):
            split, iou_v, dice_v, count = results[name]
            fh.write(f"{name},{split},{count},{iou_v:.17g},{dice_v:.17g}\n")
            splits.setdefault(split, []).append((iou_v, dice_v, count))
        for split in sorted(splits):
            arr = np.asarray([(i, d) for i, d, _ in splits[split]])
            count = sum(c for _, _, c in splits[split])
            fh.write(f"(mean),{split},{count},{arr[:, 0].mean():.17g},"
                     f"{arr[:, 1].mean():.17g}\n")
    for split in sorted(splits):
        arr = np.asarray([(i, d) for i, d, _ in splits[split]])
        _log(f"{split}: iou {arr[:, 0].mean():.4f}  dice {arr[:, 1].mean():.4f}")
    _log(f"wrote {out_path}")
    return 0


def _unseen_metrics(model, datasets):
    unseen = [ds for ds in datasets if ds.split == "target-unseen-style"]
    if not unseen:
        raise ValueError("data tree has no target-unseen-style domains")
    results = evaluate(model, unseen)
    arr = np.asarray([(iou_v, dice_v) for _, iou_v, dice_v, _ in results.values()])
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


def cmd_ablate(args) -> int:
    cfg = _load_runconfig(args)
    datasets = read_root(cfg.data_dir)
    os.makedirs(cfg.out_dir, exist_ok=True)
    out_path = os.path.join(cfg.out_dir, "ablation.csv")
    pretrain = cfg.resolved_pretrain_epochs()
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("fm,mixup,csdm,iou,dice\n")
        for arm in range(8):
            fm, mix, csdm = bool(arm & 4), bool(arm & 2), bool(arm & 1)
            for seed in cfg.seeds:
                tcfg = replace(cfg.train, seed=seed)
                model, _ = run_pipeline(datasets, tcfg, fm, mix, csdm, pretrain,
                                        quiet=True)
                iou_v, dice_v = _unseen_metrics(model, datasets)
                fh.write(f"{int(fm)},{int(mix)},{int(csdm)},"
                         f"{iou_v:.17g},{dice_v:.17g}\n")
                fh.flush()
                _log(f"arm fm={int(fm)} mixup={int(mix)} csdm={int(csdm)} "
                     f"seed={seed}: unseen iou {iou_v:.4f} dice {dice_v:.4f}")
    _log(f"wrote {out_path}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _load_runconfig(args)
    datasets = read_root(cfg.data_dir)
    model = load_checkpoint(args.ckpt)
    os.makedirs(cfg.out_dir, exist_ok=True)
    styles_path = os.path.join(cfg.out_dir, "styles.csv")
    rows = export_styles(datasets, model, styles_path)
    _log(f"wrote {rows} style rows to {styles_path}")

    domains, splits, phases, matrix = read_style_csv(styles_path)
    proj = pca2d(matrix)
    pca_path = os.path.join(cfg.out_dir, "styles_pca.csv")
    with open(pca_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("domain,split,phase,x,y\n")
        for i in range(len(domains)):
            fh.write(f"{domains[i]},{splits[i]},{phases[i]},"
                     f"{proj.coords[i, 0]:.17g},{proj.coords[i, 1]:.17g}\n")
    _log(f"2-D projection retains {proj.retained_variance:.3f} of style variance")

    pre = {}
    for i in range(len(domains)):
        if phases[i] == "pre":
            pre.setdefault((domains[i], splits[i]), []).append(matrix[i])
    sources = [summarize_domain(vecs, name=dom)
               for (dom, split), vecs in sorted(pre.items()) if split == SPLIT_SOURCE]
    reports = [build_shift_report(summarize_domain(vecs, name=dom), sources)
               for (dom, split), vecs in sorted(pre.items()) if split != SPLIT_SOURCE]
    reports_to_csv(reports, os.path.join(cfg.out_dir, "shift_report.csv"))
    reports_to_text(reports, os.path.join(cfg.out_dir, "shift_report.txt"))
    _log(f"wrote shift report for {len(reports)} target domains")
    return 0


def cmd_project(args) -> int:
    cfg = _load_runconfig(args)
    datasets = read_root(cfg.data_dir)
    model = load_checkpoint(args.ckpt)
    os.makedirs(cfg.out_dir, exist_ok=True)
    n = model.bank.n
    csv_path = os.path.join(cfg.out_dir, "projections.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        w_cols = ",".join([f"w_mu_{i}" for i in range(n)]
                          + [f"w_sigma_{i}" for i in range(n)])
        fh.write(f"domain,index,{w_cols}\n")
        for ds in datasets:
            dom_dir = os.path.join(cfg.out_dir, ds.name)
            os.makedirs(dom_dir, exist_ok=True)
            for i, sample in enumerate(ds.samples):
                mask, diag = infer_test_time(sample.image, model)
                write_pgm(os.path.join(dom_dir, f"msk_{i:04d}.pgm"), mask)
                vals = ",".join(f"{v:.17g}" for v in np.concatenate([diag.w_mu,
                                                                     diag.w_sigma]))
                fh.write(f"{ds.name},{i},{vals}\n")
    _log(f"wrote predictions for {len(datasets)} domains to {cfg.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing / dispatch
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="run config file (key = value sections)")
    p.add_argument("--out", help="output directory")


def _add_train_flags(p):
    p.add_argument("--data", help="dataset root directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-sty", dest="lambda_sty", type=float)
    p.add_argument("--n-bases", dest="n_bases", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--fm", action=argparse.BooleanOptionalAction, default=None,
                   help="pretrain a backbone, freeze it, adapt with low-rank updates")
    p.add_argument("--mixup", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--csdm", action=argparse.BooleanOptionalAction, default=None,
                   help="style-bank projection plus orthogonality penalty")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="styleproj",
                                     description="style-projection segmentation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write the default synthetic multi-domain layout")
    _add_common(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--source-count", dest="source_count", type=int, default=None)
    p.add_argument("--target-count", dest="target_count", type=int, default=None)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train one pipeline configuration")
    _add_common(p)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or a prediction tree")
    _add_common(p)
    p.add_argument("--data", help="dataset root directory")
    p.add_argument("--ckpt", help="model checkpoint")
    p.add_argument("--pred", help="directory of predicted masks (mirrors the data tree)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run all 8 arms of {fm, mixup, csdm} across seeds")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--seeds", help="comma-separated experiment seeds")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("diagnose", help="style export, 2-D projection, shift proxies")
    _add_common(p)
    p.add_argument("--data", help="dataset root directory")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("project", help="test-time inference over a data tree")
    _add_common(p)
    p.add_argument("--data", help="dataset root directory")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(fn=cmd_project)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "eval" and bool(args.ckpt) == bool(args.pred):
            parser.error("eval needs exactly one of --ckpt or --pred")
        return args.fn(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError, RuntimeError, KeyError) as err:
        _log(f"error: {err}")
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
