"""Command-line entry point.

Subcommands: gen-data, pretrain, finetune, eval, grad-check, bench,
ablate.  Values come from (highest priority first) command-line flags, the
--config file, and built-in defaults.  Failures print a single
``error[category]: message`` line on stderr and exit with the category's
code.
"""

import argparse
import sys

from . import config as cfgmod
from .ablate import AblationSettings, run_ablation, split_dataset
from .bench import bench_inference
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Vocab,
    generate_synthetic,
    load_corpus_lines,
    load_tsv_classification,
    write_corpus,
    write_tsv,
)
from .diagnostics import GradCheckSpec, run_grad_check
from .encoder import TransformerEncoder
from .errors import EXIT_CODES, ConfigError, CtdistillError
from .train import evaluate, train


def _add_common_train_flags(p):
    p.add_argument("--config", help="key=value config file with sections")
    p.add_argument("--data", required=True, help="training data path")
    p.add_argument("--vocab", required=True, help="vocab file path")
    p.add_argument("--teacher", help="teacher checkpoint (distillation stages)")
    p.add_argument("--init", help="checkpoint to warm-start matching parameters")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--metrics", help="per-step metrics CSV output path")
    p.add_argument("--eval-data", help="held-out set evaluated after training")
    # [train]
    p.add_argument("--steps", type=int, dest="total_steps")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup-frac", type=float, dest="warmup_frac")
    p.add_argument("--clip-norm", type=float, dest="clip_norm")
    p.add_argument("--k", type=int, dest="K", help="contrastive negatives")
    p.add_argument("--bank-beta", type=float, dest="bank_beta")
    p.add_argument("--proj-dim", type=int, dest="proj_dim")
    p.add_argument("--summary-mode", choices=("mean_pool", "cls"),
                   dest="summary_mode")
    p.add_argument("--mask-rate", type=float, dest="mask_rate")
    p.add_argument("--shuffle", type=int, choices=(0, 1))
    p.add_argument("--seed", type=int)
    # [loss]
    p.add_argument("--alpha1", type=float)
    p.add_argument("--alpha2", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--tau", type=float)
    # [encoder]
    p.add_argument("--num-layers", type=int, dest="num_layers")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--num-heads", type=int, dest="num_heads")
    p.add_argument("--ffn-dim", type=int, dest="ffn_dim")
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--dropout", type=float, dest="dropout_rate")
    p.add_argument("--head-pool", choices=("mean_pool", "cls"),
                   dest="head_pool")


_TRAIN_KEYS = ("total_steps", "batch_size", "lr", "warmup_frac", "clip_norm",
               "K", "bank_beta", "proj_dim", "summary_mode", "mask_rate",
               "seed")
_LOSS_KEYS = ("alpha1", "alpha2", "rho", "tau")
_ENC_KEYS = ("num_layers", "hidden_dim", "num_heads", "ffn_dim", "max_len",
             "dropout_rate", "head_pool")


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="ctdistill",
        description="Train, distill, and benchmark small Transformer encoders.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--config", help="config file providing the [data] section")
    g.add_argument("--kind", choices=("classification", "corpus"))
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--vocab-out", required=True)
    g.add_argument("--dev-out", help="held-out split path (classification)")
    g.add_argument("--dev-frac", type=float, default=0.2)

    pre = sub.add_parser("pretrain", help="masked-token pretraining stages")
    pre.add_argument("--stage", choices=("pretrain_mlm", "pretrain_codir"),
                     default="pretrain_mlm")
    _add_common_train_flags(pre)

    fin = sub.add_parser("finetune", help="classification stages")
    fin.add_argument("--stage", choices=("finetune_standard", "finetune_kd",
                                         "finetune_codir"),
                     default="finetune_standard")
    _add_common_train_flags(fin)

    ev = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--vocab", required=True)
    ev.add_argument("--batch-size", type=int, default=64)

    gc = sub.add_parser("grad-check",
                        help="verify tape gradients of the full objective")
    gc.add_argument("--h", type=float, default=1e-4)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--teacher-layers", type=int, default=4)
    gc.add_argument("--student-layers", type=int, default=2)
    gc.add_argument("--hidden-dim", type=int, default=32)
    gc.add_argument("--batch-size", type=int, default=4)
    gc.add_argument("--k", type=int, default=8)
    gc.add_argument("--proj-dim", type=int, default=16)

    be = sub.add_parser("bench", help="inference speed ratio of two checkpoints")
    be.add_argument("--teacher", required=True)
    be.add_argument("--student", required=True)
    be.add_argument("--batch-size", type=int, default=32)
    be.add_argument("--seq-len", type=int, default=128)
    be.add_argument("--reps", type=int, default=5)
    be.add_argument("--seed", type=int, default=0)

    ab = sub.add_parser("ablate",
                        help="summary-mode toggle and K sweep, one CSV")
    ab.add_argument("--out", required=True)
    ab.add_argument("--n", type=int)
    ab.add_argument("--teacher-steps", type=int)
    ab.add_argument("--student-steps", type=int)
    ab.add_argument("--batch-size", type=int)
    ab.add_argument("--lr", type=float)
    ab.add_argument("--seed", type=int)
    ab.add_argument("--k-values", help="comma list, default 8,32,128")
    ab.add_argument("--modes", help="comma list, default mean_pool,cls")
    return ap


def _overrides(args, keys):
    return {k: getattr(args, k, None) for k in keys}


def _cmd_gen_data(args):
    sections = cfgmod.read_config_file(args.config) if args.config else {}
    spec = cfgmod.build_synthetic_spec(sections, {"kind": args.kind})
    dataset, vocab = generate_synthetic(spec, args.n, seed=args.seed)
    vocab.save(args.vocab_out)
    if spec.kind == "corpus":
        write_corpus(dataset, vocab, args.out)
        print("wrote %d sentences in %d documents to %s"
              % (len(dataset), len(dataset.doc_bounds), args.out))
        return 0
    if args.dev_out:
        n_dev = max(1, int(round(args.dev_frac * len(dataset))))
        train_part, dev_part = split_dataset(dataset, len(dataset) - n_dev)
        write_tsv(train_part, vocab, args.out)
        write_tsv(dev_part, vocab, args.dev_out)
        print("wrote %d train / %d dev examples" % (len(train_part), len(dev_part)))
    else:
        write_tsv(dataset, vocab, args.out)
        print("wrote %d examples to %s" % (len(dataset), args.out))
    return 0


def _cmd_train(args):
    sections = cfgmod.read_config_file(args.config) if args.config else {}
    vocab = Vocab.load(args.vocab)
    is_pretrain = args.stage.startswith("pretrain")

    enc_over = _overrides(args, _ENC_KEYS)
    enc_over["vocab_size"] = len(vocab)
    enc_over["head"] = "mlm" if is_pretrain else "classification"
    if is_pretrain:
        dataset = load_corpus_lines(args.data, vocab)
    else:
        dataset = load_tsv_classification(args.data, vocab)
        enc_over["num_classes"] = dataset.num_classes
    encoder = cfgmod.build_encoder_config(sections, enc_over)

    weights = cfgmod.build_loss_weights(sections, _overrides(args, _LOSS_KEYS))
    train_over = _overrides(args, _TRAIN_KEYS)
    train_over["stage"] = args.stage
    if args.shuffle is not None:
        train_over["shuffle"] = bool(args.shuffle)
    elif is_pretrain and "shuffle" not in sections.get("train", {}):
        # contiguous-document batches keep in-batch negatives topical
        train_over["shuffle"] = False
    cfg = cfgmod.build_train_config(sections, train_over, encoder, weights)

    teacher = None
    if args.teacher:
        teacher = load_checkpoint(args.teacher).build_model()
    init_arrays = None
    if args.init:
        init_arrays = load_checkpoint(args.init).params

    eval_set = None
    if args.eval_data:
        eval_set = load_tsv_classification(args.eval_data, vocab)

    result = train(cfg, dataset, teacher=teacher, init_arrays=init_arrays,
                   eval_dataset=eval_set)

    if args.metrics:
        result.record.to_csv(args.metrics)
    if args.out:
        sections_out = {}
        if result.bank is not None:
            sections_out["bank"] = result.bank.state_arrays()
        if result.phi_s is not None:
            sections_out["phi_s"] = {"weight": result.phi_s.weight.data}
            sections_out["phi_t"] = {"weight": result.phi_t.weight.data}
        save_checkpoint(args.out, result.model, sections=sections_out,
                        meta={"stage": cfg.stage, "seed": cfg.seed,
                              "steps": cfg.total_steps})
    last = result.record.rows[-1] if result.record.rows else None
    if last:
        print("final step %d: task %.4f kd %.4f crd %.4f total %.4f"
              % (last.step, last.task_loss, last.kd_loss, last.crd_loss,
                 last.total))
    if result.record.eval_accuracy is not None:
        print("eval accuracy: %.4f" % result.record.eval_accuracy)
    if result.record.crd_skipped:
        print("contrastive terms skipped: %d" % result.record.crd_skipped)
    return 0


def _cmd_eval(args):
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build_model()
    vocab = Vocab.load(args.vocab)
    dataset = load_tsv_classification(args.data, vocab)
    res = evaluate(model, dataset, batch_size=args.batch_size)
    print("accuracy: %.6f" % res.accuracy)
    for c, (good, tot) in enumerate(zip(res.per_class_correct,
                                        res.per_class_total)):
        if tot:
            print("class %d: %d/%d" % (c, good, tot))
    return 0


def _cmd_grad_check(args):
    spec = GradCheckSpec(
        teacher_layers=args.teacher_layers,
        student_layers=args.student_layers,
        hidden_dim=args.hidden_dim,
        batch_size=args.batch_size,
        K=args.k,
        proj_dim=args.proj_dim,
        seed=args.seed,
        h=args.h,
    )
    report = run_grad_check(spec)
    for name, err, idx in sorted(report.groups, key=lambda r: -r[1]):
        print("%-24s max_rel_err %.3e (coord %d)" % (name, err, idx))
    print("checked %d coordinates in %.1fs" % (report.num_coords,
                                               report.seconds))
    print("max_relative_error: %.6e" % report.max_rel_err)
    return 0


def _cmd_bench(args):
    teacher = load_checkpoint(args.teacher).build_model()
    student = load_checkpoint(args.student).build_model()
    res = bench_inference(teacher, student, batch_size=args.batch_size,
                          seq_len=args.seq_len, reps=args.reps,
                          seed=args.seed)
    if res.threads:
        print("threads pinned to %d" % res.threads)
    print("teacher median %.4fs  student median %.4fs"
          % (res.teacher_median_s, res.student_median_s))
    print("speedup: %.3fx" % res.speedup)
    return 0


def _cmd_ablate(args):
    kwargs = {}
    for name in ("n", "teacher_steps", "student_steps", "batch_size", "lr",
                 "seed"):
        v = getattr(args, name)
        if v is not None:
            kwargs[name] = v
    if args.k_values:
        kwargs["k_values"] = tuple(int(x) for x in args.k_values.split(","))
    if args.modes:
        kwargs["modes"] = tuple(args.modes.split(","))
    settings = AblationSettings(**kwargs)
    teacher_acc, rows = run_ablation(args.out, settings)
    print("teacher dev accuracy: %.4f" % teacher_acc)
    for mode, K, acc in rows:
        print("%-10s K=%-4d dev accuracy %.4f" % (mode, K, acc))
    print("wrote %s" % args.out)
    return 0


def _dispatch(args):
    if args.command == "gen-data":
        return _cmd_gen_data(args)
    if args.command in ("pretrain", "finetune"):
        return _cmd_train(args)
    if args.command == "eval":
        return _cmd_eval(args)
    if args.command == "grad-check":
        return _cmd_grad_check(args)
    if args.command == "bench":
        return _cmd_bench(args)
    if args.command == "ablate":
        return _cmd_ablate(args)
    raise ConfigError("unknown command %r" % args.command)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except CtdistillError as exc:
        print("error[%s]: %s" % (exc.category, exc), file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except Exception as exc:  # pragma: no cover - last-resort guard
        print("error[internal]: %r" % exc, file=sys.stderr)
        return EXIT_CODES["internal"]


if __name__ == "__main__":
    sys.exit(main())
