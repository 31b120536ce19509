"""Command-line interface.

Subcommands: synth, train, eval, gradcheck, verify-theorem, length-sweep.
Flag values may also come from a JSON config file via --config; explicit
flags override file values. Exit codes: 0 success, 1 validation failure,
2 runtime error.
"""

import argparse
import json
import sys

import numpy as np

from . import data as data_mod
from . import gradcheck
from . import rank_oracle
from . import runner


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, "%s: error: %s\n" % (self.prog, message))


def _resolve(args, defaults):
    """Layer precedence: defaults < --config file < explicit flags."""
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError("%s: config must be a JSON object" % args.config)
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ValueError("unknown config keys: %s" % sorted(unknown))
        cfg.update(loaded)
    out = dict(defaults)
    out.update(cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return argparse.Namespace(**out)


def _int_list(text):
    return [int(x) for x in str(text).split(",") if x != ""]


def _load_split(data_dir, split, fraction):
    d = data_mod.load_dataset(data_dir)
    if split == "all":
        return d
    train_d, test_d = data_mod.split_dataset(d, fraction)
    return train_d if split == "train" else test_d


def _cmd_synth(args):
    ns = _resolve(args, dict(frames=256, points=15, rank=3, rot_mode="smooth",
                             components=1, noise=0.0, seed=0, out=None))
    if ns.out is None:
        raise ValueError("synth: --out DIR is required")
    spec = data_mod.SyntheticSpec(
        frames=ns.frames, points=ns.points, rank=ns.rank,
        rotation_mode=ns.rot_mode, components=ns.components,
        noise_sigma=ns.noise, seed=ns.seed)
    d = data_mod.synth_sequence(spec)
    data_mod.save_dataset(d, ns.out)
    print("wrote %d frames x %d points to %s" % (d.frames, d.points, ns.out))
    return 0


def _cmd_train(args):
    ns = _resolve(args, dict(
        data=None, seq_len=32, alpha=0.01, lam=0.003, m=4, lr=0.001,
        steps=1000, decay_at="auto", seed=0, out=None, train_fraction=0.8,
        log=None))
    if ns.data is None or ns.out is None:
        raise ValueError("train: --data and --out are required")
    if ns.decay_at == "auto":
        decay = runner.default_decay_steps(ns.steps)
    else:
        decay = tuple(_int_list(ns.decay_at))
    cfg = runner.TrainConfig(seq_len=ns.seq_len, lr=ns.lr, decay_steps=decay,
                             total_steps=ns.steps, alpha=ns.alpha,
                             lam=ns.lam, m_samples=ns.m, seed=ns.seed)
    train_d = _load_split(ns.data, "train", ns.train_fraction)
    log_path = ns.log if ns.log else ns.out + ".log.jsonl"
    with open(log_path, "w", encoding="utf-8") as stream:
        ckpt, log = runner.train(train_d, cfg, log_stream=stream)
    runner.save_checkpoint(ns.out, ckpt)
    last = log[-1] if log else {}
    print("trained %d steps on %d frames; checkpoint %s; log %s"
          % (cfg.total_steps, train_d.frames, ns.out, log_path))
    if last:
        print("final losses: data=%.6g norm=%.6g cano=%.6g total=%.6g"
              % (last["loss_data"], last["loss_norm"], last["loss_cano"],
                 last["total"]))
    return 0


def _cmd_eval(args):
    ns = _resolve(args, dict(
        ckpt=None, data=None, mode="normal", metrics="mpjpe,stress,e3d",
        flip=False, out=None, split="test", train_fraction=0.8, seq_len=None,
        seed=0))
    if ns.ckpt is None or ns.data is None:
        raise ValueError("eval: --ckpt and --data are required")
    ckpt = runner.load_checkpoint(ns.ckpt)
    ds = _load_split(ns.data, ns.split, ns.train_fraction)
    names = [m for m in str(ns.metrics).split(",") if m]
    rep = runner.evaluate(ckpt, ds, mode=ns.mode, metric_names=names,
                          flip=bool(ns.flip), seq_len=ns.seq_len,
                          rng=np.random.default_rng(ns.seed))
    payload = rep.to_json()
    if ns.out:
        with open(ns.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    summary = " ".join("%s=%.6g" % (n, rep.mean(n)) for n in names)
    print("mode=%s frames=%d %s nrmse=%.6g"
          % (ns.mode, rep.frames, summary, rep.extras["nrmse"]))
    return 0


def _cmd_gradcheck(args):
    ns = _resolve(args, dict(op=None, trials=20, seed=0))
    results = gradcheck.run_all(trials=ns.trials, seed=ns.seed, only=ns.op)
    failed = 0
    for name, err, tol, ok in results:
        print("%-18s max_rel_err=%.3e tol=%.0e %s"
              % (name, err, tol, "PASS" if ok else "FAIL"))
        failed += 0 if ok else 1
    if failed:
        print("%d/%d checks failed" % (failed, len(results)))
        return 1
    print("all %d checks passed" % len(results))
    return 0


def _cmd_verify_theorem(args):
    ns = _resolve(args, dict(rank=3, frames=60, points=20, components="1",
                             trials=100, tol=1e-8, seed=0, out=None,
                             csv=None))
    rng = np.random.default_rng(ns.seed)
    reports = []
    for s in _int_list(ns.components):
        rep = rank_oracle.theorem1_experiment(
            ns.rank, ns.frames, ns.points, s, ns.trials, rng, rel_tol=ns.tol)
        reports.append(rep)
        print("s=%d ranks=[%d..%d] expected=[%d,%d] violations=%d"
              % (s, min(rep.rotated_ranks), max(rep.rotated_ranks),
                 rep.expected_low, rep.expected_high, rep.violations))
    if ns.out:
        with open(ns.out, "w", encoding="utf-8") as fh:
            json.dump([r.to_json() for r in reports], fh, indent=2)
            fh.write("\n")
    if ns.csv:
        with open(ns.csv, "w", encoding="utf-8") as fh:
            fh.write(rank_oracle.rank_report_csv(reports))
    total = sum(r.violations for r in reports)
    print("total violations: %d" % total)
    return 0 if total == 0 else 1


def _cmd_length_sweep(args):
    ns = _resolve(args, dict(ckpt=None, data=None, lengths="1,4,8,16,32",
                             out=None, split="test", train_fraction=0.8,
                             flip=False))
    if ns.ckpt is None or ns.data is None:
        raise ValueError("length-sweep: --ckpt and --data are required")
    ckpt = runner.load_checkpoint(ns.ckpt)
    ds = _load_split(ns.data, ns.split, ns.train_fraction)
    results = runner.length_sweep(ckpt, ds, _int_list(ns.lengths),
                                  flip=bool(ns.flip))
    csv_text = runner.length_sweep_csv(results)
    if ns.out:
        with open(ns.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    print(csv_text.strip())
    return 0


def build_parser():
    parser = _Parser(prog="seqnrsfm",
                     description="Sequence-to-sequence NRSfM toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic keypoint "
                       "dataset directory")
    p.add_argument("--config")
    p.add_argument("--frames", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--rot-mode", dest="rot_mode",
                   choices=["smooth", "components", "random"])
    p.add_argument("--components", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--decay-at", dest="decay_at")
    p.add_argument("--seed", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--log")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--mode", choices=list(runner.EVAL_MODES))
    p.add_argument("--metrics")
    p.add_argument("--flip", action="store_const", const=True)
    p.add_argument("--split", choices=["train", "test", "all"])
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--config")
    p.add_argument("--op")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("verify-theorem", help="reshuffled-rank Monte-Carlo "
                       "verification")
    p.add_argument("--config")
    p.add_argument("--rank", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--components", help="component count or comma list")
    p.add_argument("--trials", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--csv")
    p.set_defaults(fn=_cmd_verify_theorem)

    p = sub.add_parser("length-sweep", help="evaluate across chunk lengths")
    p.add_argument("--config")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--lengths")
    p.add_argument("--split", choices=["train", "test", "all"])
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--flip", action="store_const", const=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_length_sweep)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print("runtime error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
