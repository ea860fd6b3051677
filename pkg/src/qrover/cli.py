"""``qrover`` command line.

Exit status: 0 on success, 2 when a verification finds a non-robust item,
1 on any error (usage errors included). Results go to files or stdout;
diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .attack import AttackConfig, run_attack
from .benchmark import TASKS, BenchmarkConfig, result_table, run_benchmark
from .bounds import is_infinite, robustness_lower_bound
from .channel import NOISE_KINDS, NoiseSpec, apply_noise_spec
from .dataio import (ModelBundle, align_labels, atomic_write, complex_from_json, complex_to_json, dumps, load_bundle,
                     load_dataset_file, read_json, save_dataset, save_model, save_report, write_json)
from .errors import QroverError
from .train import (SYNTHETIC_LABELS, TrainConfig, VariationalModel, adversarial_retrain, generate_lcei,
                    generate_synthetic, train)
from .verify import verify_dataset, verify_state

log = logging.getLogger("qrover")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NON_ROBUST = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _epsilon(text: str) -> float:
    try:
        eps = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (0.0 < eps < 1.0):
        raise argparse.ArgumentTypeError(f"epsilon must lie strictly between 0 and 1, got {text}")
    return eps


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _seed(text: str) -> int:
    v = int(text, 0)
    if not (0 <= v < 2 ** 64):
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _emit(obj, out: Optional[str]):
    if out:
        write_json(out, obj)
    else:
        sys.stdout.write(dumps(obj))


def _load_pair(model_path: str, dataset_path: str):
    a = load_bundle(model_path).classifier()
    loaded = load_dataset_file(dataset_path)
    data = align_labels(loaded.data, a.labels)
    data.check_against(a)
    return a, data, loaded


def _radius(x):
    return "infinite" if is_infinite(x) else float(x)


# --------------------------------------------------------------------------
# Commands

def cmd_verify(args) -> int:
    a, data, _ = _load_pair(args.model, args.dataset)
    report = verify_dataset(a, args.epsilon, data, method=args.method, jobs=args.jobs)
    witness = save_report(args.out, report, data, include_timing=args.timing)
    ra = "n/a" if report.robust_accuracy is None else f"{report.robust_accuracy:.6g}"
    ura = "n/a" if report.under_robust_accuracy is None else f"{report.under_robust_accuracy:.6g}"
    print(f"epsilon={args.epsilon:g} method={args.method} RA={ra} URA={ura} "
          f"non_robust={len(report.non_robust)} sdp_calls={report.sdp_calls}")
    if witness:
        print(f"adversarial examples: {witness}")
    return EXIT_NON_ROBUST if report.non_robust else EXIT_OK


def cmd_verify_state(args) -> int:
    a, data, _ = _load_pair(args.model, args.state)
    if not (0 <= args.index < len(data)):
        raise UsageError(f"--index {args.index} outside the {len(data)} items of {args.state}")
    rho = data[args.index].state
    v = verify_state(a, args.epsilon, rho)
    out = {
        "epsilon": args.epsilon,
        "index": args.index,
        "predicted": a.labels[a.classify(rho)],
        "rlb": robustness_lower_bound(a.outcome_distribution(rho.matrix)),
        "optimal": _radius(v.eps_star),
        "robust": v.robust,
        "target_label": None if v.target_label is None else a.labels[v.target_label],
        "boundary": v.boundary,
        "witness": None if v.witness is None else complex_to_json(v.witness.matrix),
    }
    _emit(out, args.out)
    return EXIT_OK if v.robust else EXIT_NON_ROBUST


def cmd_lower_bound(args) -> int:
    a, data, _ = _load_pair(args.model, args.dataset)
    rows = []
    for i, it in enumerate(data):
        p = a.outcome_distribution(it.state.matrix)
        rows.append({
            "index": i,
            "label": a.labels[it.label],
            "predicted": a.labels[int(np.argmax(p))],
            "distribution": [float(x) for x in p],
            "rlb": robustness_lower_bound(p),
        })
    _emit({"items": rows, "labels": list(a.labels)}, args.out)
    return EXIT_OK


def cmd_attack(args) -> int:
    a, data, _ = _load_pair(args.model, args.dataset)
    cfg = AttackConfig(args.strategy.replace("-", "_"), args.strength, args.mask_fraction, args.max_escalations, args.shots, args.seed)
    rows = []
    for i, it in enumerate(data):
        if it.features is None:
            raise UsageError("attack needs a features dataset")
        res = run_attack(a, it.features, cfg.for_item(i))
        rows.append({
            "index": i,
            "label": a.labels[it.label],
            "predicted": a.labels[res.original_label],
            "rlb": robustness_lower_bound(a.outcome_distribution(it.state.matrix)),
            "success": res.success,
            "rub": res.rub,
            "eps_used": res.eps_used,
            "escalations": res.escalations_used,
            "perturbed_features": res.perturbed_features,
            "adversarial_label": None if res.adversarial_label is None else a.labels[res.adversarial_label],
            "feature_delta": None if res.feature_delta is None else [float(x) for x in res.feature_delta],
        })
    _emit({"strategy": cfg.strategy, "strength": cfg.strength, "items": rows}, args.out)
    return EXIT_OK


def _custom_kraus(path: str):
    d = read_json(path, QroverError)
    ops = d.get("kraus") if isinstance(d, dict) else d
    if not isinstance(ops, list) or not ops:
        raise QroverError(f"{path}: expected a list of Kraus matrices")
    return tuple(complex_from_json(k, QroverError) for k in ops)


def cmd_noise(args) -> int:
    if args.kind == "custom" and not args.kraus:
        raise UsageError("--kind custom requires --kraus FILE")
    if args.kind != "custom" and args.kraus:
        raise UsageError("--kraus is only valid with --kind custom")
    bundle = load_bundle(args.model)
    kraus = _custom_kraus(args.kraus) if args.kraus else None
    spec = NoiseSpec(args.kind, args.p, args.placement, args.seed, kraus)
    circ = bundle.circuit
    if bundle.noise is not None and not bundle.noise_materialized:
        if bundle.noise.kind == "custom":
            raise QroverError("model already carries custom noise; cannot add more on top")
        circ = apply_noise_spec(circ, bundle.noise)
    materialized = spec.kind != "custom"
    if materialized:
        circ = apply_noise_spec(circ, spec)
    meta = dict(bundle.metadata)
    meta["noise_source"] = Path(args.model).name
    out = ModelBundle(circ, bundle.povm, spec, materialized, meta)
    save_model(args.out, out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _data_labels(data):
    return tuple(data.labels) if data.labels is not None else SYNTHETIC_LABELS


def cmd_train(args) -> int:
    loaded = load_dataset_file(args.dataset)
    data = loaded.data
    if len(data) == 0:
        raise UsageError("training dataset is empty")
    n_qubits = data[0].state.n_qubits
    labels = _data_labels(data)
    if len(labels) != 2:
        raise UsageError("the variational model has a single-qubit readout and needs exactly two labels")
    if args.init:
        meta = load_bundle(args.init).metadata.get("variational")
        if not meta:
            raise UsageError(f"{args.init} was not produced by 'train'")
        model = VariationalModel(int(meta["n_qubits"]), int(meta["layers"]), meta["theta"], tuple(meta["labels"]),
                                 int(meta["readout"]), meta.get("encoding"))
        data = align_labels(data, model.labels)
    else:
        readout = n_qubits - 1 if args.readout is None else args.readout
        model = VariationalModel.init(n_qubits, args.layers, seed=args.seed, labels=labels, readout=readout,
                                      encoding=loaded.encoding)
    n_features = max((len(it.features.features) for it in data if it.features is not None), default=1)
    attack = AttackConfig(strength=args.attack_strength, mask_fraction=max(0.25, 1.0 / n_features), seed=args.seed)
    cfg = TrainConfig(args.epochs, args.lr, args.batch, args.seed, args.adversarial, attack, args.witness_eps)
    if args.extra:
        extra = load_dataset_file(args.extra)
        extra_data = align_labels(extra.data, model.labels)
        adv = [(it.state, it.label, w) for it, w in zip(extra_data, extra.weights)]
        result = adversarial_retrain(model, data, adv, cfg)
    else:
        result = train(model, data, cfg)
    m = result.model
    meta = {"variational": {"n_qubits": m.n_qubits, "layers": m.layers, "theta": [float(t) for t in m.theta],
                            "labels": list(m.labels), "readout": m.readout, "encoding": m.encoding},
            "loss": [float(x) for x in result.losses]}
    save_model(args.out, ModelBundle(m.circuit(), m.povm(), None, False, meta))
    print(f"loss {result.losses[0]:.6g} -> {result.losses[-1]:.6g} over {len(result.losses) - 1} epochs; wrote {args.out}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.task == "lcei":
        data = generate_lcei(args.n_qubits, args.samples, (args.alpha_min, args.alpha_max), args.seed)
    else:
        data = generate_synthetic(args.n_qubits, args.samples, args.seed)
    save_dataset(args.out, data, n_qubits=args.n_qubits)
    print(f"wrote {len(data)} items to {args.out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = BenchmarkConfig(task=args.task, n_qubits=args.n_qubits, samples=args.samples, seed=args.seed,
                          train_size=max(args.train_size, args.samples), layers=args.layers, epochs=args.epochs,
                          learning_rate=args.lr, exact=args.exact)
    res = run_benchmark(cfg)
    table = result_table(res)
    out = Path(args.out)
    write_json(out / "results.json", table)
    lines = ["index\tlabel\trlb\trub\tgap\trlb_after\tcritical"]
    for r in table["rows"]:
        cells = [r["index"], r["label"], r["rlb"], r["rub"], r["gap"], r["rlb_after"], int(r["critical"])]
        lines.append("\t".join("" if c is None else (format(c, ".17g") if isinstance(c, float) else str(c))
                               for c in cells))
    atomic_write(out / "results.tsv", "\n".join(lines) + "\n")
    print(f"task={cfg.task} n_qubits={cfg.n_qubits} samples={cfg.samples} "
          f"mean_rlb_critical {res.mean_rlb_before:.6g} -> {res.mean_rlb_after:.6g} "
          f"(ratio {res.ratio:.6g})")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qrover", description="Robustness verification for quantum classifiers.")
    p.add_argument("--version", action="version", version=f"qrover {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("verify", help="dataset-level robustness verification")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--epsilon", required=True, type=_epsilon)
    s.add_argument("--method", choices=("lb", "exact", "mixed"), default="mixed")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=_positive_int, default=1)
    s.add_argument("--timing", action="store_true", help="include wall-clock timings in the report")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("verify-state", help="exact robustness check of one state")
    s.add_argument("--model", required=True)
    s.add_argument("--state", required=True, help="dataset file holding the state")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--epsilon", required=True, type=_epsilon)
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify_state)

    s = sub.add_parser("lower-bound", help="certified lower bounds from the outcome distributions")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_lower_bound)

    s = sub.add_parser("attack", help="FGSM / Mask FGSM upper bounds")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--strategy", choices=("fgsm", "mask-fgsm", "mask_fgsm"), default="mask-fgsm")
    s.add_argument("--strength", type=float, default=0.05)
    s.add_argument("--mask-fraction", type=float, default=0.25)
    s.add_argument("--max-escalations", type=int, default=10)
    s.add_argument("--shots", type=_positive_int, nargs="?", const=1024,
                   help="estimate gradients from this many shots per evaluation (1024 if no value given)")
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("noise", help="add noise to a model bundle")
    s.add_argument("--model", required=True)
    s.add_argument("--kind", required=True, choices=NOISE_KINDS + ("custom", "random"))
    s.add_argument("--p", type=float, default=0.0)
    s.add_argument("--placement", choices=("end", "random"), default="end")
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--kraus", help="JSON file with Kraus matrices for --kind custom")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_noise)

    s = sub.add_parser("train", help="train a variational classifier")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--init", help="continue from a model written by 'train'")
    s.add_argument("--extra", help="additional weighted items, e.g. a witness file from 'verify'")
    s.add_argument("--layers", type=_positive_int, default=2)
    s.add_argument("--readout", type=int, help="readout qubit (default: last)")
    s.add_argument("--epochs", type=int, default=40)
    s.add_argument("--lr", type=float, default=0.3)
    s.add_argument("--batch", type=int, default=0)
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--adversarial", action="store_true")
    s.add_argument("--attack-strength", type=float, default=0.05)
    s.add_argument("--witness-eps", type=_epsilon)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("gen-data", help="generate a synthetic dataset")
    s.add_argument("--task", choices=TASKS, required=True)
    s.add_argument("--n-qubits", type=_positive_int, required=True)
    s.add_argument("--samples", type=_positive_int, required=True)
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--alpha-min", type=float, default=0.0)
    s.add_argument("--alpha-max", type=float, default=math.pi / 2)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("benchmark", help="five-step bound/attack/retraining benchmark")
    s.add_argument("--task", choices=TASKS, required=True)
    s.add_argument("--n-qubits", type=_positive_int, default=3)
    s.add_argument("--samples", type=_positive_int, default=10)
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--train-size", type=_positive_int, default=40)
    s.add_argument("--layers", type=_positive_int, default=2)
    s.add_argument("--epochs", type=int, default=40)
    s.add_argument("--lr", type=float, default=0.3)
    s.add_argument("--exact", action="store_true", help="also solve for the exact radius of each sample")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"qrover: usage error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qrover: usage error: {exc}", file=sys.stderr)
    except (QroverError, ValueError) as exc:
        print(f"qrover: error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"qrover: I/O error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
