"""Command-line pipeline: train, certify, attack, eval, plot-grid.

Every report-style command writes delimited output plus a rendered figure
next to it.  All commands are reproducible from their echoed configuration
and seed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import figures
from .attack import AttackConfig, pgd_max_confidence
from .certify import NoCertificate, ball_contains_points, certified_radius
from .classifier import ReluClassifier
from .data import (
    Dataset,
    augment,
    load_csv,
    load_idx,
    permuted_smoothed_noise,
    save_csv,
    two_moons,
    uniform_noise,
)
from .density import SCALE_FLOOR, em_init, project_scale_constraint
from .evaluation import EvalReport, auc, aupr, success_rate, test_error
from .metric import fit_covariance
from .model import CcuModel
from .serialize import load_model, save_model
from .training import TrainConfig, train

__all__ = ["main"]


def _sibling(path: str, suffix: str) -> str:
    stem, _ = os.path.splitext(path)
    return stem + suffix


def _load_points(path: str, labeled: bool, labels_path: str | None = None) -> Dataset:
    """Dispatch on content: IDX magic bytes, else CSV."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head in (b"\x00\x00\x08\x03", b"\x00\x00\x08\x01"):
        return load_idx(path, labels_path)
    return load_csv(path, labeled=labeled)


def _resolve_in_data(args) -> Dataset:
    if args.in_path == "two-moons":
        return two_moons(args.n, args.noise_sd, args.seed)
    return _load_points(args.in_path, labeled=True, labels_path=args.labels)


def _resolve_out_data(args, in_data: Dataset) -> Dataset:
    if args.out_path == "uniform":
        n = args.n_out or len(in_data)
        noise = uniform_noise(n, in_data.dim, args.seed + 1)
        if in_data.domain == "unit-box":
            return noise
        # Match the in-data footprint: uniform over the expanded bounding box.
        lo = in_data.points.min(axis=0)
        hi = in_data.points.max(axis=0)
        margin = 0.5 * (hi - lo)
        pts = (lo - margin) + noise.points * ((hi - lo) + 2 * margin)
        return Dataset(pts, None, "unbounded", "uniform-box")
    return _load_points(args.out_path, labeled=False)


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def cmd_train(args) -> int:
    in_data = _resolve_in_data(args)
    out_data = _resolve_out_data(args, in_data)
    if in_data.labels is None:
        raise ValueError("training requires labeled in-distribution data")
    if in_data.dim != out_data.dim:
        raise ValueError("in- and out-data dimensions differ")

    fit_data = in_data
    if args.pad > 0:
        fit_data = augment(in_data, args.pad, args.pad_mode, args.flip, args.seed)
    metric = fit_covariance(fit_data.points)

    rng = np.random.default_rng(args.seed)
    k = args.k
    in_gmm = em_init(fit_data.points, k, metric, seed=args.seed)
    n_sub = min(args.out_subsample, len(out_data))
    sub = rng.choice(len(out_data), size=n_sub, replace=False)
    out_gmm = em_init(out_data.points[sub], k, metric, seed=args.seed + 1)
    in_gmm.scales = np.maximum(in_gmm.scales, SCALE_FLOOR)
    out_gmm.scales = np.maximum(out_gmm.scales, SCALE_FLOOR)
    project_scale_constraint(in_gmm, out_gmm)

    m = int(in_data.labels.max())
    widths = [in_data.dim] + [int(w) for w in args.widths.split(",") if w] + [m]
    clf = ReluClassifier.init(widths, seed=args.seed)
    model = CcuModel(clf, in_gmm, out_gmm, args.prior_odds, m)

    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr_classifier=args.lr,
        lr_gmm=args.lr_gmm,
        weight_decay_classifier=args.weight_decay,
        momentum=args.momentum,
        seed=args.seed,
        freeze_out_centroids=args.freeze_out_centroids,
    )

    checkpoint_writer = None
    if args.checkpoint_every > 0:
        def checkpoint_writer(mdl, epoch, _path=args.model, _every=args.checkpoint_every):
            if (epoch + 1) % _every == 0:
                save_model(f"{_path}.ep{epoch}", mdl)

    model, stats = train(
        model, fit_data.points, fit_data.labels, out_data.points, cfg,
        checkpoint_writer=checkpoint_writer,
    )

    config_echo = (
        f"k={k},lambda={args.prior_odds},epochs={cfg.epochs},batch={cfg.batch_size},"
        f"lr={cfg.lr_classifier},lr_gmm={cfg.lr_gmm},wd={cfg.weight_decay_classifier},"
        f"momentum={cfg.momentum},widths={args.widths},in={args.in_path},out={args.out_path}"
    )
    fp = save_model(args.model, model, {"seed": str(args.seed), "config": config_echo})

    log_path = args.epoch_log or _sibling(args.model, ".log.csv")
    with open(log_path, "w", encoding="ascii") as fh:
        fh.write("epoch,objective,train_acc,mean_out_conf\n")
        for s in stats:
            fh.write(f"{s.epoch},{s.objective:.17g},{s.train_accuracy:.17g},"
                     f"{s.mean_out_confidence:.17g}\n")
    print(f"model {args.model} fingerprint {fp}")
    print(f"final epoch: objective {stats[-1].objective:.6g}, "
          f"train acc {stats[-1].train_accuracy:.4f}, "
          f"mean out-confidence {stats[-1].mean_out_confidence:.4f}")
    return 0


def _seed_points(args, dim_hint: int | None) -> np.ndarray:
    if args.seeds:
        return _load_points(args.seeds, labeled=False).points
    if args.uniform_noise <= 0:
        raise ValueError("provide --seeds or --uniform-noise N")
    if dim_hint is None:
        raise ValueError("cannot infer seed dimension")
    rng = np.random.default_rng(args.seed)
    u = rng.random((args.uniform_noise, dim_hint))
    box = _parse_floats(args.box)
    if len(box) == 2:
        lo = np.full(dim_hint, box[0])
        hi = np.full(dim_hint, box[1])
    elif len(box) == 2 * dim_hint:
        lo = np.array(box[0::2])
        hi = np.array(box[1::2])
    else:
        raise ValueError("--box needs 'lo,hi' or per-dimension 'lo1,hi1,lo2,hi2,...'")
    return lo + u * (hi - lo)


def cmd_certify(args) -> int:
    loaded = load_model(args.model)
    model = loaded.model
    seeds = _seed_points(args, model.dim)

    audits = []
    for path in args.audit or []:
        ds = _load_points(path, labeled=True) if _has_label_column(path, model.dim) else _load_points(path, labeled=False)
        audits.append((os.path.basename(path), ds.points))

    rows = []
    radii = []
    failures = 0
    for idx, x0 in enumerate(seeds):
        try:
            cert = certified_radius(model, x0, args.nu)
            radius, bound, log_b = cert.radius, cert.bound, cert.log_ratio_bound
            radii.append(cert.radius)
        except NoCertificate:
            failures += 1
            radius = bound = log_b = float("nan")
        counts = [
            ball_contains_points(model.metric, x0, radius, pts) if np.isfinite(radius) else 0
            for _, pts in audits
        ]
        rows.append((idx, radius, bound, log_b, counts))

    out_path = args.certificates
    with open(out_path, "w", encoding="ascii") as fh:
        header = "center_id,radius,bound,log_ratio_bound,nu,model_fingerprint"
        for name, _ in audits:
            header += f",contained_{name}"
        fh.write(header + "\n")
        for idx, radius, bound, log_b, counts in rows:
            line = (f"{idx},{radius:.17g},{bound:.17g},{log_b:.17g},"
                    f"{args.nu:.17g},{loaded.fingerprint}")
            for c in counts:
                line += f",{c}"
            fh.write(line + "\n")
    if not args.seeds:
        seeds_path = _sibling(out_path, ".seeds.csv")
        save_csv(seeds_path, Dataset(seeds))
        print(f"seeds written to {seeds_path}")
    if radii:
        figures.save_radius_histogram(_sibling(out_path, ".png"), np.array(radii))

    print(f"certified {len(seeds) - failures}/{len(seeds)} seeds at nu={args.nu}")
    for (name, _), total in zip(audits, np.array([r[4] for r in rows]).sum(axis=0) if rows else []):
        print(f"audit {name}: {int(total)} points inside certified balls")
    return 0


def _has_label_column(path: str, dim: int) -> bool:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head in (b"\x00\x00\x08\x03", b"\x00\x00\x08\x01"):
        return False
    first = np.atleast_2d(np.loadtxt(path, delimiter=",", max_rows=1, dtype=float))
    return first.shape[1] == dim + 1


def _read_certificates(path: str):
    out = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        col = {name: i for i, name in enumerate(header)}
        for line in fh:
            parts = line.strip().split(",")
            out.append(
                (
                    int(parts[col["center_id"]]),
                    float(parts[col["radius"]]),
                    float(parts[col["bound"]]),
                )
            )
    return out


def cmd_attack(args) -> int:
    model = load_model(args.model).model
    certs = _read_certificates(args.certificates)
    seeds = _load_points(args.seeds, labeled=False).points

    cfg = AttackConfig(
        steps=args.steps, restarts=args.restarts,
        initial_step=args.step_size, seed=args.seed,
    )
    rows = []
    violations = 0
    for center_id, radius, bound in certs:
        if not np.isfinite(radius) or radius <= 0:
            continue
        res = pgd_max_confidence(model, seeds[center_id], radius, box=args.unit_box, config=cfg)
        if res.best_confidence > bound + 1e-9:
            violations += 1
        rows.append((center_id, radius, bound, res.best_confidence,
                     res.feasibility_residual, res.best_point))

    with open(args.report, "w", encoding="ascii") as fh:
        fh.write("center_id,radius,bound,attacked_confidence,feasibility_residual\n")
        for center_id, radius, bound, conf, resid, _ in rows:
            fh.write(f"{center_id},{radius:.17g},{bound:.17g},{conf:.17g},{resid:.17g}\n")
    if args.dump_points:
        save_csv(args.dump_points, Dataset(np.vstack([r[5] for r in rows])))

    bounds = np.array([r[2] for r in rows])
    attacked = np.array([r[3] for r in rows])
    figures.save_attack_figure(_sibling(args.report, ".png"), bounds, attacked)

    print(f"attacked {len(rows)} certified balls; bound violations: {violations}")
    if args.in_path:
        in_data = _load_points(args.in_path, labeled=_has_label_column(args.in_path, model.dim))
        in_conf = np.asarray(model.confidence(in_data.points))
        sr = success_rate(attacked, in_conf)
        a = auc(in_conf, attacked)
        print(f"success rate {sr:.4f}, AUC (in vs attacked) {a:.4f}")
    return 0 if violations == 0 else 1


def cmd_eval(args) -> int:
    model = load_model(args.model).model
    in_data = _load_points(args.in_path, labeled=True, labels_path=args.labels)
    if in_data.labels is None:
        raise ValueError("eval requires labeled in-distribution data")
    te = test_error(model, in_data.points, in_data.labels)
    in_conf = np.asarray(model.confidence(in_data.points))

    names, reports = [], []
    for path in args.ood:
        ood = _load_points(path, labeled=False)
        out_conf = np.asarray(model.confidence(ood.points))
        names.append(os.path.basename(path))
        reports.append(EvalReport(
            auc=auc(in_conf, out_conf), aupr=aupr(in_conf, out_conf),
            test_error=te, n_in=len(in_data), n_out=len(ood),
        ))

    with open(args.report, "w", encoding="ascii") as fh:
        fh.write("metric,dataset,value,n_in,n_out\n")
        fh.write(f"test_error,{os.path.basename(args.in_path)},{te:.17g},{len(in_data)},0\n")
        for name, rep in zip(names, reports):
            fh.write(f"auc,{name},{rep.auc:.17g},{rep.n_in},{rep.n_out}\n")
            fh.write(f"aupr,{name},{rep.aupr:.17g},{rep.n_in},{rep.n_out}\n")
    if names:
        figures.save_eval_figure(_sibling(args.report, ".png"), names,
                                 [r.auc for r in reports], [r.aupr for r in reports])

    print(f"test error: {te:.4f}  (n={len(in_data)})")
    print(f"{'dataset':<24} {'AUC':>8} {'AUPR':>8}")
    for name, rep in zip(names, reports):
        print(f"{name:<24} {rep.auc:>8.4f} {rep.aupr:>8.4f}")
    return 0


def cmd_gen(args) -> int:
    if args.kind == "two-moons":
        ds = two_moons(args.n, args.noise_sd, args.seed)
    elif args.kind == "uniform":
        ds = uniform_noise(args.n, args.d, args.seed)
    else:
        if not args.in_path:
            raise ValueError(f"--kind {args.kind} needs source images via --in")
        src = _load_points(args.in_path, labeled=False, labels_path=args.labels)
        if src.layout is None:
            if not args.layout:
                raise ValueError("CSV sources need --layout h,w")
            h, w = (int(t) for t in args.layout.split(","))
            src = Dataset(src.points, src.labels, src.domain, src.name, (h, w))
        if args.kind == "noise":
            ds = permuted_smoothed_noise(src, args.seed)
        else:  # augment
            ds = augment(src, args.pad, args.pad_mode, args.flip, args.seed)
    save_csv(args.out_path, ds)
    print(f"{args.kind}: wrote {len(ds)} samples of dimension {ds.dim} to {args.out_path}")
    return 0


def cmd_plot_grid(args) -> int:
    model = load_model(args.model).model
    if model.dim != 2:
        raise ValueError("plot-grid requires a 2-d model")
    bounds = tuple(_parse_floats(args.bounds))
    if len(bounds) != 4:
        raise ValueError("--bounds needs xmin,xmax,ymin,ymax")
    xs, ys, conf = figures.confidence_grid(model, bounds, args.resolution,
                                           softmax_only=args.softmax_only)
    figures.write_grid_csv(args.grid, xs, ys, conf)
    figures.write_pgm(_sibling(args.grid, ".pgm"), conf, model.n_classes)

    overlay = labels = None
    if args.points:
        ds = _load_points(args.points, labeled=_has_label_column(args.points, 2))
        overlay, labels = ds.points, ds.labels
    figures.save_grid_figure(
        _sibling(args.grid, ".png"), xs, ys, conf, model.n_classes,
        points=overlay, labels=labels,
        title="softmax confidence" if args.softmax_only else "calibrated confidence",
    )
    print(f"grid written to {args.grid} (+.pgm, +.png); "
          f"confidence range [{conf.min():.4f}, {conf.max():.4f}]")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccu",
        description="Density-calibrated classification with certified confidence bounds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit metric, mixtures, and classifier")
    p.add_argument("--in", dest="in_path", required=True,
                   help="labeled in-data: CSV/IDX path or 'two-moons'")
    p.add_argument("--out", dest="out_path", required=True,
                   help="out-data: CSV/IDX path or 'uniform'")
    p.add_argument("--labels", default=None, help="IDX label file for --in")
    p.add_argument("--model", required=True, help="output model path")
    p.add_argument("--k", type=int, default=20, help="mixture components per side")
    p.add_argument("--lambda", dest="prior_odds", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--lr-gmm", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--widths", default="128,128", help="hidden widths, comma separated")
    p.add_argument("--n", type=int, default=400, help="generated in-data size")
    p.add_argument("--n-out", type=int, default=0, help="generated out-data size")
    p.add_argument("--noise-sd", type=float, default=0.1)
    p.add_argument("--pad", type=int, default=0, help="augmentation crop padding")
    p.add_argument("--pad-mode", choices=("boundary", "reflect"), default="boundary")
    p.add_argument("--flip", action="store_true")
    p.add_argument("--freeze-out-centroids", action="store_true")
    p.add_argument("--out-subsample", type=int, default=20000)
    p.add_argument("--epoch-log", default=None)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("certify", help="certified radii for seed points")
    p.add_argument("--model", required=True)
    p.add_argument("--seeds", default=None, help="CSV of seed points")
    p.add_argument("--uniform-noise", type=int, default=0,
                   help="draw this many uniform seeds from --box")
    p.add_argument("--box", default="0,1",
                   help="seed box: 'lo,hi' or per-dimension bounds")
    p.add_argument("--nu", type=float, default=1.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--certificates", default="certificates.csv")
    p.add_argument("--audit", nargs="*", default=None,
                   help="datasets to scan for points inside certified balls")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("attack", help="confidence maximization in certified balls")
    p.add_argument("--model", required=True)
    p.add_argument("--certificates", required=True)
    p.add_argument("--seeds", required=True, help="CSV of the certified seed points")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--step-size", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unit-box", action="store_true",
                   help="intersect the ball with the [0,1]^d box")
    p.add_argument("--in", dest="in_path", default=None,
                   help="in-data for success rate and AUC")
    p.add_argument("--report", default="attack_report.csv")
    p.add_argument("--dump-points", default=None)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="test error plus OOD separation metrics")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--ood", nargs="+", required=True)
    p.add_argument("--report", default="eval_report.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen", help="write a generated or derived dataset as CSV")
    p.add_argument("--kind", required=True,
                   choices=("two-moons", "uniform", "noise", "augment"))
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--in", dest="in_path", default=None,
                   help="source images for 'noise' and 'augment'")
    p.add_argument("--labels", default=None)
    p.add_argument("--layout", default=None, help="h,w layout for CSV sources")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--noise-sd", type=float, default=0.1)
    p.add_argument("--pad", type=int, default=2)
    p.add_argument("--pad-mode", choices=("boundary", "reflect"), default="boundary")
    p.add_argument("--flip", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("plot-grid", help="confidence values over a 2-d grid")
    p.add_argument("--model", required=True)
    p.add_argument("--bounds", required=True, help="xmin,xmax,ymin,ymax")
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--grid", default="grid.csv")
    p.add_argument("--softmax-only", action="store_true",
                   help="plot the uncalibrated softmax confidence")
    p.add_argument("--points", default=None, help="dataset to overlay on the figure")
    p.set_defaults(func=cmd_plot_grid)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
