"""Command-line interface (``regad``)."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import io
from .anomaly import detect, fine_labels
from .config import PipelineConfig
from .descriptor import FeatureMatrix, describe, load_features, save_features
from .estimator import describe_cloud
from .evaluation import auroc, o_auroc, p_auroc, roc_curve
from .exceptions import DegenerateLabelsError, RegadError
from .geometry import PointCloud, apply_transform, build_multiscale, random_rigid
from .groundtruth import gt_patch_matches, gt_point_matches, make_pair, overlap_matrix
from .losses import LossPair, feature_align_loss, overlap_circle_loss, point_match_loss, total_loss
from .memorybank import MemoryBank, build_bank
from .registration import register
from .synth import SHAPES, make_anomalous, make_normal, nominal_spacing

SCHEMA_VERSION = 1
CLOUD_SUFFIXES = (".xyz", ".ply", ".txt")


def _emit(path, obj):
    obj = dict(obj)
    obj["schema_version"] = SCHEMA_VERSION
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
    io.dump_json(path, obj)


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    over = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise RegadError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v.strip()
    flag_map = {
        "target_fine": "target_fine", "n_c": "matching.n_c", "k": "matching.k",
        "sinkhorn_iters": "matching.sinkhorn_iters", "alpha": "matching.alpha",
        "ransac_iters": "ransac.iters", "inlier_thresh": "ransac.inlier_thresh",
        "rate": "bank.rate", "template_index": "bank.template_index",
    }
    for attr, key in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            over[key] = str(v)
    return cfg.with_overrides(over) if over else cfg


def _list_clouds(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise RegadError(f"not a directory: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in CLOUD_SUFFIXES)
    if not files:
        raise RegadError(f"no point clouds in {d}")
    return files


def _features_for(cloud, cfg, feature_path=None):
    if feature_path is None:
        return describe_cloud(cloud, cfg)
    ms = build_multiscale(cloud, min(cfg.target_fine, len(cloud)), cfg.coarse_factor)
    return describe(ms, local=load_features(feature_path, expected_rows=ms.n_fine))


# ------------------------------------------------------------------ commands

def cmd_gen_pairs(args):
    cfg = _config(args)
    out = Path(args.out)
    if args.input:
        sources = [io.read_cloud(p) for p in args.input]
    else:
        sources = [make_normal(args.shape, args.n_points, args.seed)]
    for c in range(args.count):
        src = sources[c % len(sources)]
        p, q, t = make_pair(src, args.seed * 100003 + c, args.max_angle, args.max_translation)
        d = out / f"pair_{c:03d}"
        d.mkdir(parents=True, exist_ok=True)
        io.write_xyz(d / "P.xyz", p)
        io.write_xyz(d / "Q.xyz", q)
        io.write_transform(d / "T_gt.txt", t)
        ms_p = build_multiscale(p, min(cfg.target_fine, len(p)), cfg.coarse_factor)
        ms_q = build_multiscale(q, min(cfg.target_fine, len(q)), cfg.coarse_factor)
        radius = cfg.loss.overlap_radius or ms_p.voxel_size
        pm = gt_patch_matches(ms_p, ms_q, t, radius, cfg.loss.patch_overlap_threshold)
        pts = gt_point_matches(ms_p, ms_q, t, pm, cfg.loss.n_g, cfg.loss.t or ms_p.voxel_size, args.seed + c) if len(pm) else []
        _emit(d / "matches.json", {
            "patch_pairs": pm.pairs.tolist(),
            "overlaps": pm.overlaps.tolist(),
            "point_matches": [{"patch_pair": list(s.patch_pair), "pairs": s.pairs.tolist()} for s in pts],
            "voxel_size": ms_p.voxel_size,
        })
    return 0


def cmd_synth(args):
    cfg = _config(args)
    if not 0 < args.defect_fraction <= 0.2:
        raise RegadError("defect_fraction must lie in (0, 0.2]")
    out = Path(args.out)
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(parents=True, exist_ok=True)
    spacing = nominal_spacing(args.shape, min(cfg.target_fine, args.n_points))
    rng = np.random.default_rng(args.seed)
    seeds = rng.integers(0, 2**31 - 1, size=args.n_train + args.n_normal + args.n_anomalous)
    labels = {}

    def place(cloud, i):
        # optional seeded rigid motion of each test sample
        if not args.rotate:
            return cloud
        return apply_transform(cloud, random_rigid(int(seeds[i]) + 1, np.pi, args.max_translation))

    for i in range(args.n_train):
        io.write_xyz(out / "train" / f"train_{i:03d}.xyz", make_normal(args.shape, args.n_points, int(seeds[i])))
    base = args.n_train
    for i in range(args.n_normal):
        name = f"good_{i:03d}"
        io.write_xyz(out / "test" / f"{name}.xyz", place(make_normal(args.shape, args.n_points, int(seeds[base + i])), base + i))
        labels[name] = 0
    base += args.n_normal
    for i in range(args.n_anomalous):
        name = f"defect_{i:03d}"
        cloud = make_anomalous(args.shape, args.n_points, int(seeds[base + i]), args.defect_fraction, spacing)
        io.write_xyz(out / "test" / f"{name}.xyz", place(cloud, base + i))
        labels[name] = 1
    _emit(out / "labels.json", {"labels": labels, "shape": args.shape, "defect_fraction": args.defect_fraction,
                                "rotated": bool(args.rotate)})
    return 0


def cmd_features(args):
    cfg = _config(args)
    cloud = io.read_cloud(args.cloud)
    feats = describe_cloud(cloud, cfg)
    level = args.level
    data = {"local": feats.local, "point": feats.point, "patch": feats.patch}[level]
    save_features(args.out, FeatureMatrix(data.data, level))
    return 0


def cmd_register(args):
    cfg = _config(args)
    p = io.read_cloud(args.source)
    q = io.read_cloud(args.target)
    fp = _features_for(p, cfg, args.source_features)
    fq = _features_for(q, cfg, args.target_features)
    t_gt = io.read_transform(args.t_gt) if args.t_gt else None
    rep = register(fp, fq, cfg.matching, cfg.ransac, t_gt)
    if args.out_transform:
        io.write_transform(args.out_transform, rep.transform)
    d = rep.to_dict()
    _emit(args.report, d)
    return 0


def cmd_loss_eval(args):
    cfg = _config(args)
    d = Path(args.pair)
    p, q = io.read_xyz(d / "P.xyz"), io.read_xyz(d / "Q.xyz")
    t = io.read_transform(d / "T_gt.txt")
    fp = _features_for(p, cfg, args.features_p)
    fq = _features_for(q, cfg, args.features_q)
    radius = cfg.loss.overlap_radius or fp.ms.voxel_size
    pm = gt_patch_matches(fp.ms, fq.ms, t, radius, cfg.loss.patch_overlap_threshold)
    sets = gt_point_matches(fp.ms, fq.ms, t, pm, cfg.loss.n_g, cfg.loss.t or fp.ms.voxel_size, args.seed)

    def pairs(level):
        a, b = getattr(fp, level).data, getattr(fq, level).data
        return [LossPair(a[fp.ms.fine_of[s.patch_pair[0]]], b[fq.ms.fine_of[s.patch_pair[1]]], s.pairs) for s in sets]

    l_f = feature_align_loss(pairs("local"), cfg.matching.alpha, cfg.matching.sinkhorn_iters)
    l_p = point_match_loss(pairs("point"), cfg.matching.alpha, cfg.matching.sinkhorn_iters)
    o_pq = overlap_matrix(fp.ms, fq.ms, t, radius)
    o_qp = overlap_matrix(fq.ms, fp.ms, t.inverse(), radius)
    l_oc = overlap_circle_loss(fp.patch.data, fq.patch.data, o_pq, cfg.loss.circle, o_qp)
    _emit(args.out, {"L_f": l_f, "L_p": l_p, "L_oc": l_oc, "L": total_loss(l_f, l_p, l_oc)})
    return 0


def _train_features(files, cfg, features_dir, jobs):
    paths = [_feature_path(features_dir, f) for f in files]
    clouds = [io.read_cloud(f) for f in files]
    return _parallel(jobs, lambda c, fpth: _features_for(c, cfg, fpth), list(zip(clouds, paths)))


def _feature_path(features_dir, cloud_file):
    if features_dir is None:
        return None
    path = Path(features_dir) / (Path(cloud_file).stem + ".feat")
    if not path.exists():
        alt = path.with_suffix(".csv")
        if alt.exists():
            return alt
        raise RegadError(f"missing feature file {path}")
    return path


def _parallel(jobs, fn, items):
    if jobs in (None, 1) or len(items) < 2:
        return [fn(*it) for it in items]
    return Parallel(n_jobs=jobs)(delayed(fn)(*it) for it in items)


def cmd_build_bank(args):
    cfg = _config(args)
    files = _list_clouds(args.train_dir)
    feats = _train_features(files, cfg, args.features_dir, args.jobs)
    bank = build_bank(feats, cfg.bank.template_index, cfg.bank.rate, cfg.bank.seed,
                      cfg.matching, cfg.ransac, [f.name for f in files])
    bank.save(args.out)
    if args.template_out:
        io.write_cloud(args.template_out, io.read_cloud(files[cfg.bank.template_index]))
    _emit(args.report, {"entries": len(bank), "fused_dim": bank.fused_dim, "source_count": bank.source_count,
                        "gamma_f": bank.params.gamma_f, "gamma_c": bank.params.gamma_c,
                        "template": files[cfg.bank.template_index].name})
    return 0


def _colors(scores):
    s = np.asarray(scores, dtype=np.float64)
    span = s.max() - s.min()
    u = (s - s.min()) / span if span > 0 else np.zeros_like(s)
    return np.column_stack([255 * u, np.zeros_like(u), 255 * (1 - u)]).round().astype(np.int64)


def _result_dict(name, res, cloud):
    d = res.to_dict()
    d["name"] = name
    if cloud.labels is not None:
        d["point_labels"] = fine_labels(cloud, res.fine_points).tolist()
    return d


def cmd_detect(args):
    cfg = _config(args)
    bank = MemoryBank.load(args.bank)
    template = _features_for(io.read_cloud(args.template), cfg, args.template_features)
    cloud = io.read_cloud(args.cloud)
    feats = _features_for(cloud, cfg, args.features)
    res = detect(feats, template, bank, cfg.anomaly, matching=cfg.matching, ransac=cfg.ransac)
    if args.ply:
        io.write_ply(args.ply, PointCloud(res.fine_points), colors=_colors(res.point_scores))
    _emit(args.out, _result_dict(Path(args.cloud).stem, res, cloud))
    return 0


def _metrics(results, labels):
    objects, points = [], []
    for r in results:
        if r["name"] not in labels or "object_score" not in r:
            continue
        objects.append((r["object_score"], labels[r["name"]]))
        if "point_labels" in r:
            points.append((r["point_scores"], r["point_labels"]))
    out = {}
    out["o_auroc"] = o_auroc(objects)
    out["p_auroc"] = p_auroc(points) if points else None
    return out, objects, points


def cmd_evaluate(args):
    labels = json.loads(Path(args.labels).read_text())
    labels = labels.get("labels", labels)
    results = [json.loads(Path(p).read_text()) for p in sorted(args.results)]
    for r, p in zip(results, sorted(args.results)):
        r.setdefault("name", Path(p).stem)
    metrics, objects, _ = _metrics(results, labels)
    if args.roc_csv:
        s, y = zip(*objects)
        np.savetxt(args.roc_csv, roc_curve(s, y), delimiter=",", header="fpr,tpr", comments="", fmt="%.17g")
    _emit(args.out, metrics)
    return 0


def _detect_one(name, path, cfg, template, bank, features_dir):
    try:
        cloud = io.read_cloud(path)
        feats = _features_for(cloud, cfg, _feature_path(features_dir, path))
        res = detect(feats, template, bank, cfg.anomaly, matching=cfg.matching, ransac=cfg.ransac)
        return _result_dict(name, res, cloud)
    except (RegadError, OSError) as exc:
        return {"name": name, "error": type(exc).__name__, "message": str(exc)}


def run_pipeline(train_dir, test_dir, cfg: PipelineConfig, out_dir=None, labels=None,
                 features_dir=None, jobs=1) -> dict:
    """Bank from ``train_dir``, detection on ``test_dir``, AUROC from ``labels``.

    Returns the metrics dictionary (also written to ``out_dir/metrics.json``).
    """
    train_files = _list_clouds(train_dir)
    test_files = _list_clouds(test_dir)
    feats = _train_features(train_files, cfg, features_dir, jobs)
    bank = build_bank(feats, cfg.bank.template_index, cfg.bank.rate, cfg.bank.seed,
                      cfg.matching, cfg.ransac, [f.name for f in train_files])
    template = feats[cfg.bank.template_index]
    items = [(f.stem, f, cfg, template, bank, features_dir) for f in test_files]
    results = _parallel(jobs, _detect_one, items)
    results.sort(key=lambda r: r["name"])
    if labels is None:
        lab_path = Path(test_dir).parent / "labels.json"
        labels = json.loads(lab_path.read_text())["labels"] if lab_path.exists() else None
    metrics = {"n_train": len(train_files), "n_test": len(test_files),
               "failures": [{"name": r["name"], "error": r["error"], "message": r["message"]}
                            for r in results if "error" in r]}
    if labels is None:
        metrics.update(o_auroc=None, p_auroc=None, error="no labels")
    else:
        try:
            m, _, _ = _metrics(results, labels)
            metrics.update(m)
        except DegenerateLabelsError as exc:
            metrics.update(o_auroc=None, p_auroc=None, error=str(exc))
    metrics["schema_version"] = SCHEMA_VERSION
    if out_dir is not None:
        out = Path(out_dir)
        (out / "samples").mkdir(parents=True, exist_ok=True)
        for r in results:
            _emit(out / "samples" / f"{r['name']}.json", r)
        _emit(out / "metrics.json", metrics)
    return metrics


def cmd_pipeline(args):
    cfg = _config(args)
    labels = None
    if args.labels:
        labels = json.loads(Path(args.labels).read_text())
        labels = labels.get("labels", labels)
    metrics = run_pipeline(args.train_dir, args.test_dir, cfg, args.out, labels, args.features_dir, args.jobs)
    if args.out is None:
        io.dump_json(None, metrics)
    if metrics.get("error") == "degenerate labels":
        print("error: degenerate labels", file=sys.stderr)
        return DegenerateLabelsError.exit_code
    return 0


def cmd_config(args):
    cfg = _config(args)
    text = cfg.dumps()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# -------------------------------------------------------------------- parser

def _common(p, flags=False):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for per-sample work")
    p.add_argument("--target-fine", dest="target_fine", type=int)
    if flags:
        p.add_argument("--n-c", dest="n_c", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--sinkhorn-iters", dest="sinkhorn_iters", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--ransac-iters", dest="ransac_iters", type=int)
        p.add_argument("--inlier-thresh", dest="inlier_thresh", type=float)


def build_parser():
    ap = argparse.ArgumentParser(prog="regad", description="Registration-based point-cloud anomaly detection.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-pairs", help="write transformed training pairs with ground-truth matches")
    _common(p)
    p.add_argument("--input", nargs="*", help="source clouds (default: one synthetic shape)")
    p.add_argument("--shape", choices=SHAPES, default="sphere-bumps")
    p.add_argument("--n-points", dest="n_points", type=int, default=4096)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-angle", dest="max_angle", type=float, default=np.pi)
    p.add_argument("--max-translation", dest="max_translation", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_pairs)

    p = sub.add_parser("synth", help="generate a labelled synthetic dataset")
    _common(p)
    p.add_argument("--shape", choices=SHAPES, default="sphere-bumps")
    p.add_argument("--n-train", dest="n_train", type=int, default=4)
    p.add_argument("--n-normal", dest="n_normal", type=int, default=20)
    p.add_argument("--n-anomalous", dest="n_anomalous", type=int, default=20)
    p.add_argument("--n-points", dest="n_points", type=int, default=4096)
    p.add_argument("--defect-fraction", dest="defect_fraction", type=float, default=0.05)
    p.add_argument("--rotate", action="store_true", help="apply a random rigid motion to every test sample")
    p.add_argument("--max-translation", dest="max_translation", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="compute built-in descriptors for a cloud")
    _common(p)
    p.add_argument("--cloud", required=True)
    p.add_argument("--level", choices=io.LEVELS, default="local")
    p.add_argument("--out", required=True, help=".feat (binary) or .csv")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("register", help="estimate the rigid transform mapping source onto target")
    _common(p, flags=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--source-features", dest="source_features")
    p.add_argument("--target-features", dest="target_features")
    p.add_argument("--t-gt", dest="t_gt", help="ground-truth 3x4 transform for error metrics")
    p.add_argument("--out-transform", dest="out_transform")
    p.add_argument("--report", help="JSON report path (stdout if omitted)")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("loss-eval", help="evaluate the training losses on a generated pair")
    _common(p, flags=True)
    p.add_argument("--pair", required=True, help="pair directory written by gen-pairs")
    p.add_argument("--features-p", dest="features_p")
    p.add_argument("--features-q", dest="features_q")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_loss_eval)

    p = sub.add_parser("build-bank", help="build the memory bank from normal training clouds")
    _common(p, flags=True)
    p.add_argument("--train-dir", dest="train_dir", required=True)
    p.add_argument("--features-dir", dest="features_dir")
    p.add_argument("--rate", type=float)
    p.add_argument("--template-index", dest="template_index", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--template-out", dest="template_out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_build_bank)

    p = sub.add_parser("detect", help="score one cloud against a bank")
    _common(p, flags=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--features")
    p.add_argument("--bank", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--template-features", dest="template_features")
    p.add_argument("--out")
    p.add_argument("--ply", help="write the fine cloud coloured by score")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="O-/P-AUROC from detect outputs")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--labels", required=True, help="JSON mapping sample name to 0/1")
    p.add_argument("--roc-csv", dest="roc_csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="bank + detection + evaluation in one run")
    _common(p, flags=True)
    p.add_argument("--train-dir", dest="train_dir", required=True)
    p.add_argument("--test-dir", dest="test_dir", required=True)
    p.add_argument("--labels")
    p.add_argument("--features-dir", dest="features_dir")
    p.add_argument("--rate", type=float)
    p.add_argument("--template-index", dest="template_index", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("config", help="print or write the effective configuration")
    _common(p, flags=True)
    p.add_argument("--dump", action="store_true", help="print the configuration (default action)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except RegadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(json.dumps({"diagnostics": diag, "schema_version": SCHEMA_VERSION}, sort_keys=True), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
