"""Command-line surface: every pipeline stage as a subcommand.

Configuration comes from an optional TOML file plus flag overrides
(flags win); the effective configuration is echoed into every JSON
artifact so any output can be reproduced from the file alone.  Exit
codes: 0 success, 2 usage error, 3 data error, 4 internal invariant
violation.
"""

import argparse
import csv
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from . import __version__
from .edm import EdmConfig, mine
from .errors import InternalError, TubeTopoError
from .grid import BinaryMask, LabelVolume, ProbVolume, VoxelGrid
from .heads import (
    ChannelMap,
    LossWeights,
    ce_loss,
    consistency_loss,
    dar_apply,
    dice_loss,
    total_loss,
)
from .metrics import PatchSpec, evaluate
from .skeleton import ThinningParams, binarize, detect_endpoints, soft_skeleton
from .synth import TubeNetworkSpec, generate, make_cut_fixture
from .volio import (
    dumps_canonical,
    read_channelmap,
    read_volume,
    write_channelmap,
    write_report,
    write_volume,
)

_THREAD_ENV = "TUBETOPO_THREADS"


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _load_config(path):
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _cfg_get(cfg, section, key, default=None):
    return cfg.get(section, {}).get(key, default)


def _pick(flag_value, cfg_value, default):
    if flag_value is not None:
        return flag_value
    if cfg_value is not None:
        return cfg_value
    return default


def _resolve_threads(args, cfg) -> int:
    env = os.environ.get(_THREAD_ENV)
    value = _pick(args.threads, int(env) if env else None, None)
    if value is None:
        value = _pick(None, cfg.get("threads"), min(8, os.cpu_count() or 1))
    if value < 1:
        raise TubeTopoError(f"--threads must be >= 1, got {value}")
    return int(value)


def _resolve_seed(args, cfg) -> int:
    return int(_pick(args.seed, cfg.get("seed"), 0))


def _edm_config(args, cfg, seed) -> EdmConfig:
    window = _pick(getattr(args, "window", None), _cfg_get(cfg, "edm", "window"), None)
    return EdmConfig(
        window=tuple(window) if window else None,
        dbscan_eps=_pick(getattr(args, "eps", None), _cfg_get(cfg, "edm", "dbscan_eps"), None),
        dbscan_min_pts=int(
            _pick(getattr(args, "min_pts", None), _cfg_get(cfg, "edm", "dbscan_min_pts"), 1)
        ),
        representative=_pick(
            getattr(args, "representative", None), _cfg_get(cfg, "edm", "representative"), "random"
        ),
        rng_seed=seed,
    )


def _thinning(args, cfg) -> ThinningParams:
    return ThinningParams(
        iterations=int(
            _pick(getattr(args, "iterations", None), _cfg_get(cfg, "thinning", "iterations"), 10)
        ),
        binarize_threshold=float(
            _pick(
                getattr(args, "threshold", None),
                _cfg_get(cfg, "thinning", "binarize_threshold"),
                0.5,
            )
        ),
    )


def _patch_spec(args, cfg) -> PatchSpec:
    mode = _pick(getattr(args, "patch_mode", None), _cfg_get(cfg, "patch", "mode"), "whole")
    shape = _pick(getattr(args, "patch_shape", None), _cfg_get(cfg, "patch", "patch_shape"), None)
    stride = _pick(getattr(args, "stride", None), _cfg_get(cfg, "patch", "stride"), None)
    return PatchSpec(
        mode=mode,
        patch_shape=tuple(shape) if shape else None,
        stride=tuple(stride) if stride else None,
    )


def _echo(seed, threads, **parts) -> dict:
    # threads never changes numbers, so it stays out of the echo: output
    # files must be byte-identical for any --threads value
    del threads
    echo = {"seed": seed}
    echo.update(parts)
    return echo


def _edm_echo(cfg: EdmConfig) -> dict:
    return {
        "window": list(cfg.window) if cfg.window else None,
        "dbscan_eps": cfg.dbscan_eps,
        "dbscan_min_pts": cfg.dbscan_min_pts,
        "representative": cfg.representative,
        "std_multiplier": cfg.std_multiplier,
    }


def _thinning_echo(t: ThinningParams) -> dict:
    return {"iterations": t.iterations, "binarize_threshold": t.binarize_threshold}


def _record(command, config, **extra) -> dict:
    rec = {
        "schema_version": 1,
        "tool": {"name": "tubetopo", "version": __version__},
        "command": command,
        "config": config,
    }
    rec.update(extra)
    return rec


def _emit(args, record, lines) -> None:
    if args.json:
        print(dumps_canonical(record))
    else:
        for line in lines:
            print(line)


# ---------------------------------------------------------------------------
# input loading
# ---------------------------------------------------------------------------

def _load_mask(path) -> BinaryMask:
    grid, _ = read_volume(path)
    return BinaryMask.from_array(grid.data != 0, spacing=grid.spacing, rank=grid.rank)


def _load_labels(path) -> LabelVolume:
    grid, _ = read_volume(path)
    return LabelVolume(VoxelGrid(np.rint(grid.data).astype(np.int32), grid.spacing, grid.rank))


def _load_pred(path, channels: bool, threshold: float):
    """Prediction input: binary mask, float foreground map, or channel volume."""
    if channels:
        vol, _ = read_volume(path, channels=True, prob_kind="logits")
        return vol
    grid, meta = read_volume(path)
    if meta.datatype == "float32":
        return BinaryMask.from_array(grid.data > threshold, spacing=grid.spacing, rank=grid.rank)
    return BinaryMask.from_array(grid.data != 0, spacing=grid.spacing, rank=grid.rank)


def _load_channel_volume(path) -> ProbVolume:
    vol, _ = read_volume(path, channels=True, prob_kind="logits")
    if not isinstance(vol, ProbVolume):
        raise TubeTopoError(f"{path} is not a channel (4D) volume")
    return vol


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_skeletonize(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(args, cfg)
    threads = _resolve_threads(args, cfg)
    thinning = _thinning(args, cfg)
    mask = _load_mask(args.input)
    skel = soft_skeleton(mask, thinning)
    write_volume(skel.mask, args.output)
    record = _record(
        "skeletonize",
        _echo(seed, threads, thinning=_thinning_echo(thinning)),
        inputs={"mask": str(args.input)},
        outputs={"skeleton": str(args.output)},
        foreground_voxels=skel.mask.count(),
    )
    if args.report:
        write_report(record, args.report)
    _emit(args, record, [f"skeleton: {skel.mask.count()} voxels -> {args.output}"])
    return 0


def _cmd_endpoints(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(args, cfg)
    threads = _resolve_threads(args, cfg)
    mask = _load_mask(args.input)
    from .skeleton import SkeletonMask

    pts = detect_endpoints(SkeletonMask(mask, mask.shape))
    record = _record(
        "endpoints",
        _echo(seed, threads),
        inputs={"skeleton": str(args.input)},
        count=pts.count,
        endpoints=[[int(v) for v in p] for p in pts.points],
    )
    write_report(record, args.output)
    _emit(args, record, [f"endpoints: {pts.count} -> {args.output}"])
    return 0


def _cmd_mine(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(args, cfg)
    threads = _resolve_threads(args, cfg)
    thinning = _thinning(args, cfg)
    edm_cfg = _edm_config(args, cfg, seed)
    gt = _load_mask(args.gt)
    pred = _load_pred(args.pred, args.channels, thinning.binarize_threshold)
    dmask, candidates = mine(gt, pred, edm_cfg, thinning)
    write_volume(dmask.mask, args.output)
    record = _record(
        "mine",
        _echo(
            seed,
            threads,
            edm=_edm_echo(edm_cfg.resolved(gt.shape)),
            thinning=_thinning_echo(thinning),
        ),
        inputs={"gt": str(args.gt), "pred": str(args.pred)},
        outputs={"mask": str(args.output)},
        candidates=candidates.summary(),
        seeds=[[int(v) for v in p] for p in dmask.seeds],
        mask_voxels=dmask.mask.count(),
    )
    if args.report:
        write_report(record, args.report)
    if args.figures:
        os.makedirs(args.figures, exist_ok=True)
        from .figures import render_mining

        if isinstance(pred, ProbVolume):
            pred = binarize(pred, thinning.binarize_threshold)
        render_mining(gt, pred, dmask, os.path.join(args.figures, "mining.png"))
    _emit(
        args,
        record,
        [
            f"candidates: {candidates.summary()}",
            f"mask: {dmask.mask.count()} voxels over {len(dmask.seeds)} seeds -> {args.output}",
        ],
    )
    return 0


def _metrics_rows(report) -> list:
    rows = [
        {
            "label": "all",
            "dice": report.dice,
            "cldice": report.cldice,
            "hausdorff_mm": report.hausdorff_mm,
            "betti_error": report.betti_error,
            "b0_pred": report.betti_pred.b0,
            "b1_pred": report.betti_pred.b1,
            "b0_gt": report.betti_gt.b0,
            "b1_gt": report.betti_gt.b1,
        }
    ]
    for c in report.per_class:
        rows.append(
            {
                "label": c.label,
                "dice": c.dice,
                "cldice": c.cldice,
                "hausdorff_mm": c.hausdorff_mm,
                "betti_error": "",
                "b0_pred": "",
                "b1_pred": "",
                "b0_gt": "",
                "b1_gt": "",
            }
        )
    return rows


def _cmd_metrics(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(args, cfg)
    threads = _resolve_threads(args, cfg)
    thinning = _thinning(args, cfg)
    patch = _patch_spec(args, cfg)
    gt = _load_labels(args.gt)
    if args.channels:
        pred = _load_channel_volume(args.pred)
    else:
        pred = _load_labels(args.pred)
    classes = [int(c) for c in args.classes.split(",")] if args.classes else None
    report = evaluate(
        pred,
        gt,
        patch_spec=patch,
        thinning=thinning,
        classes=classes,
        hd_percentile=95.0 if args.hd95 else None,
        threads=threads,
    )
    record = _record(
        "metrics",
        _echo(
            seed,
            threads,
            thinning=_thinning_echo(thinning),
            patch={"mode": patch.mode, "patch_shape": patch.patch_shape, "stride": patch.stride},
            hd_percentile=95.0 if args.hd95 else None,
            classes=classes,
        ),
        inputs={"pred": str(args.pred), "gt": str(args.gt)},
        metrics=report.as_dict(),
    )
    write_report(record, args.output)
    if args.csv:
        rows = _metrics_rows(report)
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    if args.figures:
        os.makedirs(args.figures, exist_ok=True)
        from .figures import render_pair

        pred_fg = BinaryMask.from_array(
            (pred.data != 0) if isinstance(pred, LabelVolume) else binarize(pred).data,
            spacing=gt.grid.spacing,
            rank=gt.grid.rank,
        )
        gt_fg = BinaryMask.from_array(gt.data != 0, spacing=gt.grid.spacing, rank=gt.grid.rank)
        render_pair(gt_fg, pred_fg, os.path.join(args.figures, "overlay.png"))
    hd = "n/a" if report.hausdorff_mm is None else f"{report.hausdorff_mm:.4f}"
    _emit(
        args,
        record,
        [
            f"dice={report.dice:.6f} cldice={report.cldice:.6f} "
            f"betti_error={report.betti_error:g} hd={hd}",
            f"report -> {args.output}",
        ],
    )
    return 0


def _cmd_dar_apply(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(args, cfg)
    threads = _resolve_threads(args, cfg)
    seg = _load_channel_volume(args.seg)
    ske = _load_channel_volume(args.ske)
    dis = _load_channel_volume(args.dis)
    if args.random_maps:
        hr = ChannelMap.random(seg.channels, args.feature_width, seed=seed)
        hc = ChannelMap.random(args.feature_width, seg.channels, seed=seed + 1)
        if args.hr:
            write_channelmap(hr, args.hr)
        if args.hc:
            write_channelmap(hc, args.hc)
    else:
        if not (args.hr and args.hc):
            raise TubeTopoError("dar-apply needs --hr and --hc (or --random-maps)")
        hr = read_channelmap(args.hr)
        hc = read_channelmap(args.hc)
    refined = dar_apply(seg, ske, dis, hr, hc)
    write_volume(refined, args.output)
    record = _record(
        "dar-apply",
        _echo(
            seed,
            threads,
            hr={"in": hr.in_channels, "out": hr.out_channels, "path": args.hr},
            hc={"in": hc.in_channels, "out": hc.out_channels, "path": args.hc},
            random_maps=bool(args.random_maps),
        ),
        inputs={"seg": str(args.seg), "ske": str(args.ske), "dis": str(args.dis)},
        outputs={"refined": str(args.output)},
    )
    if args.report:
        write_report(record, args.report)
    _emit(args, record, [f"refined logits ({refined.channels} channels) -> {args.output}"])
    return 0


def _collapse_foreground(pv: ProbVolume) -> ProbVolume:
    """Reduce a C-class probability volume to (background, foreground)."""
    from .grid import softmax as _softmax

    probs = pv if pv.is_probabilities else _softmax(pv)
    bg = probs.data[0]
    stacked = np.stack([bg, 1.0 - bg])
    # back to logits so downstream softmax recovers the same distribution
    return ProbVolume(np.log(np.maximum(stacked, 1e-12)), spacing=pv.spacing, rank=pv.rank)


def _cmd_loss_eval(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(args, cfg)
    threads = _resolve_threads(args, cfg)
    thinning = _thinning(args, cfg)
    edm_cfg = _edm_config(args, cfg, seed)
    weights = LossWeights(
        alpha=float(_pick(args.alpha, _cfg_get(cfg, "loss", "alpha"), 0.5)),
        beta=float(_pick(args.beta, _cfg_get(cfg, "loss", "beta"), 0.5)),
    )
    gt = _load_labels(args.gt)
    seg = _load_channel_volume(args.seg)
    ske = _load_channel_volume(args.ske)
    dis = _load_channel_volume(args.dis)

    gt_fg = BinaryMask.from_array(gt.data != 0, spacing=gt.grid.spacing, rank=gt.grid.rank)
    gt_skel = soft_skeleton(gt_fg, thinning)
    pred_mask = binarize(seg, thinning.binarize_threshold)
    pred_skel = soft_skeleton(pred_mask, thinning)

    notes = {}
    if args.fd:
        fd_mask = _load_mask(args.fd)
    else:
        dmask, _ = mine(gt_fg, pred_mask, edm_cfg, thinning)
        fd_mask = dmask.mask
        notes["fd_mined"] = True

    def _as_labels(mask: BinaryMask) -> LabelVolume:
        return LabelVolume(mask.grid.like(mask.data.astype(np.int32)))

    l_seg = ce_loss(seg, gt) + dice_loss(seg, gt)
    l_dis = ce_loss(dis, _as_labels(fd_mask)) + dice_loss(dis, _as_labels(fd_mask))
    l_ske = ce_loss(ske, _as_labels(gt_skel.mask)) + dice_loss(ske, _as_labels(gt_skel.mask))

    seg_for_con = seg if seg.channels == ske.channels else _collapse_foreground(seg)
    if seg.channels != ske.channels:
        notes["consistency_collapsed_to_binary"] = True
    con = consistency_loss(seg_for_con, pred_skel.mask, ske)
    if con.degenerate_support:
        notes["consistency_degenerate_support"] = True

    if args.hr and args.hc:
        hr = read_channelmap(args.hr)
        hc = read_channelmap(args.hc)
        refined = dar_apply(seg, ske, dis, hr, hc)
        l_dar = ce_loss(refined, gt)
    else:
        l_dar = 0.0
        notes["dar_skipped"] = True

    breakdown = total_loss(l_seg, l_dis, l_ske, con.value, l_dar, weights)
    record = _record(
        "loss-eval",
        _echo(
            seed,
            threads,
            thinning=_thinning_echo(thinning),
            edm=_edm_echo(edm_cfg.resolved(gt.shape)),
            weights={"alpha": weights.alpha, "beta": weights.beta},
        ),
        inputs={
            "gt": str(args.gt),
            "seg": str(args.seg),
            "ske": str(args.ske),
            "dis": str(args.dis),
            "fd": str(args.fd) if args.fd else None,
        },
        losses=breakdown.as_dict(),
        notes=notes,
    )
    write_report(record, args.output)
    _emit(
        args,
        record,
        [f"l_total={breakdown.l_total:.6f} (ims={breakdown.l_ims:.6f} "
         f"con={breakdown.l_con:.6f} dar={breakdown.l_dar:.6f}) -> {args.output}"],
    )
    return 0


def _cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(args, cfg)
    threads = _resolve_threads(args, cfg)
    shape = tuple(_pick(args.shape, _cfg_get(cfg, "synth", "shape"), (96, 96, 96)))
    n_branches = int(_pick(args.branches, _cfg_get(cfg, "synth", "branches"), 4))
    n_cuts = int(_pick(args.cuts, _cfg_get(cfg, "synth", "cuts"), 0))
    gap = float(_pick(args.gap, _cfg_get(cfg, "synth", "gap"), 5.0))
    radius = tuple(_pick(args.radius, _cfg_get(cfg, "synth", "radius"), (2, 3)))
    rank = 2 if shape[0] == 1 else 3

    if n_cuts > 0:
        fix = make_cut_fixture(
            seed, shape=shape, n_cuts=n_cuts, n_branches=n_branches,
            gap=gap, radius_range=radius, rank=rank,
        )
    else:
        fix = generate(
            TubeNetworkSpec(
                rng_seed=seed, shape=shape, n_branches=n_branches,
                radius_range=radius, rank=rank,
            )
        )

    os.makedirs(args.output, exist_ok=True)
    gt_path = os.path.join(args.output, "gt.nii.gz")
    frag_path = os.path.join(args.output, "frag.nii.gz")
    write_volume(fix.gt_mask, gt_path)
    write_volume(fix.frag_mask, frag_path)
    record = _record(
        "synth",
        _echo(
            seed,
            threads,
            synth={
                "shape": list(shape),
                "branches": n_branches,
                "cuts": n_cuts,
                "gap": gap,
                "radius": list(radius),
            },
        ),
        # sidecar references its sibling files, so the directory is
        # self-contained and byte-identical wherever it is generated
        outputs={"gt": "gt.nii.gz", "frag": "frag.nii.gz"},
        betti_gt=fix.betti_gt.as_dict(),
        components={"gt": fix.components_gt, "frag": fix.components_frag},
        separating_cuts=fix.separating_cuts,
        true_endpoints=[[int(v) for v in p] for p in fix.true_endpoints.points],
        cut_midpoints=[[int(v) for v in p] for p in fix.cut_midpoints],
        centerlines=[[[int(v) for v in p] for p in cl] for cl in fix.centerlines],
    )
    write_report(record, os.path.join(args.output, "fixture.json"))
    if args.figures:
        from .figures import render_fixture

        render_fixture(fix, os.path.join(args.output, "fixture.png"))
    _emit(
        args,
        record,
        [
            f"network: {fix.gt_mask.count()} voxels, {n_branches} branches, "
            f"{fix.separating_cuts} separating cuts -> {args.output}",
        ],
    )
    return 0


def _cmd_selftest(args) -> int:
    from . import selftest

    ok = selftest.run()
    return 0 if ok else 4


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(sp) -> None:
    sp.add_argument("--config", help="TOML config file (flags override it)")
    sp.add_argument("--seed", type=int, default=None, help="seed for all named random streams")
    sp.add_argument("--threads", type=int, default=None,
                    help=f"worker threads (default: ${_THREAD_ENV} or cpu count, max 8)")
    sp.add_argument("--json", action="store_true", help="machine-readable stdout/stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tubetopo",
        description="Topology toolkit for tubular structures: skeletons, "
        "discontinuity mining, and connectivity-aware metrics.",
    )
    parser.add_argument("--version", action="version", version=f"tubetopo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("skeletonize", help="extract the morphological skeleton of a mask")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--report", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_skeletonize)

    p = sub.add_parser("endpoints", help="detect skeleton endpoints")
    p.add_argument("input", help="skeleton mask volume")
    p.add_argument("-o", "--output", required=True, help="endpoint JSON")
    _add_common(p)
    p.set_defaults(func=_cmd_endpoints)

    p = sub.add_parser("mine", help="mine discontinuity windows from a gt/pred pair")
    p.add_argument("gt")
    p.add_argument("pred")
    p.add_argument("-o", "--output", required=True, help="discontinuity mask volume")
    p.add_argument("--report", default=None, help="candidate/config report JSON")
    p.add_argument("--figures", default=None, help="directory for rendered figures")
    p.add_argument("--window", type=int, nargs=3, default=None, metavar=("WZ", "WY", "WX"))
    p.add_argument("--eps", type=float, default=None, help="DBSCAN radius (voxels)")
    p.add_argument("--min-pts", type=int, default=None, dest="min_pts")
    p.add_argument("--representative", choices=("random", "medoid"), default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--channels", action="store_true", help="read pred as a 4D channel volume")
    _add_common(p)
    p.set_defaults(func=_cmd_mine)

    p = sub.add_parser("metrics", help="evaluate a prediction against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("-o", "--output", required=True, help="report JSON")
    p.add_argument("--csv", default=None, help="delimited per-class summary")
    p.add_argument("--figures", default=None, help="directory for rendered figures")
    p.add_argument("--hd95", action="store_true", help="95th-percentile Hausdorff variant")
    p.add_argument("--classes", default=None, help="comma-separated foreground class list")
    p.add_argument("--patch-mode", choices=("whole", "patches"), default=None, dest="patch_mode")
    p.add_argument("--patch-shape", type=int, nargs=3, default=None, dest="patch_shape")
    p.add_argument("--stride", type=int, nargs=3, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--channels", action="store_true", help="read pred as a 4D channel volume")
    _add_common(p)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("dar-apply", help="refine segmentation logits with dual attention")
    p.add_argument("seg", help="segmentation logits (4D)")
    p.add_argument("ske", help="skeleton-head logits (4D)")
    p.add_argument("dis", help="discontinuity-head logits (4D)")
    p.add_argument("--hr", default=None, help="feature-lift channel map JSON")
    p.add_argument("--hc", default=None, help="classifier channel map JSON")
    p.add_argument("--random-maps", action="store_true",
                   help="generate seeded random maps (written to --hr/--hc when given)")
    p.add_argument("--feature-width", type=int, default=8, dest="feature_width")
    p.add_argument("-o", "--output", required=True, help="refined logits volume")
    p.add_argument("--report", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_dar_apply)

    p = sub.add_parser("loss-eval", help="compute the full loss breakdown from head outputs")
    p.add_argument("--gt", required=True, help="ground-truth labels")
    p.add_argument("--seg", required=True, help="segmentation logits (4D)")
    p.add_argument("--ske", required=True, help="skeleton-head logits (4D)")
    p.add_argument("--dis", required=True, help="discontinuity-head logits (4D)")
    p.add_argument("--fd", default=None, help="discontinuity ground truth (mined when omitted)")
    p.add_argument("--hr", default=None)
    p.add_argument("--hc", default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("-o", "--output", required=True, help="loss report JSON")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_loss_eval)

    p = sub.add_parser("synth", help="generate a synthetic tube-network fixture")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--shape", type=int, nargs=3, default=None)
    p.add_argument("--branches", type=int, default=None)
    p.add_argument("--cuts", type=int, default=None)
    p.add_argument("--gap", type=float, default=None)
    p.add_argument("--radius", type=int, nargs=2, default=None, metavar=("MIN", "MAX"))
    p.add_argument("--figures", action="store_true", help="render a fixture figure")
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("selftest", help="run the embedded oracle suite")
    _add_common(p)
    p.set_defaults(func=_cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TubeTopoError as exc:
        _print_error(args, exc)
        return exc.exit_code
    except OSError as exc:
        err = TubeTopoError(str(exc))
        err.code = "io-error"
        _print_error(args, err)
        return err.exit_code
    except ValueError as exc:  # parameter validation from the dataclasses
        err = TubeTopoError(str(exc))
        err.code = "invalid-value"
        _print_error(args, err)
        return err.exit_code
    except Exception as exc:  # noqa: BLE001 - map to the internal exit code
        _print_error(args, InternalError(f"{type(exc).__name__}: {exc}"))
        return 4


def _print_error(args, exc: TubeTopoError) -> None:
    if getattr(args, "json", False):
        doc = {"error": {"code": exc.code, "message": str(exc)}}
        print(dumps_canonical(doc), file=sys.stderr)
    else:
        print(f"tubetopo: error [{exc.code}]: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
