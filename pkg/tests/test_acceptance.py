"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
lines as they complete.  Tolerances are pinned here and nowhere else.
"""

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from tubetopo import synth
from tubetopo.cli import main
from tubetopo.edm import DistanceSet, EdmConfig, mine, select_discontinuity_points
from tubetopo.grid import Connectivity, ProbVolume, connected_components, softmax
from tubetopo.heads import ChannelMap, LossWeights, dar_apply, kl_divergence, total_loss
from tubetopo.metrics import betti, cldice, dice, euler_characteristic, evaluate, hausdorff
from tubetopo.skeleton import ThinningParams, detect_endpoints, soft_skeleton

from conftest import annulus_2d, hollow_shell, make_mask, solid_cube, solid_torus
from oracles import (
    bfs_components,
    brute_hausdorff,
    euler_cells_3d,
    soft_skeleton_ref,
)


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {name}: {status}" + (f" ({detail})" if detail else ""), flush=True)
    assert ok, f"{name}: {detail}"


class TestThroughput:
    """Runs first: wall-time measurements should not inherit the memory
    churn of the corpus tests."""

    def test_quarter_gig_volume_pair_under_30s(self):
        import gc

        fix = synth.make_cut_fixture(0, shape=(256, 256, 256), n_cuts=3, n_branches=24)
        gt, frag = fix.gt_mask, fix.frag_mask
        gc.collect()

        t0 = time.perf_counter()
        skel = soft_skeleton(gt)
        detect_endpoints(skel)
        mine(gt, frag, EdmConfig(rng_seed=0))
        evaluate(frag, gt, threads=8)
        elapsed = time.perf_counter() - t0
        report(
            "throughput",
            elapsed < 30.0,
            f"skeletonize+endpoints+mine+metrics on 256^3 in {elapsed:.1f}s",
        )


class TestBettiExactness:
    def test_canonical_topologies_at_64(self):
        cases = [
            ("cube", solid_cube(grid=64, side=40), (1, 0, 0)),
            ("torus", solid_torus(grid=64, major=18.0, minor=6.2), (1, 1, 0)),
            ("shell", hollow_shell(grid=64, radius=22.0, thickness=2.2), (1, 0, 1)),
            ("annulus", annulus_2d(grid=64, inner=10.0, outer=24.0), (1, 1, 0)),
        ]
        worst = 0.0
        for name, mask, expect in cases:
            t0 = time.perf_counter()
            triple = betti(mask)
            dt = time.perf_counter() - t0
            worst = max(worst, dt)
            got = (triple.b0, triple.b1, triple.b2)
            if got != expect or dt >= 1.0:
                report("betti-exactness", False, f"{name}: got {got}, expected {expect}, {dt:.2f}s")
        report("betti-exactness", True, f"4 topologies exact, worst case {worst * 1e3:.0f} ms")


class TestOracleEquivalence:
    N_VOLUMES = 200

    def _random_pair(self, r):
        shape = tuple(int(v) for v in r.integers(4, 11, size=3))
        density = r.uniform(0.05, 0.5)
        a = r.random(shape) < density
        b = r.random(shape) < density
        a[tuple(r.integers(0, s) for s in shape)] = True
        b[tuple(r.integers(0, s) for s in shape)] = True
        return make_mask(a), make_mask(b)

    def test_two_hundred_random_volumes(self):
        r = np.random.default_rng(987654321)
        params = ThinningParams(iterations=4)
        worst_dice = worst_cld = 0.0
        for i in range(self.N_VOLUMES):
            pred, gt = self._random_pair(r)
            p_set = set(map(tuple, np.argwhere(pred.bool).tolist()))
            g_set = set(map(tuple, np.argwhere(gt.bool).tolist()))

            ref_dice = 2 * len(p_set & g_set) / (len(p_set) + len(g_set))
            worst_dice = max(worst_dice, abs(dice(pred, gt) - ref_dice))

            sp = soft_skeleton(pred, params).mask.bool
            sg = soft_skeleton(gt, params).mask.bool
            if i < 20:  # skeletons themselves re-derived by the literal reference
                assert np.array_equal(sp, soft_skeleton_ref(pred.bool, params.iterations))
                assert np.array_equal(sg, soft_skeleton_ref(gt.bool, params.iterations))
            sp_set = set(map(tuple, np.argwhere(sp).tolist()))
            sg_set = set(map(tuple, np.argwhere(sg).tolist()))
            if not sp_set or not sg_set:
                ref_cld = 1.0 if not sp_set and not sg_set else 0.0
            else:
                tprec = len(sp_set & g_set) / len(sp_set)
                tsens = len(sg_set & p_set) / len(sg_set)
                ref_cld = 0.0 if tprec + tsens == 0 else 2 * tprec * tsens / (tprec + tsens)
            worst_cld = max(worst_cld, abs(cldice(pred, gt, params) - ref_cld))

            if hausdorff(pred, gt) != brute_hausdorff(pred.bool, gt.bool, (1.0, 1.0, 1.0)):
                report("oracle-equivalence", False, f"hausdorff mismatch on volume {i}")
            for side in (pred, gt):
                _, n = connected_components(side, Connectivity("full"))
                if n != bfs_components(side.bool, full=True)[1]:
                    report("oracle-equivalence", False, f"component count mismatch on volume {i}")
                if euler_characteristic(side) != euler_cells_3d(side.bool):
                    report("oracle-equivalence", False, f"euler mismatch on volume {i}")

        ok = worst_dice <= 1e-9 and worst_cld <= 1e-9
        report(
            "oracle-equivalence",
            ok,
            f"{self.N_VOLUMES} volumes; |dice err| <= {worst_dice:.2e}, "
            f"|cldice err| <= {worst_cld:.2e}, hausdorff/components/euler exact",
        )


class TestEdmSoundness:
    def test_mine_gt_vs_gt_is_empty_on_100_fixtures(self):
        nonempty = 0
        for seed in range(100):
            spec = synth.TubeNetworkSpec(
                rng_seed=seed, shape=(64, 64, 64), n_branches=2 + seed % 5
            )
            fix = synth.generate(spec)
            assert fix.betti_gt.b0 == 1  # every generated network is one tree
            dmask, _ = mine(fix.gt_mask, fix.gt_mask, EdmConfig(rng_seed=seed))
            if dmask.mask.count() != 0:
                nonempty += 1
        report("edm-soundness", nonempty == 0, f"{100 - nonempty}/100 fixtures empty")


class TestEdmSensitivity:
    N_FIXTURES = 200

    def test_corpus_coverage_and_runtime(self):
        def one(seed):
            n_cuts = 1 + seed % 5
            fix = synth.make_cut_fixture(seed, shape=(96, 96, 96), n_cuts=n_cuts, n_branches=20)
            cfg = EdmConfig(rng_seed=seed).resolved(fix.gt_mask.shape)
            assert cfg.window == (12, 12, 12)
            dmask, _ = mine(fix.gt_mask, fix.frag_mask, cfg)
            m = dmask.mask.bool
            hit = sum(bool(m[tuple(p)]) for p in fix.cut_midpoints)
            return hit, len(fix.cut_midpoints)

        t0 = time.perf_counter()
        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(one, range(self.N_FIXTURES)))
        elapsed = time.perf_counter() - t0
        covered = sum(h for h, _ in results)
        total = sum(t for _, t in results)
        rate = covered / total
        ok = rate >= 0.95 and elapsed < 300.0
        report(
            "edm-sensitivity",
            ok,
            f"{covered}/{total} midpoints covered = {rate:.3f} in {elapsed:.0f}s on 8 threads",
        )


class TestScaleInvariance:
    def test_thousand_multisets(self):
        r = np.random.default_rng(20250101)
        flips = 0
        for _ in range(1000):
            n = int(r.integers(1, 50))
            d = r.uniform(0.0, 25.0, size=n)
            coords = np.stack([np.arange(n), np.zeros(n, int), np.zeros(n, int)], axis=1)
            base = select_discontinuity_points(DistanceSet(coords, d)).tolist()
            for c in (0.1, 3.0, 100.0):
                scaled = select_discontinuity_points(DistanceSet(coords, c * d)).tolist()
                if scaled != base:
                    flips += 1
        report("selection-scale-invariance", flips == 0, f"0 flips expected, saw {flips}")


class TestDarIdentity:
    def test_thousand_random_instances(self):
        r = np.random.default_rng(31415926)
        worst = 0.0
        for _ in range(1000):
            c = int(r.integers(2, 4))
            k = c * int(r.integers(1, 4))
            shape = tuple(int(v) for v in r.integers(1, 4, size=3))
            seg = ProbVolume(r.normal(size=(c, *shape)))
            ske = ProbVolume(r.normal(size=(c, *shape)))
            dis = ProbVolume(r.normal(size=(c, *shape)))
            hr = ChannelMap(r.normal(size=(k, c)), r.normal(size=k))
            hc = ChannelMap(r.normal(size=(c, k)), r.normal(size=c))
            out = dar_apply(seg, ske, dis, hr, hc).data
            u = hr.apply(seg.data)
            a_s = np.tile(softmax(ske).data, (k // c, 1, 1, 1))
            a_d = np.tile(softmax(dis).data, (k // c, 1, 1, 1))
            three = (
                hc.apply(a_s * u)
                + hc.apply(a_d * u)
                + hc.apply(u)
                - 2.0 * hc.bias[:, None, None, None]
            )
            rel = np.abs(out - three).max() / max(1.0, np.abs(three).max())
            worst = max(worst, rel)
        ok = worst <= 1e-6
        report("refinement-identity", ok, f"1000 instances, worst relative gap {worst:.2e}")

    def test_zero_attention_doubles_features(self):
        r = np.random.default_rng(2718281)
        seg = ProbVolume(r.normal(size=(2, 3, 4, 4)))
        zeros = ProbVolume(np.zeros((2, 3, 4, 4)))
        out = dar_apply(seg, zeros, zeros, ChannelMap.identity(2), ChannelMap.identity(2)).data
        gap = np.abs(out - 2.0 * seg.data).max()
        report("refinement-doubling", gap <= 1e-6, f"max |out - 2*features| = {gap:.2e}")


class TestLossValues:
    def test_kl_and_total(self):
        r = np.random.default_rng(1618)
        p = r.dirichlet(np.ones(3), size=(2, 3, 3)).transpose(3, 0, 1, 2)
        pv = ProbVolume(p, kind="probabilities")
        self_kl = abs(kl_divergence(pv, pv))

        pq = ProbVolume(np.array([0.5, 0.5]).reshape(2, 1, 1, 1), kind="probabilities")
        qq = ProbVolume(np.array([0.25, 0.75]).reshape(2, 1, 1, 1), kind="probabilities")
        worked = kl_divergence(pq, qq)

        breakdown = total_loss(0.4, 0.3, 0.3, 0.2, 0.4, LossWeights(0.5, 0.5))

        ok = (
            self_kl <= 1e-9
            and abs(worked - 0.143841) <= 1e-5
            and abs(breakdown.l_total - 1.3) <= 1e-12
        )
        report(
            "loss-values",
            ok,
            f"KL(p,p)={self_kl:.1e}, worked KL={worked:.6f}, total={breakdown.l_total!r}",
        )


class TestDeterminism:
    def _heads(self, root, gt_path):
        from tubetopo.volio import read_volume, write_volume

        gt, _ = read_volume(gt_path)
        r = np.random.default_rng(5)
        fg = gt.data != 0
        seg = np.zeros((2, *gt.shape), dtype=np.float32)
        seg[1] = np.where(fg, 3.0, -3.0) + r.normal(scale=0.4, size=gt.shape)
        seg[0] = -seg[1]
        paths = {}
        for name, arr in (("seg", seg), ("ske", 0.7 * seg), ("dis", 0.1 * seg)):
            paths[name] = str(root / f"{name}.nii.gz")
            write_volume(ProbVolume(arr.astype(np.float32)), paths[name])
        return paths

    def test_every_subcommand_rerun_is_byte_identical(self, tmp_path):
        fix = tmp_path / "fix"
        assert main(["synth", "-o", str(fix), "--seed", "8", "--cuts", "2",
                     "--shape", "96", "96", "96", "--branches", "8"]) == 0
        heads = self._heads(tmp_path, fix / "gt.nii.gz")
        out = tmp_path / "out"
        out.mkdir()

        def p(name):
            return str(out / name)

        commands = {
            "synth": ["synth", "-o", p("fixdir"), "--seed", "8", "--cuts", "2",
                      "--shape", "96", "96", "96", "--branches", "8"],
            "skeletonize": ["skeletonize", str(fix / "gt.nii.gz"), "-o", p("skel.nii.gz"),
                            "--report", p("skel.json")],
            "endpoints": ["endpoints", str(fix / "gt.nii.gz"), "-o", p("eps.json")],
            "mine": ["mine", str(fix / "gt.nii.gz"), str(fix / "frag.nii.gz"),
                     "-o", p("fd.nii.gz"), "--report", p("edm.json"), "--seed", "8"],
            "metrics": ["metrics", str(fix / "frag.nii.gz"), str(fix / "gt.nii.gz"),
                        "-o", p("metrics.json"), "--csv", p("metrics.csv")],
            "dar-apply": ["dar-apply", heads["seg"], heads["ske"], heads["dis"],
                          "--random-maps", "--feature-width", "6",
                          "--hr", p("hr.json"), "--hc", p("hc.json"),
                          "-o", p("refined.nii.gz"), "--seed", "4", "--report", p("dar.json")],
            "loss-eval": ["loss-eval", "--gt", str(fix / "gt.nii.gz"), "--seg", heads["seg"],
                          "--ske", heads["ske"], "--dis", heads["dis"],
                          "-o", p("loss.json"), "--seed", "4"],
        }
        tracked = {
            "synth": [p("fixdir/gt.nii.gz"), p("fixdir/frag.nii.gz"), p("fixdir/fixture.json")],
            "skeletonize": [p("skel.nii.gz"), p("skel.json")],
            "endpoints": [p("eps.json")],
            "mine": [p("fd.nii.gz"), p("edm.json")],
            "metrics": [p("metrics.json"), p("metrics.csv")],
            "dar-apply": [p("refined.nii.gz"), p("hr.json"), p("hc.json"), p("dar.json")],
            "loss-eval": [p("loss.json")],
        }

        unstable = []
        for name, argv in commands.items():
            snapshots = []
            for threads in ("1", "8"):
                assert main(argv + ["--threads", threads]) == 0, name
                snapshots.append([open(f, "rb").read() for f in tracked[name]])
            if snapshots[0] != snapshots[1]:
                unstable.append(name)
        report(
            "determinism",
            not unstable,
            "7 subcommands byte-identical across reruns and --threads 1 vs 8"
            if not unstable
            else f"unstable: {unstable}",
        )


