"""Embedded oracle suite behind the `selftest` subcommand.

Small, self-contained cross-checks of the library against brute-force
references: BFS component counting, O(n^2) distance scans, canonical
topology fixtures, and closed-form loss values.  Each check prints one
PASS/FAIL line; any failure flips the exit code.
"""

import math
import os
import tempfile
from collections import deque

import numpy as np

from . import edm, heads, metrics, synth, volio
from .grid import BinaryMask, Connectivity, ProbVolume, connected_components, distance_transform, softmax
from .rng import named_stream


def _bfs_components(mask: np.ndarray, full: bool) -> int:
    offsets = [
        (dz, dy, dx)
        for dz in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dx in (-1, 0, 1)
        if (dz, dy, dx) != (0, 0, 0)
        and (full or abs(dz) + abs(dy) + abs(dx) == 1)
    ]
    seen = np.zeros(mask.shape, dtype=bool)
    count = 0
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        count += 1
        queue = deque([start])
        seen[start] = True
        while queue:
            z, y, x = queue.popleft()
            for dz, dy, dx in offsets:
                p = (z + dz, y + dy, x + dx)
                if all(0 <= p[i] < mask.shape[i] for i in range(3)) and mask[p] and not seen[p]:
                    seen[p] = True
                    queue.append(p)
    return count


def _checks():
    rng = named_stream(12345, "selftest")

    def components_vs_bfs():
        m = rng.random((8, 8, 8)) < 0.25
        mask = BinaryMask.from_array(m)
        _, n = connected_components(mask, Connectivity("full"))
        return n == _bfs_components(m, full=True)

    def edt_vs_bruteforce():
        m = rng.random((6, 6, 6)) < 0.2
        m[0, 0, 0] = True
        mask = BinaryMask.from_array(m, spacing=(1.5, 0.8, 1.0))
        dt = distance_transform(mask).data
        fg = np.argwhere(m).astype(float)
        pts = np.argwhere(np.ones(m.shape, bool)).astype(float)
        sp = np.array(mask.spacing)
        brute = np.sqrt((((pts[:, None, :] - fg[None, :, :]) * sp) ** 2).sum(-1)).min(1)
        return np.abs(dt.ravel() - brute).max() <= 1e-9

    def softmax_shift():
        logits = rng.normal(size=(3, 2, 4, 4))
        a = softmax(ProbVolume(logits)).data
        b = softmax(ProbVolume(logits + 7.5)).data
        return np.abs(a - b).max() < 1e-6

    def betti_fixtures():
        cube = np.zeros((9, 9, 9), dtype=np.uint8)
        cube[2:7, 2:7, 2:7] = 1
        ok = metrics.betti(BinaryMask.from_array(cube)).as_dict() == {
            "b0": 1, "b1": 0, "b2": 0, "euler": 1,
        }
        ann = np.zeros((1, 16, 16), dtype=np.uint8)
        yy, xx = np.mgrid[0:16, 0:16]
        r2 = (yy - 8.0) ** 2 + (xx - 8.0) ** 2
        ann[0][(r2 <= 36) & (r2 >= 9)] = 1
        t = metrics.betti(BinaryMask.from_array(ann, rank=2))
        return ok and (t.b0, t.b1, t.b2) == (1, 1, 0)

    def mine_identity():
        fix = synth.generate(synth.TubeNetworkSpec(rng_seed=21, shape=(64, 64, 64), n_branches=2))
        dmask, _ = edm.mine(fix.gt_mask, fix.gt_mask, edm.EdmConfig(rng_seed=0))
        return dmask.mask.count() == 0

    def kl_scalar():
        p = ProbVolume(np.array([0.5, 0.5]).reshape(2, 1, 1, 1), kind="probabilities")
        q = ProbVolume(np.array([0.25, 0.75]).reshape(2, 1, 1, 1), kind="probabilities")
        return abs(heads.kl_divergence(p, q) - 0.5 * math.log(4.0 / 3.0)) < 1e-9

    def dar_factoring():
        c, k = 2, 4
        seg = ProbVolume(rng.normal(size=(c, 2, 3, 3)))
        ske = ProbVolume(rng.normal(size=(c, 2, 3, 3)))
        dis = ProbVolume(rng.normal(size=(c, 2, 3, 3)))
        hr = heads.ChannelMap.random(c, k, seed=3)
        hc = heads.ChannelMap.random(k, c, seed=4)
        out = heads.dar_apply(seg, ske, dis, hr, hc).data
        u = hr.apply(seg.data)
        a_s = np.tile(softmax(ske).data, (k // c, 1, 1, 1))
        a_d = np.tile(softmax(dis).data, (k // c, 1, 1, 1))
        ref = hc.apply(a_s * u) + hc.apply(a_d * u) + hc.apply(u) - 2 * hc.bias[:, None, None, None]
        return np.abs(out - ref).max() <= 1e-6 * max(1.0, np.abs(ref).max())

    def volume_roundtrip():
        data = rng.integers(0, 256, size=(6, 7, 8)).astype(np.uint8)
        mask = BinaryMask.from_array(data % 2)
        with tempfile.TemporaryDirectory() as td:
            path = os.path.join(td, "m.nii.gz")
            volio.write_volume(mask, path)
            back, _ = volio.read_volume(path)
            return np.array_equal(back.data, mask.data)

    return [
        ("connected-components-vs-bfs", components_vs_bfs),
        ("distance-transform-vs-bruteforce", edt_vs_bruteforce),
        ("softmax-shift-invariance", softmax_shift),
        ("betti-canonical-fixtures", betti_fixtures),
        ("mine-perfect-prediction-empty", mine_identity),
        ("kl-closed-form", kl_scalar),
        ("dar-three-term-vs-factored", dar_factoring),
        ("volume-roundtrip", volume_roundtrip),
    ]


def run(print_fn=print) -> bool:
    ok = True
    for name, check in _checks():
        try:
            passed = bool(check())
        except Exception as exc:  # a crash is a failure, not an abort
            passed = False
            print_fn(f"FAIL {name} ({type(exc).__name__}: {exc})")
            ok = False
            continue
        print_fn(("PASS " if passed else "FAIL ") + name)
        ok = ok and passed
    return ok
