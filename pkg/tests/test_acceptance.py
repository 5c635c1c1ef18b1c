"""Acceptance criteria 1-8, each at its stated tolerance and runtime budget.

Every test appends one ``PASS``/``FAIL`` line to the terminal summary, then
asserts.  Criterion 5 trains for several minutes and is marked ``slow``.
"""
import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from amsdb import cli, dog, ssm
from amsdb.core import ops, scan
from amsdb.core import tensor as T
from amsdb.core.gradcheck import check_gradients
from amsdb.core.tensor import Tensor
from amsdb.evalkit import evaluate, psnr
from amsdb.evalkit.metrics import pseudo_scores_from_counts, scores_from_counts
from amsdb.evalkit.skeleton import skeletonize
from amsdb.evalkit.thresholds import local_mean_std, otsu, to_bins, window_sums
from amsdb.model import AMSDBNet, ModelConfig, loss
from amsdb.pipeline import checkpoint as ck
from amsdb.pipeline.io import DatasetIndex, Record
from amsdb.pipeline.patches import PatchGrid, augment, extract_patches, stitch
from amsdb.pipeline.split import leave_one_out_split
from amsdb.pipeline.synth import synth_document
from amsdb.pipeline.train import TrainConfig, checkpoint_of, train
from conftest import jitter
from test_evalkit import brute, naive_window_mean_std, otsu_oracle
from test_scan import random_scan_inputs

OVERFIT_STEPS = 300


class Criterion:
    def __init__(self):
        self.checks = []

    def check(self, label, ok, detail=""):
        self.checks.append((label, bool(ok), detail))

    @property
    def ok(self):
        return all(ok for _, ok, _ in self.checks)

    def failures(self):
        return [f"{label} {detail}".strip() for label, ok, detail in self.checks if not ok]


@contextmanager
def criterion(report, number, title, budget_s):
    c = Criterion()
    start = time.perf_counter()
    try:
        yield c
    except Exception as exc:  # recorded as a failure, then re-raised
        c.check("exception", False, repr(exc))
        raise
    finally:
        elapsed = time.perf_counter() - start
        c.check("runtime", elapsed < budget_s, f"{elapsed:.1f}s > {budget_s}s")
        status = "PASS" if c.ok else "FAIL"
        summary = "; ".join(f"{label}: {detail}" for label, ok, detail in c.checks if detail and ok and label != "runtime")
        line = f"[{status}] criterion {number}: {title} ({elapsed:.1f}s)"
        if summary:
            line += f" | {summary}"
        if not c.ok:
            line += " | failed: " + "; ".join(c.failures())
        report.append(line)
        print(line)
    assert c.ok, c.failures()


def f64(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# --------------------------------------------------------------------------
# 1. gradient integrity
# --------------------------------------------------------------------------

def test_criterion_1_gradient_integrity(acceptance_report):
    rng = np.random.default_rng(11)
    tol = 1e-6  # harness runs in double precision
    with criterion(acceptance_report, 1, "gradient integrity vs central finite differences", 120) as c:
        cases = {}
        a, b = f64(rng, 3, 4), f64(rng, 4, 5)
        cases["matmul"] = check_gradients(ops.matmul, [a, b])
        x, w, bias = f64(rng, 2, 3, 6, 6), f64(rng, 4, 3, 3, 3), f64(rng, 4)
        cases["conv2d"] = check_gradients(lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1), [x, w, bias])
        xd, wd = f64(rng, 1, 3, 5, 5), f64(rng, 3, 1, 3, 3)
        cases["conv2d depthwise"] = check_gradients(lambda x, w: ops.conv2d(x, w, padding=1, groups=3), [xd, wd])
        p, q = f64(rng, 3, 4), Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        for name in ("add", "sub", "mul", "div"):
            cases[name] = check_gradients(getattr(T, name), [p, q])
        for name in ("exp", "log", "sigmoid", "silu", "softplus", "square", "neg"):
            cases[name] = check_gradients(getattr(T, name), [q])
        g, beta, xl = f64(rng, 6), f64(rng, 6), f64(rng, 2, 3, 6)
        cases["layer_norm"] = check_gradients(ops.layer_norm, [xl, g, beta])
        xb = f64(rng, 1, 2, 7, 7)
        k = dog.gaussian_kernel(1.1, 5)
        cases["gaussian_blur"] = check_gradients(lambda t: dog.gaussian_blur(t, k), [xb])
        bank = dog.DoGBank(3, 0.8)
        bank.weights = [Tensor(np.float64(v), requires_grad=True) for v in rng.standard_normal(3)]
        cases["f_dog (x, w_i)"] = check_gradients(lambda x, *ws: dog.f_dog(x, bank), [xb] + bank.weights)
        for be in scan.available_backends():
            inputs = [Tensor(v, requires_grad=True) for v in random_scan_inputs(rng, L=6)]
            cases[f"selective_scan[{be}]"] = check_gradients(
                lambda *t, be=be: scan.selective_scan(*t, backend=be), inputs)
        block = jitter(ssm.VSSBlock(4, np.random.default_rng(0), state_dim=3).astype(np.float64))
        xv = f64(rng, 1, 4, 3, 3)
        cases["vss_block"] = check_gradients(lambda *_: block(xv), [xv] + block.parameters(), max_entries=10)
        cfg = ModelConfig(dims=(4, 8), depths=(1, 1), state_dim=3, expand_ratio=1, refine_dims=(4, 4))
        model = jitter(AMSDBNet(cfg, np.random.default_rng(2)).astype(np.float64))
        xm = Tensor(rng.random((1, 3, 32, 32)))
        ym = (rng.random((1, 32, 32)) < 0.3).astype(np.float64)
        cases["model loss"] = check_gradients(lambda *_: loss(model(xm), ym), model.parameters(), max_entries=3)
        for name, errs in cases.items():
            worst = max(errs.values())
            c.check(name, worst < tol, f"{worst:.1e}")
        overall = max(max(e.values()) for e in cases.values())
        c.check("max relative error", overall < tol, f"{overall:.1e} over {len(cases)} ops")


# --------------------------------------------------------------------------
# 2. scan oracle
# --------------------------------------------------------------------------

def test_criterion_2_scan_oracle(acceptance_report):
    rng = np.random.default_rng(22)
    with criterion(acceptance_report, 2, "selective scan oracle and causality", 30) as c:
        for be in scan.available_backends():
            L = 64
            u = rng.standard_normal(L)
            ones = np.ones((1, 1, L, 1))
            y = scan.selective_scan(Tensor(u.reshape(1, 1, L, 1)), Tensor(ones), Tensor(np.zeros((1, 1, 1))),
                                    Tensor(ones), Tensor(ones), Tensor(np.zeros((1, 1))), backend=be).data.ravel()
            err = float(np.abs(y - np.cumsum(u)).max())
            c.check(f"cumsum[{be}]", err < 1e-5, f"{err:.1e}")
            worst = 0.0
            for _ in range(20):
                n = int(rng.integers(2, 16))
                arrays = random_scan_inputs(rng, N=1, K=2, L=n, E=3, S=4)
                full = scan.selective_scan(*[Tensor(a) for a in arrays], backend=be).data
                t = int(rng.integers(1, n))
                cut = [a[:, :, :t] if a.ndim == 4 else a for a in arrays]
                pre = scan.selective_scan(*[Tensor(a) for a in cut], backend=be).data
                worst = max(worst, float(np.abs(pre - full[:, :, :t]).max()))
            c.check(f"prefix[{be}]", worst < 1e-12, f"20 instances, max diff {worst:.1e}")


# --------------------------------------------------------------------------
# 3. DoG suite
# --------------------------------------------------------------------------

def test_criterion_3_dog_suite(acceptance_report):
    rng = np.random.default_rng(33)
    with criterion(acceptance_report, 3, "DoG filter identities", 30) as c:
        bank = dog.DoGBank(3, 0.8)
        const = dog.f_dog(Tensor(np.full((2, 3, 16, 16), 0.37)), bank).data
        c.check("constant annihilation", np.abs(const).max() < 1e-5, f"{np.abs(const).max():.1e}")
        bank.set_weights(rng.standard_normal(3))
        x, y = rng.standard_normal((2, 1, 2, 12, 12))
        lin_x = np.abs(dog.f_dog(Tensor(2 * x - 3 * y), bank).data
                       - 2 * dog.f_dog(Tensor(x), bank).data + 3 * dog.f_dog(Tensor(y), bank).data).max()
        c.check("linear in x", lin_x < 1e-5, f"{lin_x:.1e}")
        outs = []
        w1, w2 = rng.standard_normal(3), rng.standard_normal(3)
        for w in (w1, w2, 0.5 * w1 - 2 * w2):
            bank.set_weights(w)
            outs.append(dog.f_dog(Tensor(x), bank).data)
        lin_w = np.abs(0.5 * outs[0] - 2 * outs[1] - outs[2]).max()
        c.check("linear in w", lin_w < 1e-5, f"{lin_w:.1e}")
        shared = all(p[1] == q[0] for n in range(1, 9) for s0 in (0.5, 0.8, 1.3, 2.0)
                     for p, q in zip(dog.sigma_schedule(s0, n)[:-1], dog.sigma_schedule(s0, n)[1:]))
        c.check("sigma2_i == sigma1_i+1 exactly", shared)
        norm = max(abs(dog.gaussian_kernel(s, 2 * h + 1).weights.sum() - 1)
                   for s in (0.5, 0.8, 1.13, 2.0, 3.7) for h in range(0, 12))
        c.check("kernel normalisation", norm < 1e-6, f"{norm:.1e}")
        k = dog.gaussian_kernel(1.6, 11)
        imp = np.zeros((1, 1, 21, 21))
        imp[0, 0, 10, 10] = 1
        resp = dog.gaussian_blur(Tensor(imp), k).data[0, 0, 5:16, 5:16]
        c.check("impulse response", np.abs(resp - k.weights).max() < 1e-12,
                f"{np.abs(resp - k.weights).max():.1e}")


# --------------------------------------------------------------------------
# 4. variant equivalence
# --------------------------------------------------------------------------

def test_criterion_4_variant_equivalence(acceptance_report):
    rng = np.random.default_rng(44)
    with criterion(acceptance_report, 4, "DoG-residual with w=0 equals plain skips bitwise", 60) as c:
        plain = AMSDBNet(ModelConfig(skip_mode="plain"), np.random.default_rng(9))
        resid = AMSDBNet(ModelConfig(skip_mode="dog_residual"), np.random.default_rng(9))
        shared = dict(plain.named_parameters())
        c.check("shared weights identical", all(np.array_equal(shared[n].data, p.data)
                                                for n, p in resid.named_parameters() if n in shared))
        for bank in resid.dog_banks:
            bank.set_weights(np.zeros(bank.n_scales))
        x = Tensor(rng.random((2, 3, 64, 64)).astype(np.float32))
        same = all(np.array_equal(a.data, b.data) for a, b in zip(plain(x).logits, resid(x).logits))
        c.check("all heads bitwise equal", same)


# --------------------------------------------------------------------------
# 5. overfit run through the CLI
# --------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_overfit(acceptance_report, tmp_path):
    with criterion(acceptance_report, 5, f"overfit 8 synthetic pages, {OVERFIT_STEPS} Adam steps", 600) as c:
        assert cli.main(["synth", "--out-dir", str(tmp_path / "corp"), "--count", "8", "--size", "128",
                         "--seed", "0"]) == 0
        code = cli.main(["train", "--manifest", str(tmp_path / "corp" / "corpus.manifest"),
                         "--steps", str(OVERFIT_STEPS), "--batch-size", "8", "--lr", "1e-3", "--seed", "0",
                         "--dims", "16,32", "--depths", "1,1", "--state-dim", "8", "--dog-scales", "3",
                         "--out-dir", str(tmp_path / "run")])
        c.check("train exit code", code == 0, str(code))
        c.check("infer exit code", cli.main(["infer", "--checkpoint", str(tmp_path / "run" / "model.amsdb"),
                                             "--input", str(tmp_path / "corp" / "img"),
                                             "--out-dir", str(tmp_path / "pred")]) == 0)
        c.check("eval exit code", cli.main(["eval", "--pred", str(tmp_path / "pred"),
                                            "--gt", str(tmp_path / "corp" / "gt"),
                                            "--out-dir", str(tmp_path / "eval")]) == 0)
        mean = json.loads((tmp_path / "eval" / "eval_report.json").read_text())["summary"]
        c.check("train FM >= 95", mean["fmeasure"] >= 95.0, f"{mean['fmeasure']:.2f}")
        c.check("PSNR >= 15 dB", mean["psnr"] >= 15.0, f"{mean['psnr']:.2f} dB")
        losses = [float(l.split(",")[1]) for l in (tmp_path / "run" / "loss.csv").read_text().splitlines()[1:]]
        c.check("loss(200) < loss(1)", losses[199] < losses[0], f"{losses[0]:.3f} -> {losses[199]:.3f}")


# --------------------------------------------------------------------------
# 6. metric oracles
# --------------------------------------------------------------------------

def test_criterion_6_metric_oracles(acceptance_report):
    rng = np.random.default_rng(66)
    with criterion(acceptance_report, 6, "metric and threshold oracles", 60) as c:
        mismatches = 0
        for _ in range(100):
            pred = (rng.random((16, 16)) < rng.uniform(0.05, 0.6)).astype(np.uint8)
            gt = (rng.random((16, 16)) < rng.uniform(0.05, 0.6)).astype(np.uint8)
            gt[0, 0] = 1
            tp, fp, fn, tn = brute(pred, gt)
            sk = skeletonize(gt)
            hit = sum(1 for a, b in zip(pred.ravel().tolist(), sk.ravel().tolist()) if a and b)
            rep = evaluate(pred, gt)
            P, R, F = scores_from_counts(tp, fp, fn)
            PR, _, FPS = pseudo_scores_from_counts(tp, fp, hit, int(sk.sum()))
            ps = 100.0 if fp + fn == 0 else min(100.0, 10 * math.log10(256 / (fp + fn)))
            got = (rep.tp, rep.fp, rep.fn, rep.tn, rep.precision, rep.recall, rep.fmeasure,
                   rep.pseudo_recall, rep.pseudo_fmeasure, psnr(pred, gt))
            mismatches += got != (tp, fp, fn, tn, P, R, F, PR, FPS, ps)
        c.check("FM/P/R/F_ps/PSNR exact on 100 pairs", mismatches == 0, f"{mismatches} mismatches")
        otsu_bad = 0
        for _ in range(50):
            img = rng.random((16, 16)) ** rng.uniform(0.4, 2.5)
            otsu_bad += otsu(img)[0] != otsu_oracle(img)
        c.check("otsu == exhaustive search on 50 images", otsu_bad == 0, f"{otsu_bad} mismatches")
        worst = 0.0
        for w in (3, 7, 11):
            img = rng.random((20, 24))
            m, s = local_mean_std(img, w)
            mo, so = naive_window_mean_std(img, w)
            worst = max(worst, np.abs(m - mo).max(), np.abs(s - so).max(),
                        np.abs(window_sums(img, w) / w ** 2 - mo).max())
        c.check("integral-image means within 1e-5", worst < 1e-5, f"{worst:.1e}")


# --------------------------------------------------------------------------
# 7. pipeline properties
# --------------------------------------------------------------------------

def test_criterion_7_pipeline_properties(acceptance_report):
    rng = np.random.default_rng(77)
    with criterion(acceptance_report, 7, "pipeline properties", 300) as c:
        c.check("256^2 stride 64 -> 9 patches", len(PatchGrid.build(256, 256, 128, 64)) == 9)
        g200 = PatchGrid.build(200, 200, 128, 64)
        c.check("200^2 stride 64 -> 9 patches (clamped at 72)",
                len(g200) == 9 and sorted({r for r, _ in g200.origins}) == [0, 64, 72])
        img = rng.random((200, 171, 3)).astype(np.float32)
        grid, patches = extract_patches(img, 128, 64)
        c.check("stitch(extract(img)) == img", np.array_equal(stitch(patches, grid), img))
        a = rng.random((9, 9))
        r4 = a
        for _ in range(4):
            r4 = np.rot90(r4)
        c.check("flip and rot90 involutions", np.array_equal(a[:, ::-1][:, ::-1], a) and np.array_equal(r4, a))
        x1, g1 = augment(img[:144, :144], (img[:144, :144, 0] > 0.5).astype(np.uint8), np.random.default_rng(5), 128)
        x2, g2 = augment(img[:144, :144], (img[:144, :144, 0] > 0.5).astype(np.uint8), np.random.default_rng(5), 128)
        c.check("augmentation pairing and determinism",
                np.array_equal((x1[:, :, 0] > 0.5).astype(np.uint8), g1) and np.array_equal(x1, x2))
        idx = DatasetIndex([Record(str(y), f"{y}_{i}", f"g{y}_{i}") for y in range(2009, 2017) for i in range(3)])
        tr, te = leave_one_out_split(idx, 2016)
        c.check("leave-one-out partition", set(tr.records).isdisjoint(te.records)
                and len(tr) + len(te) == len(idx) and te.years == ["2016"] and "2016" not in tr.years)
        model = AMSDBNet(ModelConfig(), np.random.default_rng(3))
        blob = ck.to_bytes(checkpoint_of(model, None, 3, 0))
        back = ck.from_bytes(blob)
        exact = all(back.params[n].tobytes() == p.data.astype("<f4").tobytes() for n, p in model.named_parameters())
        c.check("checkpoint byte-exact round trip", exact and ck.to_bytes(back) == blob)
        pairs = []
        for _ in range(3):
            gray, ink = synth_document(rng, 128)
            pairs.append((np.repeat(gray[:, :, None], 3, axis=2), ink))
        tc = TrainConfig(steps=3, batch_size=2)
        cfg = ModelConfig(dims=(8, 16))
        run1 = ck.to_bytes(train(cfg, tc, DatasetIndex(), pairs=pairs).checkpoint)
        run2 = ck.to_bytes(train(cfg, tc, DatasetIndex(), pairs=pairs).checkpoint)
        c.check("fixed-seed training byte-identical", run1 == run2, f"{len(run1)} bytes")


# --------------------------------------------------------------------------
# 8. end-to-end CLI
# --------------------------------------------------------------------------

def test_criterion_8_end_to_end_cli(acceptance_report, tmp_path):
    with criterion(acceptance_report, 8, "CLI split -> train -> infer -> eval", 600) as c:
        corp = tmp_path / "corp"
        c.check("synth", cli.main(["synth", "--out-dir", str(corp), "--count", "6",
                                   "--years", "2014,2015,2016"]) == 0)
        c.check("split", cli.main(["split", "--manifest", str(corp / "corpus.manifest"), "--hold-out", "2016",
                                   "--out-dir", str(tmp_path / "split")]) == 0)
        c.check("train", cli.main(["train", "--manifest", str(tmp_path / "split" / "train.manifest"),
                                   "--steps", "5", "--batch-size", "4", "--out-dir", str(tmp_path / "run")]) == 0)
        test_imgs = [l.split("\t")[1] for l in (tmp_path / "split" / "test.manifest").read_text().splitlines()]
        c.check("infer", cli.main(["infer", "--checkpoint", str(tmp_path / "run" / "model.amsdb"),
                                   "--input", *test_imgs, "--out-dir", str(tmp_path / "pred")]) == 0)
        test_gt = tmp_path / "test_gt"
        test_gt.mkdir()
        for l in (tmp_path / "split" / "test.manifest").read_text().splitlines():
            src = l.split("\t")[2]
            (test_gt / src.rsplit("/", 1)[1]).write_bytes(open(src, "rb").read())
        c.check("eval", cli.main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(test_gt),
                                  "--out-dir", str(tmp_path / "ev")]) == 0)
        c.check("eval gt vs gt", cli.main(["eval", "--pred", str(corp / "gt"), "--gt", str(corp / "gt"),
                                           "--out-dir", str(tmp_path / "self")]) == 0)
        rows = json.loads((tmp_path / "self" / "eval_report.json").read_text())["rows"]
        c.check("FM = 100 on every row", all(r["fmeasure"] == 100.0 for r in rows), f"{len(rows)} rows")
