"""Acceptance gate: one test per exit criterion.

Each test is a single pass/fail line under `pytest -v`. The desk-scale
training run is shared by the learning and difficulty-ordering criteria
through a module-scoped fixture; its wall-clock budget is asserted where
required. All tolerances are pinned here, not derived at runtime.
"""

import itertools
import math
import time

import numpy as np
import pytest

from rom import evalkit, kernels, matcher, pipeline, trainer
from rom.config import ModelConfig, SceneConfig, TrainConfig
from rom.diffcore import gradient_check
from rom.scenegen import generate_pairs, synth_keypoint_matches
from rom.trainer import build_pair_loss, load_checkpoint, save_checkpoint

# pinned seeds for the desk-scale run
CORPUS_SEED = 11
HELDOUT_SEED = 12
TRAIN_SEED = 7


def frame_f1(params, cfg, pairs, alpha=0.0):
    preds = [pipeline.match_pair(params, cfg, p, alpha=alpha)["matches"]
             for p in pairs]
    gts = [p.gt_matches for p in pairs]
    return evalkit.match_metrics(preds, gts, "frame-wise")["f1"]


# -- criterion 1: gradient suite --------------------------------------------


def test_criterion_gradient_suite():
    start = time.time()
    rng = np.random.default_rng(0)

    # every primitive, via scalar losses that exercise its backward rule
    right = rng.standard_normal((4, 3))
    builds = {
        "matmul": lambda g, x: g.sum_all(
            g.mul(t := g.matmul(x, g.constant(right)), t)),
        "add": lambda g, x: g.sum_all(g.mul(t := g.add(x, g.constant(np.ones((3, 4)))), t)),
        "elementwise-mul": lambda g, x: g.sum_all(g.mul(x, g.mul(x, x))),
        "scalar-mul": lambda g, x: g.sum_all(g.mul(t := g.smul(x, 1.7), t)),
        "relu": lambda g, x: g.sum_all(g.mul(t := g.relu(x), t)),
        "row-softmax": lambda g, x: g.sum_all(
            g.mul(g.row_softmax(x), g.constant(np.arange(12.0).reshape(3, 4)))),
        "concat-cols": lambda g, x: g.sum_all(g.mul(t := g.concat_cols(x, x), t)),
        "slice-cols": lambda g, x: g.sum_all(g.mul(t := g.slice_cols(x, 1, 3), t)),
        "exp": lambda g, x: g.sum_all(g.mul(t := g.exp(x), t)),
        "log": lambda g, x: g.sum_all(
            g.log(g.add(g.mul(x, x), g.constant(np.full((3, 4), 0.5))))),
        "sum-all": lambda g, x: g.mul(t := g.sum_all(g.mul(x, x)), t),
        "sum-rows": lambda g, x: g.sum_all(g.mul(t := g.sum_rows(x), t)),
        "transpose": lambda g, x: g.sum_all(
            g.mul(g.transpose(x), g.constant(np.arange(12.0).reshape(4, 3)))),
    }
    for name, build in builds.items():
        x = rng.standard_normal((3, 4))
        if name == "relu":
            x = x + np.sign(x) * 0.05
        assert gradient_check(build, x) < 1e-4, name

    # full composition: encoder -> refinement -> Sinkhorn(10) -> total loss
    # on a 3x3 pair, feature width 8, 4 classes
    cfg = ModelConfig.tiny()
    tc = TrainConfig(feature_noise_std=0.0)
    params = pipeline.init_params(cfg, 1)
    f1 = rng.standard_normal((3, cfg.d_viz))
    f2 = rng.standard_normal((3, cfg.d_viz))
    b1 = np.array([[0.1, 0.1, 0.3, 0.3], [0.4, 0.2, 0.7, 0.5], [0.2, 0.6, 0.5, 0.9]])
    b2 = b1[::-1].copy()
    y1, y2 = [0, 1, 2], [2, 3, 0]
    p1 = rng.uniform(-0.05, 0.05, size=(3, 3)) + [[0, 0, 3.0]]
    p2 = rng.uniform(-0.05, 0.05, size=(3, 3)) + [[0, 0, 4.0]]
    r1 = np.abs(rng.uniform(1, 4, size=(3, 3)))
    r1 = (r1 + r1.T) / 2
    np.fill_diagonal(r1, 0.0)
    r2 = r1[::-1, ::-1].copy()
    arrays = (f1, b1, y1, p1, r1, f2, b2, y2, p2, r2,
              [(0, 2), (1, 0)], [2], [1])
    w = np.ones(cfg.num_classes)

    g, nodes, loss, _ = build_pair_loss(params, cfg, tc, *arrays, class_weights=w)
    g.backward(loss)
    from rom.nnutil import collect_grads
    grads = collect_grads(g, nodes)

    def loss_at(trial):
        return build_pair_loss(trial, cfg, tc, *arrays, class_weights=w)[3]["total"]

    step = 1e-5
    for key, arr in params.items():
        flat = [tuple(int(c) for c in rng.integers(0, arr.shape))
                for _ in range(min(3, arr.size))]
        for idx in set(flat):
            hi = dict(params)
            hi[key] = arr.copy()
            hi[key][idx] += step
            lo = dict(params)
            lo[key] = arr.copy()
            lo[key][idx] -= step
            numeric = (loss_at(hi) - loss_at(lo)) / (2 * step)
            rel = abs(grads[key][idx] - numeric) / max(1.0, abs(grads[key][idx]))
            assert rel < 1e-4, f"{key}[{idx}]"

    assert time.time() - start < 60.0


# -- criterion 2: Sinkhorn feasibility --------------------------------------


def test_criterion_sinkhorn_feasibility():
    start = time.time()
    rng = np.random.default_rng(2)
    for _ in range(100):
        s = rng.uniform(-5, 5, size=(7, 9))  # 6x8 objects + dustbins
        p = matcher.sinkhorn(s, 300)
        rr, rc = kernels.marginal_residuals(p)
        assert np.abs(rr).max() < 1e-6
        assert np.abs(rc).max() < 1e-6
        trace = kernels.sinkhorn_residual_trace(s, 25)
        assert np.all(np.diff(trace) <= 1e-9)
    assert time.time() - start < 10.0


# -- criterion 3: assignment oracle -----------------------------------------


def exact_partial_assignment(s, z):
    m, n = s.shape
    best_val = -math.inf
    best = set()
    for k in range(min(m, n) + 1):
        for rows in itertools.combinations(range(m), k):
            for cols in itertools.permutations(range(n), k):
                val = sum(s[i, j] for i, j in zip(rows, cols))
                val += z * (m - k) + z * (n - k) + z * k
                if val > best_val:
                    best_val = val
                    best = set(zip(rows, cols))
    return best


def test_criterion_assignment_oracle():
    start = time.time()
    rng = np.random.default_rng(0)
    agree = 0
    for _ in range(1000):
        s = rng.uniform(-5, 5, size=(5, 5)) * 20.0
        p = matcher.sinkhorn(matcher.augment_dustbin(s, 0.0), 300)
        got, _, _ = matcher.extract_assignment(p)
        if set(got) == exact_partial_assignment(s, 0.0):
            agree += 1
    assert agree / 1000 >= 0.95
    assert time.time() - start < 60.0


# -- criterion 4/5: desk-scale learning and difficulty ordering -------------


@pytest.fixture(scope="module")
def desk_run():
    scene_cfg = SceneConfig()
    model_cfg = ModelConfig.desk()
    train_cfg = TrainConfig()
    train_pairs = generate_pairs(scene_cfg, 2000, CORPUS_SEED, difficulty="easy")
    held = {b: generate_pairs(scene_cfg, 150, HELDOUT_SEED + k, difficulty=b)
            for k, b in enumerate(("easy", "hard", "very_hard"))}
    untrained_f1 = frame_f1(pipeline.init_params(model_cfg, TRAIN_SEED),
                            model_cfg, held["easy"])
    start = time.time()
    params, history = trainer.train(train_pairs, model_cfg, train_cfg,
                                    seed=TRAIN_SEED)
    train_seconds = time.time() - start
    return {"scene_cfg": scene_cfg, "model_cfg": model_cfg,
            "params": params, "history": history, "held": held,
            "untrained_f1": untrained_f1, "train_seconds": train_seconds}


def test_criterion_desk_scale_learning(desk_run):
    cfg = desk_run["model_cfg"]
    trained_f1 = frame_f1(desk_run["params"], cfg, desk_run["held"]["easy"])
    hist = desk_run["history"]
    assert len(hist) <= 30
    assert trained_f1 >= 0.80, trained_f1
    assert trained_f1 >= 5.0 * desk_run["untrained_f1"], (
        trained_f1, desk_run["untrained_f1"])
    assert hist[-1]["total"] <= 0.5 * hist[0]["total"]
    assert desk_run["train_seconds"] < 900.0


def test_criterion_difficulty_ordering(desk_run):
    cfg = desk_run["model_cfg"]
    f1 = {b: frame_f1(desk_run["params"], cfg, pairs)
          for b, pairs in desk_run["held"].items()}
    assert f1["easy"] >= f1["hard"] >= f1["very_hard"], f1


# -- criterion 6: fusion behavior -------------------------------------------


def test_criterion_fusion_behavior():
    start = time.time()
    scene_cfg = SceneConfig()
    model_cfg = ModelConfig.desk()
    params = pipeline.init_params(model_cfg, 0)
    pairs = generate_pairs(scene_cfg, 30, seed=50, difficulty="easy")
    correct_fused = total_gt = correct_plain = 0
    for pair in pairs:
        # uninformative object scores: identical (zero) visual features
        pair.feats1 = np.zeros_like(pair.feats1)
        pair.feats2 = np.zeros_like(pair.feats2)
        # decisive keypoints: dense, outlier-free
        synth_keypoint_matches(pair, scene_cfg, seed=pair.pair_id,
                               density=40.0, outlier_rate=0.0)
        gt = set(pair.gt_matches)
        total_gt += len(gt)
        fused = pipeline.match_pair(params, model_cfg, pair, alpha=100.0)
        correct_fused += len(set(fused["matches"]) & gt)
        plain = pipeline.match_pair(params, model_cfg, pair, alpha=0.0)
        correct_plain += len(set(plain["matches"]) & gt)
    assert correct_fused / total_gt >= 0.95
    # without keypoint evidence the degenerate scores carry no signal
    assert correct_plain / total_gt < 0.30
    assert time.time() - start < 10.0


# -- criterion 7: ablation hooks --------------------------------------------


def test_criterion_ablation_hooks():
    scene_cfg = SceneConfig()
    model_cfg = ModelConfig.desk()
    pairs = generate_pairs(scene_cfg, 250, seed=60, difficulty="easy")
    held = generate_pairs(scene_cfg, 100, seed=61, difficulty="easy")
    diffs = []
    for seed in (0, 1, 2):
        f1s = {}
        for name, lam in (("default", 0.1), ("no-rel", 0.0)):
            tc = TrainConfig(epochs=6, lambda_rel=lam)
            params, _ = trainer.train(pairs, model_cfg, tc, seed=seed)
            f1s[name] = frame_f1(params, model_cfg, held)
        diffs.append(abs(f1s["default"] - f1s["no-rel"]))
    assert all(d > 0.0 for d in diffs), diffs
    assert np.mean(diffs) > 0.005, diffs


# -- criterion 8: metric oracle ---------------------------------------------


def test_criterion_metric_oracle():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n_pairs = int(rng.integers(1, 10))
        preds, gts = [], []
        for _ in range(n_pairs):
            m = int(rng.integers(0, 6))
            n = int(rng.integers(0, 6))
            k = int(rng.integers(0, min(m, n) + 1))
            gts.append(list(zip(map(int, rng.permutation(m)[:k]),
                                map(int, rng.permutation(n)[:k]))))
            k = int(rng.integers(0, min(m, n) + 1))
            preds.append(list(zip(map(int, rng.permutation(m)[:k]),
                                  map(int, rng.permutation(n)[:k]))))

        # object-wise: pooled counts
        correct = sum(len(set(p) & set(g)) for p, g in zip(preds, gts))
        np_, ng = sum(map(len, preds)), sum(map(len, gts))
        prec = correct / np_ if np_ else 0.0
        rec = correct / ng if ng else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        ow = evalkit.match_metrics(preds, gts, "object-wise")
        assert abs(ow["precision"] - prec) < 1e-12
        assert abs(ow["recall"] - rec) < 1e-12
        assert abs(ow["f1"] - f1) < 1e-12

        # frame-wise: independent per-pair averages
        ps, rs, fs = [], [], []
        for p, g in zip(preds, gts):
            c = len(set(p) & set(g))
            if p:
                ps.append(c / len(p))
            if g:
                pr = c / len(p) if p else 0.0
                rc = c / len(g)
                rs.append(rc)
                fs.append(2 * pr * rc / (pr + rc) if pr + rc else 0.0)
        fw = evalkit.match_metrics(preds, gts, "frame-wise")
        assert abs(fw["precision"] - (np.mean(ps) if ps else 0.0)) < 1e-12
        assert abs(fw["recall"] - (np.mean(rs) if rs else 0.0)) < 1e-12
        assert abs(fw["f1"] - (np.mean(fs) if fs else 0.0)) < 1e-12

        # auxiliary metrics
        n = int(rng.integers(1, 12))
        pl = rng.integers(0, 5, size=n)
        gl = rng.integers(0, 5, size=n)
        pp = rng.uniform(-3, 3, size=(n, 3))
        gp = rng.uniform(-3, 3, size=(n, 3))
        pd = rng.uniform(0, 9, size=n)
        gd = rng.uniform(0, 9, size=n)
        m = evalkit.aux_metrics(pl, gl, pp, gp, pd, gd)
        errs = sorted(float(np.sqrt(((a - b) ** 2).sum()))
                      for a, b in zip(pp, gp))
        derrs = sorted(abs(float(a - b)) for a, b in zip(pd, gd))
        assert abs(m["accuracy"] - sum(int(a == b) for a, b in zip(pl, gl)) / n) < 1e-12
        assert abs(m["position"]["mean"] - sum(errs) / n) < 1e-12
        assert abs(m["position"]["median"] - float(np.median(errs))) < 1e-12
        assert abs(m["position"]["rate_0.5"] - sum(e <= 0.5 for e in errs) / n) < 1e-12
        assert abs(m["distance"]["rate_1.0"] - sum(e <= 1.0 for e in derrs) / n) < 1e-12


# -- criterion 9: round trips -----------------------------------------------


def test_criterion_round_trips(tmp_path):
    from rom.corpus import read_corpus, write_corpus

    # checkpoint: bit-exact
    cfg = ModelConfig.tiny()
    params = pipeline.init_params(cfg, 3)
    state = trainer.init_adam_state(params)
    state["t"] = 5
    rng = np.random.default_rng(0)
    state["m"] = {k: rng.standard_normal(v.shape) for k, v in params.items()}
    state["v"] = {k: np.abs(rng.standard_normal(v.shape)) for k, v in params.items()}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, cfg, opt_state=state, epoch=2)
    loaded, lcfg, opt, epoch = load_checkpoint(path)
    assert lcfg == cfg and epoch == 2 and opt["t"] == 5
    for k in params:
        assert loaded[k].tobytes() == params[k].tobytes()
        assert opt["m"][k].tobytes() == state["m"][k].tobytes()
        assert opt["v"][k].tobytes() == state["v"][k].tobytes()

    # corpus: every field preserved
    pairs = generate_pairs(SceneConfig(d_viz=8, num_classes=4), 3, seed=1)
    cpath = tmp_path / "corpus.jsonl"
    write_corpus(cpath, pairs)
    back = read_corpus(cpath)
    for a, b in zip(pairs, back):
        assert a.gt_matches == b.gt_matches
        assert a.difficulty == b.difficulty
        assert a.d_mean == b.d_mean and a.angle_mean_deg == b.angle_mean_deg
        assert a.cam1 == b.cam1 and a.cam2 == b.cam2
        assert np.array_equal(a.feats1, b.feats1)
        assert np.array_equal(a.feats2, b.feats2)
        assert np.array_equal(a.rel_dist1, b.rel_dist1)
        assert a.keypoints == b.keypoints
        for da, db in zip(list(a.det1) + list(a.det2),
                          list(b.det1) + list(b.det2)):
            assert (da.instance_id, da.label, da.dist, da.view_angle) == \
                   (db.instance_id, db.label, db.dist, db.view_angle)
            assert np.array_equal(da.bbox, db.bbox)
            assert np.array_equal(da.offset, db.offset)
            assert np.array_equal(da.center_cam, db.center_cam)
