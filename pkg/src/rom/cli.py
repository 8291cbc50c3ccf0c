"""Command line interface: generate / train / match / fuse / eval."""

from __future__ import annotations

import json
import os

import click
import numpy as np

from . import corpus as corpus_io
from . import evalkit, pipeline, svg, trainer
from .config import (ModelConfig, SceneConfig, TrainConfig,
                     model_config_from_dict, scene_config_from_dict,
                     train_config_from_dict)
from .scenegen import DIFFICULTY_BINS, generate_pairs


@click.group()
def main():
    """Relational object matching: synthetic data, training, matching, eval."""


def _fail(err):
    raise click.ClickException(str(err))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Scene config JSON (subset of fields).")
@click.option("--count", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--difficulty", type=click.Choice(list(DIFFICULTY_BINS) + ["mixed"]),
              default="mixed", show_default=True)
def generate(config_path, count, seed, out_path, difficulty):
    """Generate a synthetic scene-pair corpus (JSON Lines)."""
    try:
        cfg = SceneConfig()
        if config_path:
            with open(config_path) as fh:
                cfg = scene_config_from_dict(json.load(fh))
        diff = None if difficulty == "mixed" else difficulty
        pairs = generate_pairs(cfg, count, seed, difficulty=diff)
        corpus_io.write_corpus(out_path, pairs)
    except (ValueError, RuntimeError, OSError) as err:
        _fail(err)
    click.echo(f"wrote {count} pairs to {out_path}")


def _load_model_train_cfg(config_path, pairs):
    model_kwargs = {}
    train_kwargs = {}
    if config_path:
        with open(config_path) as fh:
            data = json.load(fh)
        model_kwargs = data.get("model", {})
        train_kwargs = data.get("train", {})
    if "d_viz" not in model_kwargs and pairs and pairs[0].feats1 is not None:
        model_kwargs["d_viz"] = pairs[0].feats1.shape[1]
    if "num_classes" not in model_kwargs and pairs:
        mx = max(d.label for p in pairs for d in list(p.det1) + list(p.det2))
        model_kwargs["num_classes"] = mx + 1
    base = ModelConfig.desk().__dict__ | model_kwargs
    return model_config_from_dict(base), train_config_from_dict(train_kwargs)


@main.command()
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help='JSON with optional "model" and "train" sections.')
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--epochs", type=int, default=None)
@click.option("--lambda-aff", type=float, default=None)
@click.option("--lambda-cls", type=float, default=None)
@click.option("--lambda-pos", type=float, default=None)
@click.option("--lambda-rel", type=float, default=None)
def train(corpus_path, config_path, seed, out_path, epochs,
          lambda_aff, lambda_cls, lambda_pos, lambda_rel):
    """Train the matcher on a corpus and write a checkpoint."""
    try:
        pairs = corpus_io.read_corpus(corpus_path)
        mcfg, tcfg = _load_model_train_cfg(config_path, pairs)
        overrides = {"epochs": epochs, "lambda_aff": lambda_aff,
                     "lambda_cls": lambda_cls, "lambda_pos": lambda_pos,
                     "lambda_rel": lambda_rel}
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if overrides:
            tcfg = train_config_from_dict(tcfg.__dict__ | overrides)
        params, history = trainer.train(pairs, mcfg, tcfg, seed, log=click.echo)
        trainer.save_checkpoint(out_path, params, mcfg, epoch=len(history))
    except (ValueError, RuntimeError, OSError) as err:
        _fail(err)
    click.echo(f"saved checkpoint to {out_path}")


def _run_matching(ckpt, corpus_path, out_path, alpha, iters, keypoints_path,
                  svg_dir):
    params, mcfg, _, _ = trainer.load_checkpoint(ckpt)
    pairs = corpus_io.read_corpus(corpus_path)
    ext_kps = corpus_io.read_keypoint_file(keypoints_path) if keypoints_path else None
    if svg_dir:
        os.makedirs(svg_dir, exist_ok=True)
    with open(out_path, "w") as fh:
        for pair in pairs:
            kps = ext_kps.get(pair.pair_id, []) if ext_kps is not None else None
            res = pipeline.match_pair(params, mcfg, pair, alpha=alpha,
                                      iterations=iters, keypoints=kps,
                                      with_aux=True)
            rec = {
                "pair_id": pair.pair_id,
                "matches": [list(m) for m in res["matches"]],
                "unmatched_1": res["unmatched1"],
                "unmatched_2": res["unmatched2"],
                "scores": {
                    "s_obj_mean": round(float(res["s_obj"].mean()), 6),
                    "s_obj_max": round(float(res["s_obj"].max()), 6),
                    "p_match_mean": round(float(np.mean(
                        [res["p"][i, j] for i, j in res["matches"]]
                    )) if res["matches"] else 0.0, 6),
                },
                "aux": {
                    "labels1": [int(x) for x in res["labels1"]],
                    "labels2": [int(x) for x in res["labels2"]],
                    "pos1": [[round(float(v), 9) for v in row] for row in res["pos1"]],
                    "pos2": [[round(float(v), 9) for v in row] for row in res["pos2"]],
                },
            }
            fh.write(json.dumps(rec) + "\n")
            if svg_dir:
                svg.write_overlay(os.path.join(svg_dir, f"pair_{pair.pair_id}.svg"),
                                  pair, res["matches"])
    return len(pairs)


@main.command()
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--alpha", type=float, default=0.0, show_default=True,
              help="Keypoint-score fusion weight.")
@click.option("--iters", type=int, default=None, help="Sinkhorn iterations.")
@click.option("--keypoints", "keypoints_path", type=click.Path(exists=True),
              default=None, help="External keypoint-match JSONL.")
@click.option("--svg", "svg_dir", type=click.Path(), default=None,
              help="Directory for per-pair overlay drawings.")
def match(ckpt, corpus_path, out_path, alpha, iters, keypoints_path, svg_dir):
    """Match objects with a trained model (object scores, optional fusion)."""
    try:
        n = _run_matching(ckpt, corpus_path, out_path, alpha, iters,
                          keypoints_path, svg_dir)
    except (ValueError, RuntimeError, OSError) as err:
        _fail(err)
    click.echo(f"matched {n} pairs -> {out_path}")


@main.command()
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--alpha", type=float, default=100.0, show_default=True)
@click.option("--iters", type=int, default=None)
@click.option("--keypoints", "keypoints_path", type=click.Path(exists=True),
              default=None)
@click.option("--svg", "svg_dir", type=click.Path(), default=None)
def fuse(ckpt, corpus_path, out_path, alpha, iters, keypoints_path, svg_dir):
    """Fused object + keypoint matching (alpha defaults to 100)."""
    try:
        n = _run_matching(ckpt, corpus_path, out_path, alpha, iters,
                          keypoints_path, svg_dir)
    except (ValueError, RuntimeError, OSError) as err:
        _fail(err)
    click.echo(f"fused {n} pairs -> {out_path}")


@main.command("eval")
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--by-difficulty", is_flag=True, default=False)
def eval_cmd(pred_path, corpus_path, out_path, by_difficulty):
    """Score predicted matches against corpus ground truth."""
    try:
        pairs = {p.pair_id: p for p in corpus_io.read_corpus(corpus_path)}
        preds = {}
        with open(pred_path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    preds[rec["pair_id"]] = rec

        def collect(subset):
            pred_lists, gt_lists = [], []
            labels_p, labels_g = [], []
            pos_p, pos_g, dist_p, dist_g = [], [], [], []
            for pid in sorted(subset):
                pair = pairs[pid]
                rec = preds[pid]
                pred_lists.append([tuple(m) for m in rec["matches"]])
                gt_lists.append([tuple(m) for m in pair.gt_matches])
                aux = rec.get("aux")
                if aux:
                    for side, dets, cam in (("1", pair.det1, pair.cam1),
                                            ("2", pair.det2, pair.cam2)):
                        for k, det in enumerate(dets):
                            labels_p.append(aux[f"labels{side}"][k])
                            labels_g.append(det.label)
                            off = aux[f"pos{side}"][k][:2]
                            d = aux[f"pos{side}"][k][2]
                            pos_p.append(evalkit.backproject(det.bbox, off, d, cam))
                            pos_g.append(det.center_cam)
                            dist_p.append(d)
                            dist_g.append(det.dist)
            aux_rep = None
            if labels_g:
                aux_rep = evalkit.aux_metrics(labels_p, labels_g, pos_p, pos_g,
                                              dist_p, dist_g)
            return pred_lists, gt_lists, aux_rep

        common = sorted(set(pairs) & set(preds))
        groups = {"overall": collect(common)}
        if by_difficulty:
            for b in DIFFICULTY_BINS:
                subset = [pid for pid in common if pairs[pid].difficulty == b]
                if subset:
                    groups[b] = collect(subset)
        report = evalkit.build_report(groups)
        click.echo(evalkit.format_report(report))
        if out_path:
            evalkit.write_report(out_path, report)
    except (ValueError, RuntimeError, OSError, KeyError) as err:
        _fail(err)


if __name__ == "__main__":
    main()
