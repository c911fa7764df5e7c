"""Scripted experiment grid at configurable scale.

Each experiment builds its whole setting (corpus, encoder, synthetic data,
model) from the seeds in its plan, so re-running a plan reproduces the
report. Desk-scale defaults keep every cell in the minutes range on a CPU.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .backbone import RestorationBackbone, preset_config, restore_image, attention_maps
from .corpus import CATEGORIES, generate_corpus, sample_instruction
from .degrade import (DegradationSpec, ImagePair, apply_spec, compose_seeded,
                      synthetic_clean_images)
from .metrics import EvalRecord, evaluate, psnr
from .textenc import TINY_TEXT_PRESET, TextEncoderConfig, finetune
from .train import TrainConfig, fit

# fixed mid-range parameters used for evaluation cells
EVAL_SPECS = {
    "rain": DegradationSpec.rain_spec(density=2500.0, angle=15.0, length=11, intensity=0.6),
    "haze": DegradationSpec.haze_spec(beta=1.2, airlight=0.9),
}
NOISE_EVAL_LEVELS = (15, 25, 50)


@dataclass
class ExperimentPlan:
    name: str
    experiment: str = "all_in_one"
    tasks: tuple = ("noise", "rain", "haze")
    preset: str = "tiny"
    train: dict = field(default_factory=lambda: dict(steps=1000, batch_size=2, patch=64, seed=0))
    textenc_steps: int = 1200
    corpus_seed: int = 7
    per_category: int = 50
    n_images: int = 8
    image_size: int = 96
    repeats: int = 1
    seeds: tuple = (0,)

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        self.seeds = tuple(self.seeds)
        if not self.tasks:
            raise ValueError("task set must be non-empty")
        if self.repeats != len(self.seeds):
            raise ValueError("repeats must equal len(seeds)")

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2))

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        return cls(**json.loads(Path(path).read_text()))


# -- shared setting construction ---------------------------------------------

def prepare_encoder(plan: ExperimentPlan):
    corpus = generate_corpus(plan.corpus_seed, plan.per_category)
    cfg = TextEncoderConfig(vocab_size=corpus.vocab_size, **TINY_TEXT_PRESET)
    rng = np.random.default_rng(plan.corpus_seed)
    encoder, _ = finetune(corpus, cfg, plan.textenc_steps, rng)
    return corpus, encoder


def make_eval_pairs(cleans, kind: str, seed: int, sigma_255: float | None = None):
    """Degrade each clean image with the fixed eval spec for `kind`."""
    if kind == "noise":
        spec = DegradationSpec.noise((sigma_255 if sigma_255 else 25) / 255.0)
    else:
        spec = EVAL_SPECS[kind]
    pairs = []
    for i, clean in enumerate(cleans):
        rng = np.random.default_rng((seed, i))
        pairs.append(ImagePair(apply_spec(clean, spec, rng), clean, spec))
    return pairs


def eval_columns(tasks) -> list:
    cols = []
    for task in tasks:
        if task == "noise":
            cols += [("noise", s) for s in NOISE_EVAL_LEVELS]
        else:
            cols.append((task, None))
    return cols


def _evaluate_model(model, encoder, cleans, tasks, seed):
    rng = np.random.default_rng((seed, 991))
    records = []
    for task, sigma in eval_columns(tasks):
        pairs = make_eval_pairs(cleans, task, seed, sigma)
        name = f"{task}" + (f"_s{sigma}" if sigma else "")
        records.append(evaluate(model, encoder, pairs, task, rng, dataset=name))
    return records


def train_model(plan: ExperimentPlan, corpus, encoder, cleans, tasks=None,
                sgi_enabled=True, seed=None, out_dir=None):
    seed = plan.seeds[0] if seed is None else seed
    tasks = plan.tasks if tasks is None else tuple(tasks)
    cfg = TrainConfig(tasks=tasks, seed=seed, **plan.train)
    torch.manual_seed(seed)
    model = RestorationBackbone(preset_config(
        plan.preset, d_text=encoder.config.d_model, sgi_enabled=sgi_enabled))
    model, log = fit(model, encoder, cleans, corpus, cfg, out_dir=out_dir)
    return model, log


def _report_skeleton(plan: ExperimentPlan) -> dict:
    return {
        "name": plan.name,
        "experiment": plan.experiment,
        "config_hash": plan.config_hash(),
        "seeds": list(plan.seeds),
        "plan": asdict(plan),
    }


def _record_cells(records) -> dict:
    return {r.dataset: {"psnr": r.psnr, "ssim": r.ssim, "n": r.n_images} for r in records}


def _average(records) -> dict:
    return {"psnr": float(np.mean([r.psnr for r in records])),
            "ssim": float(np.mean([r.ssim for r in records]))}


# -- experiment grid ----------------------------------------------------------

def run_all_in_one(plan: ExperimentPlan, out_dir=None) -> dict:
    """One model on the union of tasks; per-task columns plus the average."""
    corpus, encoder = prepare_encoder(plan)
    cleans = synthetic_clean_images(plan.n_images, plan.image_size,
                                    np.random.default_rng(plan.corpus_seed + 1))
    model, log = train_model(plan, corpus, encoder, cleans, out_dir=out_dir)
    records = _evaluate_model(model, encoder, cleans, plan.tasks, plan.seeds[0])
    report = _report_skeleton(plan)
    report["columns"] = _record_cells(records)
    report["average"] = _average(records)
    report["final_loss"] = log[-1]["loss"] if log else None
    return _finish(report, out_dir)


def run_single_task(plan: ExperimentPlan, out_dir=None) -> dict:
    """One independently trained model per task."""
    corpus, encoder = prepare_encoder(plan)
    cleans = synthetic_clean_images(plan.n_images, plan.image_size,
                                    np.random.default_rng(plan.corpus_seed + 1))
    report = _report_skeleton(plan)
    report["rows"] = {}
    for task in plan.tasks:
        model, _ = train_model(plan, corpus, encoder, cleans, tasks=(task,))
        records = _evaluate_model(model, encoder, cleans, (task,), plan.seeds[0])
        report["rows"][task] = {"columns": _record_cells(records), "average": _average(records)}
    return _finish(report, out_dir)


def run_combo_ablation(plan: ExperimentPlan, out_dir=None) -> dict:
    """All non-empty task subsets; cells of untrained tasks marked '-'."""
    corpus, encoder = prepare_encoder(plan)
    cleans = synthetic_clean_images(plan.n_images, plan.image_size,
                                    np.random.default_rng(plan.corpus_seed + 1))
    all_cols = [c[0] + (f"_s{c[1]}" if c[1] else "") for c in eval_columns(plan.tasks)]
    report = _report_skeleton(plan)
    report["rows"] = []
    for r in range(1, len(plan.tasks) + 1):
        for subset in itertools.combinations(plan.tasks, r):
            model, _ = train_model(plan, corpus, encoder, cleans, tasks=subset)
            records = _evaluate_model(model, encoder, cleans, subset, plan.seeds[0])
            cells = _record_cells(records)
            row = {"tasks": list(subset),
                   "cells": {c: cells.get(c, "-") for c in all_cols}}
            report["rows"].append(row)
    return _finish(report, out_dir)


def run_sgi_ablation(plan: ExperimentPlan, out_dir=None) -> dict:
    """Identical training with the guidance path on vs off; per-task deltas."""
    corpus, encoder = prepare_encoder(plan)
    cleans = synthetic_clean_images(plan.n_images, plan.image_size,
                                    np.random.default_rng(plan.corpus_seed + 1))
    report = _report_skeleton(plan)
    for label, flag in (("with_sgi", True), ("without_sgi", False)):
        model, _ = train_model(plan, corpus, encoder, cleans, sgi_enabled=flag)
        records = _evaluate_model(model, encoder, cleans, plan.tasks, plan.seeds[0])
        report[label] = {"columns": _record_cells(records), "average": _average(records)}
    report["delta_psnr"] = {
        k: report["with_sgi"]["columns"][k]["psnr"] - report["without_sgi"]["columns"][k]["psnr"]
        for k in report["with_sgi"]["columns"]}
    report["delta_average_psnr"] = (report["with_sgi"]["average"]["psnr"]
                                    - report["without_sgi"]["average"]["psnr"])
    return _finish(report, out_dir)


# -- confirmatory prompt experiments ------------------------------------------

def confirmatory_single(model, encoder, pair: ImagePair, rng) -> dict:
    """One degraded image, all three prompts: who changes the image, how much.

    Rows are ordered by mean absolute change to the input, largest first.
    """
    rows = []
    for category in CATEGORIES:
        ins = sample_instruction(encoder.corpus, category, "train", rng)
        restored = restore_image(model, pair.degraded, encoder.embed(ins.text))
        rows.append({
            "prompt_category": category,
            "prompt": ins.text,
            "l1_to_input": float(np.mean(np.abs(restored - pair.degraded))),
            "psnr_to_clean": psnr(restored, pair.clean),
        })
    rows.sort(key=lambda r: -r["l1_to_input"])
    return {"degradation": pair.spec.kind if pair.spec else None, "rows": rows}


def confirmatory_multi(model, encoder, clean, specs, seeds, rng,
                       with_attention=True) -> dict:
    """Composed degradations; per prompt, PSNR against every partial target.

    target[k] re-runs the composition with spec k removed (same per-spec
    seeds, so the remaining degradations are pixel-identical).
    """
    composed = compose_seeded(clean, specs, seeds)
    kinds = [s.kind for s in specs]
    targets = {}
    for k in range(len(specs)):
        rest = [s for i, s in enumerate(specs) if i != k]
        rest_seeds = [s for i, s in enumerate(seeds) if i != k]
        targets[kinds[k]] = compose_seeded(clean, rest, rest_seeds)
    rows = []
    for k, kind in enumerate(kinds):
        ins = sample_instruction(encoder.corpus, kind, "train", rng)
        restored = restore_image(model, composed, encoder.embed(ins.text))
        row = {
            "prompt_category": kind,
            "prompt": ins.text,
            "psnr_to_targets": {t: psnr(restored, img) for t, img in targets.items()},
            "psnr_to_clean": psnr(restored, clean),
        }
        if with_attention:
            row["attention_maps"] = attention_maps(model, composed, encoder.embed(ins.text))
        rows.append(row)
    return {"kinds": kinds, "composed": composed, "targets": targets, "rows": rows}


def stability_repeat(model, encoder, eval_pairs, n: int = 15, rng=None) -> dict:
    """Repeat evaluation n times with freshly sampled same-category
    paraphrases; report mean and population std of PSNR and SSIM."""
    rng = rng if rng is not None else np.random.default_rng(0)
    from .metrics import ssim as ssim_fn

    per_repeat = []
    for _ in range(n):
        ps, ss = [], []
        for pair in eval_pairs:
            kind = pair.spec.kind
            ins = sample_instruction(encoder.corpus, kind, "train", rng)
            restored = restore_image(model, pair.degraded, encoder.embed(ins.text))
            ps.append(psnr(restored, pair.clean))
            ss.append(ssim_fn(restored, pair.clean))
        per_repeat.append({"psnr": float(np.mean(ps)), "ssim": float(np.mean(ss))})
    psnrs = [r["psnr"] for r in per_repeat]
    ssims = [r["ssim"] for r in per_repeat]
    return {
        "n": n,
        "repeats": per_repeat,
        "psnr_mean": float(np.mean(psnrs)), "psnr_std": float(np.std(psnrs)),
        "ssim_mean": float(np.mean(ssims)), "ssim_std": float(np.std(ssims)),
    }


# -- report output ------------------------------------------------------------

EXPERIMENTS = {
    "all_in_one": run_all_in_one,
    "single_task": run_single_task,
    "combo_ablation": run_combo_ablation,
    "sgi_ablation": run_sgi_ablation,
}


def run_plan(plan: ExperimentPlan, out_dir=None) -> dict:
    if plan.experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {plan.experiment!r}; choose from {sorted(EXPERIMENTS)}")
    return EXPERIMENTS[plan.experiment](plan, out_dir)


def _finish(report: dict, out_dir) -> dict:
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2, default=_json_default))
        (out / "report.txt").write_text(render_report(report))
    return report


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _fmt(cell) -> str:
    if cell == "-" or cell is None:
        return "-"
    p = cell["psnr"]
    ptxt = "inf" if math.isinf(p) else f"{p:.2f}"
    return f"{ptxt}/{cell['ssim']:.3f}"


def render_report(report: dict) -> str:
    lines = [f"# {report.get('name', 'report')} [{report.get('experiment', '?')}]",
             f"config_hash={report.get('config_hash')} seeds={report.get('seeds')}"]
    if "columns" in report:
        cols = list(report["columns"])
        lines.append("  ".join(["cell".ljust(12)] + [c.ljust(12) for c in cols] + ["average"]))
        lines.append("  ".join(["psnr/ssim".ljust(12)]
                               + [_fmt(report["columns"][c]).ljust(12) for c in cols]
                               + [_fmt(report["average"])]))
    if "rows" in report and isinstance(report["rows"], dict):
        for task, row in report["rows"].items():
            cols = list(row["columns"])
            lines.append(f"[{task}] " + "  ".join(
                f"{c}={_fmt(row['columns'][c])}" for c in cols) + f"  avg={_fmt(row['average'])}")
    if "rows" in report and isinstance(report["rows"], list):
        for row in report["rows"]:
            lines.append("+".join(row["tasks"]).ljust(20) + "  ".join(
                f"{c}={_fmt(v)}" for c, v in row["cells"].items()))
    if "delta_average_psnr" in report:
        lines.append(f"with_sgi avg: {_fmt(report['with_sgi']['average'])}")
        lines.append(f"without_sgi avg: {_fmt(report['without_sgi']['average'])}")
        lines.append(f"delta avg psnr: {report['delta_average_psnr']:+.3f} dB")
    return "\n".join(lines) + "\n"
