"""Command-line entry points.

    promptrestore corpus generate --seed 7 --per-category 50 --out corpus.tsv
    promptrestore textenc finetune --corpus corpus.tsv --steps 2000 --out enc.ckpt
    promptrestore textenc embed --ckpt enc.ckpt --text "remove the rain"
    promptrestore degrade synth --kind rain --in a.png --out b.png --seed 1
    promptrestore train --preset tiny --tasks noise,rain,haze --steps 5000 \
        --seed 0 --textenc enc.ckpt --out runs/toy
    promptrestore restore --ckpt-backbone runs/toy/final.ckpt --ckpt-textenc enc.ckpt \
        --in degraded.png --out restored.png --prompt "remove the noise"
    promptrestore harness run --plan plan.json --out runs/exp
    promptrestore serve --ckpt-backbone runs/toy/final.ckpt --ckpt-textenc enc.ckpt \
        --addr 127.0.0.1:8000
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="promptrestore")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corpus", help="instruction corpus tools")
    csub = p.add_subparsers(dest="subcommand", required=True)
    g = csub.add_parser("generate", help="generate the paraphrase corpus")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--per-category", type=int, default=50)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_corpus_generate)

    p = sub.add_parser("textenc", help="text encoder tools")
    tsub = p.add_subparsers(dest="subcommand", required=True)
    f = tsub.add_parser("finetune", help="fine-tune the encoder on a corpus")
    f.add_argument("--corpus", required=True)
    f.add_argument("--steps", type=int, required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--d-model", type=int, default=64)
    f.add_argument("--layers", type=int, default=4)
    f.add_argument("--heads", type=int, default=4)
    f.add_argument("--batch", type=int, default=16)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_textenc_finetune)
    e = tsub.add_parser("embed", help="print the guidance vector for a sentence")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--text", required=True)
    e.set_defaults(func=cmd_textenc_embed)

    p = sub.add_parser("degrade", help="synthetic degradation tools")
    dsub = p.add_subparsers(dest="subcommand", required=True)
    d = dsub.add_parser("synth", help="degrade one image file")
    d.add_argument("--kind", choices=("noise", "rain", "haze"), required=True)
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--sigma", type=float, default=25.0, help="noise sigma on the 0-255 scale")
    d.add_argument("--density", type=float, default=2500.0)
    d.add_argument("--angle", type=float, default=15.0)
    d.add_argument("--length", type=int, default=11)
    d.add_argument("--intensity", type=float, default=0.6)
    d.add_argument("--beta", type=float, default=1.2)
    d.add_argument("--airlight", type=float, default=0.9)
    d.set_defaults(func=cmd_degrade_synth)

    t = sub.add_parser("train", help="train the restoration backbone")
    t.add_argument("--preset", choices=("tiny", "paper"), default="tiny")
    t.add_argument("--tasks", default="noise,rain,haze")
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--textenc", required=True, help="fine-tuned text encoder checkpoint")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--patch", type=int, default=None)
    t.add_argument("--images", type=int, default=8, help="synthetic clean images")
    t.add_argument("--image-size", type=int, default=96)
    t.add_argument("--data", default=None, help="directory of clean images (overrides --images)")
    t.add_argument("--ckpt-every", type=int, default=0)
    t.add_argument("--resume", default=None)
    t.add_argument("--no-sgi", action="store_true")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("restore", help="restore one image file with a prompt")
    r.add_argument("--ckpt-backbone", required=True)
    r.add_argument("--ckpt-textenc", required=True)
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--prompt", required=True)
    r.set_defaults(func=cmd_restore)

    h = sub.add_parser("harness", help="experiment grid")
    hsub = h.add_subparsers(dest="subcommand", required=True)
    hr = hsub.add_parser("run", help="run a plan file")
    hr.add_argument("--plan", required=True)
    hr.add_argument("--out", default=None)
    hr.set_defaults(func=cmd_harness_run)

    s = sub.add_parser("serve", help="HTTP inference service")
    s.add_argument("--ckpt-backbone", required=True)
    s.add_argument("--ckpt-textenc", required=True)
    s.add_argument("--addr", default="127.0.0.1:8000")
    s.add_argument("--max-pixels", type=int, default=None)
    s.add_argument("--static", default=None, help="serve a built web client from this directory")
    s.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


def cmd_corpus_generate(args) -> int:
    from .corpus import generate_corpus

    corpus = generate_corpus(args.seed, args.per_category)
    corpus.save(args.out)
    print(f"wrote {len(corpus.instructions)} instructions to {args.out} "
          f"({corpus.vocab_size} vocab tokens)")
    return 0


def cmd_textenc_finetune(args) -> int:
    from .corpus import InstructionCorpus
    from .textenc import TextEncoderConfig, finetune, save_textenc

    corpus = InstructionCorpus.load(args.corpus)
    cfg = TextEncoderConfig(vocab_size=corpus.vocab_size, d_model=args.d_model,
                            n_layers=args.layers, n_heads=args.heads)
    encoder, log = finetune(corpus, cfg, args.steps, np.random.default_rng(args.seed),
                            batch_size=args.batch)
    save_textenc(args.out, encoder, step=args.steps)
    print(f"final loss {log[-1]['loss']:.4f} (mlm {log[-1]['mlm']:.4f} "
          f"nsp {log[-1]['nsp']:.4f}); saved to {args.out}")
    return 0


def cmd_textenc_embed(args) -> int:
    from .textenc import load_textenc

    encoder = load_textenc(args.ckpt)
    z = encoder.embed(args.text)
    print(json.dumps({"text": args.text, "z": [float(v) for v in z]}))
    return 0


def cmd_degrade_synth(args) -> int:
    from .degrade import DegradationSpec, apply_spec
    from .imgio import imread, imwrite

    if args.kind == "noise":
        spec = DegradationSpec.noise(args.sigma / 255.0)
    elif args.kind == "rain":
        spec = DegradationSpec.rain_spec(density=args.density, angle=args.angle,
                                         length=args.length, intensity=args.intensity)
    else:
        spec = DegradationSpec.haze_spec(beta=args.beta, airlight=args.airlight)
    img = imread(args.inp)
    imwrite(args.out, apply_spec(img, spec, np.random.default_rng(args.seed)))
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    import torch

    from .backbone import RestorationBackbone, preset_config
    from .degrade import synthetic_clean_images
    from .imgio import imread
    from .textenc import load_textenc
    from .train import TrainConfig, fit

    encoder = load_textenc(args.textenc)
    overrides = {}
    if args.batch is not None:
        overrides["batch_size"] = args.batch
    if args.patch is not None:
        overrides["patch"] = args.patch
    elif args.preset == "tiny":
        overrides["patch"] = 64
        overrides.setdefault("batch_size", args.batch or 2)
    cfg = TrainConfig(steps=args.steps, seed=args.seed, ckpt_every=args.ckpt_every,
                      tasks=tuple(args.tasks.split(",")), **overrides)
    if args.data:
        cleans = [imread(p) for p in sorted(Path(args.data).iterdir())]
    else:
        cleans = synthetic_clean_images(args.images, args.image_size,
                                        np.random.default_rng(args.seed + 1))
    torch.manual_seed(args.seed)
    model = RestorationBackbone(preset_config(
        args.preset, d_text=encoder.config.d_model, sgi_enabled=not args.no_sgi))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, log = fit(model, encoder, cleans, encoder.corpus, cfg,
                 out_dir=str(out), resume=args.resume)
    print(f"trained {args.steps} steps; final loss {log[-1]['loss']:.5f}; "
          f"checkpoint at {out / 'final.ckpt'}")
    return 0


def cmd_restore(args) -> int:
    from .backbone import restore_image
    from .imgio import imread, imwrite
    from .textenc import load_textenc
    from .train import load_backbone

    model, _, _ = load_backbone(args.ckpt_backbone)
    encoder = load_textenc(args.ckpt_textenc)
    restored = restore_image(model, imread(args.inp), encoder.embed(args.prompt))
    imwrite(args.out, restored)
    print(f"wrote {args.out}")
    return 0


def cmd_harness_run(args) -> int:
    from .harness import ExperimentPlan, render_report, run_plan

    plan = ExperimentPlan.load(args.plan)
    report = run_plan(plan, out_dir=args.out)
    sys.stdout.write(render_report(report))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import DEFAULT_MAX_PIXELS, ModelBundle, create_app

    bundle = ModelBundle(args.ckpt_backbone, args.ckpt_textenc,
                         max_pixels=args.max_pixels or DEFAULT_MAX_PIXELS)
    app = create_app(bundle)
    if args.static:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=args.static, html=True), name="static")
    host, _, port = args.addr.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
