"""Command-line entry points: simulate, train, render, restore, complement, evaluate."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import typing
from pathlib import Path

import numpy as np

from . import io
from .errors import MediaSplatError, MissingReference
from .medium import MODES
from .objective import LossWeights, exposure_align, psnr, ssim
from .render import RenderOptions, render
from .trainer import TrainConfig, format_log, run_pdgc, train


def _none_or(kind):
    def parse(text):
        return None if text.lower() == "none" else kind(text)
    parse.__name__ = kind.__name__
    return parse


def _add_dataclass_flags(parser, cls, skip=()):
    """One ``--flag-name`` per dataclass field, defaulting to the dataclass default."""
    hints = typing.get_type_hints(cls)
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        hint = hints[f.name]
        optional = typing.get_origin(hint) is typing.Union
        base = next(a for a in typing.get_args(hint) if a is not type(None)) if optional else hint
        if base is bool:
            parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name,
                                action=argparse.BooleanOptionalAction, default=None)
            continue
        kind = _none_or(base) if optional else base
        kw = {"choices": MODES} if f.name == "medium_mode" else {}
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None,
                            metavar=base.__name__.upper(), **kw)


def _collect(args, cls, skip=()):
    out = {}
    for f in dataclasses.fields(cls):
        if f.name not in skip and getattr(args, f.name, None) is not None:
            out[f.name] = getattr(args, f.name)
    return out


def _train_config(args) -> TrainConfig:
    loss = LossWeights(**_collect(args, LossWeights))
    return TrainConfig(loss=loss, **_collect(args, TrainConfig, skip=("loss",)))


def _views(dataset, split):
    return dataset.views if split == "all" else dataset.split(split)


# subcommands ---------------------------------------------------------------------------

def cmd_simulate(args):
    from .sim import make_dataset, preset

    end = preset(args.end_medium, args.end_level or args.level) if args.end_medium else None
    man = make_dataset(args.out, seed=args.seed, medium=preset(args.medium, args.level),
                       n_views=args.views, resolution=args.resolution, end_medium=end,
                       point_fraction=args.point_fraction, omit_near=args.omit_near)
    print(f"wrote {len(man.views)} views to {args.out}")


def cmd_train(args):
    ds = io.load_dataset(args.data, disparity=args.disparity)
    config = _train_config(args)
    log_lines = []

    def callback(rec):
        if args.log:
            log_lines.append(rec)
        if not args.quiet and (rec["step"] % max(1, config.steps // 20) == 0 or rec["step"] == config.steps):
            print(f"step {rec['step']:6d}  loss {rec['loss']:.5f}  psnr {rec['psnr']:.2f}  "
                  f"n {rec['primitives']}", flush=True)

    res = train(ds, config, callback)
    io.save_checkpoint(args.out, res.checkpoint)
    if args.log:
        Path(args.log).write_text(format_log(log_lines))
    if res.pdgc_report:
        inserted = sum(r["inserted"] for r in res.pdgc_report)
        print(f"pdgc inserted {inserted} primitives")
    print(f"saved checkpoint to {args.out}")


def _render_views(args, restored_only: bool):
    ck = io.load_checkpoint(args.checkpoint)
    ds = io.load_dataset(args.data)
    opts = RenderOptions(workers=args.workers)
    out_dir = Path(args.out)
    for v in _views(ds, args.split):
        out = render(ck.scene, ck.medium, v.camera, opts)
        if restored_only:
            img = out.restored
            if args.align:
                if v.clean is None:
                    raise MissingReference(f"view {v.id} has no clean image for exposure alignment")
                img = exposure_align(img, v.clean)
            io.write_image(out_dir / f"{v.id}_restored", img)
        else:
            io.write_image(out_dir / f"{v.id}_render", out.color)
            if args.maps:
                io.write_pfm(out_dir / f"{v.id}_depth.pfm", out.depth)
                io.write_pfm(out_dir / f"{v.id}_transmittance.pfm", out.transmittance)
    print(f"wrote {args.split} views to {out_dir}")


def cmd_render(args):
    _render_views(args, restored_only=False)


def cmd_restore(args):
    _render_views(args, restored_only=True)


def cmd_complement(args):
    ck = io.load_checkpoint(args.checkpoint)
    ds = io.load_dataset(args.data, disparity=args.disparity)
    config = TrainConfig.from_dict(ck.config)
    for name in ("tau_w", "tau_near", "pdgc_stride", "pdgc_cap"):
        if getattr(args, name) is not None:
            setattr(config, name, getattr(args, name))
    n0 = len(ck.scene)
    scene, report = run_pdgc(ck.scene, ck.medium, ds.split("train"), config,
                             RenderOptions(workers=args.workers))
    summary = {"before": n0, "after": len(scene), "inserted": len(scene) - n0, "views": report}
    text = json.dumps(summary, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.save:
        ck.scene = scene
        io.save_checkpoint(args.save, ck)


def _pairs(args):
    pred = Path(args.pred)
    if args.ref:
        ref = Path(args.ref)
        names = sorted(p.name for p in pred.glob(f"*{args.suffix}.pfm"))
        if not names:
            raise MissingReference(f"no *{args.suffix}.pfm files in {pred}")
        for n in names:
            if not (ref / n).exists():
                raise MissingReference(f"{ref / n} missing")
            yield n[: -len(f"{args.suffix}.pfm")], io.read_pfm(pred / n), io.read_pfm(ref / n)
        return
    ds = io.load_dataset(args.data)
    for v in _views(ds, args.split):
        target = v.clean if args.against == "clean" else v.image
        if target is None:
            raise MissingReference(f"view {v.id} has no {args.against} image")
        yield v.id, io.read_pfm(pred / f"{v.id}{args.suffix}.pfm"), target


def cmd_evaluate(args):
    rows = []
    for vid, a, b in _pairs(args):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        rows.append({"view": vid, "psnr": psnr(a, b), "ssim": ssim(a, b)})
    if not rows:
        raise MissingReference("nothing to evaluate")
    mean = {"view": "mean", "psnr": float(np.mean([r["psnr"] for r in rows])),
            "ssim": float(np.mean([r["ssim"] for r in rows]))}
    print(f"{'view':>8}  {'psnr':>8}  {'ssim':>7}")
    for r in rows + [mean]:
        print(f"{r['view']:>8}  {r['psnr']:8.3f}  {r['ssim']:7.4f}")
    if args.json:
        Path(args.json).write_text(json.dumps({"views": rows, "mean": mean}, indent=1) + "\n")


# parser -----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mediasplat", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic degraded dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--medium", default="water", choices=("water", "fog", "clear"))
    s.add_argument("--level", default="medium", choices=("easy", "medium", "hard"))
    s.add_argument("--end-medium", choices=("water", "fog", "clear"),
                   help="blend toward this preset along the camera path")
    s.add_argument("--end-level", choices=("easy", "medium", "hard"))
    s.add_argument("--views", type=int, default=16)
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--point-fraction", type=float, default=0.6)
    s.add_argument("--omit-near", action="store_true", help="drop near-field points from the init cloud")
    s.set_defaults(fn=cmd_simulate)

    t = sub.add_parser("train", help="optimize scene and medium, write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="line-delimited JSON loss log")
    t.add_argument("--disparity", action="store_true", help="pseudo-depth files hold disparity")
    t.add_argument("--quiet", action="store_true")
    _add_dataclass_flags(t, TrainConfig, skip=("loss",))
    _add_dataclass_flags(t, LossWeights)
    t.set_defaults(fn=cmd_train)

    for name, fn, helptext in (("render", cmd_render, "render medium-aware images"),
                               ("restore", cmd_restore, "render medium-free images")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--checkpoint", required=True)
        r.add_argument("--data", required=True)
        r.add_argument("--out", required=True)
        r.add_argument("--split", default="test", choices=("train", "test", "all"))
        r.add_argument("--workers", type=int, default=1)
        if name == "render":
            r.add_argument("--maps", action="store_true", help="also write depth and transmittance")
        else:
            r.add_argument("--align", action="store_true", help="exposure-align to the clean image")
        r.set_defaults(fn=fn)

    c = sub.add_parser("complement", help="one PDGC pass; prints a per-view report")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--out", help="report path (default stdout)")
    c.add_argument("--save", help="write the complemented checkpoint here")
    c.add_argument("--disparity", action="store_true")
    c.add_argument("--tau-w", dest="tau_w", type=float)
    c.add_argument("--tau-near", dest="tau_near", type=float)
    c.add_argument("--stride", dest="pdgc_stride", type=int)
    c.add_argument("--cap", dest="pdgc_cap", type=int)
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(fn=cmd_complement)

    e = sub.add_parser("evaluate", help="PSNR/SSIM table against references")
    e.add_argument("--pred", required=True, help="directory of predicted float sidecars")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset directory supplying references")
    src.add_argument("--ref", help="directory of reference sidecars with matching names")
    e.add_argument("--suffix", default="_restored", help="file suffix before .pfm")
    e.add_argument("--against", default="clean", choices=("clean", "degraded"))
    e.add_argument("--split", default="test", choices=("train", "test", "all"))
    e.add_argument("--json", help="also write the table as JSON")
    e.set_defaults(fn=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (MediaSplatError, ValueError, KeyError) as e:
        msg = str(e).replace("\n", " ")
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
