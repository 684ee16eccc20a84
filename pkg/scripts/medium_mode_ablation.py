"""Compare the four medium modes on a medium that changes along the camera path.

    python3 scripts/medium_mode_ablation.py --workdir runs/modes [--steps 1000]
"""

import argparse

from mediasplat.experiments import medium_mode_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="runs/modes")
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--resolution", type=int, default=32)
    args = ap.parse_args()
    scores = medium_mode_ablation(args.workdir, args.seed, args.resolution, config={"steps": args.steps})
    for mode, v in scores.items():
        print(f"{mode:>14}: test PSNR {v:.3f} dB")


if __name__ == "__main__":
    main()
