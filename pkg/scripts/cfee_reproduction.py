"""Run both model families on real CFEE OpenFace features over several seeds.

The CFEE features are not redistributable; point this script at your own
OpenFace 2.x CSV export and a manifest mapping files or stems to labels.

    python3 scripts/cfee_reproduction.py --data cfee.csv --manifest manifest.csv --seeds 10

Each family's aggregated report (metrics.json, summary.txt, confusion.csv,
confusion.pgm) lands in OUT/<family>/.
"""
import argparse
import json
from pathlib import Path

from emocil.cli import main as emocil

# Published end points of the ACC curve, first task and after all six.
REFERENCE = {"bgmm": (0.92, 0.75), "gmm": (0.82, 0.57)}
TOLERANCE = 0.05


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True)
    ap.add_argument("--manifest")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--covariance-kind", default="full")
    ap.add_argument("--out", default="cfee_out")
    args = ap.parse_args()

    for family, (first, last) in REFERENCE.items():
        out = Path(args.out) / family
        argv = ["eval", "--data", args.data, "--schedule", "builtin:cfee6", "--family", family,
                "--covariance-kind", args.covariance_kind, "--seeds", str(args.seeds), "--out", str(out)]
        if args.manifest:
            argv += ["--manifest", args.manifest]
        if emocil(argv) != 0:
            raise SystemExit(2)
        curve = json.loads((out / "metrics.json").read_text())["acc_curve"]
        ok = abs(curve[0] - first) <= TOLERANCE and abs(curve[-1] - last) <= TOLERANCE
        verdict = "reproduced" if ok else "deviation"
        print(f"{family}: ACC(1)={curve[0]:.3f} (ref {first}), ACC(6)={curve[-1]:.3f} (ref {last}) -> {verdict}")


if __name__ == "__main__":
    main()
