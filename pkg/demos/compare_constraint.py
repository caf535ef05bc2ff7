"""Train the plain and the distance-constrained model side by side.

Usage: python3 demos/compare_constraint.py [--bilingual] [--seeds 0 1] [--epochs 5]

Prints held-out paired distance, translation retrieval and the zero-shot
accuracy matrix for each model.  One seed of the 4-language setting takes
about two minutes on a laptop core; the bilingual setting is quicker.
"""

import argparse
import tempfile

from tlaser.recipes import compare, summarize
from tlaser.synth import SynthSpec

ap = argparse.ArgumentParser()
ap.add_argument("--bilingual", action="store_true")
ap.add_argument("--seeds", type=int, nargs="+", default=[0])
ap.add_argument("--epochs", type=int, default=5)
args = ap.parse_args()

spec = SynthSpec(n_languages=2) if args.bilingual else SynthSpec()
with tempfile.TemporaryDirectory() as tmp:
    runs = compare(spec, args.seeds, tmp, n_epochs=args.epochs, bilingual=args.bilingual)

for label, rs in runs.items():
    for r in rs:
        print(f"\n{label} seed {r.seed}: d_p {r.d_p:.3f}  retrieval {r.retrieval:.3f}  "
              f"({r.seconds:.0f}s, epoch losses {', '.join(f'{x:.3f}' for x in r.epoch_losses)})")
        print(r.matrix.to_tsv(), end="")

print("\nmean over seeds")
for label, s in summarize(runs).items():
    print(f"  {label:3s} d_p {s['d_p']:.3f}  retrieval {s['retrieval']:.3f}  cross {s['cross']:.4f}  same {s['same']:.4f}")
