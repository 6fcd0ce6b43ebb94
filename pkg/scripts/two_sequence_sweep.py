"""Two-sequence MLE across the branch at a fixed photon budget per phase."""

import argparse
from pathlib import Path

from qmicroscopy import fileio
from qmicroscopy.checks import TWIN_FOCK, AcceptanceRun, AcceptanceSettings, two_sequence_sweep
from qmicroscopy.microscopy import shots_for_budget


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/two_sequence")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--points", type=int, default=19)
    ap.add_argument("--budget", type=int, default=1200, help="photons per phase")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = AcceptanceRun(AcceptanceSettings(seed=args.seed))
    rows = []
    for st in TWIN_FOCK:
        shots = shots_for_budget(st.photons, args.budget)
        for r in two_sequence_sweep(run.curves[st.photons], shots, args.points, args.reps, run.root.child(11, st.photons)):
            rows.append((st.label, r["phi"], r["mean"], r["se"], r["sqrtN_sigma"], r["sqrtN_bound"]))
    fileio.write_csv(out / "two_sequence.csv", ["state", "phi", "mean", "se", "sqrtN_sigma", "sqrtN_bound"], rows)
    print(f"wrote {len(rows)} rows to {out}")


if __name__ == "__main__":
    main()
