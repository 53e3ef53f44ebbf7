"""Train MAMBPO and MASAC briefly on navigation and compare them.

Uses shrunken networks and warm-up so both finish in a few minutes on one
core; the numbers show the mechanics, not the asymptotic behaviour. Run
directories, an evaluation summary and a learning-curve plot are written
under ``demo_runs/``.
"""
from pathlib import Path

from mambpo.cli import main

out = Path("demo_runs")
small = ["train.warmup=250", "model.hidden=[64, 64]", "model.ensemble_size=4", "model.gradient_steps=100",
         "masac.actor_hidden=[64, 64]", "masac.critic_hidden=[64, 64]", "episodes=40", "train.checkpoint_every=20"]
args = [item for kv in small for item in ("--set", kv)]

for algo, g in (("mambpo", 5), ("masac", 1)):
    main(["train", "--out", str(out / algo), "--seed", "0", "--set", f"algorithm={algo}", "--set", f"G={g}", *args])

runs = {algo: next((out / algo).iterdir()) for algo in ("mambpo", "masac")}
for algo, run in runs.items():
    main(["eval", str(run), "--episodes", "50", "--out", str(out / f"eval_{algo}")])
    print(algo, (out / f"eval_{algo}" / "summary.json").read_text())
main(["plot", *(f"{a}={r}" for a, r in runs.items()), "--window", "10", "--out", str(out / "curves")])
