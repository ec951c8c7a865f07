"""The full pipeline on the shipped fixtures, no network required.

Runs generation, atomization, confidence scoring, ladder generation, the
threshold sweep with reconstruction, then evaluation and calibration, all
against recorded model replies. The same flow is available from the shell:

    absgate run      --config fixtures/config.json --run-dir demo_run --offline
    absgate evaluate --config fixtures/config.json --run-dir demo_run --offline
    absgate calibrate --config fixtures/config.json --run-dir demo_run \
        --alpha 0.2 --delta 0.1 --offline
"""

import json
import shutil
from pathlib import Path

from absgate.runner import cmd_calibrate, cmd_evaluate, cmd_run, load_config

ROOT = Path(__file__).parent.parent
RUN_DIR = Path(__file__).with_name("demo_run")

if RUN_DIR.exists():
    shutil.rmtree(RUN_DIR)

config = load_config(ROOT / "fixtures" / "config.json")
cmd_run(config, RUN_DIR, offline=True)
print(f"pipeline artifacts in {RUN_DIR}:")
for path in sorted(RUN_DIR.iterdir()):
    print(f"  {path.name}")

summary = cmd_evaluate(RUN_DIR, config, offline=True)
print("\nevaluation:")
print(f"  AURC abstraction sweep : {summary['aurc']['atom_sa']:.4f}")
print(f"  AURC deletion baseline : {summary['aurc']['redaction']:.4f}")
print(
    "  improvement            : "
    f"{summary['improvement_vs_redaction_pct']['atom_sa']:.2f}%"
)
print(f"  AUROC (verbal scores)  : {summary['auroc']['verbal']:.4f}")
for kind, point in summary["baseline_points"].items():
    gap = summary["matched_coverage_gap_pct"][kind]
    gap_text = "outside curve span" if gap is None else f"{gap:+.2f} points"
    print(
        f"  {kind:<22} : coverage {point['coverage']:.3f}, risk {point['risk']:.3f}, "
        f"gap {gap_text}"
    )

calibration = cmd_calibrate(RUN_DIR, config, alpha=0.2, delta=0.1, offline=True)
print("\ncalibration at target risk 0.2:")
print(f"  n = {calibration['n']} atoms")
print(f"  selected threshold = {calibration['theta_hat']}")
print(f"  epsilon = {calibration['epsilon']:.4f}")

reconstructed = sorted(RUN_DIR.glob("reconstructed.*.jsonl"))
print("\none prompt across thresholds:")
for path in (reconstructed[0], reconstructed[len(reconstructed) // 2], reconstructed[-1]):
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    row = rows[0]
    text = row["text"] or "(fully abstained)"
    print(f"  theta {row['theta']:>5}: {text[:110]}")
