"""
Optimizing an external black-box model
--------------------------------------

Any program that reads input rows as CSV on stdin and prints one CSV row of
responses per input can be optimized through the command line.  Here the
"model" is a small Python script; the budget is kept tiny so the demo runs
in a few seconds.
"""

# %%
import json
import subprocess
import sys
import tempfile
from pathlib import Path

work = Path(tempfile.mkdtemp())

model = work / "beam.py"
model.write_text(
    "import sys\n"
    "for line in sys.stdin:\n"
    "    if not line.strip():\n"
    "        continue\n"
    "    w, h, load = map(float, line.split(','))\n"
    "    area = w * h\n"
    "    stress = 6 * load / (w * h * h)\n"
    "    print(f'{area},{stress},{1.0 - stress / 40.0}')\n"
)

# %%
# Width and height are design means with manufacturing scatter, the load is
# a lognormal noise variable.  Objectives: mean area and mean stress, with
# the third response as limit state.
config = {
    "external": {
        "name": "beam",
        "command": [sys.executable, str(model)],
        "inputs": [
            {"family": "normal", "mean": 1.0, "std": 0.02, "design": True},
            {"family": "normal", "mean": 2.0, "std": 0.02, "design": True},
            {"family": "lognormal", "mean": 10.0, "std": 1.0},
        ],
        "objectives": [{"kind": "mean", "response": 0}, {"kind": "mean", "response": 1}],
        "limit_states": [2],
        "n_responses": 3,
        "design_lower": [0.5, 0.5],
        "design_upper": [2.0, 3.0],
        "target_pf": 0.01,
        "reference_point": [6.0, 40.0],
    },
    "budget": {"m0": 16, "m_s": 4, "steps": 2},
    "reliability": {"method": "ds", "directions": 32, "brackets": 10},
    "moo": {"population": 20, "generations": 10},
    "training": {"gp_restarts": 2, "cv_restarts": 1},
    "moment_samples": 50,
    "seeds": [0],
}
cfg = work / "beam.json"
cfg.write_text(json.dumps(config, indent=1))

# %%
run = [sys.executable, "-m", "lolhr.cli"]
subprocess.run(run + ["validate", "--config", str(cfg)], check=True)
subprocess.run(run + ["run", "--config", str(cfg), "--out", str(work / "runs")], check=True)
subprocess.run(run + ["report", str(work / "runs")], check=True)

# %%
print((work / "runs" / "beam" / "seed0" / "validated_front.csv").read_text()[:300])
