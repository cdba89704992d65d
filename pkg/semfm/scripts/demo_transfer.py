"""Demo script: build a small handle-tool category and transfer obj_0's affordance to obj_1."""
import json
import sys
import tempfile
from pathlib import Path

# Ensure we can import package modules
sys.path.append(str(Path(__file__).resolve().parents[1]))

from main import get_all_agents
from utils.log import configure_logging


def run_demo(out_dir: Path):
    agents = get_all_agents()
    data_dir = out_dir / "data"
    synth = agents["SynthAgent"].execute({
        "action": "synth",
        "params": {"spec": {"base": "handle-tool", "n_objects": 2, "rings": 32, "segments": 16, "seed": 7},
                   "out_dir": str(data_dir)},
    })
    if synth["status"] != "success":
        print(json.dumps(synth, indent=2))
        return

    params = {
        "source_mesh": str(data_dir / "obj_0.off"),
        "source_samples": str(data_dir / "obj_0_samples.json"),
        "source_affordance": str(data_dir / "obj_0_affordance.json"),
        "target_mesh": str(data_dir / "obj_1.off"),
        "target_samples": str(data_dir / "obj_1_samples.json"),
        "target_affordance": str(data_dir / "obj_1_affordance.json"),
        "cache_dir": str(out_dir / "cache"),
        "seed": 7,
    }
    for method in ("semfm", "fm-wks"):
        cfg = {**params, "method": method, "output_dir": str(out_dir / f"transfer_{method}")}
        result = agents["TransferAgent"].execute({"action": "transfer", "params": {"config": cfg}})
        print(json.dumps(result.get("report", result), indent=2))


if __name__ == '__main__':
    configure_logging()
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="semfm_demo_"))
    run_demo(target)
