from .base_agent import BaseAgent
from typing import Dict, Any
from dataclasses import fields
from pathlib import Path

import config
from core.synthbench import CategorySpec, write_dataset
from errors import InputError
from pipeline import stage


class SynthAgent(BaseAgent):
    """
    Writes a procedural category dataset (meshes, sample sets, ground-truth
    affordances, part labels, manifest).
    """

    def __init__(self):
        super().__init__("SynthAgent")

    def execute(self, task: Dict[str, Any]) -> Dict[str, Any]:
        action = task.get("action")
        params = task.get("params", {})

        if action == "synth":
            return self._synth(params)
        else:
            return self.unknown_action(action)

    def _synth(self, params: Dict[str, Any]) -> Dict[str, Any]:
        try:
            with stage("load"):
                known = {f.name for f in fields(CategorySpec)}
                spec_params = dict(params.get("spec") or {})
                unknown = sorted(set(spec_params) - known)
                if unknown:
                    raise InputError(f"unknown category spec key(s): {', '.join(unknown)}")
                spec = CategorySpec(**spec_params)
            out = Path(params.get("out_dir") or Path(config.OUTPUT_DIR) / f"synth_{spec.base}")
            with stage("report"):
                manifest = write_dataset(spec, out)
        except Exception as e:
            return self.error_result(e)
        self.logger.info("wrote %d '%s' objects to %s", spec.n_objects, spec.base, out)
        return {"status": "success", "manifest": str(manifest), "out_dir": str(out),
                "n_objects": spec.n_objects, "base": spec.base}
