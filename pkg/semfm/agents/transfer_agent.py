from .base_agent import BaseAgent
from typing import Dict, Any, List
import json
from pathlib import Path

import numpy as np

import config
from core.fmap import save_json
from core.mesh import export_colored_mesh
from core.transfer import save_region
from errors import InputError
from pipeline import anchor_labels, load_shape, prepare_shape, run_pair, select_pair_anchors, stage
from schemas import RunConfig, SCHEMA_VERSION


class TransferAgent(BaseAgent):
    """
    Single-pair runner:
    - transfer: full pipeline from a source affordance region to the target mesh,
      writing the report, the maps and colored PLYs
    - anchors: similarity matrix and selected anchor pairs only
    """

    def __init__(self):
        super().__init__("TransferAgent")

    def execute(self, task: Dict[str, Any]) -> Dict[str, Any]:
        action = task.get("action")
        params = task.get("params", {})

        if action == "transfer":
            return self._transfer(params)
        elif action == "anchors":
            return self._anchors(params)
        else:
            return self.unknown_action(action)

    def _output_dir(self, cfg: RunConfig) -> Path:
        out = Path(cfg.output_dir or config.OUTPUT_DIR)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise InputError(f"Cannot create output directory {out}: {e}") from e
        return out

    def _load_pair(self, cfg: RunConfig, with_regions: bool):
        src = load_shape(None, cfg.source_mesh, cfg.source_samples,
                         cfg.source_affordance if with_regions else None)
        tgt = load_shape(None, cfg.target_mesh, cfg.target_samples,
                         cfg.target_affordance if with_regions else None)
        if src.name == tgt.name:
            tgt.name = f"{tgt.name}_target"
            if tgt.region is not None:
                tgt.region = type(tgt.region)(tgt.name, tgt.region.indices)
        return src, tgt

    def _transfer(self, params: Dict[str, Any]) -> Dict[str, Any]:
        try:
            cfg = self.run_config(params)
            src, tgt = self._load_pair(cfg, with_regions=True)
            prepare_shape(src, cfg)
            prepare_shape(tgt, cfg)
            result = run_pair(src, tgt, cfg)

            with stage("report"):
                out = self._output_dir(cfg)
                files: List[str] = []
                report_path = out / "report.json"
                report_path.write_text(json.dumps({"schema_version": SCHEMA_VERSION, **result.report.model_dump()},
                                                  indent=2), encoding="utf-8")
                files.append(str(report_path))
                files.append(str(save_json(result.fmap, out / "fmap.json")))
                files.append(str(save_json(result.pointwise, out / "pointwise.json")))
                files.append(str(save_region(result.predicted, out / "predicted_affordance.json")))
                if result.anchors is not None:
                    for side, shape, name in ((1, src, "source_anchors.ply"), (2, tgt, "target_anchors.ply")):
                        labels = anchor_labels(shape.assignment, result.anchors, side)
                        export_colored_mesh(shape.mesh, labels, out / name)
                        files.append(str(out / name))
                export_colored_mesh(src.mesh, src.region.indicator(src.mesh.n_vertices) > 0,
                                    out / "source_affordance.ply")
                export_colored_mesh(tgt.mesh, result.predicted.indicator(tgt.mesh.n_vertices) > 0,
                                    out / "target_affordance.ply")
                files += [str(out / "source_affordance.ply"), str(out / "target_affordance.ply")]
        except Exception as e:
            return self.error_result(e)

        self.logger.info("%s -> %s: %d vertices transferred in %.3fs", src.name, tgt.name,
                         result.report.n_predicted, result.report.runtime_seconds)
        return {"status": "success", "report": result.report.model_dump(), "output_dir": str(out), "files": files}

    def _anchors(self, params: Dict[str, Any]) -> Dict[str, Any]:
        try:
            cfg = self.run_config(params)
            src, tgt = self._load_pair(cfg, with_regions=False)
            prepare_shape(src, cfg, with_basis=False, with_semantics=True)
            prepare_shape(tgt, cfg, with_basis=False, with_semantics=True)
            S, anchors = select_pair_anchors(src, tgt, cfg)

            with stage("report"):
                out = self._output_dir(cfg)
                doc = {
                    "schema_version": SCHEMA_VERSION,
                    "source": src.name,
                    "target": tgt.name,
                    "K1": int(S.shape[0]),
                    "K2": int(S.shape[1]),
                    # clusters without mesh vertices are ineligible and written as null
                    "S": [[float(v) if np.isfinite(v) else None for v in row] for row in S],
                    "source_cluster_sizes": src.clusters.sizes.tolist(),
                    "target_cluster_sizes": tgt.clusters.sizes.tolist(),
                    "anchors": anchors.to_dict(),
                }
                path = out / "anchors.json"
                path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
        except Exception as e:
            return self.error_result(e)
        return {"status": "success", "anchors": anchors.to_dict(), "output_dir": str(out), "files": [str(path)]}
