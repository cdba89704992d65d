from .base_agent import BaseAgent
from typing import Dict, Any, List, Optional, Tuple
import json
import statistics
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import ValidationError
from threadpoolctl import threadpool_limits
from tqdm import tqdm

import config
from core.fmap import PointwiseMap
from core.mesh import export_colored_mesh
from core.transfer import category_average_iou
from errors import InputError
from pipeline import Shape, load_shape, prepare_shape, run_pair, stage
from schemas import CategoryReport, ComparisonRow, Manifest, RunConfig, TransferReport

METHODS = ("semfm", "fm-wks")


def _prepare_task(shape: Shape, cfg: RunConfig, single_thread: bool) -> Shape:
    if single_thread:
        with threadpool_limits(limits=1):
            return prepare_shape(shape, cfg)
    return prepare_shape(shape, cfg)


def _pair_task(src: Shape, tgt: Shape, cfg: RunConfig, gt_map: Optional[PointwiseMap],
               single_thread: bool) -> Tuple[TransferReport, np.ndarray]:
    if single_thread:
        with threadpool_limits(limits=1):
            result = run_pair(src, tgt, cfg, gt_map)
    else:
        result = run_pair(src, tgt, cfg, gt_map)
    return result.report, result.predicted.indices


class CategoryAgent(BaseAgent):
    """
    Category evaluation over every ordered pair (i, j), i != j, of a synthetic
    dataset manifest:
    - eval_category: one method, category report JSON
    - compare: semfm and fm-wks on the same category, comparison table (JSON + CSV)
    """

    def __init__(self):
        super().__init__("CategoryAgent")

    def execute(self, task: Dict[str, Any]) -> Dict[str, Any]:
        action = task.get("action")
        params = task.get("params", {})

        if action == "eval_category":
            return self._eval_category(params)
        elif action == "compare":
            return self._compare(params)
        else:
            return self.unknown_action(action)

    # ---------------- helpers ----------------
    def _load_manifest(self, cfg: RunConfig) -> Tuple[Manifest, Path]:
        with stage("load"):
            if not cfg.manifest:
                raise InputError("a dataset manifest is required")
            path = Path(cfg.manifest)
            if not path.is_file():
                raise InputError(f"Manifest not found: {path}")
            try:
                manifest = Manifest.model_validate(json.loads(path.read_text(encoding="utf-8")))
            except json.JSONDecodeError as e:
                raise InputError(f"Malformed manifest {path}: {e}") from e
            except ValidationError as e:
                raise InputError(f"Incomplete manifest {path}: {e}") from e
        return manifest, path.parent

    def _output_dir(self, cfg: RunConfig) -> Path:
        out = Path(cfg.output_dir or config.OUTPUT_DIR)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise InputError(f"Cannot create output directory {out}: {e}") from e
        return out

    def _sweep(self, cfg: RunConfig, manifest: Manifest, root: Path,
               out: Optional[Path] = None) -> CategoryReport:
        shapes = [
            load_shape(obj.id, str(root / obj.mesh), str(root / obj.samples), str(root / gt))
            for obj, gt in zip(manifest.objects, manifest.gt_affordances)
        ]
        n = len(shapes)
        workers = max(1, cfg.workers)
        single_thread = workers > 1
        pool = Parallel(n_jobs=workers)
        shapes = list(pool(delayed(_prepare_task)(s, cfg, single_thread) for s in shapes))

        gt_map = None
        sizes = {s.mesh.n_vertices for s in shapes}
        if manifest.shared_connectivity and len(sizes) == 1:
            gt_map = PointwiseMap(np.arange(sizes.pop()))

        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        jobs = (delayed(_pair_task)(shapes[i], shapes[j], cfg, gt_map, single_thread) for i, j in pairs)
        results = list(tqdm(Parallel(n_jobs=workers, return_as="generator")(jobs), total=len(pairs),
                            desc=f"{cfg.method} pairs", disable=None, leave=False))

        with stage("report"):
            reports = [r for r, _ in results]
            if cfg.ply and out is not None:
                for (i, j), (_, predicted) in zip(pairs, results):
                    tgt = shapes[j]
                    mask = np.zeros(tgt.mesh.n_vertices, dtype=bool)
                    mask[predicted] = True
                    export_colored_mesh(tgt.mesh, mask, out / f"{cfg.method}_{shapes[i].name}_to_{tgt.name}.ply")
            geo = [r.geodesic_median for r in reports if r.geodesic_median is not None]
            return CategoryReport(
                method=cfg.method,
                n_objects=n,
                pairs=reports,
                avg_iou=category_average_iou(reports, n),
                avg_runtime_s=statistics.fmean(r.runtime_seconds for r in reports),
                median_geodesic_error=float(np.median(geo)) if geo else None,
                config=cfg.model_dump(),
            )

    def _write(self, path: Path, data: Any) -> str:
        with stage("report"):
            path.write_text(json.dumps(data, indent=2), encoding="utf-8")
        return str(path)

    # ---------------- actions ----------------
    def _eval_category(self, params: Dict[str, Any]) -> Dict[str, Any]:
        try:
            cfg = self.run_config(params)
            manifest, root = self._load_manifest(cfg)
            out = self._output_dir(cfg)
            report = self._sweep(cfg, manifest, root, out)
            path = self._write(out / "category_report.json", report.model_dump(mode="json"))
        except Exception as e:
            return self.error_result(e)
        self.logger.info("%s: %d pairs, avg IoU %.3f, avg runtime %.3fs", cfg.method, len(report.pairs),
                         report.avg_iou, report.avg_runtime_s)
        return {"status": "success", "avg_iou": report.avg_iou, "avg_runtime_s": report.avg_runtime_s,
                "n_pairs": len(report.pairs), "report_path": path}

    def _compare(self, params: Dict[str, Any]) -> Dict[str, Any]:
        try:
            cfg = self.run_config(params)
            manifest, root = self._load_manifest(cfg)
            out = self._output_dir(cfg)
            rows: List[ComparisonRow] = []
            files: List[str] = []
            for method in METHODS:
                report = self._sweep(cfg.model_copy(update={"method": method}), manifest, root, out)
                files.append(self._write(out / f"category_report_{method}.json", report.model_dump(mode="json")))
                rows.append(ComparisonRow(method=method, avg_iou=report.avg_iou, avg_runtime_s=report.avg_runtime_s,
                                          median_geodesic_error=report.median_geodesic_error))
            table = pd.DataFrame([r.model_dump() for r in rows])
            with stage("report"):
                table.to_csv(out / "comparison.csv", index=False)
            files.append(str(out / "comparison.csv"))
            files.append(self._write(out / "comparison.json", {"schema_version": 1, "rows": table.to_dict(orient="records")}))
        except Exception as e:
            return self.error_result(e)
        return {"status": "success", "rows": [r.model_dump() for r in rows], "files": files}
