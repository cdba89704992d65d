"""
End-to-end transfer between two shapes, split into named stages.

Per-shape work (basis, semantic clustering) is done once by `prepare_shape` so a
category sweep can reuse it across pairs; `run_pair` does the per-pair stages.
Any failure is re-raised as StageError naming the stage.
"""
from __future__ import annotations
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from time import perf_counter
from typing import Any, Dict, Iterator, Optional

import numpy as np

import config
from core.descriptors import (DescriptorMatrix, diffuse_descriptors, indicator_functions,
                              vertex_cluster_assignment, wks_functions)
from core.fmap import FunctionalMap, PointwiseMap, estimate_fmap, fmap_to_pointwise, zoomout_refine
from core.mesh import TriangleMesh, load_mesh
from core.semantics import (AnchorSet, ClusterSet, LiftedSampleSet, SemanticPointCloud, aggregate_samples,
                            build_semantic_graph, cluster_similarity, load_samples, select_anchors,
                            spectral_cluster)
from core.spectral import SpectralBasis, compute_basis, default_diffusion_time
from core.transfer import (AffordanceRegion, geodesic_error, iou, load_region, sample_vertices,
                           transfer_region_indicator, transfer_region_pointwise)
from errors import InputError, StageError
from schemas import RunConfig, TransferReport

logger = logging.getLogger(__name__)

# stages excluded from the reported runtime
_UNTIMED = {"load", "report"}


@contextmanager
def stage(name: str, timings: Optional[Dict[str, float]] = None) -> Iterator[None]:
    start = perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + perf_counter() - start


@dataclass(eq=False)
class Shape:
    name: str
    mesh: TriangleMesh
    samples: Optional[LiftedSampleSet] = None
    region: Optional[AffordanceRegion] = None
    basis: Optional[SpectralBasis] = None
    cloud: Optional[SemanticPointCloud] = None
    clusters: Optional[ClusterSet] = None
    assignment: Optional[np.ndarray] = None
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def basis_cached(self) -> bool:
        return bool(self.basis is not None and self.basis.from_cache)


@dataclass(eq=False)
class PairResult:
    report: TransferReport
    predicted: AffordanceRegion
    fmap: FunctionalMap
    pointwise: PointwiseMap
    anchors: Optional[AnchorSet] = None
    similarity: Optional[np.ndarray] = None


def load_shape(name: Optional[str], mesh_path: str, samples_path: Optional[str] = None,
               region_path: Optional[str] = None) -> Shape:
    with stage("load"):
        if not mesh_path:
            raise InputError("a mesh path is required")
        mesh = load_mesh(mesh_path, name=name)
        samples = load_samples(samples_path) if samples_path else None
        region = load_region(region_path) if region_path else None
        if region is not None:
            region.check_range(mesh.n_vertices)
            region = AffordanceRegion(mesh.name, region.indices)
    return Shape(mesh.name, mesh, samples, region)


def _cache_dir(cfg: RunConfig) -> Optional[Path]:
    if not cfg.use_cache:
        return None
    return Path(cfg.cache_dir or config.CACHE_DIR)


def prepare_shape(shape: Shape, cfg: RunConfig, with_basis: bool = True,
                  with_semantics: Optional[bool] = None) -> Shape:
    """Basis, plus semantic clusters and per-vertex assignment (semfm method by default)."""
    if with_basis:
        with stage("basis", shape.timings):
            shape.basis = compute_basis(shape.mesh, cfg.basis_dim, cache_dir=_cache_dir(cfg))
        if shape.basis.from_cache:
            shape.timings.pop("basis", None)
    if with_semantics is None:
        with_semantics = cfg.method == "semfm"
    if with_semantics:
        with stage("semantics", shape.timings):
            if shape.samples is None:
                raise InputError(f"semantic samples are required for '{shape.name}'")
            radius = cfg.radius or 0.05 * shape.mesh.bounding_box_diagonal()
            shape.cloud = aggregate_samples(shape.mesh, shape.samples, cfg.n_points, radius, cfg.seed)
            graph = build_semantic_graph(shape.cloud, cfg.k_nn, cfg.sigma)
            shape.clusters = spectral_cluster(graph, cfg.K, cfg.seed)
            shape.assignment = vertex_cluster_assignment(shape.mesh, shape.cloud, shape.clusters.labels)
    return shape


def eligible_similarity(src: Shape, tgt: Shape) -> np.ndarray:
    """Cluster similarity with -inf for clusters that own no mesh vertex."""
    S = cluster_similarity(src.clusters, tgt.clusters)
    S[~np.isin(np.arange(src.clusters.K), src.assignment), :] = -np.inf
    S[:, ~np.isin(np.arange(tgt.clusters.K), tgt.assignment)] = -np.inf
    return S


def select_pair_anchors(src: Shape, tgt: Shape, cfg: RunConfig, timings: Optional[Dict[str, float]] = None):
    with stage("anchors", timings):
        S = eligible_similarity(src, tgt)
        anchors = select_anchors(S, cfg.alpha)
    return S, anchors


def anchor_labels(assignment: np.ndarray, anchors: AnchorSet, side: int) -> np.ndarray:
    """Per-vertex anchor index, -1 outside every anchor region."""
    labels = np.full(assignment.shape, -1, dtype=np.int64)
    for i, c in enumerate(anchors.clusters(side)):
        labels[assignment == c] = i
    return labels


def _descriptors(src: Shape, tgt: Shape, cfg: RunConfig, anchors: Optional[AnchorSet]):
    if cfg.method == "fm-wks":
        F1 = wks_functions(src.basis, cfg.wks_energies, cfg.wks_sigma_scale, cfg.wks_normalized)
        F2 = wks_functions(tgt.basis, cfg.wks_energies, cfg.wks_sigma_scale, cfg.wks_normalized)
        return F1, F2
    pairs = tuple((p.c1, p.c2) for p in anchors.pairs)
    F1 = diffuse_descriptors(src.basis, indicator_functions(src.assignment, anchors, 1),
                             default_diffusion_time(src.mesh, cfg.t_scale), pairs)
    F2 = diffuse_descriptors(tgt.basis, indicator_functions(tgt.assignment, anchors, 2),
                             default_diffusion_time(tgt.mesh, cfg.t_scale), pairs)
    return F1, F2


def run_pair(src: Shape, tgt: Shape, cfg: RunConfig, gt_map: Optional[PointwiseMap] = None) -> PairResult:
    """
    Map src -> tgt and transfer src.region. IoU is reported when tgt.region is
    set; geodesic errors when a ground-truth map is given.
    """
    if src.region is None:
        raise StageError("load", InputError(f"no affordance region given for source '{src.name}'"))
    timings: Dict[str, float] = {}
    anchors, S = None, None
    if cfg.method == "semfm":
        S, anchors = select_pair_anchors(src, tgt, cfg, timings)

    with stage("descriptors", timings):
        F1, F2 = _descriptors(src, tgt, cfg, anchors)

    k_init = cfg.k0 if cfg.refine else cfg.k
    with stage("fmap", timings):
        C0 = estimate_fmap(src.basis.truncate(k_init), tgt.basis.truncate(k_init), F1, F2, cfg.reg_weight)

    with stage("refine", timings):
        C = zoomout_refine(src.basis, tgt.basis, C0, cfg.step, cfg.k_final) if cfg.refine else C0

    with stage("pointwise", timings):
        T = fmap_to_pointwise(src.basis, tgt.basis, C)

    with stage("transfer", timings):
        if cfg.mode == "pointwise":
            predicted = transfer_region_pointwise(T, src.region, tgt.name)
        else:
            predicted = transfer_region_indicator(src.basis, tgt.basis, C, src.region, cfg.threshold, tgt.name)

    with stage("report"):
        for shape in (src, tgt):
            for key in ("basis", "semantics"):
                if key in shape.timings:
                    timings[key] = timings.get(key, 0.0) + shape.timings[key]
        runtime = sum(v for key, v in timings.items() if key not in _UNTIMED)
        report = TransferReport(
            source=src.name,
            target=tgt.name,
            method=cfg.method,
            mode=cfg.mode,
            iou=iou(predicted, tgt.region) if tgt.region is not None else None,
            runtime_seconds=runtime,
            timings={key: timings[key] for key in sorted(timings)},
            basis_cached=src.basis_cached and tgt.basis_cached,
            alpha=anchors.alpha if anchors else 0,
            anchors=[(p.c1, p.c2) for p in anchors.pairs] if anchors else [],
            anchor_similarities=[p.similarity for p in anchors.pairs] if anchors else [],
            k_trace=list(C.provenance.get("trace", [C.k])),
            n_predicted=len(predicted),
        )
        if gt_map is not None:
            _add_geodesic_errors(report, src, tgt, cfg, C0, T, gt_map)
    return PairResult(report, predicted, C, T, anchors, S)


def _add_geodesic_errors(report: TransferReport, src: Shape, tgt: Shape, cfg: RunConfig,
                         C0: FunctionalMap, T: PointwiseMap, gt_map: PointwiseMap) -> None:
    subset = sample_vertices(src.mesh.n_vertices, cfg.geodesic_subset, cfg.seed)
    err = geodesic_error(T, gt_map, tgt.mesh, vertices=subset)
    T0 = fmap_to_pointwise(src.basis, tgt.basis, C0)
    err0 = geodesic_error(T0, gt_map, tgt.mesh, vertices=subset)
    report.geodesic_median = float(np.median(err))
    report.geodesic_mean = float(np.mean(err))
    report.geodesic_median_initial = float(np.median(err0))
