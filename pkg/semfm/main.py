"""
SemFM command-line front end.

  python semfm/main.py transfer --source-mesh a.off --source-samples a.json --source-affordance a_aff.json \
      --target-mesh b.off --target-samples b.json [--target-affordance b_aff.json] --output-dir out/
  python semfm/main.py anchors  --source-mesh ... --target-mesh ... --output-dir out/
  python semfm/main.py eval-category --manifest data/manifest.json [--method fm-wks] [--workers 4]
  python semfm/main.py compare --manifest data/manifest.json
  python semfm/main.py synth --base handle-tool --n-objects 4 --out data/

Exit codes: 0 success, 1 internal/numerical failure, 2 usage or input error.
"""
import argparse
import importlib
import os
import pkgutil
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

# running as `python semfm/main.py` puts semfm/ on sys.path already
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from rich.console import Console

import config
from errors import SemFMError
from utils.activity import log_activity
from utils.log import configure_logging

console = Console()
err_console = Console(stderr=True)

COMMANDS = {
    "transfer": ("TransferAgent", "transfer"),
    "anchors": ("TransferAgent", "anchors"),
    "eval-category": ("CategoryAgent", "eval_category"),
    "compare": ("CategoryAgent", "compare"),
    "synth": ("SynthAgent", "synth"),
}

SYNTH_KEYS = ("base", "n_objects", "amplitude", "d", "noise", "seed", "rings", "segments", "n_samples",
              "radius_fraction", "affordance_part")


def get_all_agents() -> Dict[str, Any]:
    """Instantiate every *Agent class found in the agents package."""
    agents = {}
    agent_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), "agents")
    for _, modname, _ in pkgutil.iter_modules([agent_dir]):
        module = importlib.import_module(f"agents.{modname}")
        for attr in dir(module):
            if attr.endswith("Agent") and attr != "BaseAgent" and attr not in agents:
                agent_cls = getattr(module, attr)
                if isinstance(agent_cls, type):
                    agents[attr] = agent_cls()
    return agents


# ---------------------------- Parser ----------------------------
def _add_run_options(p: argparse.ArgumentParser, paths: List[str]) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", type=Path, help="JSON / TOML / YAML key-value file; flags override it")
    for name in paths:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, default=S)
    p.add_argument("--output-dir", dest="output_dir", default=S, help=f"default {config.OUTPUT_DIR}")
    p.add_argument("--cache-dir", dest="cache_dir", default=S, help=f"basis cache, default {config.CACHE_DIR}")
    p.add_argument("--no-cache", dest="use_cache", action="store_false", default=S, help="disable the basis cache")
    p.add_argument("--k", type=int, default=S, help="initial map dimension without refinement (50)")
    p.add_argument("--k0", type=int, default=S, help="ZoomOut start dimension (20)")
    p.add_argument("--step", type=int, default=S, help="ZoomOut step (5)")
    p.add_argument("--k-final", dest="k_final", type=int, default=S, help="ZoomOut final dimension (80)")
    p.add_argument("--no-refine", dest="refine", action="store_false", default=S, help="skip ZoomOut")
    p.add_argument("--n-points", dest="n_points", type=int, default=S, help="semantic cloud size (600)")
    p.add_argument("--radius", type=float, default=S, help="aggregation radius (0.05 x bbox diagonal)")
    p.add_argument("--K", dest="K", type=int, default=S, help="semantic clusters per shape (5)")
    p.add_argument("--alpha", type=int, default=S, help="anchor pairs (2)")
    p.add_argument("--k-nn", dest="k_nn", type=int, default=S, help="kNN graph degree (10)")
    p.add_argument("--sigma", default=S, help="'median' or a positive number (median)")
    p.add_argument("--t-scale", dest="t_scale", type=float, default=S, help="diffusion time / mean edge^2 (10)")
    p.add_argument("--reg-weight", dest="reg_weight", type=float, default=S,
                   help="commutativity weight (1e-3 |A1|^2 / k)")
    p.add_argument("--mode", choices=["pointwise", "indicator"], default=S, help="transfer mode (pointwise)")
    p.add_argument("--threshold", type=float, default=S, help="indicator mode threshold fraction (0.5)")
    p.add_argument("--method", choices=["semfm", "fm-wks"], default=S, help="descriptor method (semfm)")
    p.add_argument("--wks-energies", dest="wks_energies", type=int, default=S, help="WKS energies (100)")
    p.add_argument("--wks-sigma-scale", dest="wks_sigma_scale", type=float, default=S, help="WKS width (7)")
    p.add_argument("--wks-normalized", dest="wks_normalized", action=argparse.BooleanOptionalAction, default=S,
                   help="area-normalized WKS columns (on)")
    p.add_argument("--geodesic-subset", dest="geodesic_subset", type=int, default=S,
                   help="vertices used for geodesic error (500)")
    p.add_argument("--workers", type=int, default=S, help=f"pair worker pool size ({config.WORKERS})")
    p.add_argument("--seed", type=int, default=S, help="seed for every randomized step (0)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semfm", description="Semantic anchored functional maps: affordance transfer")
    p.add_argument("--log-level", dest="log_level", default=None, help=f"default {config.LOG_LEVEL}")
    sub = p.add_subparsers(dest="cmd", required=True)

    pair_paths = ["source_mesh", "source_samples", "target_mesh", "target_samples"]
    tr = sub.add_parser("transfer", help="transfer an affordance region from source to target")
    _add_run_options(tr, pair_paths + ["source_affordance", "target_affordance"])

    an = sub.add_parser("anchors", help="dump the cluster similarity matrix and anchor pairs")
    _add_run_options(an, pair_paths)

    ev = sub.add_parser("eval-category", help="evaluate every ordered pair of a dataset manifest")
    _add_run_options(ev, ["manifest"])
    ev.add_argument("--ply", action="store_true", default=argparse.SUPPRESS, help="write predicted regions as PLY")

    cmp_ = sub.add_parser("compare", help="semfm vs fm-wks on one category")
    _add_run_options(cmp_, ["manifest"])

    sy = sub.add_parser("synth", help="generate a procedural category dataset")
    S = argparse.SUPPRESS
    sy.add_argument("--config", type=Path, help="JSON / TOML / YAML category spec; flags override it")
    sy.add_argument("--base", choices=["handle-tool", "two-part-container", "blade-tool"], default=S)
    sy.add_argument("--n-objects", dest="n_objects", type=int, default=S, help="objects (4)")
    sy.add_argument("--amplitude", type=float, default=S, help="deformation amplitude in [0, 0.5] (0.25)")
    sy.add_argument("--d", type=int, default=S, help="embedding dimension (32)")
    sy.add_argument("--noise", type=float, default=S, help="embedding noise level (0.1)")
    sy.add_argument("--seed", type=int, default=S)
    sy.add_argument("--rings", type=int, default=S)
    sy.add_argument("--segments", type=int, default=S)
    sy.add_argument("--n-samples", dest="n_samples", type=int, default=S)
    sy.add_argument("--radius-fraction", dest="radius_fraction", type=float, default=S)
    sy.add_argument("--affordance-part", dest="affordance_part", type=int, default=S)
    sy.add_argument("--out", type=Path, default=None, help="dataset directory")
    return p


def build_task(args: argparse.Namespace) -> Dict[str, Any]:
    """Merge the config file with explicit flags into an agent task."""
    from config import load_config_file

    values = vars(args).copy()
    base = load_config_file(args.config) if args.config else {}
    for key in ("cmd", "config", "log_level", "out"):
        values.pop(key, None)
    merged = {**base, **values}
    _, action = COMMANDS[args.cmd]
    if args.cmd == "synth":
        return {"action": action, "params": {"spec": merged, "out_dir": str(args.out) if args.out else None}}
    return {"action": action, "params": {"config": merged}}


# ---------------------------- Reporting ----------------------------
def _summary(cmd: str, result: Dict[str, Any]) -> str:
    if cmd == "transfer":
        r = result["report"]
        iou = "n/a" if r.get("iou") is None else f"{r['iou']:.3f}"
        return (f"transfer {r['source']} -> {r['target']} ({r['method']}, {r['mode']}): IoU {iou} | "
                f"{r['n_predicted']} vertices | {r['runtime_seconds']:.2f}s | {result['output_dir']}")
    if cmd == "anchors":
        pairs = ", ".join(f"{p['c1']}<->{p['c2']} ({p['similarity']:.3f})" for p in result["anchors"]["pairs"])
        return f"anchors: {pairs} | {result['output_dir']}"
    if cmd == "eval-category":
        return (f"eval-category: {result['n_pairs']} pairs | avg IoU {result['avg_iou']:.3f} | "
                f"avg runtime {result['avg_runtime_s']:.2f}s | {result['report_path']}")
    if cmd == "compare":
        return " | ".join(f"{r['method']}: avg IoU {r['avg_iou']:.3f}, {r['avg_runtime_s']:.2f}s" for r in result["rows"])
    if cmd == "synth":
        return f"synth: {result['n_objects']} '{result['base']}' objects -> {result['manifest']}"
    return str(result)


def _output_of(result: Dict[str, Any]) -> Optional[str]:
    for key in ("report_path", "manifest", "output_dir"):
        if result.get(key):
            return str(result[key])
    files = result.get("files") or []
    return files[-1] if files else None


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.log_level)

    try:
        task = build_task(args)
    except SemFMError as e:
        err_console.print(f"error [config]: {e}", markup=False, highlight=False)
        log_activity({"command": args.cmd, "status": "error", "exit_code": e.exit_code, "stage": "config"})
        return e.exit_code

    agent_name, _ = COMMANDS[args.cmd]
    agent = get_all_agents()[agent_name]
    result = agent.execute(task)

    if result.get("status") == "success":
        console.print(_summary(args.cmd, result), markup=False, highlight=False)
        code = 0
    else:
        stage = result.get("stage") or "run"
        err_console.print(f"error [{stage}]: {result.get('message')}", markup=False, highlight=False)
        code = int(result.get("exit_code") or 1)
    log_activity({"command": args.cmd, "status": result.get("status"), "exit_code": code,
                  "stage": result.get("stage"), "output": _output_of(result)})
    return code


if __name__ == "__main__":
    sys.exit(main())
