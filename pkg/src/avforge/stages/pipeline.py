"""Running stages by name and chaining them, with checkpoints and metrics written per stage."""

from __future__ import annotations

import os

from ..errors import ParameterError
from .avatar import Avatar
from .config import STAGE_NAMES, StageConfig
from .runner import (METRIC_FIELDS, StageResult, run_eye_pretrain, run_full_optimization, run_initialization,
                     run_mouth_pretrain, run_refinement)


def run_stage(name: str, avatar: Avatar, cfg: StageConfig, guidance=None, views=None, motions=None,
              probe=None) -> StageResult:
    if cfg.name != name:
        raise ParameterError(f"config is for stage {cfg.name!r}, not {name!r}")
    if name == "init":
        if views is None:
            raise ParameterError("initialization needs views")
        return run_initialization(avatar, views, cfg, probe=probe)
    if guidance is None:
        raise ParameterError(f"stage {name!r} needs a guidance backend")
    if name == "eye":
        return run_eye_pretrain(avatar, guidance, cfg, probe=probe)
    if motions is None:
        raise ParameterError(f"stage {name!r} needs a motion library")
    if name == "mouth":
        return run_mouth_pretrain(avatar, guidance, motions, cfg, probe=probe)
    if name == "full":
        return run_full_optimization(avatar, guidance, motions, cfg, probe=probe)
    if name == "refine":
        return run_refinement(avatar, guidance, motions, cfg, probe=probe)
    raise ParameterError(f"unknown stage {name!r}")


def save_stage(out_dir, name: str, result: StageResult) -> tuple[str, str]:
    from ..io.formats import write_checkpoint, write_metrics

    ckpt = os.path.join(out_dir, f"{name}.gsav")
    metrics = os.path.join(out_dir, f"{name}_metrics.csv")
    write_checkpoint(ckpt, result.avatar.cloud, result.avatar.rig.rig_hash(), {"stage": name})
    write_metrics(metrics, result.metrics, METRIC_FIELDS)
    return ckpt, metrics


def run_pipeline(avatar: Avatar, configs: dict[str, StageConfig], guidance, views, motions, out_dir=None,
                 stages=STAGE_NAMES, probes: dict | None = None) -> dict[str, StageResult]:
    """Run ``stages`` in order, feeding each stage's avatar to the next."""
    results = {}
    for name in stages:
        res = run_stage(name, avatar, configs[name], guidance, views, motions, (probes or {}).get(name))
        if out_dir is not None:
            save_stage(out_dir, name, res)
        results[name] = res
        avatar = res.avatar
    return results
