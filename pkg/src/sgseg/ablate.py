"""Variant grid for ablation studies: modalities, fusion, interactions, losses, weights, threshold."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Callable, Sequence

from sgseg.config import RunConfig
from sgseg.data import MultiModalSample, split_folds
from sgseg.errors import ConfigError
from sgseg.evaluate import EvalResult, evaluate, report_rows
from sgseg.train import DatasetInfo, Trainer

LAMBDA2_GRID = (2.0, 1.0, 0.5, 0.4, 0.2, 0.1, 0.08, 0.0)
ALPHA_GRID = (0.95, 0.90, 0.85, 0.80, 0.75, 0.70)


@dataclass(frozen=True)
class Variant:
    group: str
    name: str
    overrides: dict = field(default_factory=dict)


def _modality_variants() -> list[Variant]:
    out = []
    for mods in ("I", "IK", "IKB", "IKBD"):
        over = {"modalities": mods}
        if "D" not in mods:
            over["fusion"] = "only_msaf"  # guided fusion needs the device stream
        out.append(Variant("modalities", "+".join(mods), over))
    return out


GROUPS: dict[str, Callable[[], list[Variant]]] = {
    "modalities": _modality_variants,
    "fusion": lambda: [
        Variant("fusion", "SGF + MSAF", {"fusion": "sgf+msaf"}),
        Variant("fusion", "Only SGF", {"fusion": "only_sgf"}),
        Variant("fusion", "Only MSAF", {"fusion": "only_msaf"}),
        Variant("fusion", "Cross-attention + MSAF", {"fusion": "cross+msaf"}),
    ],
    "interactions": lambda: [
        Variant("interactions", "both interactions", {}),
        Variant("interactions", "first interaction only", {"second_interaction": False}),
        Variant("interactions", "second interaction only", {"first_interaction": False}),
        Variant("interactions", "w/o multi-stage interaction",
                {"first_interaction": False, "second_interaction": False}),
    ],
    "losses": lambda: [
        Variant("losses", "all losses", {}),
        Variant("losses", "w/o inner class loss", {"inner_class_loss": False}),
        Variant("losses", "w/o inner boundary loss", {"inner_boundary_loss": False}),
        Variant("losses", "final class loss only",
                {"inner_class_loss": False, "inner_boundary_loss": False, "final_boundary_loss": False}),
    ],
    "lambda2": lambda: [Variant("lambda2", f"lambda2={v:g}", {"lambda2": v}) for v in LAMBDA2_GRID],
}


def ablation_grid(groups: Sequence[str] | None = None) -> list[Variant]:
    names = list(GROUPS) if groups is None else list(groups)
    unknown = [g for g in names if g not in GROUPS and g != "alpha"]
    if unknown:
        raise ConfigError(f"unknown ablation group(s) {unknown}; choose from {list(GROUPS) + ['alpha']}")
    return [v for g in names if g in GROUPS for v in GROUPS[g]()]


def train_and_evaluate(cfg: RunConfig, train: Sequence[MultiModalSample],
                       test: Sequence[MultiModalSample]) -> tuple[Trainer, EvalResult]:
    trainer = Trainer(cfg, DatasetInfo.from_samples(train))
    trainer.fit(train)
    return trainer, evaluate(trainer.model, test)


def run_ablation(base: RunConfig, samples: Sequence[MultiModalSample], groups: Sequence[str] | None = None,
                 seeds: Sequence[int] = (0,), echo: Callable[[str], None] | None = None) -> list[dict]:
    """One report row set per (variant, seed), plus median macro rows across seeds.

    The "alpha" group retrains nothing: it re-scores the default model at each threshold.
    """
    variants = ablation_grid(groups)
    for v in variants:  # surface flag conflicts before any training starts
        base.replace(**v.overrides)
    train, test = split_folds(samples, base.num_folds, base.seed)[base.eval_fold]
    names = samples[0].class_names
    rows: list[dict] = []
    scores: dict[str, list[float]] = {}
    want_alpha = groups is not None and "alpha" in groups
    for seed in seeds:
        for v in variants:
            cfg = base.replace(**v.overrides, seed=seed, variant=v.name)
            _, result = train_and_evaluate(cfg, train, test)
            rows += report_rows(result, cfg, v.name, names)
            scores.setdefault(v.name, []).append(result.segmental.macro_f1)
            if echo:
                echo(f"seed={seed} variant={v.name!r} segmental_f1={result.segmental.macro_f1:.4f} "
                     f"frame_f1={result.frame.macro_f1:.4f}")
        if want_alpha:
            trainer, _ = train_and_evaluate(base.replace(seed=seed, variant="alpha sweep"), train, test)
            for a in ALPHA_GRID:
                cfg = trainer.cfg.replace(alpha=a, variant=f"alpha={a:g}")
                trainer.model.cfg = cfg
                result = evaluate(trainer.model, test)
                rows += report_rows(result, cfg, cfg.variant, names)
                scores.setdefault(cfg.variant, []).append(result.segmental.macro_f1)
                if echo:
                    echo(f"seed={seed} variant={cfg.variant!r} segmental_f1={result.segmental.macro_f1:.4f}")
    for name, vals in scores.items():
        rows.append({"variant": name, "class": "median_over_seeds", "precision": "", "recall": "",
                     "f1": statistics.median(vals), "support": len(vals), "metric": "segmental",
                     **base.provenance(), "seed": ";".join(str(s) for s in seeds)})
    return rows
