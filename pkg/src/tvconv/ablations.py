"""Ablation runners over the desk-scale training harness.

Each runner trains small models on a layout dataset and aggregates final
test error (or accuracy, for the sensitivity curves) as mean +- std over
a seed list. One seed value drives init, shuffle order, noise draw, and
augmentation together, so the reported spread covers both initialization
and data-order variation. Results come back as an AblationResult whose
rows render to an aligned text table and to key=value lines; both forms
are byte-deterministic for a fixed (dataset, config, seeds) triple.

The sensitivity runner sweeps translation magnitudes. Translation is the
perturbation a per-position operator is most exposed to by construction
(its filters are tied to absolute positions); other affine kinds remain
available as dataset-level transforms through data.apply_affine.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import models, report, training

DEFAULT_SEEDS = (0, 1, 2, 3, 4)

# (hidden stages, generator width, affinity channels) per grid point.
DEFAULT_GENERATOR_GRID = ((1, 8, 2), (3, 8, 2), (4, 8, 2))

DEFAULT_MAGNITUDES = (0.0, 0.1, 0.2, 0.4)


@dataclass(frozen=True)
class AblationResult:
    headers: tuple[str, ...]
    rows: tuple[tuple, ...]
    # one (row label, seed, final metric) triple per training run
    runs: tuple[tuple, ...]

    def table(self) -> str:
        return report.format_table(list(self.headers),
                                   [list(r) for r in self.rows])

    def kv(self) -> dict[str, str]:
        """Flatten aggregated rows to `label.column` -> formatted value."""
        out: dict[str, str] = {}
        for row in self.rows:
            label = str(row[0])
            for name, v in zip(self.headers[1:], row[1:]):
                out[f"{label}.{name}"] = (
                    f"{v:.6f}" if isinstance(v, float) else str(v))
        return out


def _seed_errors(dataset, cfg: training.TrainConfig, seeds,
                 build) -> np.ndarray:
    """Final test error per seed; `build(seed)` constructs a fresh model."""
    errs = []
    for s in seeds:
        res = training.train(build(s), dataset, replace(cfg, seed=s))
        errs.append(1.0 - res.history[-1][2])
    return np.asarray(errs)


def _mean_std(values: np.ndarray) -> tuple[float, float]:
    return float(values.mean()), float(values.std())


def run_ablation_init(dataset, cfg: training.TrainConfig,
                      seeds=DEFAULT_SEEDS,
                      spec: models.ModelSpec | None = None) -> AblationResult:
    """Constant-1 vs data-statistics affinity init, all else identical."""
    if spec is None:
        spec = models.default_model_spec("tvconv")
    variants = (
        ("constant", replace(spec, affinity_init="constant"), None),
        ("stats", replace(spec, affinity_init="stats"), dataset.train_x),
    )
    rows, runs = [], []
    for label, vspec, stats in variants:
        errs = _seed_errors(
            dataset, cfg, seeds,
            lambda s, vspec=vspec, stats=stats: models.LayoutModel.create(
                vspec, seed=s, stats_images=stats))
        runs += [(label, s, float(e)) for s, e in zip(seeds, errs)]
        rows.append((label, *_mean_std(errs)))
    return AblationResult(("init", "err_mean", "err_std"),
                          tuple(rows), tuple(runs))


def run_ablation_generator(dataset, cfg: training.TrainConfig,
                           grid=DEFAULT_GENERATOR_GRID,
                           seeds=DEFAULT_SEEDS,
                           spec: models.ModelSpec | None = None) -> AblationResult:
    """Sweep generator shape: (hidden stages, width, affinity channels)."""
    if spec is None:
        spec = models.default_model_spec("tvconv")
    rows, runs = [], []
    for depth, width, c_a in grid:
        label = f"L{depth}.cB{width}.cA{c_a}"
        vspec = replace(spec, gen_depth=depth, gen_width=width,
                        affinity_channels=c_a)
        errs = _seed_errors(
            dataset, cfg, seeds,
            lambda s, vspec=vspec: models.LayoutModel.create(vspec, seed=s))
        runs += [(label, s, float(e)) for s, e in zip(seeds, errs)]
        rows.append((label, *_mean_std(errs)))
    return AblationResult(("point", "err_mean", "err_std"),
                          tuple(rows), tuple(runs))


def stage_subsets(n_stages: int) -> tuple[tuple[str, tuple[int, ...]], ...]:
    """All subsets of stage indices, labeled `none`, `s0`, `s0+s1`, ..."""
    out = []
    for mask in range(1 << n_stages):
        chosen = tuple(i for i in range(n_stages) if mask >> i & 1)
        label = "+".join(f"s{i}" for i in chosen) or "none"
        out.append((label, chosen))
    return tuple(out)


def run_ablation_stage(dataset, cfg: training.TrainConfig,
                       seeds=DEFAULT_SEEDS,
                       spec: models.ModelSpec | None = None) -> AblationResult:
    """Sweep which stages use the per-position operator.

    The empty subset is the plain depthwise baseline; the full subset is
    the all-stages default placement.
    """
    if spec is None:
        spec = models.default_model_spec("depthwise")
    rows, runs = [], []
    for label, chosen in stage_subsets(len(spec.stages)):
        stages = tuple(
            replace(st, operator="tvconv" if i in chosen else "depthwise")
            for i, st in enumerate(spec.stages))
        vspec = replace(spec, stages=stages)
        errs = _seed_errors(
            dataset, cfg, seeds,
            lambda s, vspec=vspec: models.LayoutModel.create(vspec, seed=s))
        runs += [(label, s, float(e)) for s, e in zip(seeds, errs)]
        rows.append((label, *_mean_std(errs)))
    return AblationResult(("stages", "err_mean", "err_std"),
                          tuple(rows), tuple(runs))


def translation_pixels(magnitude: float, h: int, w: int) -> int:
    """Magnitude as a fraction of the larger image side, in whole pixels."""
    if magnitude < 0:
        raise ValueError(f"translation magnitude must be >= 0, got {magnitude}")
    return int(round(magnitude * max(h, w)))


def run_ablation_affine(dataset, cfg: training.TrainConfig,
                        magnitudes=DEFAULT_MAGNITUDES,
                        seeds=DEFAULT_SEEDS,
                        spec: models.ModelSpec | None = None) -> AblationResult:
    """Accuracy of both operators vs translation-augmentation magnitude."""
    base = spec if spec is not None else models.default_model_spec("depthwise")
    h, w = base.h, base.w
    rows, runs = [], []
    for mag in magnitudes:
        px = translation_pixels(mag, h, w)
        acfg = replace(cfg, augment_translate=px)
        stats = {}
        for op in ("tvconv", "depthwise"):
            vspec = models.to_operator(base, op)
            errs = _seed_errors(
                dataset, acfg, seeds,
                lambda s, vspec=vspec: models.LayoutModel.create(vspec, seed=s))
            accs = 1.0 - errs
            runs += [(f"{mag}.{op}", s, float(a))
                     for s, a in zip(seeds, accs)]
            stats[op] = _mean_std(accs)
        gap = stats["tvconv"][0] - stats["depthwise"][0]
        rows.append((f"{mag}", px,
                     *stats["tvconv"], *stats["depthwise"], gap))
    return AblationResult(
        ("magnitude", "px", "tvconv_acc_mean", "tvconv_acc_std",
         "depthwise_acc_mean", "depthwise_acc_std", "gap_mean"),
        tuple(rows), tuple(runs))
