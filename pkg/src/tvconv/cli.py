"""Command-line entry point wiring every module together.

Usage: tvconv COMMAND [ARGS] [--config FILE] [--set KEY=VALUE ...]
                [--out DIR] [--verbose]

Commands: synth, train, eval, count, gradcheck, export-affinity, ablate.

Configuration is line-oriented ``key=value`` (`#` starts a comment) with
nested structure flattened by dotted keys (``train.lr=0.05``). Values
given with --set override file values; command-specific flags are sugar
for --set. Each command validates its key set and rejects unknown keys
by name. All randomness flows from the single ``seed`` key: dataset
noise, model init, shuffle order, and augmentation derive their streams
from it by the documented (seed, purpose) hashing.

Every command writes its artifacts under --out (default: the current
directory) and is byte-idempotent: rerunning with the same inputs
overwrites with identical bytes. Exit status is 0 exactly when no error
diagnostic was printed; failures print one ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import ablations, data, models, report, training
from .costmodel import load_arch, network_cost
from .gradsuite import run_suite
from .operator import export_affinity


class CliError(Exception):
    """Failure with a one-line diagnostic."""


@dataclass(frozen=True)
class RunConfig:
    command: str
    config: Path | None
    overrides: tuple[str, ...]
    outdir: Path
    verbose: bool


# --- key=value plumbing -----------------------------------------------------

_COMMON_KEYS = {"seed"}

_DATA_KEYS = {"data.path", "data.h", "data.w", "data.grid", "data.classes",
              "data.channels", "data.bg_amplitude", "data.noise_std",
              "data.n_train", "data.n_test"}

_MODEL_KEYS = {"model.operator", "model.stem", "model.stages", "model.k",
               "model.affinity_channels", "model.gen_depth",
               "model.gen_width", "model.gen_kernel", "model.affinity_init"}

_TRAIN_KEYS = {"train.lr", "train.momentum", "train.weight_decay",
               "train.decay_affinity", "train.epochs", "train.batch",
               "train.drops", "train.augment_translate"}

KNOWN_KEYS = {
    "synth": _COMMON_KEYS | (_DATA_KEYS - {"data.path"}),
    "train": _COMMON_KEYS | _DATA_KEYS | _MODEL_KEYS | _TRAIN_KEYS,
    "eval": {"checkpoint", "data.path"},
    "count": {"arch"},
    "gradcheck": {"seed", "tol", "eps", "instances"},
    "export-affinity": {"checkpoint"},
    "ablate": (_COMMON_KEYS | _DATA_KEYS | _MODEL_KEYS | _TRAIN_KEYS
               | {"name", "seeds", "grid", "magnitudes"}),
}


def load_config(rc: RunConfig) -> dict[str, str]:
    """Merge config file and overrides; reject keys unknown to the command."""
    merged: dict[str, str] = {}
    if rc.config is not None:
        path = Path(rc.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        try:
            merged.update(report.parse_kv(path.read_text(), str(path)))
        except report.KvError as e:
            raise CliError(str(e)) from e
    for i, item in enumerate(rc.overrides):
        if "=" not in item:
            raise CliError(f"--set:{i + 1}: expected KEY=VALUE, got '{item}'")
        key, _, value = item.partition("=")
        key = key.strip()
        if not key:
            raise CliError(f"--set:{i + 1}: empty key in '{item}'")
        merged[key] = value.strip()
    known = KNOWN_KEYS[rc.command]
    for key in merged:
        if key not in known:
            raise CliError(
                f"unknown key '{key}' for command {rc.command} "
                f"(known: {', '.join(sorted(known))})")
    return merged


def _get(cfg: dict[str, str], key: str, default, cast):
    if key not in cfg:
        return default
    raw = cfg[key]
    try:
        if cast is bool:
            low = raw.lower()
            if low not in ("true", "false", "0", "1"):
                raise ValueError(raw)
            return low in ("true", "1")
        return cast(raw)
    except ValueError as e:
        raise CliError(f"key {key}: cannot parse '{raw}' as {cast.__name__}") from e


def _dataset_spec(cfg: dict[str, str]) -> data.LayoutDatasetSpec:
    base = data.LayoutDatasetSpec()
    return data.LayoutDatasetSpec(
        channels=_get(cfg, "data.channels", base.channels, int),
        h=_get(cfg, "data.h", base.h, int),
        w=_get(cfg, "data.w", base.w, int),
        grid=_get(cfg, "data.grid", base.grid, int),
        classes=_get(cfg, "data.classes", base.classes, int),
        bg_amplitude=_get(cfg, "data.bg_amplitude", base.bg_amplitude, float),
        noise_std=_get(cfg, "data.noise_std", base.noise_std, float),
        n_train=_get(cfg, "data.n_train", base.n_train, int),
        n_test=_get(cfg, "data.n_test", base.n_test, int),
        seed=_get(cfg, "seed", 0, int))


def _load_or_gen_dataset(cfg: dict[str, str]) -> data.Dataset:
    if "data.path" in cfg:
        path = Path(cfg["data.path"])
        if not path.is_dir():
            raise CliError(f"dataset directory not found: {path}")
        return data.load_dataset(path)
    return data.gen_layout_dataset(_dataset_spec(cfg))


def _model_spec(cfg: dict[str, str], ds: data.Dataset) -> models.ModelSpec:
    op = cfg.get("model.operator", "tvconv")
    if op not in models.OPERATORS:
        raise CliError(f"key model.operator: unknown operator '{op}'")
    base = models.ModelSpec()
    if "model.stages" in cfg:
        try:
            stages = models._stages_parse(cfg["model.stages"])
        except ValueError as e:
            raise CliError(
                f"key model.stages: expected C:B:OP:S;... in "
                f"'{cfg['model.stages']}'") from e
    else:
        stages = tuple(replace(st, operator=op) for st in base.stages)
    dspec = ds.spec
    return models.ModelSpec(
        in_channels=dspec.channels, h=dspec.h, w=dspec.w,
        classes=dspec.classes,
        stem_channels=_get(cfg, "model.stem", base.stem_channels, int),
        stages=stages,
        k=_get(cfg, "model.k", base.k, int),
        affinity_channels=_get(cfg, "model.affinity_channels",
                               base.affinity_channels, int),
        gen_depth=_get(cfg, "model.gen_depth", base.gen_depth, int),
        gen_width=_get(cfg, "model.gen_width", base.gen_width, int),
        gen_kernel=_get(cfg, "model.gen_kernel", base.gen_kernel, int),
        affinity_init=cfg.get("model.affinity_init", base.affinity_init))


def _drops(text: str) -> tuple[tuple[int, float], ...]:
    if not text:
        return ()
    out = []
    for part in text.split(";"):
        try:
            epoch, _, div = part.partition(":")
            out.append((int(epoch), float(div)))
        except ValueError as e:
            raise CliError(
                f"key train.drops: expected EPOCH:DIVISOR;... in '{text}'") from e
    return tuple(out)


def _train_config(cfg: dict[str, str]) -> training.TrainConfig:
    base = training.TrainConfig()
    try:
        return training.TrainConfig(
            lr=_get(cfg, "train.lr", base.lr, float),
            momentum=_get(cfg, "train.momentum", base.momentum, float),
            weight_decay=_get(cfg, "train.weight_decay",
                              base.weight_decay, float),
            decay_affinity=_get(cfg, "train.decay_affinity",
                                base.decay_affinity, bool),
            epochs=_get(cfg, "train.epochs", base.epochs, int),
            batch_size=_get(cfg, "train.batch", base.batch_size, int),
            lr_drops=_drops(cfg["train.drops"]) if "train.drops" in cfg
            else base.lr_drops,
            seed=_get(cfg, "seed", 0, int),
            augment_translate=_get(cfg, "train.augment_translate",
                                   base.augment_translate, int))
    except (training.TrainingError, ValueError) as e:
        raise CliError(str(e)) from e


def _emit(rc: RunConfig, name: str, text: str) -> Path:
    rc.outdir.mkdir(parents=True, exist_ok=True)
    path = rc.outdir / name
    path.write_text(text)
    return path


# --- commands ----------------------------------------------------------------

def cmd_synth(rc: RunConfig) -> int:
    cfg = load_config(rc)
    spec = _dataset_spec(cfg)
    ds = data.gen_layout_dataset(spec)
    out = rc.outdir / "dataset"
    data.save_dataset(ds, out)
    stats = data.variance_stats(ds)
    ratio = stats["intra_image_var"] / stats["cross_image_var"]
    print(f"wrote {out} ({spec.n_train} train / {spec.n_test} test, "
          f"{spec.classes} classes, intra/cross {ratio:.2f})")
    return 0


def cmd_train(rc: RunConfig) -> int:
    cfg = load_config(rc)
    ds = _load_or_gen_dataset(cfg)
    mspec = _model_spec(cfg, ds)
    tcfg = _train_config(cfg)
    stats = ds.train_x if mspec.affinity_init == "stats" else None
    model = models.LayoutModel.create(mspec, seed=tcfg.seed,
                                      stats_images=stats)
    result = training.train(model, ds, tcfg)
    if rc.verbose:
        for epoch, loss, acc in result.history:
            print(f"epoch {epoch} loss {loss:.6f} acc {acc:.4f}")
    out = rc.outdir / "model"
    models.save_model(result.model, out)
    rows = [[e, f"{l:.6f}", f"{a:.4f}"] for e, l, a in result.history]
    hist = _emit(rc, "history.txt",
                 report.format_table(["epoch", "loss", "test_acc"], rows) + "\n")
    final = result.history[-1]
    print(f"wrote {out} and {hist}; final loss {final[1]:.6f} "
          f"test acc {final[2]:.4f}")
    return 0


def cmd_eval(rc: RunConfig) -> int:
    cfg = load_config(rc)
    if "checkpoint" not in cfg:
        raise CliError("eval needs a checkpoint (--checkpoint DIR)")
    if "data.path" not in cfg:
        raise CliError("eval needs a dataset (--data DIR)")
    ckpt = Path(cfg["checkpoint"])
    if not ckpt.is_dir():
        raise CliError(f"checkpoint directory not found: {ckpt}")
    model = models.load_model(ckpt)
    ds = _load_or_gen_dataset(cfg)
    model.freeze()
    acc = training.evaluate(model, ds.test_x, ds.test_y)
    path = _emit(rc, "eval.txt", report.format_kv({
        "checkpoint": str(ckpt), "test_accuracy": f"{acc:.6f}"}))
    print(f"test accuracy {acc:.4f} (wrote {path})")
    return 0


def cmd_count(rc: RunConfig) -> int:
    cfg = load_config(rc)
    if "arch" not in cfg:
        raise CliError("count needs an architecture file (ARCH positional)")
    path = Path(cfg["arch"])
    if not path.is_file():
        raise CliError(f"architecture file not found: {path}")
    try:
        rep = network_cost(load_arch(path))
    except (ValueError, report.KvError) as e:
        raise CliError(str(e)) from e
    out = _emit(rc, "count.txt", rep.table() + "\n" + report.format_kv(rep.kv()))
    print(f"total_macs={rep.total_macs}")
    print(f"total_params={rep.total_params}")
    print(f"one_time_generation_macs={rep.one_time_generation_macs}")
    if rc.verbose:
        print(rep.table())
    print(f"wrote {out}")
    return 0


def cmd_gradcheck(rc: RunConfig) -> int:
    cfg = load_config(rc)
    seed = _get(cfg, "seed", 0, int)
    tol = _get(cfg, "tol", 1e-5, float)
    eps = _get(cfg, "eps", 1e-6, float)
    instances = _get(cfg, "instances", 100, int)
    results = run_suite(seed=seed, tol=tol, eps=eps, instances=instances)
    failed = 0
    for r in results:
        status = "pass" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status} {r.op}: {r.instances} instances, "
              f"max rel err {r.max_rel_err:.3e} (tol {tol:g})")
    if failed:
        raise CliError(f"{failed} op(s) failed the gradient check")
    return 0


def cmd_export_affinity(rc: RunConfig) -> int:
    cfg = load_config(rc)
    if "checkpoint" not in cfg:
        raise CliError("export-affinity needs a checkpoint (--checkpoint DIR)")
    ckpt = Path(cfg["checkpoint"])
    if not ckpt.is_dir():
        raise CliError(f"checkpoint directory not found: {ckpt}")
    model = models.load_model(ckpt)
    if not model.tv_layers:
        raise CliError("checkpoint has no per-position stages to export")
    rc.outdir.mkdir(parents=True, exist_ok=True)
    for name, layer in model.tv_layers.items():
        written = export_affinity(layer.affinity, rc.outdir,
                                  basename=name.replace(".", "_"))
        for p in written:
            print(f"wrote {p}")
    return 0


_ABLATIONS = ("init", "generator", "stage", "affine")


def _int_tuple(text: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as e:
        raise CliError(f"key {key}: expected comma-separated ints, "
                       f"got '{text}'") from e


def cmd_ablate(rc: RunConfig) -> int:
    cfg = load_config(rc)
    name = cfg.get("name", "")
    if name not in _ABLATIONS:
        raise CliError(f"unknown ablation '{name}' "
                       f"(known: {', '.join(_ABLATIONS)})")
    ds = _load_or_gen_dataset(cfg)
    mspec = _model_spec(cfg, ds)
    tcfg = _train_config(cfg)
    seeds = (_int_tuple(cfg["seeds"], "seeds") if "seeds" in cfg
             else ablations.DEFAULT_SEEDS)
    if name == "init":
        res = ablations.run_ablation_init(ds, tcfg, seeds=seeds, spec=mspec)
    elif name == "generator":
        grid = ablations.DEFAULT_GENERATOR_GRID
        if "grid" in cfg:
            try:
                grid = tuple(tuple(int(x) for x in point.split(","))
                             for point in cfg["grid"].split(";"))
                if any(len(p) != 3 for p in grid):
                    raise ValueError(cfg["grid"])
            except ValueError as e:
                raise CliError(f"key grid: expected L,cB,cA;... in "
                               f"'{cfg['grid']}'") from e
        res = ablations.run_ablation_generator(ds, tcfg, grid=grid,
                                               seeds=seeds, spec=mspec)
    elif name == "stage":
        res = ablations.run_ablation_stage(ds, tcfg, seeds=seeds, spec=mspec)
    else:
        mags = ablations.DEFAULT_MAGNITUDES
        if "magnitudes" in cfg:
            try:
                mags = tuple(float(p) for p in cfg["magnitudes"].split(","))
            except ValueError as e:
                raise CliError(f"key magnitudes: expected comma-separated "
                               f"floats, got '{cfg['magnitudes']}'") from e
        res = ablations.run_ablation_affine(ds, tcfg, magnitudes=mags,
                                            seeds=seeds, spec=mspec)
    text = res.table() + "\n\n" + report.format_kv(res.kv())
    out = _emit(rc, f"ablation_{name}.txt", text)
    print(res.table())
    print(f"wrote {out}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "count": cmd_count,
    "gradcheck": cmd_gradcheck,
    "export-affinity": cmd_export_affinity,
    "ablate": cmd_ablate,
}


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, default=None,
                     help="key=value config file")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override a config key")
    sub.add_argument("--out", type=Path, default=Path("."),
                     help="output directory (default: current directory)")
    sub.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tvconv", description="Layout-specific convolution workbench")
    subs = parser.add_subparsers(dest="command", required=True)

    _add_common(subs.add_parser("synth", help="generate a layout dataset"))
    _add_common(subs.add_parser("train", help="train a small classifier"))

    p = subs.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--data", type=Path, default=None)
    _add_common(p)

    p = subs.add_parser("count", help="analytic MACs/params for an arch file")
    p.add_argument("arch", type=Path)
    _add_common(p)

    p = subs.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--instances", type=int, default=None)
    _add_common(p)

    p = subs.add_parser("export-affinity",
                        help="write affinity maps as PGM plus raw tensor")
    p.add_argument("--checkpoint", type=Path, default=None)
    _add_common(p)

    p = subs.add_parser("ablate", help="run a named ablation")
    p.add_argument("name", choices=_ABLATIONS)
    _add_common(p)
    return parser


def _flag_overrides(args: argparse.Namespace) -> list[str]:
    """Command-specific flags become overrides, so flags beat --set."""
    extra = []
    for attr, key in (("checkpoint", "checkpoint"), ("data", "data.path"),
                      ("arch", "arch"), ("seed", "seed"), ("tol", "tol"),
                      ("instances", "instances"), ("name", "name")):
        value = getattr(args, attr, None)
        if value is not None:
            extra.append(f"{key}={value}")
    return extra


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    rc = RunConfig(command=args.command, config=args.config,
                   overrides=tuple(list(args.overrides)
                                   + _flag_overrides(args)),
                   outdir=args.out, verbose=args.verbose)
    try:
        return _COMMANDS[rc.command](rc)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
