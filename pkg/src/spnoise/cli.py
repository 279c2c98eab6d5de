"""Command-line front-end: ``spnoise <subcommand> [options]``.

Every report is deterministic for a given configuration and seed and embeds
the fully resolved configuration. Exit codes: 0 success, 2 input or
configuration error, 3 numerical divergence (partial output is written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from spnoise.analysis import (
    EXPT1,
    EXPT2,
    SCHEMA_VERSION,
    report_json,
    rvd,
    rvd_sweep,
    sweep,
)
from spnoise.core import make_rng
from spnoise.device import CrosstalkModel, LossModel, PhasePair, crosstalk_mean_db, port_insertion_loss
from spnoise.mesh import MeshKind, decompose, reconstruct
from spnoise.netsim import NoiseSpec, OguSpec
from spnoise.pipeline import (
    Dataset,
    TrainedModel,
    eval_accuracy,
    gen_gaussian,
    image_dataset,
    read_idx,
    read_image_csv,
    train,
)

OUT_DIR_ENV = "SPNOISE_OUT_DIR"
EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    kind: str = "clements"
    n: int = 8
    m: int = 1
    trials: int = 100
    xp_trials: int | None = None
    seed: int = 0
    weights: str = "haar"
    workers: int | None = None
    # loss / crosstalk / OGU / NAU overrides
    l_dc: float = 0.1
    l_m: float = 0.2
    l_p: float = 2.0
    l_mzi: float = 0.03
    x_bar: float = -25.0
    x_cross: float = -18.0
    sigma_frac: float = 0.05
    loss: bool = True
    crosstalk: bool = True
    leak_amplitude: str = "power"
    ogu_mode: str = "unity"
    ogu_gain: float = 17.0
    nau_loss: float = 0.0
    p_in_dbm: float = 0.0
    s_pd: float = -11.7
    penalty_mode: str = "linear"
    # train / infer
    dataset: str = "gaussian"
    classes: int = 2
    sigma: float = 0.1
    samples_per_class: int = 100
    layers: str = ""
    epochs: int = 50
    lr: float = 0.01
    nau: str = "plain_relu"
    model: str = ""
    # output
    out: str = ""
    format: str = "csv"

    def validate(self) -> "RunConfig":
        try:
            MeshKind.parse(self.kind)
            self.noise()
            self.ogu()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.n < 2 or self.m < 1 or self.trials < 1:
            raise ConfigError("n must be >= 2, m >= 1 and trials >= 1")
        if self.xp_trials is not None and self.xp_trials < 1:
            raise ConfigError("xp_trials must be >= 1")
        if self.weights not in ("haar", "gaussian"):
            raise ConfigError("weights must be 'haar' or 'gaussian'")
        if not 0.0 <= self.nau_loss <= 1.0:
            raise ConfigError("nau_loss must lie in [0, 1] dB")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be 'csv' or 'json'")
        if self.penalty_mode not in ("linear", "reference"):
            raise ConfigError("penalty_mode must be 'linear' or 'reference'")
        return self

    def loss_model(self) -> LossModel:
        if not self.loss:
            return LossModel.lossless()
        return LossModel(l_dc=self.l_dc, l_m=self.l_m, l_p=self.l_p, l_mzi=self.l_mzi)

    def noise(self) -> NoiseSpec:
        xt = CrosstalkModel(x_bar=self.x_bar, x_cross=self.x_cross, sigma_frac=self.sigma_frac,
                            enabled=self.crosstalk)
        return NoiseSpec(loss=self.loss_model(), crosstalk=xt, seed=self.seed, leak_amplitude=self.leak_amplitude)

    def ogu(self) -> OguSpec:
        return OguSpec(gain_db=self.ogu_gain, mode=self.ogu_mode)

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("workers")  # neither affects results
        d.pop("out")
        return d


_FIELDS = {f.name for f in fields(RunConfig)}

PRESETS = {
    "fig4": {},
    "fig5": {"n": 8, "m": 1, "trials": 100, "xp_trials": 1000, "ogu_mode": "unity"},
    "fig6": {"trials": 100, "ogu_mode": "fixed", "ogu_gain": 17.0},
    "fig7": {"n": 16, "m": 3, "crosstalk": False, "dataset": "gaussian", "classes": 16, "trials": 30},
    "fig8": {"n": 16, "m": 3, "dataset": "gaussian", "classes": 16, "trials": 10},
    "fig9": {"ogu_mode": "fixed", "ogu_gain": 17.0, "trials": 20},
    "fig10": {"trials": 100},
    "fig11": {"m": 1, "dataset": "gaussian", "trials": 10},
}


def load_config(path: str | None, overrides: dict, preset: str | None = None) -> RunConfig:
    """Merge preset < config file < command-line flags and validate."""
    values: dict = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if path:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(doc) - _FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update(doc)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        expected = {"int": int, "float": (int, float), "bool": bool, "str": str}.get(
            str(f.type).split(" |")[0])
        if expected and (not isinstance(v, expected) or (expected is int and isinstance(v, bool))):
            raise ConfigError(f"config key {f.name!r} has the wrong type ({type(v).__name__})")
    return cfg.validate()


def _out_dir(cfg: RunConfig) -> Path:
    d = Path(cfg.out or os.environ.get(OUT_DIR_ENV, "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


def _csv_text(header: list[str], rows: list[list], cfg: RunConfig) -> str:
    buf = io.StringIO()
    buf.write(f"# spnoise schema v{SCHEMA_VERSION}\n")
    buf.write("# config " + json.dumps(cfg.echo(), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _emit(cfg: RunConfig, stem: str, header: list[str], rows: list[list], extra: dict | None = None) -> None:
    out = _out_dir(cfg)
    if cfg.format == "csv":
        _write(out / f"{stem}.csv", _csv_text(header, rows, cfg))
    else:
        doc = {"schema_version": SCHEMA_VERSION, "config": cfg.echo(),
               "columns": header, "rows": [[_jsonable(v) for v in r] for r in rows]}
        if extra:
            doc.update(extra)
        _write(out / f"{stem}.json", report_json(doc))


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(v, (np.floating, np.integer)):
        return _jsonable(v.item())
    return v


def _workers(cfg: RunConfig) -> int:
    return cfg.workers if cfg.workers else (os.cpu_count() or 1)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


# --- matrices on disk ------------------------------------------------------------------

def _parse_entry(v) -> complex:
    if isinstance(v, dict):
        return complex(float(v["re"]), float(v.get("im", 0.0)))
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    raise ValueError(f"cannot parse matrix entry {v!r}")


def read_matrix(path) -> np.ndarray:
    """Read a complex matrix from JSON: rows of numbers, ``[re, im]`` pairs or ``{re, im}`` objects."""
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        doc = doc.get("matrix", doc.get("u"))
    if not isinstance(doc, list) or not doc or not all(isinstance(r, list) for r in doc):
        raise ValueError("matrix must be a non-empty list of rows")
    if len({len(r) for r in doc}) != 1:
        raise ValueError("matrix rows have different lengths")
    return np.array([[_parse_entry(v) for v in row] for row in doc], dtype=complex)


def matrix_to_json(m: np.ndarray) -> list:
    return [[{"re": float(v.real), "im": float(v.imag)} for v in row] for row in np.asarray(m)]


# --- subcommands ---------------------------------------------------------------------------

def cmd_decompose(args) -> int:
    try:
        u = read_matrix(args.input)
        prog = decompose(u, args.kind)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    err = rvd(u, reconstruct(prog))
    out = Path(args.output) if args.output else Path(os.environ.get(OUT_DIR_ENV, ".")) / "program.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(prog.to_json())
    print(f"rvd {err:.3e}")
    print(f"wrote {out}")
    return EXIT_OK


def _device_table(cfg: RunConfig) -> int:
    loss = cfg.loss_model()
    xt = CrosstalkModel(x_bar=cfg.x_bar, x_cross=cfg.x_cross)
    rows = []
    for theta in np.linspace(0.0, math.pi, 37):
        il = port_insertion_loss(PhasePair(float(theta)), loss)
        rows.append([float(theta), float(il[0]), float(il[1]), float(crosstalk_mean_db(theta, xt)) + cfg.p_in_dbm])
    _emit(cfg, "fig4_device", ["theta", "il_o1_db", "il_o2_db", "xp_mean_dbm"], rows)
    return EXIT_OK


def _grid(cfg: RunConfig, preset: str | None) -> tuple[list[str], list[int], list[int]]:
    if preset in ("fig6", "fig9"):
        return [k.value for k in MeshKind], [8, 16, 32, 64], [1, 2, 3]
    return [MeshKind.parse(cfg.kind).value], [cfg.n], [cfg.m]


def cmd_sweep(cfg: RunConfig, preset: str | None = None) -> int:
    if preset == "fig4":
        return _device_table(cfg)
    kinds, ns, ms = _grid(cfg, preset)
    rows = []
    for kind in kinds:
        for n in ns:
            for m in ms:
                rep = sweep(kind, n, m, cfg.trials, cfg.noise(), cfg.ogu(), cfg.seed, cfg.weights,
                            _workers(cfg), cfg.xp_trials, cfg.p_in_dbm, cfg.nau_loss)
                for y in range(n):
                    rows.append([kind, n, m, y, float(rep.mean_il_db[y]), float(rep.worst_il_db[y]),
                                 float(rep.mean_xp_dbm[y]), float(rep.worst_xp_dbm[y])])
    header = ["kind", "N", "M", "output_id", "mean_il_db", "worst_il_db", "mean_xp_dbm", "worst_xp_dbm"]
    _emit(cfg, preset or "sweep", header, rows)
    return EXIT_OK


def cmd_penalty(cfg: RunConfig, preset: str | None = None) -> int:
    kinds, ns, ms = _grid(cfg, preset)
    rows = []
    diverged = False
    for kind in kinds:
        for n in ns:
            for m in ms:
                rep = sweep(kind, n, m, cfg.trials, cfg.noise(), cfg.ogu(), cfg.seed, cfg.weights,
                            _workers(cfg), cfg.xp_trials, cfg.p_in_dbm, cfg.nau_loss)
                avg, worst = rep.penalty(cfg.s_pd, cfg.penalty_mode)
                for y in range(n):
                    rows.append([kind, n, m, y, float(avg.p_lsr_dbm[y]), bool(avg.diverged[y]),
                                 float(worst.p_lsr_dbm[y]), bool(worst.diverged[y])])
                rows.append([kind, n, m, "all", avg.average, avg.any_diverged, worst.worst, worst.any_diverged])
                diverged = diverged or avg.any_diverged or worst.any_diverged
    header = ["kind", "N", "M", "output_id", "average_dbm", "average_diverged", "worst_dbm", "worst_diverged"]
    _emit(cfg, preset or "penalty", header, rows)
    if diverged:
        print("warning: power-penalty bound diverged for some outputs", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_rvd(cfg: RunConfig, kinds: list[str], ns: list[int], compensate: bool = True) -> int:
    rows = []
    for kind in kinds:
        for n in ns:
            vals = rvd_sweep(kind, n, cfg.trials, cfg.noise(), cfg.seed, cfg.weights, _workers(cfg), compensate)
            rows.append([kind, n, cfg.trials, float(vals.mean()), float(vals.std()), float(vals.max())])
    _emit(cfg, "rvd", ["kind", "N", "trials", "mean_rvd", "std_rvd", "max_rvd"], rows)
    return EXIT_OK


def load_dataset(cfg: RunConfig) -> Dataset:
    spec = cfg.dataset
    if spec == "gaussian":
        return gen_gaussian(cfg.n, cfg.classes, cfg.sigma, cfg.seed, cfg.samples_per_class)
    if spec.startswith("idx:"):
        img, lbl = spec[4:].split(",")
        return image_dataset(read_idx(img), read_idx(lbl), cfg.n, seed=cfg.seed)
    if spec.endswith(".jsonl"):
        return Dataset.from_jsonl(spec)
    if spec.endswith(".csv") or spec.endswith(".csv.gz"):
        images, labels = read_image_csv(spec)
        return image_dataset(images, labels, cfg.n, seed=cfg.seed)
    raise ConfigError(f"unrecognised dataset {spec!r}")


def model_to_json(model: TrainedModel) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "n_classes": model.n_classes,
           "weights": [matrix_to_json(w) for w in model.weights],
           "nominal": model.nominal, "loss_history": model.loss_history, "converged": model.converged}
    return report_json(doc)


def model_from_json(path) -> TrainedModel:
    with open(path) as fh:
        doc = json.load(fh)
    weights = [np.array([[_parse_entry(v) for v in row] for row in w], dtype=complex) for w in doc["weights"]]
    return TrainedModel(weights, int(doc["n_classes"]), nominal=dict(doc.get("nominal", {})),
                        loss_history=list(doc.get("loss_history", [])), converged=bool(doc.get("converged", True)))


def _layer_dims(cfg: RunConfig) -> list[int]:
    return _int_list(cfg.layers) if cfg.layers else [cfg.n] * (cfg.m + 1)


def cmd_train(cfg: RunConfig) -> int:
    ds = load_dataset(cfg)
    model = train(ds, _layer_dims(cfg), cfg.epochs, cfg.lr, cfg.seed)
    out = _out_dir(cfg)
    _write(out / "model.json", model_to_json(model))
    for kind, acc in sorted(model.nominal.items()):
        print(f"{kind}: nominal test accuracy {acc:.4f}")
    if not model.converged:
        print(f"warning: training did not converge (final loss {model.loss_history[-1]:.4g})", file=sys.stderr)
    return EXIT_OK


def cmd_infer(cfg: RunConfig, kinds: list[str]) -> int:
    if not cfg.model:
        raise ConfigError("infer needs --model")
    model = model_from_json(cfg.model)
    ds = load_dataset(cfg)
    rows = []
    for kind in kinds:
        stats = eval_accuracy(model, ds, kind, cfg.noise(), cfg.nau, cfg.trials, cfg.seed, ogu=cfg.ogu())
        nominal = eval_accuracy(model, ds, kind, NoiseSpec.noiseless(), cfg.nau, 1, cfg.seed).mean
        rows.append([kind, nominal, stats.mean, stats.std, cfg.trials])
    _emit(cfg, "infer", ["kind", "nominal_accuracy", "mean_accuracy", "std_accuracy", "trials"], rows)
    return EXIT_OK


def cmd_expt(cfg: RunConfig, which: str) -> int:
    """Half-normal loss experiments: accuracy for sampled loss triples."""
    if not cfg.model:
        raise ConfigError("expt needs --model")
    model = model_from_json(cfg.model)
    ds = load_dataset(cfg)
    exp = EXPT1 if which == "expt1" else EXPT2
    rows = []
    for i, loss in enumerate(exp.sample(cfg.trials, make_rng(cfg.seed))):
        noise = NoiseSpec.loss_only(loss, seed=cfg.seed + i)
        acc = eval_accuracy(model, ds, cfg.kind, noise, cfg.nau, 1, cfg.seed + i).mean
        rows.append([i, loss.l_dc, loss.l_m, loss.propagation_db, acc])
    _emit(cfg, which, ["sample", "l_dc_db", "l_m_db", "l_prop_db", "accuracy"], rows)
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--preset", help="study preset (fig4 ... fig11)")
    p.add_argument("--kind", choices=[k.value for k in MeshKind])
    p.add_argument("--n", help="size N (rvd also accepts a list such as 4,8,16)")
    p.add_argument("--m", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--xp-trials", dest="xp_trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--weights", choices=["haar", "gaussian"])
    p.add_argument("--workers", type=int, help="parallel workers (default: all CPUs)")
    p.add_argument("--ogu-mode", dest="ogu_mode", choices=["unity", "fixed"])
    p.add_argument("--ogu-gain", dest="ogu_gain", type=float)
    p.add_argument("--nau-loss", dest="nau_loss", type=float)
    p.add_argument("--no-loss", dest="loss", action="store_const", const=False)
    p.add_argument("--no-crosstalk", dest="crosstalk", action="store_const", const=False)
    p.add_argument("--out", help=f"output directory (default: ${OUT_DIR_ENV} or the current directory)")
    p.add_argument("--format", choices=["csv", "json"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spnoise", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="decompose a unitary into an MZI phase program")
    p.add_argument("input", help="JSON file holding an N x N complex matrix")
    p.add_argument("--kind", default="clements", choices=[k.value for k in MeshKind])
    p.add_argument("--output", "-o")

    p = sub.add_parser("sweep", help="Monte-Carlo loss/crosstalk statistics")
    _add_common(p)
    p = sub.add_parser("penalty", help="laser power penalty")
    _add_common(p)
    p.add_argument("--s-pd", dest="s_pd", type=float)
    p.add_argument("--penalty-mode", dest="penalty_mode", choices=["linear", "reference"])
    p = sub.add_parser("rvd", help="RVD of noisy single-layer matrices")
    _add_common(p)
    p.add_argument("--all-kinds", action="store_true")
    p.add_argument("--sizes", "--ns", dest="sizes", help="comma-separated sizes, e.g. 4,8,16")
    p.add_argument("--raw", action="store_true", help="do not compensate the global gain")
    for name in ("train", "infer", "expt1", "expt2"):
        p = sub.add_parser(name, help={"train": "train a complex-valued network",
                                       "infer": "noisy inference accuracy",
                                       "expt1": "half-normal loss experiment (min-value mean)",
                                       "expt2": "half-normal loss experiment (zero mean)"}[name])
        _add_common(p)
        p.add_argument("--dataset")
        p.add_argument("--classes", type=int)
        p.add_argument("--sigma", type=float)
        p.add_argument("--layers", help="comma-separated widths, e.g. 16,16,16,16")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--nau", choices=["plain_relu", "ideal_eq6", "nonideal_eq10"])
        p.add_argument("--model")
        p.add_argument("--all-kinds", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "decompose":
        return cmd_decompose(args)
    skip = {"command", "config", "preset", "all_kinds", "sizes", "raw"}
    overrides = {k: v for k, v in vars(args).items() if k not in skip}
    try:
        sizes = None
        if overrides.get("n") is not None:
            sizes = _int_list(overrides["n"])
            if len(sizes) != 1 and args.command != "rvd":
                raise ConfigError("--n takes a single size for this command")
            overrides["n"] = sizes[0]
        if getattr(args, "sizes", None):
            sizes = _int_list(args.sizes)
        cfg = load_config(args.config, overrides, args.preset)
        print("config " + json.dumps(cfg.echo(), sort_keys=True))
        kinds = [k.value for k in MeshKind] if getattr(args, "all_kinds", False) else [MeshKind.parse(cfg.kind).value]
        if args.command == "sweep":
            return cmd_sweep(cfg, args.preset)
        if args.command == "penalty":
            return cmd_penalty(cfg, args.preset)
        if args.command == "rvd":
            if sizes is None:
                sizes = [4, 8, 16, 32, 64] if args.preset == "fig10" else [cfg.n]
            return cmd_rvd(cfg, kinds, sizes, compensate=not args.raw)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "infer":
            return cmd_infer(cfg, kinds)
        return cmd_expt(cfg, args.command)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
