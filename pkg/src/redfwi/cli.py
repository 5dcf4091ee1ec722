"""Command-line driver. Every subcommand reads one JSON config and writes into
an output directory together with a ``manifest.json``.

Config sections (all optional, unknown keys rejected)::

    {"seed": 0,
     "family":    {FamilySpec fields ..., "count": 10},
     "geometry":  {"n_sources": 5, "nt": 1000, "dt": 0.001, "peak_frequency": 15, ...},
     "train":     {TrainConfig fields ...},
     "schedule":  {"T": 1000, "start": -3, "end": 3, "tau": 1, "gamma_min": 1e-4},
     "inversion": {InversionConfig fields ..., "init_sigma": 10},
     "corrupt":   {"noise_std": 0.0, "drop_count": 0},
     "render":    {"vmin": 1500, "vmax": 4500}}

On failure a single line ``{"error": <type>, "message": <text>}`` goes to
stderr and the exit code is nonzero.
"""

import argparse
from dataclasses import fields
import json
import os
import sys

import numpy as np

from . import formats
from .exceptions import ConfigurationError, ContractError, RedFWIError
from .inversion import InversionConfig, add_gaussian_noise, drop_traces, invert
from .metrics import MetricsReport
from .prior import Normalizer, TinyDenoiser, TrainConfig, train_ddpm
from .schedule import build_sigmoid_schedule
from .velocity_models import FamilySpec, VelocityModel, gaussian_smooth, generate
from .wave import SeismicSurvey, default_geometry, simulate_survey

SECTIONS = {"seed", "family", "geometry", "train", "schedule", "inversion", "corrupt", "render"}
GEOMETRY_KEYS = {"n_sources", "nt", "dt", "peak_frequency", "depth_index", "source_amplitude",
                 "sponge_width", "sponge_strength", "order"}
SCHEDULE_KEYS = {"T", "start", "end", "tau", "gamma_min"}


def load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = set(cfg) - SECTIONS
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _section(cfg, name, allowed):
    sec = dict(cfg.get(name, {}))
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigurationError(f"unknown keys in '{name}': {sorted(unknown)}")
    return sec


def _dataclass_keys(cls):
    return {f.name for f in fields(cls)}


def family_from_config(cfg):
    sec = _section(cfg, "family", _dataclass_keys(FamilySpec) | {"count"})
    count = int(sec.pop("count", 10))
    for key in ("layer_count_range", "velocity_range", "fault_throw_range"):
        if key in sec:
            sec[key] = tuple(sec[key])
    sec.setdefault("seed", cfg.get("seed", 0))
    return FamilySpec(**sec), count


def geometry_from_config(cfg, shape):
    sec = _section(cfg, "geometry", GEOMETRY_KEYS)
    return default_geometry(shape[0], shape[1], **sec)


def schedule_from_config(cfg):
    return build_sigmoid_schedule(**_section(cfg, "schedule", SCHEDULE_KEYS))


def train_from_config(cfg):
    sec = _section(cfg, "train", _dataclass_keys(TrainConfig))
    sec.setdefault("seed", cfg.get("seed", 0))
    return TrainConfig(**sec)


def inversion_from_config(cfg):
    sec = _section(cfg, "inversion", _dataclass_keys(InversionConfig) | {"init_sigma"})
    sigma = float(sec.pop("init_sigma", 10.0))
    sec.setdefault("seed", cfg.get("seed", 0))
    return InversionConfig(**sec), sigma


def save_survey(prefix, survey):
    """``<prefix>.rdq`` (shot, receiver, time), ``<prefix>.mask.rdq`` and ``<prefix>.json``."""
    formats.save_grid(prefix + ".rdq", survey.data)
    formats.save_grid(prefix + ".mask.rdq", survey.trace_mask.astype(np.float32))
    with open(prefix + ".json", "w") as fh:
        json.dump({"norm_factor": survey.norm_factor}, fh)
    return [os.path.basename(prefix + ext) for ext in (".rdq", ".mask.rdq", ".json")]


def load_survey(prefix):
    if prefix.endswith(".rdq"):
        prefix = prefix[:-4]
    data = formats.load_grid(prefix + ".rdq").astype(np.float64)
    mask = formats.load_grid(prefix + ".mask.rdq") > 0.5
    with open(prefix + ".json") as fh:
        meta = json.load(fh)
    return SeismicSurvey(data, mask, meta["norm_factor"])


def load_models(path, dx=10.0):
    arr = formats.load_grid(path).astype(np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ContractError(f"{path}: expected a model (H, W) or stack (N, H, W)")
    return [VelocityModel(a, dx) for a in arr]


def _pick(models, index):
    if index is None:
        if len(models) != 1:
            raise ContractError("file holds several models; pass --index")
        return models[0]
    if not 0 <= index < len(models):
        raise ContractError(f"--index {index} out of range for {len(models)} models")
    return models[index]


def cmd_gen(args, cfg):
    spec, count = family_from_config(cfg)
    models = generate(spec, count)
    formats.save_grid(os.path.join(args.out, "models.rdq"), np.stack([m.values for m in models]))
    return {"family_seed": spec.seed}, ["models.rdq"]


def cmd_forward(args, cfg):
    models = load_models(args.models)
    outputs = []
    for i, m in enumerate(models):
        geom = geometry_from_config(cfg, m.shape)
        outputs += save_survey(os.path.join(args.out, f"survey_{i:03d}"), simulate_survey(m, geom))
    return {}, outputs


def cmd_corrupt(args, cfg):
    sec = _section(cfg, "corrupt", {"noise_std", "drop_count"})
    seed = int(cfg.get("seed", 0))
    noise_rng, drop_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    s = load_survey(args.survey)
    s = add_gaussian_noise(s, float(sec.get("noise_std", 0.0)), noise_rng)
    s = drop_traces(s, int(sec.get("drop_count", 0)), drop_rng)
    return {"seed": seed}, save_survey(os.path.join(args.out, "survey"), s)


def cmd_train_prior(args, cfg):
    models = load_models(args.models)
    tcfg = train_from_config(cfg)
    fam = cfg.get("family", {})
    lo, hi = fam.get("velocity_range", (1500.0, 4500.0))
    den = TinyDenoiser(schedule_from_config(cfg), Normalizer(lo, hi), seed=tcfg.seed)
    den, losses = train_ddpm(den, models, tcfg)
    den.save(os.path.join(args.out, "prior"))
    formats.write_csv(os.path.join(args.out, "loss.csv"), ["iteration", "loss"], enumerate(losses))
    return {"train_seed": tcfg.seed}, ["loss.csv", "prior/params.rdq", "prior/manifest.json"]


def cmd_invert(args, cfg):
    icfg, sigma = inversion_from_config(cfg)
    observed = load_survey(args.survey)
    truth = _pick(load_models(args.truth), args.index) if args.truth else None
    if args.init:
        x0 = _pick(load_models(args.init), args.index)
    elif truth is not None:
        x0 = gaussian_smooth(truth, sigma)
    else:
        raise ConfigurationError("invert needs --init or --truth (smoothed to make a start)")
    pred = TinyDenoiser.load(args.prior) if args.prior else None
    geom = geometry_from_config(cfg, x0.shape)
    trace = invert(observed, geom, x0, pred, icfg, truth=truth)
    formats.save_grid(os.path.join(args.out, "model.rdq"), trace.final_model.values)
    trace.to_csv(os.path.join(args.out, "trace.csv"))
    return {"inversion_seed": icfg.seed}, ["model.rdq", "trace.csv"]


def cmd_eval(args, cfg):
    truth = _pick(load_models(args.truth), args.index)
    recon = _pick(load_models(args.recon), None)
    report = MetricsReport.compute(truth.values, recon.values)
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
    return {}, ["metrics.json"]


def cmd_render(args, cfg):
    sec = _section(cfg, "render", {"vmin", "vmax"})
    models = load_models(args.model)
    outputs = []
    for i, m in enumerate(models):
        name = f"model_{i:03d}.pgm"
        formats.render_pgm(m.values, os.path.join(args.out, name),
                           float(sec.get("vmin", 1500.0)), float(sec.get("vmax", 4500.0)))
        outputs.append(name)
    return {}, outputs


def cmd_schedule_dump(args, cfg):
    schedule_from_config(cfg).to_csv(os.path.join(args.out, "schedule.csv"))
    return {}, ["schedule.csv"]


def build_parser():
    p = argparse.ArgumentParser(prog="redfwi", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **inputs):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", required=True, help="output directory")
        for flag, (required, help_text) in inputs.items():
            sp.add_argument("--" + flag, required=required, help=help_text)
        sp.set_defaults(func=fn)
        return sp

    add("gen", cmd_gen)
    add("forward", cmd_forward, models=(True, "model grid file (H, W) or (N, H, W)"))
    add("corrupt", cmd_corrupt, survey=(True, "survey prefix"))
    add("train-prior", cmd_train_prior, models=(True, "training models grid file"))
    sp = add("invert", cmd_invert, survey=(True, "observed survey prefix"),
             init=(False, "initial model grid"), truth=(False, "true model grid (benchmark mode)"),
             prior=(False, "trained prior directory"))
    sp.add_argument("--index", type=int, help="model index inside stacked grid files")
    sp = add("eval", cmd_eval, truth=(True, "true model grid"), recon=(True, "reconstruction grid"))
    sp.add_argument("--index", type=int)
    add("render", cmd_render, model=(True, "model grid file"))
    add("schedule-dump", cmd_schedule_dump)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        seeds, outputs = args.func(args, cfg)
        formats.write_manifest(args.out, args.command, cfg, seeds, outputs)
    except (RedFWIError, OSError, KeyError, ValueError, TypeError) as exc:
        line = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(line), file=sys.stderr)
        return 2 if isinstance(exc, ConfigurationError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
