"""Experiment pipeline: generate labeled data, train an operator, evaluate it.

Every stage is a pure function of its config and seeds. Reports therefore
contain no wall-clock data; timings are returned separately so callers can
store them beside the report.
"""
from __future__ import annotations

import copy
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DarcyOpError, InvalidArgument
from .features import build_inputs, num_input_channels
from .grid import CovarianceSpec, Grid, default_covariance, sample_log_perm_field
from .metrics import log_histogram, relative_error, well_block_error
from .network import Architecture, OperatorNet, TrainConfig, predict
from .sampling import SamplerConfig, Samples, adaptive_training_loop
from .single_phase import SinglePhaseConfig, corner_producers, five_spot, simulate_single_phase
from .storage import (
    Dataset, atomic_write_text, canonical_json, dataset_digest, read_dataset, read_model,
    write_dataset, write_model,
)
from .two_phase import TwoPhaseConfig, simulate_two_phase

REPORT_SCHEMA = 1

DEFAULTS = {
    "grid": {"nx": 16, "ny": 16, "nz": 1, "dx": 10.0, "dy": 10.0, "dz": 1.0},
    "depth_3d": 4,  # layers used when a 3D run is requested on a 2D grid config
    "covariance": {},  # overrides of the default covariance
    "single_phase": {"dt": 1000.0, "num_steps": 50},
    "two_phase": {"dt": 2000.0, "num_steps": 50},
    "wells": {"producer_bhp": 2e7, "injector_bhp": 4e7, "pi_single": 1e-10, "pi_two": 1e-13},
    "snapshots": [10, 20, 30, 40, 50],
    "network": {"base_width": 16, "levels": 2, "branch_channels": 16, "time_dim": 64,
                "trunk_hidden": 64},
    "training": {"learning_rate": 5e-3, "epochs": 10, "iterations": 120, "batch_size": 16},
    "sampling": {"components": list(range(1, 9)), "variance_threshold": 0.95,
                 "standard_bic": False},
}


def merge_config(base: dict, override: dict | None) -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _build(cls, values: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise InvalidArgument(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**values)


def field_seed(seed: int, index: int) -> int:
    """Independent per-sample seed derived from a run seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass
class Physics:
    """Grid, geostatistics, simulator and wells of one data-generating setup."""

    grid: Grid
    kind: str
    covariance: CovarianceSpec
    config: SinglePhaseConfig | TwoPhaseConfig
    wells: list
    times: np.ndarray

    @classmethod
    def from_config(cls, cfg: dict, phase: str = "single", dim: int = 2):
        if phase not in ("single", "two"):
            raise InvalidArgument(f"phase must be single or two, got {phase!r}")
        if dim not in (2, 3):
            raise InvalidArgument(f"dim must be 2 or 3, got {dim!r}")
        g = dict(cfg["grid"])
        if dim == 2:
            g["nz"] = 1
        elif g.get("nz", 1) == 1:
            g["nz"] = cfg["depth_3d"]
        grid = Grid(**g)
        cov = default_covariance(grid, **cfg["covariance"])
        w = cfg["wells"]
        if phase == "single":
            sim = _build(SinglePhaseConfig, cfg["single_phase"])
            wells = corner_producers(grid, w["producer_bhp"], w["pi_single"])
        else:
            sim = _build(TwoPhaseConfig, cfg["two_phase"])
            wells = five_spot(grid, w["producer_bhp"], w["injector_bhp"], w["pi_two"])
        times = np.asarray(cfg["snapshots"], dtype=int)
        if times.size == 0 or times.min() < 1 or times.max() > sim.num_steps:
            raise InvalidArgument(f"snapshot steps must lie in 1..{sim.num_steps}")
        return cls(grid, phase, cov, sim, wells, times)

    @property
    def num_fields(self) -> int:
        return 1 if self.kind == "single" else 2

    @property
    def viscosity(self) -> float:
        """Viscosity folded into transmissibility features (geometric for two-phase)."""
        return self.config.viscosity if self.kind == "single" else 1.0

    @property
    def producer_cells(self) -> np.ndarray:
        return np.array(sorted(w.cell_id for w in self.wells if w.kind == "producer"))

    def draw_field(self, seed: int) -> np.ndarray:
        return sample_log_perm_field(self.grid, self.covariance, seed)

    def simulate(self, perm):
        """Snapshot trajectories ``(pressure, saturation or None)``, each ``(M, ncell)``."""
        idx = self.times - 1
        if self.kind == "single":
            out = simulate_single_phase(self.grid, perm, self.config, self.wells)
            return out.pressure[idx], None
        out = simulate_two_phase(self.grid, perm, self.config, self.wells)
        return out.pressure[idx], out.saturation[idx]

    def label(self, perm) -> np.ndarray:
        """Physical label tensor ``[M, O, ny, nx]`` for one field."""
        p, s = self.simulate(perm)
        g = self.grid
        parts = [p.reshape(len(p), g.nz, g.ny, g.nx)]
        if s is not None:
            parts.append(s.reshape(len(s), g.nz, g.ny, g.nx))
        return np.concatenate(parts, axis=1)

    def featurize(self, perms, feature: str) -> np.ndarray:
        return build_inputs(self.grid, perms, self.viscosity, feature)


def generation_config(cfg: dict, phase: str, dim: int) -> dict:
    keys = ("grid", "depth_3d", "covariance", "single_phase", "two_phase", "wells", "snapshots")
    return {"physics": {k: cfg[k] for k in keys}, "phase": phase, "dim": dim}


def generate_dataset(cfg: dict, num: int, seed: int, phase: str = "single", dim: int = 2,
                     out=None) -> Dataset:
    """Draw ``num`` fields with per-sample seeds and label each with the simulator."""
    cfg = merge_config(DEFAULTS, cfg)
    if num < 1:
        raise InvalidArgument("need at least one sample")
    physics = Physics.from_config(cfg, phase, dim)
    g = physics.grid
    seeds = [field_seed(seed, i) for i in range(num)]
    perms = np.array([physics.draw_field(s) for s in seeds])
    press, satw = [], []
    for k in perms:
        p, s = physics.simulate(k)
        press.append(p)
        satw.append(s)
    shape = (num, len(physics.times), g.nz, g.ny, g.nx)
    data = Dataset(
        {"nx": g.nx, "ny": g.ny, "nz": g.nz, "dx": g.dx, "dy": g.dy, "dz": g.dz},
        phase, physics.times.tolist(), perms.reshape(num, g.nz, g.ny, g.nx),
        np.array(press).reshape(shape),
        np.array(satw).reshape(shape) if phase == "two" else None,
        seeds=seeds, config=generation_config(cfg, phase, dim))
    if out is not None:
        write_dataset(out, data)
    return data


def physics_of(data: Dataset) -> Physics:
    c = data.config
    return Physics.from_config(c["physics"], c["phase"], c["dim"])


def dataset_samples(data: Dataset) -> Samples:
    """Flat permeability ``(N, ncell)`` and labels ``[N, M, O, ny, nx]``."""
    n = len(data)
    perm = data.perm.reshape(n, -1)
    labels = data.press if data.satw is None else np.concatenate([data.press, data.satw], axis=2)
    return Samples(perm, labels)


@dataclass(frozen=True)
class TrainRequest:
    model: str = "aronet"
    feature: str = "trans"
    sampler: str = "random"
    init: int = 100
    events: int = 0
    per_event: int = 20
    interval: int = 10
    seed: int = 0


def train_on_dataset(data: Dataset, req: TrainRequest, overrides: dict | None = None,
                     out=None, digest: str | None = None):
    """Train one operator on ``data``; returns ``(net, stats, summary, growth log)``.

    The first ``req.init`` samples form the initial training set; the rest of
    the dataset serves as the RAR candidate pool.
    """
    cfg = merge_config(DEFAULTS, overrides)
    physics = physics_of(data)
    samples = dataset_samples(data)
    if not 2 <= req.init <= len(samples):
        raise InvalidArgument(f"--init must lie in 2..{len(samples)}")
    initial = samples.subset(np.arange(req.init))
    pool = samples.subset(np.arange(req.init, len(samples)))
    g = physics.grid
    arch = Architecture(req.model, num_input_channels(g, req.feature),
                        physics.num_fields * g.nz, g.ny, g.nx, **cfg["network"])
    net = OperatorNet(arch, seed=req.seed)
    train_cfg = _build(TrainConfig, {**cfg["training"], "seed": req.seed})
    s = cfg["sampling"]
    sampler = SamplerConfig(req.sampler, req.interval, req.events, req.per_event,
                            tuple(s["components"]), s["variance_threshold"], s["standard_bic"],
                            req.seed)
    net, grown, stats, log = adaptive_training_loop(
        net, initial, physics.times, lambda k: physics.featurize(k, req.feature), physics.label,
        sampler, train_cfg, draw_field=physics.draw_field, pool=pool)
    summary = {
        "request": req.__dict__,
        "network": cfg["network"],
        "training": cfg["training"],
        "sampling": cfg["sampling"],
        "dataset_digest": digest,
        "train_size": len(grown),
        "growth": log.to_dict(),
        "final_loss": log.losses[-1] if log.losses else None,
        "times": physics.times.tolist(),
        "generation": data.config,
    }
    if out is not None:
        write_model(out, net, stats, summary)
    return net, stats, summary, log


def evaluate_model(net, stats, feature: str, data: Dataset, digest: str | None = None) -> dict:
    physics = physics_of(data)
    samples = dataset_samples(data)
    inputs = stats.normalize_inputs(physics.featurize(samples.perm, feature))
    pred_norm = predict(net, inputs, physics.times)
    labels_norm = stats.normalize_outputs(samples.labels)
    pred = stats.denormalize_outputs(pred_norm)
    g = physics.grid
    names = ["pressure", "saturation"][:physics.num_fields]
    wells = physics.producer_cells
    per_field, per_field_well = {}, {}
    for f, name in enumerate(names):
        sl = slice(f * g.nz, (f + 1) * g.nz)
        # per sample: [M, nz, ny, nx] -> [M, ncell]
        p = pred[:, :, sl].reshape(len(pred), len(physics.times), g.ncell)
        y = samples.labels[:, :, sl].reshape(len(pred), len(physics.times), g.ncell)
        per_field[name] = [relative_error(p[i], y[i]) for i in range(len(p))]
        per_field_well[name] = [well_block_error(p[i], y[i], wells) for i in range(len(p))]
    errors = np.mean([per_field[n] for n in names], axis=0)
    well_errors = np.mean([per_field_well[n] for n in names], axis=0)
    return {
        "schema": REPORT_SCHEMA,
        "num_test": len(samples),
        "mre": float(errors.mean()),
        "well_block_mre": float(well_errors.mean()),
        "mse": float(np.mean((pred_norm - labels_norm) ** 2)),
        "per_sample": errors.tolist(),
        "per_sample_well": well_errors.tolist(),
        "fields": {n: {"mre": float(np.mean(per_field[n])),
                       "well_block_mre": float(np.mean(per_field_well[n])),
                       "per_sample": per_field[n]} for n in names},
        "histogram": log_histogram(errors),
        "test_dataset_digest": digest,
        "definitions": {
            "relative_error": "||pred - label||_2 / ||label||_2 over all cells and snapshots "
                              "of one sample, physical units; averaged over fields",
            "well_block": "the same restricted to producer cells",
            "mse": "mean squared error in normalized output space",
        },
    }


def evaluate_dirs(model_dir, data_dir) -> dict:
    saved = read_model(model_dir)
    data = read_dataset(data_dir)
    feature = saved.extras.get("request", {}).get("feature", "trans")
    report = evaluate_model(saved.net, saved.stats, feature, data, dataset_digest(data_dir))
    report["model"] = saved.extras
    return report


def dump_report(report: dict, path):
    atomic_write_text(path, canonical_json(report) + "\n")


EXPERIMENT_DEFAULTS = {"phase": "single", "dim": 2, "num_train": 200, "num_test": 100,
                       "train_seed": 0, "test_seed": 1, **TrainRequest().__dict__}


def run_experiment(config: dict, out) -> tuple[dict, dict]:
    """generate -> train -> evaluate into ``out``; returns ``(report, timings)``.

    A failing stage yields a partial report naming the stage.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    exp = {**EXPERIMENT_DEFAULTS, **config.get("experiment", {})}
    req = _build(TrainRequest, {k: exp[k] for k in TrainRequest().__dict__})
    timings = {}
    report = {"schema": REPORT_SCHEMA, "status": "ok", "experiment": exp}
    stage = "generate"
    try:
        t0 = time.perf_counter()
        train_data = generate_dataset(config, exp["num_train"], exp["train_seed"], exp["phase"],
                                      exp["dim"], out / "data")
        test_data = generate_dataset(config, exp["num_test"], exp["test_seed"], exp["phase"],
                                     exp["dim"], out / "test")
        timings["simulation"] = time.perf_counter() - t0
        stage = "train"
        t0 = time.perf_counter()
        net, stats, summary, log = train_on_dataset(train_data, req, config, out / "model",
                                                    dataset_digest(out / "data"))
        timings["sampling"] = log.sampling_seconds
        timings["training"] = time.perf_counter() - t0 - log.sampling_seconds
        stage = "evaluate"
        t0 = time.perf_counter()
        report.update(evaluate_model(net, stats, req.feature, test_data,
                                     dataset_digest(out / "test")))
        report["model"] = summary
        timings["evaluation"] = time.perf_counter() - t0
    except (DarcyOpError, ArithmeticError, ValueError, OSError) as err:
        report.update(status="failed", stage=stage, error=f"{type(err).__name__}: {err}")
    dump_report(report, out / "report.json")
    atomic_write_text(out / "timings.json", canonical_json(timings) + "\n")
    return report, timings
