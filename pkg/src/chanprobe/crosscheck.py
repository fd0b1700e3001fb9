"""Application cross-check and metric suite.

A generator is fitted on RPE training data and sampled; every application model is
trained once on the RPE training set and once on each generated set, and all of
them are scored on the same RPE test set.
"""

from __future__ import annotations

import csv
import json
import logging
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .apps import EstimatorModel, compress_reconstruct, fit_compressor, nmse, observe
from .core import ChannelDataset, NoiseConfig, RngStream, UraGeometry, dump_json, pmap, read_dataset, stack_real
from .errors import ChanprobeError, ConfigError, InsufficientData
from .genmod.diffusion import RealGmm, make_schedule, sample_diffusion
from .genmod.gmm import fit_gmm, fit_scov, sample_gmm
from .metrics import (
    Codebook,
    build_codebook,
    fingerprint,
    median_bandwidth,
    mmd_unbiased,
    spectral_efficiency,
    tvd,
    wasserstein1,
)
from .synth import ScenarioConfig, generate_rpe

log = logging.getLogger(__name__)

RPE = "RPE"
GENERATOR_KINDS = ("identity", "scov", "gmm", "diffusion")
ESTIMATOR_MODELS = {"lmmse": "lmmse", "gmm-estimator": "gmm"}

DEFAULT_GMM = {"components": 32, "tol": 1e-4, "max_iter": 30}


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorSpec:
    id: str
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ConfigError(f"unknown generator kind {self.kind!r}")
        if self.id == RPE:
            raise ConfigError(f"generator id {RPE!r} is reserved")


@dataclass(frozen=True)
class ApplicationSpec:
    kind: str
    model: str
    grid: tuple
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "estimation":
            if self.model not in ESTIMATOR_MODELS:
                raise ConfigError(f"unknown estimator {self.model!r}")
        elif self.kind == "compression":
            if self.model != "pca":
                raise ConfigError(f"unknown compression model {self.model!r}")
        else:
            raise ConfigError(f"unknown application kind {self.kind!r}")
        if not self.grid:
            raise ConfigError(f"{self.kind}/{self.model}: grid must be non-empty")

    @property
    def grid_name(self) -> str:
        return "snr_db" if self.kind == "estimation" else "rho"


@dataclass(frozen=True)
class MetricSpec:
    snr_db: float = 20.0
    cb_v: int = 4
    cb_h: int = 16
    bandwidth: Any = "auto"
    mmd_samples: int | None = None


@dataclass(frozen=True)
class CrossCheckPlan:
    seed: int
    generators: tuple
    applications: tuple
    sample_count: int
    data: dict
    metrics: MetricSpec | None = MetricSpec()

    def __post_init__(self):
        if self.sample_count < 1:
            raise ConfigError("sample_count must be >= 1")
        ids = [g.id for g in self.generators]
        if len(set(ids)) != len(ids):
            raise ConfigError("generator ids must be unique")
        if "synth" not in self.data and not {"train", "test"} <= set(self.data):
            raise ConfigError("data must give either a 'synth' block or 'train'/'test' paths")
        if "synth" not in self.data:
            paths = [self.data.get(k) for k in ("train", "val", "test") if self.data.get(k)]
            if len(set(map(str, paths))) != len(paths):
                raise ConfigError("train/val/test must come from distinct files")

    @classmethod
    def from_dict(cls, d: dict) -> "CrossCheckPlan":
        try:
            gens = tuple(GeneratorSpec(g["id"], g["kind"], {k: v for k, v in g.items() if k not in ("id", "kind")})
                         for g in d.get("generators", []))
            apps = []
            for a in d.get("applications", []):
                grid_key = "snr_db" if a["kind"] == "estimation" else "rho"
                grid = a.get(grid_key, a.get("grid"))
                if grid is None:
                    raise ConfigError(f"application {a} lacks a {grid_key} grid")
                grid = tuple(grid) if isinstance(grid, (list, tuple)) else (grid,)
                params = {k: v for k, v in a.items() if k not in ("kind", "model", grid_key, "grid")}
                apps.append(ApplicationSpec(a["kind"], a["model"], grid, params))
            metrics = d.get("metrics", {})
            return cls(
                seed=int(d.get("seed", 0)),
                generators=gens,
                applications=tuple(apps),
                sample_count=int(d.get("sample_count", 50_000)),
                data=dict(d["data"]),
                metrics=None if metrics is None else MetricSpec(**metrics),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid cross-check plan: {exc}") from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "CrossCheckPlan":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "sample_count": self.sample_count,
            "data": self.data,
            "generators": [{"id": g.id, "kind": g.kind, **g.params} for g in self.generators],
            "applications": [{"kind": a.kind, "model": a.model, a.grid_name: list(a.grid), **a.params}
                             for a in self.applications],
            "metrics": None if self.metrics is None else asdict(self.metrics),
        }


def load_rpe(plan: CrossCheckPlan) -> dict[str, ChannelDataset]:
    """Train/val/test splits: contiguous, disjoint slices of one normalized synthetic draw, or files."""
    if "synth" in plan.data:
        spec = dict(plan.data["synth"])
        sizes = {k: int(spec.pop(f"n_{k}", 0)) for k in ("train", "val", "test")}
        if sizes["train"] < 2 or sizes["test"] < 1:
            raise ConfigError("synthetic data needs n_train >= 2 and n_test >= 1")
        scenario = ScenarioConfig.from_dict({"seed": plan.seed, **spec.get("scenario", {})})
        full = generate_rpe(scenario, sum(sizes.values()))
        out, start = {}, 0
        for key in ("train", "val", "test"):
            stop = start + sizes[key]
            if sizes[key]:
                out[key] = ChannelDataset(full.samples[start:stop], meta={**full.meta, "split": key,
                                                                          "rows": [start, stop]})
            start = stop
        return out
    return {k: read_dataset(plan.data[k]) for k in ("train", "val", "test") if plan.data.get(k)}


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    generator: str
    w1d: float | None = None
    tvd: float | None = None
    mmd: float | None = None
    bandwidth: float | None = None
    n_samples: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class CrossCheckResult:
    cells: list
    metric_rows: list
    metadata: dict
    errors: list = field(default_factory=list)

    def cell(self, model: str, source: str, value) -> dict:
        for c in self.cells:
            if c["model"] == model and c["source"] == source and c["value"] == value:
                return c
        raise KeyError((model, source, value))

    def nmse(self, model: str, source: str, value) -> float:
        return self.cell(model, source, value)["nmse"]

    def sources(self) -> list[str]:
        seen = []
        for c in self.cells:
            if c["source"] not in seen:
                seen.append(c["source"])
        return seen

    def to_dict(self) -> dict:
        meta = {k: v for k, v in self.metadata.items() if k != "runtimes"}
        return {
            "cells": self.cells,
            "table1": [asdict(r) for r in self.metric_rows],
            "metadata": meta,
            "errors": self.errors,
        }

    def write(self, outdir: str | Path) -> list[Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = [outdir / "result.json", outdir / "table2.csv", outdir / "table1.csv"]
        dump_json(self.to_dict(), paths[0])
        write_table2_csv(self, paths[1])
        write_table1_csv(self.metric_rows, paths[2])
        return paths


def write_table2_csv(result: CrossCheckResult, path: str | Path) -> None:
    sources = result.sources()
    keys = []
    for c in result.cells:
        key = (c["application"], c["model"], c["param"], c["value"])
        if key not in keys:
            keys.append(key)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["application", "model", "param", "value", *sources])
        for key in keys:
            row = list(key)
            for s in sources:
                try:
                    v = result.cell(key[1], s, key[3])["nmse"]
                except KeyError:
                    v = None
                row.append("" if v is None else repr(float(v)))
            w.writerow(row)


def write_table1_csv(rows: list[MetricReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "w1d", "tvd", "mmd", "bandwidth", "error"])
        for r in rows:
            w.writerow([r.generator, *("" if v is None else repr(float(v)) for v in (r.w1d, r.tvd, r.mmd, r.bandwidth)),
                        r.error or ""])


# ---------------------------------------------------------------------------
# metric suite
# ---------------------------------------------------------------------------

def run_metric_suite(
    rpe_test: ChannelDataset,
    generated: dict[str, ChannelDataset],
    codebook: Codebook,
    noise: NoiseConfig,
    bandwidth="auto",
    mmd_samples: int | None = None,
    seeds: dict | None = None,
) -> list[MetricReport]:
    """One row per generator: W1D between SE distributions, fingerprint TVD and MMD.

    The MMD uses the first L samples of both sets, L = min(sizes, ``mmd_samples``).
    """
    if rpe_test.n_samples < 100:
        raise InsufficientData("metric suite needs at least 100 reference samples")
    ref_se = spectral_efficiency(rpe_test, noise).values
    ref_fp = fingerprint(codebook, rpe_test)
    rows = []
    for gen_id, ds in generated.items():
        row = MetricReport(gen_id, seeds=dict(seeds or {}).get(gen_id, {}))
        try:
            if ds.n_samples < 100:
                raise InsufficientData(f"{gen_id}: metric suite needs at least 100 samples")
            row.w1d = wasserstein1(ref_se, spectral_efficiency(ds, noise).values)
            row.tvd = tvd(ref_fp, fingerprint(codebook, ds))
            size = min(rpe_test.n_samples, ds.n_samples, mmd_samples or np.iinfo(np.int64).max)
            p, q = rpe_test.samples[:size], ds.samples[:size]
            row.bandwidth = (median_bandwidth(stack_real(p), stack_real(q)) if bandwidth == "auto"
                             else float(bandwidth))
            row.mmd = mmd_unbiased(p, q, row.bandwidth)
            row.n_samples = {"reference": rpe_test.n_samples, "generated": ds.n_samples, "mmd": size}
        except ChanprobeError as exc:
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# cross-check
# ---------------------------------------------------------------------------

class _OnceCache:
    """Compute-once map, safe under concurrent lookups of the same key."""

    def __init__(self):
        self._lock = threading.Lock()
        self._locks: dict = {}
        self._values: dict = {}

    def get(self, key, fn: Callable):
        with self._lock:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self._values:
                self._values[key] = fn()
            return self._values[key]


def _gmm_params(params: dict) -> dict:
    out = dict(DEFAULT_GMM)
    out.update({k: params[k] for k in DEFAULT_GMM if k in params})
    return out


class _Runner:
    def __init__(self, plan: CrossCheckPlan):
        self.plan = plan
        self.root = RngStream(plan.seed)
        self.fits = _OnceCache()
        self.runtimes: dict[str, float] = {}
        self.fit_info: dict[str, dict] = {}
        self._tlock = threading.Lock()

    def timed(self, label, fn, *args):
        t0 = time.perf_counter()
        try:
            return fn(*args)
        finally:
            with self._tlock:
                self.runtimes[label] = self.runtimes.get(label, 0.0) + time.perf_counter() - t0

    def gmm(self, ds: ChannelDataset, params: dict):
        p = _gmm_params(params)
        key = ("gmm", ds.digest(), p["components"], p["tol"], p["max_iter"])
        rng = self.root.substream("fit-gmm", p["components"])
        return self.fits.get(key, lambda: self.timed(
            f"fit_gmm[{ds.meta.get('split', ds.meta.get('generator', '?'))},K={p['components']}]",
            fit_gmm, ds, p["components"], p["tol"], p["max_iter"], rng))

    def scov(self, ds: ChannelDataset):
        return self.fits.get(("scov", ds.digest()), lambda: fit_scov(ds))

    def generate(self, spec: GeneratorSpec, train: ChannelDataset) -> ChannelDataset:
        m = int(spec.params.get("count", self.plan.sample_count))
        rng = self.root.substream("sample", spec.id)
        if spec.kind == "identity":
            return train
        if spec.kind == "scov":
            model = self.scov(train).to_gmm()
            return self.timed(f"sample[{spec.id}]", sample_gmm, model, m, rng).with_meta(generator=spec.id, split=spec.id)
        gmm = self.gmm(train, spec.params)
        self.fit_info[spec.id] = {"components": gmm.n_components, "iterations": len(gmm.fit_log),
                                  "final_mean_log_likelihood": gmm.fit_log[-1]}
        if spec.kind == "gmm":
            return self.timed(f"sample[{spec.id}]", sample_gmm, gmm, m, rng).with_meta(generator=spec.id, split=spec.id)
        sched = make_schedule(int(spec.params.get("t_steps", 300)),
                              spec.params.get("beta_start"), spec.params.get("beta_end"))
        return self.timed(f"sample[{spec.id}]", sample_diffusion, RealGmm.from_complex(gmm), sched, m,
                          rng).with_meta(generator=spec.id, split=spec.id)

    def application_cells(self, app: ApplicationSpec, source: str, train: ChannelDataset | None,
                          test: ChannelDataset, gen_error: str | None) -> list[dict]:
        base = {"application": app.kind, "model": app.model, "param": app.grid_name, "source": source}
        cells = [{**base, "value": v, "nmse": None, "error": gen_error} for v in app.grid]
        if gen_error is not None:
            return cells
        try:
            if app.kind == "estimation":
                kind = ESTIMATOR_MODELS[app.model]
                prior = self.gmm(train, app.params) if kind == "gmm" else self.scov(train)
                est = EstimatorModel(kind, prior)
                for cell in cells:
                    noise = NoiseConfig.from_snr_db(float(cell["value"]))
                    obs = observe(test, noise, self.root.substream("observe", repr(float(cell["value"]))))
                    cell["nmse"] = nmse(test, est.estimate(obs))
            else:
                for cell in cells:
                    lc = fit_compressor(train, float(cell["value"]))
                    cell["nmse"] = nmse(test, compress_reconstruct(lc, test))
        except ChanprobeError as exc:
            for cell in cells:
                if cell["nmse"] is None:
                    cell["error"] = f"{type(exc).__name__}: {exc}"
        return cells


def run_crosscheck(plan: CrossCheckPlan, datasets: dict[str, ChannelDataset] | None = None) -> CrossCheckResult:
    runner = _Runner(plan)
    t_start = time.perf_counter()
    data = datasets if datasets is not None else runner.timed("load_rpe", load_rpe, plan)
    train, test = data["train"], data["test"]
    train = train.with_meta(split="train")

    def make(spec):
        try:
            return spec.id, runner.generate(spec, train), None
        except ChanprobeError as exc:
            log.warning("generator %s failed: %s", spec.id, exc)
            return spec.id, None, f"{type(exc).__name__}: {exc}"

    generated = pmap(make, plan.generators)
    errors = [f"generator {gid}: {err}" for gid, _, err in generated if err]

    jobs = [(app, RPE, train, None) for app in plan.applications]
    jobs += [(app, gid, ds, err) for app in plan.applications for gid, ds, err in generated]
    cell_lists = pmap(lambda j: runner.timed(f"app[{j[0].model},{j[1]}]", runner.application_cells,
                                             j[0], j[1], j[2], test, j[3]), jobs)
    cells = [c for lst in cell_lists for c in lst]
    gen_errors = {gid: err for gid, _, err in generated}
    for c in cells:
        if c["error"] and c["error"] != gen_errors.get(c["source"]):
            msg = f"cell {c['application']}/{c['model']}/{c['source']}: {c['error']}"
            if msg not in errors:
                errors.append(msg)

    metric_rows = []
    if plan.metrics is not None:
        mcfg = plan.metrics
        geometry = UraGeometry(**train.meta["scenario"]["geometry"]) if "scenario" in train.meta else \
            _geometry_for(train.n_antennas, mcfg)
        cb = build_codebook(geometry, mcfg.cb_v, mcfg.cb_h)
        sets = {}
        if "val" in data:
            sets["RPE-val"] = data["val"]
        sets.update({gid: ds for gid, ds, err in generated if ds is not None})
        metric_rows = runner.timed("metric_suite", run_metric_suite, test, sets, cb,
                                   NoiseConfig.from_snr_db(mcfg.snr_db), mcfg.bandwidth, mcfg.mmd_samples)
        errors += [f"metrics {r.generator}: {r.error}" for r in metric_rows if r.error]
        errors += [f"metrics {gid}: generator failed" for gid, ds, err in generated if ds is None]

    runner.runtimes["total"] = time.perf_counter() - t_start
    metadata = {
        "plan": plan.to_dict(),
        "seed": plan.seed,
        "datasets": {k: {"n_samples": v.n_samples, "digest": v.digest()} for k, v in data.items()},
        "generated": {gid: {"n_samples": ds.n_samples, "digest": ds.digest()}
                      for gid, ds, _ in generated if ds is not None},
        "generator_fits": dict(sorted(runner.fit_info.items())),
        "mmd_index_convention": "i != j excluded in all four kernel terms",
        "runtimes": dict(sorted(runner.runtimes.items())),
    }
    return CrossCheckResult(cells, metric_rows, metadata, errors)


def _geometry_for(n: int, mcfg: MetricSpec) -> UraGeometry:
    if n % mcfg.cb_v:
        raise ConfigError(f"cannot infer a {mcfg.cb_v}-row array for N={n}")
    return UraGeometry(mcfg.cb_v, n // mcfg.cb_v)
