"""Command-line front end.

Exit codes: 0 success, 2 usage/config, 3 I/O, 4 numeric failure, 5 partial cross-check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path

from . import __version__
from .core import (
    NoiseConfig,
    RngStream,
    UraGeometry,
    dump_json,
    hash_file,
    read_dataset,
    set_threads,
    sidecar_path,
    write_dataset,
)
from .errors import ChanprobeError, ConfigError, DecodeError, InsufficientData, InvalidArgument, NumericFailure

log = logging.getLogger("chanprobe")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _positive_int(raw: str) -> int:
    v = int(raw)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {raw}")
    return v


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chanprobe", description="Evaluation toolkit for generative wireless channel models.")
    p.add_argument("--version", action="version", version=f"chanprobe {__version__}")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker cap (falls back to CHANPROBE_THREADS); results do not depend on it")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic RPE dataset")
    s.add_argument("scenario", nargs="?", default=None, help="scenario JSON (default scenario if omitted)")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--stream-id", type=int, default=0)
    s.add_argument("--out", required=True)

    f = sub.add_parser("fit", help="fit a scov or GMM generator")
    f.add_argument("kind", choices=["scov", "gmm"])
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--components", type=_positive_int, default=32)
    f.add_argument("--tol", type=float, default=1e-4)
    f.add_argument("--max-iter", type=_positive_int, default=30)
    f.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("sample", help="draw samples from a fitted model")
    g.add_argument("--model", required=True)
    g.add_argument("--count", type=_positive_int, required=True)
    g.add_argument("--kind", choices=["ancestral", "diffusion"], default="ancestral")
    g.add_argument("--t-steps", type=_positive_int, default=300)
    g.add_argument("--beta-start", type=float, default=None)
    g.add_argument("--beta-end", type=float, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="compare a generated dataset with a reference")
    e.add_argument("metric", choices=["se", "fingerprint", "mmd"])
    e.add_argument("--ref", required=True)
    e.add_argument("--gen", required=True)
    e.add_argument("--snr-db", type=float, default=20.0)
    e.add_argument("--cb-v", type=_positive_int, default=4)
    e.add_argument("--cb-h", type=_positive_int, default=16)
    e.add_argument("--n-vertical", type=_positive_int, default=None)
    e.add_argument("--bandwidth", default="auto")
    e.add_argument("--max-samples", type=_positive_int, default=None, help="MMD sample cap")
    e.add_argument("--out-prefix", required=True)

    c = sub.add_parser("crosscheck", help="run the application cross-check and metric suite")
    c.add_argument("--plan", required=True, help="plan JSON, or 'demo' for the bundled plan")
    c.add_argument("--out", required=True)

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest")
    return p


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return p


def _write_manifest(path: Path, argv: list[str], config: dict, seed, inputs: list[Path], outputs: list[Path],
                    started: float, extra: dict | None = None) -> None:
    manifest = {
        "tool": "chanprobe",
        "version": __version__,
        "command_line": ["chanprobe", *argv],
        "argv": argv,
        "config": config,
        "seed": seed,
        "inputs": {str(p): hash_file(p) for p in inputs},
        "outputs": {str(p): hash_file(p) for p in outputs if p.exists()},
        "timings": {"wall_seconds": time.perf_counter() - started, **(extra or {})},
    }
    dump_json(manifest, path)


def _manifest_for(out: str | Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args, argv, started) -> int:
    from .synth import ScenarioConfig, generate_rpe

    inputs = []
    if args.scenario:
        inputs.append(_require_file(args.scenario))
        cfg = ScenarioConfig.from_json(args.scenario)
    else:
        cfg = ScenarioConfig()
    if args.seed is not None:
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    ds = generate_rpe(cfg, args.n, stream_id=args.stream_id)
    out = Path(args.out)
    write_dataset(ds, out)
    log.info("wrote %d x %d channels to %s", ds.n_samples, ds.n_antennas, out)
    _write_manifest(_manifest_for(out), argv, {"scenario": cfg.to_dict(), "n": args.n, "stream_id": args.stream_id},
                    cfg.seed, inputs, [out, sidecar_path(out)], started)
    return EXIT_OK


def cmd_fit(args, argv, started) -> int:
    from .genmod.gmm import fit_gmm, fit_scov
    from .genmod.io import write_model

    src = _require_file(args.input)
    ds = read_dataset(src)
    if args.kind == "scov":
        model = fit_scov(ds)
        config = {"kind": "scov"}
    else:
        model = fit_gmm(ds, args.components, tol=args.tol, max_iter=args.max_iter, rng=RngStream(args.seed))
        config = {"kind": "gmm", "components": args.components, "tol": args.tol, "max_iter": args.max_iter}
        log.info("EM finished after %d iterations, mean log-likelihood %.6f", len(model.fit_log), model.fit_log[-1])
    out = Path(args.out)
    write_model(model, out, meta={**config, "source": str(src), "seed": args.seed})
    _write_manifest(_manifest_for(out), argv, config, args.seed, [src], [out, sidecar_path(out)], started)
    return EXIT_OK


def cmd_sample(args, argv, started) -> int:
    from .genmod.diffusion import RealGmm, make_schedule, sample_diffusion
    from .genmod.gmm import sample_gmm
    from .genmod.io import read_model

    src = _require_file(args.model)
    model = read_model(src)
    rng = RngStream(args.seed)
    out = Path(args.out)
    outputs = [out, sidecar_path(out)]
    config = {"kind": args.kind, "count": args.count}
    if args.kind == "ancestral":
        ds = sample_gmm(model, args.count, rng)
    else:
        sched = make_schedule(args.t_steps, args.beta_start, args.beta_end)
        ds = sample_diffusion(RealGmm.from_complex(model), sched, args.count, rng)
        config.update(t_steps=args.t_steps, beta_start=float(sched.betas[0]), beta_end=float(sched.betas[-1]))
        sched_path = out.with_name(out.name + ".schedule.json")
        sched.to_json(sched_path)
        outputs.append(sched_path)
    write_dataset(ds.with_meta(model=str(src)), out)
    _write_manifest(_manifest_for(out), argv, config, args.seed, [src], outputs, started)
    return EXIT_OK


def _write_cdf_csv(path: Path, values) -> None:
    from .metrics import empirical_cdf

    x, f = empirical_cdf(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "cdf"])
        w.writerows(zip(map(repr, x.tolist()), map(repr, f.tolist())))


def _write_fingerprint_csv(path: Path, fp) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["entry", "mass"])
        for i, v in enumerate(fp.histogram.tolist(), start=1):
            w.writerow([i, repr(v)])


def cmd_eval(args, argv, started) -> int:
    from . import metrics

    ref_path, gen_path = _require_file(args.ref), _require_file(args.gen)
    ref, gen = read_dataset(ref_path), read_dataset(gen_path)
    if ref.n_antennas != gen.n_antennas:
        raise InvalidArgument(f"reference N={ref.n_antennas} but generated N={gen.n_antennas}")
    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    report = {"metric": args.metric, "w1d": None, "tvd": None, "mmd": None, "bandwidth": None,
              "n_samples": {"reference": ref.n_samples, "generated": gen.n_samples},
              "seeds": {"reference": ref.meta.get("seed"), "generated": gen.meta.get("seed")}}
    outputs = []
    if args.metric == "se":
        noise = NoiseConfig.from_snr_db(args.snr_db)
        a = metrics.spectral_efficiency(ref, noise).values
        b = metrics.spectral_efficiency(gen, noise).values
        report["w1d"] = metrics.wasserstein1(a, b)
        report["snr_db"] = args.snr_db
        for tag, vals in (("ref", a), ("gen", b)):
            path = Path(f"{prefix}{tag}_cdf.csv")
            _write_cdf_csv(path, vals)
            outputs.append(path)
    elif args.metric == "fingerprint":
        n_v = args.n_vertical or _infer_rows(ref, args.cb_v)
        geometry = UraGeometry(n_v, ref.n_antennas // n_v)
        cb = metrics.build_codebook(geometry, args.cb_v, args.cb_h)
        fps = {"ref": metrics.fingerprint(cb, ref), "gen": metrics.fingerprint(cb, gen)}
        report["tvd"] = metrics.tvd(fps["ref"], fps["gen"])
        report["codebook"] = cb.to_dict()
        for tag, fp in fps.items():
            path = Path(f"{prefix}{tag}_fingerprint.csv")
            _write_fingerprint_csv(path, fp)
            outputs.append(path)
        path = Path(f"{prefix}codebook.json")
        dump_json(cb.to_dict(), path)
        outputs.append(path)
    else:
        from .core import stack_real

        size = min(ref.n_samples, gen.n_samples, args.max_samples or ref.n_samples)
        p, q = ref.samples[:size], gen.samples[:size]
        bw = args.bandwidth
        gamma = metrics.median_bandwidth(stack_real(p), stack_real(q)) if bw == "auto" else float(bw)
        report["mmd"] = metrics.mmd_unbiased(p, q, gamma)
        report["bandwidth"] = gamma
        report["bandwidth_rule"] = "median pairwise distance" if bw == "auto" else "fixed"
        report["n_samples"]["mmd"] = size
        report["mmd_index_convention"] = "i != j excluded in all four kernel terms"
    path = Path(f"{prefix}report.json")
    dump_json(report, path)
    outputs.insert(0, path)
    print(json.dumps({k: report[k] for k in ("w1d", "tvd", "mmd")}))
    _write_manifest(Path(f"{prefix}manifest.json"), argv, vars_config(args), None, [ref_path, gen_path], outputs,
                    started)
    return EXIT_OK


def _infer_rows(ds, cb_v: int) -> int:
    scen = ds.meta.get("scenario")
    if scen:
        return int(scen["geometry"]["n_vertical"])
    if ds.n_antennas % cb_v:
        raise ConfigError("cannot infer the array shape; pass --n-vertical")
    return cb_v


def vars_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",)}


def _load_plan(arg: str):
    from .crosscheck import CrossCheckPlan

    if arg == "demo":
        text = resources.files("chanprobe").joinpath("data/demo_plan.json").read_text()
        return CrossCheckPlan.from_dict(json.loads(text)), []
    path = _require_file(arg)
    return CrossCheckPlan.from_json(path), [path]


def cmd_crosscheck(args, argv, started) -> int:
    from .crosscheck import run_crosscheck

    plan, inputs = _load_plan(args.plan)
    for key in ("train", "val", "test"):
        if "synth" not in plan.data and plan.data.get(key):
            inputs.append(_require_file(plan.data[key]))
    result = run_crosscheck(plan)
    outputs = result.write(args.out)
    for err in result.errors:
        log.error("%s", err)
    _write_manifest(Path(args.out) / "manifest.json", argv, plan.to_dict(), plan.seed, inputs, outputs, started,
                    {"stages": result.metadata["runtimes"]})
    return EXIT_PARTIAL if result.errors else EXIT_OK


def cmd_replay(args, argv, started) -> int:
    manifest = json.loads(_require_file(args.manifest).read_text())
    return main(manifest["argv"])


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "sample": cmd_sample, "eval": cmd_eval,
            "crosscheck": cmd_crosscheck, "replay": cmd_replay}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    set_threads(args.threads)
    started = time.perf_counter()
    stage = args.command
    try:
        return COMMANDS[args.command](args, argv, started)
    except (ConfigError, InvalidArgument, InsufficientData) as exc:
        log.error("%s: %s", stage, exc)
        return EXIT_USAGE
    except (DecodeError, OSError) as exc:
        log.error("%s: I/O error: %s", stage, exc)
        return EXIT_IO
    except NumericFailure as exc:
        log.error("%s: numeric failure: %s", stage, exc)
        return EXIT_NUMERIC
    except ChanprobeError as exc:
        log.error("%s: %s", stage, exc)
        return EXIT_USAGE
    finally:
        set_threads(None)


if __name__ == "__main__":
    sys.exit(main())
