"""Application cross-check at desk scale: NMSE of estimators and PCA compressors trained
on RPE vs generated data, all scored on the same RPE test set.

    python3 scripts/table2_crosscheck.py --seeds 1 2 3 --snr-db -10 0 10 20 --out runs/table2
"""

from __future__ import annotations

import argparse
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from chanprobe.core import dump_json
from chanprobe.crosscheck import CrossCheckPlan, run_crosscheck

log = logging.getLogger("table2")


@dataclass
class Table2Config:
    seeds: list[int] = field(default_factory=lambda: [1])
    n_train: int = 50_000
    n_test: int = 5_000
    components: int = 32
    snr_db: list[float] = field(default_factory=lambda: [10.0])
    rho: list[float] = field(default_factory=lambda: [1, 2, 4, 8, 16])
    diffusion_steps: int = 0  # > 0 adds a diffusion-over-GMM generator
    out: str = "runs/table2"

    def plan(self, seed: int) -> CrossCheckPlan:
        gens = [{"id": "GMM", "kind": "gmm", "components": self.components}, {"id": "scov", "kind": "scov"}]
        if self.diffusion_steps:
            gens.append({"id": "DM", "kind": "diffusion", "components": self.components,
                         "t_steps": self.diffusion_steps})
        return CrossCheckPlan.from_dict({
            "seed": seed,
            "sample_count": self.n_train,
            "data": {"synth": {"n_train": self.n_train, "n_val": self.n_test, "n_test": self.n_test}},
            "generators": gens,
            "applications": [
                {"kind": "estimation", "model": "gmm-estimator", "snr_db": self.snr_db, "components": self.components},
                {"kind": "estimation", "model": "lmmse", "snr_db": self.snr_db},
                {"kind": "compression", "model": "pca", "rho": self.rho},
            ],
            "metrics": {"snr_db": 20},
        })


def run(cfg: Table2Config) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(asdict(cfg), out / "config.json")
    for seed in cfg.seeds:
        res = run_crosscheck(cfg.plan(seed))
        res.write(out / f"seed{seed}")
        dump_json(res.metadata["runtimes"], out / f"seed{seed}" / "runtimes.json")
        for c in res.cells:
            log.info("seed %d %-13s %-5s %s=%-4g NMSE %.4e", seed, c["model"], c["source"], c["param"],
                     c["value"], c["nmse"] if c["nmse"] is not None else float("nan"))
        for err in res.errors:
            log.error("seed %d: %s", seed, err)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    d = Table2Config()
    p.add_argument("--seeds", type=int, nargs="+", default=d.seeds)
    p.add_argument("--n-train", type=int, default=d.n_train)
    p.add_argument("--n-test", type=int, default=d.n_test)
    p.add_argument("--components", type=int, default=d.components)
    p.add_argument("--snr-db", type=float, nargs="+", default=d.snr_db)
    p.add_argument("--rho", type=float, nargs="+", default=d.rho)
    p.add_argument("--diffusion-steps", type=int, default=d.diffusion_steps)
    p.add_argument("--out", default=d.out)
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    run(Table2Config(a.seeds, a.n_train, a.n_test, a.components, a.snr_db, a.rho, a.diffusion_steps, a.out))


if __name__ == "__main__":
    main()
