import csv
import importlib.util
import sys
from pathlib import Path

SCRIPTS = Path(__file__).resolve().parent.parent / "scripts"


def load(name):
    spec = importlib.util.spec_from_file_location(name, SCRIPTS / f"{name}.py")
    mod = importlib.util.module_from_spec(spec)
    sys.modules[name] = mod  # dataclasses look the module up while the class is built
    spec.loader.exec_module(mod)
    return mod


def test_table1_smoke(tmp_path):
    mod = load("table1_metrics")
    mod.run(mod.Table1Config(seeds=[1], n_train=600, n_eval=200, components=2, max_iter=3, out=str(tmp_path)))
    with open(tmp_path / "table1_seed1.csv") as fh:
        assert [r["model"] for r in csv.DictReader(fh)] == ["GMM", "scov"]
    assert (tmp_path / "se_cdf_RPE_seed1.csv").exists()


def test_table2_smoke(tmp_path):
    mod = load("table2_crosscheck")
    mod.run(mod.Table2Config(seeds=[1], n_train=600, n_test=200, components=2, rho=[2, 4],
                             diffusion_steps=5, out=str(tmp_path)))
    assert (tmp_path / "seed1" / "table2.csv").exists()


def test_diffusion_smoke(tmp_path):
    mod = load("diffusion_vs_ancestral")
    mod.run(mod.DiffusionConfig(steps=[5], seeds=[0], components=2, n_train=500, n_samples=200, out=str(tmp_path)))
    with open(tmp_path / "sweep.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 1
