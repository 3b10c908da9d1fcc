import csv
import io
from pathlib import Path

import numpy as np
import pytest

from vatseg.architectures import Checkpoint, VNetSpec, build_network
from vatseg.cli import main
from vatseg.config import RunConfig, load_config, parse_pairs
from vatseg.data.volume import read_volume
from vatseg.evaluation import aggregate, aggregate_csv, read_scans_csv

SMALL = ["--depth", "2", "--height", "32", "--width", "32"]


def _tree(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    assert main(["-q", "phantom", "--patients", "10", "--visits", "2", "--seed", "7", "--out", str(out)] + SMALL) == 0
    return out


# -- config --------------------------------------------------------------------


def test_config_defaults_follow_arch():
    assert (RunConfig().iterations, RunConfig().loss) == (65000, "cross_entropy")
    assert (RunConfig(arch="vnet").iterations, RunConfig(arch="vnet").loss) == (15000, "dice")
    with pytest.raises(ValueError, match="arch"):
        RunConfig(arch="resnet")


def test_config_file_and_overrides(tmp_path, monkeypatch):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\narch = vnet\nbase_channels = 4  # small\nmanifest = data/m.csv\n"
                        "ff_threshold_enabled = yes\n", encoding="utf-8")
    monkeypatch.chdir(tmp_path.parent)
    cfg = load_config(cfg_file, ["iterations=7", "output=runs/x"])
    assert cfg.arch == "vnet" and cfg.base_channels == 4 and cfg.iterations == 7 and cfg.loss == "dice"
    assert cfg.manifest == (tmp_path / "data" / "m.csv").resolve()
    assert cfg.output == (tmp_path.parent / "runs" / "x").resolve()
    assert cfg.ff_threshold_enabled is True
    text = cfg.to_text()
    assert "arch = vnet" in text and "iterations = 7" in text


def test_config_rejects_unknown_and_malformed(tmp_path):
    with pytest.raises(ValueError, match="f.cfg:2: unknown config key 'batch'"):
        parse_pairs(["arch = unet", "batch = 2"], tmp_path, "f.cfg")
    with pytest.raises(ValueError, match=":1: expected 'key = value'"):
        parse_pairs(["arch unet"], tmp_path)
    with pytest.raises(ValueError, match="bad value for seed"):
        parse_pairs(["seed = x"], tmp_path)


# -- phantom -------------------------------------------------------------------


def test_phantom_command_counts_and_is_reproducible(cohort, tmp_path):
    tree = _tree(cohort)
    assert len([k for k in tree if k.endswith("_v1.mvf") or k.endswith("_v2.mvf")]) == 20
    assert len([k for k in tree if k.endswith(".label.mvf")]) == 20
    manifest = (cohort / "manifest.csv").read_text(encoding="utf-8")
    assert len([line for line in manifest.splitlines() if line and not line.startswith("#")]) == 20
    again = tmp_path / "again"
    main(["-q", "phantom", "--patients", "10", "--visits", "2", "--seed", "7", "--out", str(again)] + SMALL)
    assert _tree(again) == tree


def test_phantom_command_rejects_bad_geometry(tmp_path, capsys):
    code = main(["phantom", "--patients", "1", "--out", str(tmp_path), "--wall-thickness", "0.7"])
    assert code != 0
    assert "cavity" in capsys.readouterr().err
    assert main(["phantom", "--patients", "1", "--out", str(tmp_path), "--spine-radius", "0"]) != 0


# -- train / cv ------------------------------------------------------------------


def test_cv_command_structure(cohort, tmp_path, capsys):
    out = tmp_path / "cv"
    args = ["cv", "-q", "--set", f"manifest={cohort / 'manifest.csv'}", "--set", f"output={out}",
            "--set", "folds=5", "--set", "base_channels=1", "--set", "iterations=2", "--set", "eval_every=1"]
    assert main(args) == 0
    table = capsys.readouterr().out
    assert "Error in %" in table
    for i in range(5):
        fold = out / f"fold_{i}"
        for name in ("scans.csv", "aggregate.csv", "curve.csv", "selected.asck", "final.asck"):
            assert (fold / name).is_file()
    assert (out / "config.resolved.txt").read_text().count("folds = 5") == 1
    union = []
    for i in range(5):
        union += read_scans_csv((out / f"fold_{i}" / "scans.csv").read_text())
    assert len(union) == 20
    assert (out / "aggregate.csv").read_text() == aggregate_csv(aggregate(union))
    rows = list(csv.DictReader(io.StringIO((out / "aggregate.csv").read_text())))
    metrics = [(r["depot"], r["metric"]) for r in rows if r["group"] == "all"]
    assert metrics == [(d, m) for d in ("VAT", "SAT") for m in ("Dice", "Error in %", "Error in mL")]
    folds = list(csv.DictReader(io.StringIO((out / "folds.csv").read_text())))
    assert sorted(r["patient_id"] for r in folds) == sorted({f"P{i:03d}" for i in range(10)})


def test_train_command_outputs(cohort, tmp_path):
    out = tmp_path / "train"
    assert main(["-q", "train", "--set", f"manifest={cohort / 'manifest.csv'}", "--set", f"output={out}",
                 "--set", "base_channels=1", "--set", "iterations=3", "--set", "checkpoint_every=2"]) == 0
    assert {"final.asck", "iter_0000002.asck", "curve.csv", "config.resolved.txt"} <= {p.name for p in out.iterdir()}
    assert Checkpoint.load(out / "final.asck").iteration == 3


def test_train_command_requires_manifest(tmp_path, capsys):
    assert main(["train", "--set", f"output={tmp_path}"]) == 1
    assert "manifest" in capsys.readouterr().err


# -- predict / evaluate / report ------------------------------------------------


@pytest.fixture(scope="module")
def unet_ckpt(cohort, tmp_path_factory):
    out = tmp_path_factory.mktemp("unet")
    main(["-q", "train", "--set", f"manifest={cohort / 'manifest.csv'}", "--set", f"output={out}",
          "--set", "base_channels=2", "--set", "iterations=30", "--set", "eval_every=30"])
    return out / "final.asck"


def test_predict_then_evaluate(cohort, unet_ckpt, tmp_path, capsys):
    images = sorted(str(p) for p in cohort.glob("P00[0-2]_v?.mvf"))
    pred_dir = tmp_path / "pred"
    assert main(["-q", "predict", "--checkpoint", str(unet_ckpt), "--out", str(pred_dir)] + images) == 0
    for img in images:
        pred = read_volume(pred_dir / (Path(img).name[:-4] + ".pred.mvf"))
        assert pred.dims == read_volume(img).dims
    manifest = tmp_path / "m.csv"
    lines = (cohort / "manifest.csv").read_text().splitlines()
    manifest.write_text("\n".join(line.replace(", P", f", {cohort}/P") for line in lines[:7]) + "\n")
    assert main(["-q", "evaluate", "--manifest", str(manifest), "--predictions", str(pred_dir),
                 "--out", str(tmp_path / "ev")]) == 0
    a = (tmp_path / "ev" / "scans.csv").read_text()
    assert main(["-q", "evaluate", "--manifest", str(manifest), "--checkpoint", str(unet_ckpt),
                 "--out", str(tmp_path / "ev2")]) == 0
    assert (tmp_path / "ev2" / "scans.csv").read_text() == a


def test_skip_background_mask_report_deltas(unet_ckpt, tmp_path):
    noisy = tmp_path / "noisy"
    main(["-q", "phantom", "--patients", "2", "--visits", "1", "--seed", "3", "--background-noise",
          "--out", str(noisy)] + SMALL)
    m = str(noisy / "manifest.csv")
    assert main(["-q", "evaluate", "--manifest", m, "--checkpoint", str(unet_ckpt), "--out", str(tmp_path / "a")]) == 0
    assert main(["-q", "evaluate", "--manifest", m, "--checkpoint", str(unet_ckpt), "--out", str(tmp_path / "b"),
                 "--skip-background-mask"]) == 0
    assert main(["-q", "report", "--scans", str(tmp_path / "b" / "scans.csv"),
                 "--baseline", str(tmp_path / "a" / "scans.csv"), "--out", str(tmp_path / "r")]) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "r" / "deltas.csv").read_text())))
    assert len(rows) == 6
    for r in rows:
        assert float(r["delta"]) == pytest.approx(float(r["mean"]) - float(r["baseline_mean"]))
    assert (tmp_path / "r" / "aggregate.csv").read_text() == (tmp_path / "b" / "aggregate.csv").read_text()


def test_vnet_predict_drops_padding_and_checks_geometry(cohort, tmp_path, capsys):
    ckpt = tmp_path / "v.asck"
    Checkpoint.from_network(build_network(VNetSpec(base_channels=2), np.random.default_rng(0))).save(ckpt)
    image = str(cohort / "P000_v1.mvf")
    assert main(["-q", "predict", "--checkpoint", str(ckpt), "--out", str(tmp_path / "p"), image]) == 0
    assert read_volume(tmp_path / "p" / "P000_v1.pred.mvf").dims == (2, 32, 32)
    deep = tmp_path / "deep"
    main(["-q", "phantom", "--patients", "1", "--visits", "1", "--out", str(deep), "--depth", "30",
          "--height", "32", "--width", "32"])
    out = tmp_path / "q"
    assert main(["predict", "--checkpoint", str(ckpt), "--out", str(out), image, str(deep / "P000_v1.mvf")]) == 1
    assert "30 slices exceed" in capsys.readouterr().err
    assert not list(out.glob("*.pred.mvf"))


def test_quiet_flag_position_and_logging(tmp_path, caplog):
    caplog.set_level("INFO", logger="vatseg")
    assert main(["phantom", "-q", "--patients", "1", "--visits", "1", "--out", str(tmp_path)] + SMALL) == 0
    assert "event=phantom_done" not in caplog.text
    assert main(["phantom", "--patients", "1", "--visits", "1", "--out", str(tmp_path)] + SMALL) == 0
    assert "event=phantom_done scans=1" in caplog.text
