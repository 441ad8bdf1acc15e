import csv

import numpy as np
import pytest

from diffpatch import cli, fileio
from diffpatch.checkpoint import save_checkpoint
from diffpatch.surface import init_atlas, lattice_uv

TINY = ["--K", "2", "--M", "16", "--steps", "5", "--width", "8", "--latent-dim", "4",
        "--hidden-layers", "1"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen", "--kind", "wavy-cloth", "--n", "300", "--seed", "7",
                     "--out", str(root / "data")]) == 0
    return root


@pytest.fixture(scope="module")
def trained(dataset):
    out = dataset / "run"
    assert cli.main(["train", "--data", str(dataset / "data"), "--preset", "ours", *TINY,
                     "--out", str(out)]) == 0
    return out


def test_gen_writes_cloud_and_area(dataset):
    cloud = fileio.load_ply(dataset / "data" / "cloud.ply")
    assert len(cloud) == 300 and cloud.has_normals
    assert fileio.read_area(dataset / "data" / "area.txt") > 1.0


def test_gen_is_deterministic(dataset, tmp_path):
    cli.main(["gen", "--kind", "wavy-cloth", "--n", "300", "--seed", "7", "--out", str(tmp_path)])
    assert (tmp_path / "cloud.ply").read_bytes() == (dataset / "data" / "cloud.ply").read_bytes()


def test_gen_invalid_kind_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["gen", "--kind", "torus", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_gen_unwritable_path_exits_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["gen", "--kind", "plane", "--n", "10", "--out", str(blocker / "sub")]) == 2


def test_train_outputs(trained):
    for name in ("model.ckpt", "log.csv", "metrics.csv", "loss.png", "config.json"):
        assert (trained / name).exists(), name
    with open(trained / "log.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 5


@pytest.mark.parametrize("preset,want", [
    ("ours", dict(alpha_def=1e-3, alpha_ol=1e2, alpha_E=1, alpha_G=1, alpha_sk=1, alpha_str=1)),
    ("basic", dict(alpha_def=0, alpha_ol=0)),
    ("ablation:no-skew", dict(alpha_E=1, alpha_G=1, alpha_sk=1, alpha_str=0)),
])
def test_presets(preset, want):
    args = cli.build_parser().parse_args(["train", "--preset", preset, "--out", "x"])
    w = cli.build_config(args).weights
    for k, v in want.items():
        assert getattr(w, k) == v


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("# comment\nsteps = 77\nalpha_ol = 5\nwidth=16\n")
    args = cli.build_parser().parse_args(["train", "--config", str(conf), "--width", "32", "--out", "x"])
    cfg = cli.build_config(args)
    assert cfg.steps == 77 and cfg.weights.alpha_ol == 5.0 and cfg.width == 32


def test_config_unknown_key_exits_2(dataset, tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("bogus = 1\n")
    rc = cli.main(["train", "--data", str(dataset / "data"), "--config", str(conf), "--out", str(tmp_path)])
    assert rc == 2


def test_train_nan_exits_3(dataset, tmp_path):
    atlas = init_atlas(0, 2, 4, 1, 8)
    atlas.decoders[0].weights[0][:] = np.nan
    save_checkpoint(tmp_path / "bad.ckpt", atlas)
    rc = cli.main(["train", "--data", str(dataset / "data"), "--preset", "basic", *TINY,
                   "--resume", str(tmp_path / "bad.ckpt"), "--out", str(tmp_path / "run")])
    assert rc == 3
    assert (tmp_path / "run" / "diagnostics.json").exists()


def test_eval_outputs(dataset, trained, tmp_path, capsys):
    rc = cli.main(["eval", "--checkpoint", str(trained / "model.ckpt"), "--data", str(dataset / "data"),
                   "--olap-t", "0.01,0.05,0.1", "--distortion-maps", str(tmp_path / "maps"),
                   "--map-resolution", "6", "--out", str(tmp_path / "ev")])
    assert rc == 0
    assert "m_olap@0.05" in capsys.readouterr().out
    with open(tmp_path / "ev" / "metrics.csv") as fh:
        row = next(csv.DictReader(fh))
    olap = [float(row[f"m_olap@{t}"]) for t in ("0.01", "0.05", "0.1")]
    assert olap == sorted(olap)
    grid = np.loadtxt(tmp_path / "maps" / "patch0_D_E.csv", delimiter=",")
    assert grid.shape == (6, 6)
    assert (tmp_path / "ev" / "areas.csv").exists()


def test_eval_incompatible_checkpoint_exits_2(dataset, trained, tmp_path):
    base = ["eval", "--data", str(dataset / "data"), "--out", str(tmp_path)]
    assert cli.main(base + ["--checkpoint", str(trained / "model.ckpt"), "--K", "5"]) == 2
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint at all, definitely")
    assert cli.main(base + ["--checkpoint", str(junk)]) == 2
    assert cli.main(base + ["--checkpoint", str(tmp_path / "missing.ckpt")]) == 2


def test_export_grid_nesting_and_unit_normals(trained, tmp_path):
    ck = str(trained / "model.ckpt")
    assert cli.main(["export", "--checkpoint", ck, "--resolution", "4", "--curvature",
                     "--out", str(tmp_path / "c.ply")]) == 0
    assert cli.main(["export", "--checkpoint", ck, "--resolution", "12",
                     "--out", str(tmp_path / "f.ply")]) == 0
    coarse, fine = fileio.load_ply(tmp_path / "c.ply"), fileio.load_ply(tmp_path / "f.ply")
    assert len(coarse) == 2 * 25 and len(fine) == 2 * 169
    np.testing.assert_allclose(np.linalg.norm(coarse.normals, axis=1), 1.0, atol=1e-12)
    assert {"c_mean", "c_gauss", "degenerate"} <= set(coarse.extras)
    # every coarse lattice point is a fine lattice point of the same patch
    fine_uv = {tuple(p): i for i, p in enumerate(lattice_uv(12))}
    for k in range(2):
        for j, p in enumerate(lattice_uv(4)):
            i = fine_uv[tuple(p)]
            np.testing.assert_allclose(coarse.points[k * 25 + j], fine.points[k * 169 + i], rtol=0, atol=1e-12)


def test_export_rejects_low_resolution(trained, tmp_path):
    assert cli.main(["export", "--checkpoint", str(trained / "model.ckpt"), "--resolution", "1",
                     "--out", str(tmp_path / "x.ply")]) == 2


def test_help_documents_every_flag(capsys):
    for sub in ("gen", "train", "eval", "export"):
        with pytest.raises(SystemExit):
            cli.main([sub, "--help"])
        out = capsys.readouterr().out
        assert "--out" in out
