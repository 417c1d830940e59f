import json

import pytest

from metashot.cli import build_parser, main


def _run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_help_on_every_subcommand(capsys):
    _, subparsers = build_parser()
    for name in subparsers:
        with pytest.raises(SystemExit) as exc:
            main([name, "--help"])
        assert exc.value.code == 0
        assert "--out-dir" in capsys.readouterr().out or name == "inspect"


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_synth_smoke(tmp_path, capsys):
    code, out, _ = _run(
        capsys,
        ["synth", "--seed", "7", "--classes", "16", "--shots", "16", "--dim", "64",
         "--out-dir", str(tmp_path)],
    )
    assert code == 0
    assert (tmp_path / "synth.manifest.json").exists()
    assert (tmp_path / "synth.json").exists()
    assert "fingerprint:" in out


def test_synth_determinism(tmp_path, capsys):
    for sub in ("a", "b"):
        assert _run(capsys, ["synth", "--seed", "3", "--classes", "8", "--shots", "4",
                             "--dim", "32", "--queries-per-class", "10",
                             "--out-dir", str(tmp_path / sub)])[0] == 0
    for f in ("synth.text.embx", "synth.support.embx", "synth.queries.embx"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.fixture()
def cli_task(tmp_path, capsys):
    assert _run(capsys, ["synth", "--seed", "7", "--classes", "8", "--shots", "8",
                         "--dim", "32", "--queries-per-class", "30",
                         "--out-dir", str(tmp_path)])[0] == 0
    assert _run(capsys, ["split", "--manifest", str(tmp_path / "synth.manifest.json"),
                         "--out-dir", str(tmp_path / "split")])[0] == 0
    return tmp_path / "split" / "synth.manifest.json"


def test_split_and_eval_zeroshot(cli_task, tmp_path, capsys):
    code, out, _ = _run(capsys, ["eval-zeroshot", "--manifest", str(cli_task),
                                 "--out-dir", str(tmp_path / "zs")])
    assert code == 0
    report = json.loads((tmp_path / "zs" / "eval-zeroshot.json").read_text())
    assert report["method"] == "zeroshot"
    assert report["top1_base"] is not None


def test_eval_tip_alpha_zero_matches_zeroshot(cli_task, tmp_path, capsys):
    _run(capsys, ["eval-zeroshot", "--manifest", str(cli_task), "--out-dir", str(tmp_path / "zs")])
    code, _, _ = _run(capsys, ["eval-tip", "--manifest", str(cli_task), "--alpha", "0",
                               "--beta", "1", "--out-dir", str(tmp_path / "tip")])
    assert code == 0
    zs = json.loads((tmp_path / "zs" / "eval-zeroshot.json").read_text())
    tip = json.loads((tmp_path / "tip" / "eval-tip.json").read_text())
    assert tip["top1_base"] == zs["top1_base"]
    assert tip["top1_novel"] == zs["top1_novel"]


def test_train_then_eval_meta_gate_override(cli_task, tmp_path, capsys):
    code, _, _ = _run(capsys, ["train-meta", "--manifest", str(cli_task), "--lr", "0.2",
                               "--out-dir", str(tmp_path / "run")])
    assert code == 0
    assert (tmp_path / "run" / "train-meta.log").exists()
    ckpt = tmp_path / "run" / "checkpoint.json"
    assert ckpt.exists()

    code, _, _ = _run(capsys, ["eval-meta", "--manifest", str(cli_task),
                               "--checkpoint", str(ckpt), "--gate-override", "0",
                               "--out-dir", str(tmp_path / "meta0")])
    assert code == 0
    _run(capsys, ["eval-zeroshot", "--manifest", str(cli_task), "--out-dir", str(tmp_path / "zs")])
    zs = json.loads((tmp_path / "zs" / "eval-zeroshot.json").read_text())
    meta = json.loads((tmp_path / "meta0" / "eval-meta.json").read_text())
    assert meta["top1_base"] == zs["top1_base"]
    assert meta["top1_novel"] == zs["top1_novel"]
    assert meta["harmonic_mean"] == zs["harmonic_mean"]


def test_search_tip_and_transfer(cli_task, tmp_path, capsys):
    code, out, _ = _run(capsys, ["search-tip", "--manifest", str(cli_task),
                                 "--alphas", "0,1", "--betas", "1,2",
                                 "--out-dir", str(tmp_path / "st")])
    assert code == 0
    doc = json.loads((tmp_path / "st" / "search-tip.json").read_text())
    assert doc["alpha"] in (0.0, 1.0)

    code, _, _ = _run(capsys, ["transfer", "--manifest", str(cli_task), "--source", "src",
                               "--alpha", str(doc["alpha"]), "--beta", str(doc["beta"]),
                               "--out-dir", str(tmp_path / "tr")])
    assert code == 0
    rep = json.loads((tmp_path / "tr" / "transfer.json").read_text())
    assert rep["source"] == "src"
    assert rep["config"]["protocol"] == "cross_dataset"


def test_gradcheck_subcommand(tmp_path, capsys):
    code, out, _ = _run(capsys, ["gradcheck", "--seed", "3", "--seeds", "4",
                                 "--out-dir", str(tmp_path)])
    assert code == 0
    assert "max relative error" in out
    doc = json.loads((tmp_path / "gradcheck.json").read_text())
    assert doc["max_rel_error"] <= 1e-4


def test_inspect(tmp_path, capsys):
    _run(capsys, ["synth", "--seed", "1", "--classes", "4", "--shots", "2", "--dim", "16",
                  "--queries-per-class", "3", "--out-dir", str(tmp_path)])
    code, out, _ = _run(capsys, ["inspect", str(tmp_path / "synth.text.embx"),
                                 "--out-dir", str(tmp_path)])
    assert code == 0
    assert "dims=[4, 16]" in out


def test_config_file_flags_win(tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("classes=4\nshots=2\ndim=16\nqueries-per-class=3\nseed=9\n")
    code, _, _ = _run(capsys, ["synth", "--config", str(cfg), "--dim", "32",
                               "--out-dir", str(tmp_path / "out")])
    assert code == 0
    doc = json.loads((tmp_path / "out" / "synth.json").read_text())
    assert doc["spec"]["dim"] == 32  # flag wins
    assert doc["spec"]["n_classes"] == 4  # config applies
    assert doc["spec"]["seed"] == 9


def test_config_file_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("bogus=1\n")
    code, _, err = _run(capsys, ["synth", "--config", str(cfg), "--out-dir", str(tmp_path)])
    assert code == 1
    assert "bogus" in err
    assert "valid keys" in err


def test_validation_error_exits_1(tmp_path, capsys):
    code, _, err = _run(capsys, ["eval-zeroshot", "--manifest", str(tmp_path / "missing.json"),
                                 "--out-dir", str(tmp_path)])
    assert code == 1
    assert "error:" in err
