import json
import os
import sys

import pytest

from ifmimage.ifmimage import main, parse_arguments, resolve_config


def _run(monkeypatch, capsys, *args):
    monkeypatch.setattr(sys, "argv", ["ifmimage", *args])
    main()
    return capsys.readouterr()


def test_main_prints_help(capsys, monkeypatch):
    monkeypatch.setattr(sys, "argv", ["ifmimage", "--help"])

    with pytest.raises(SystemExit):
        main()

    captured = capsys.readouterr()
    assert "usage: ifmimage" in captured.out
    assert "--list-history" in captured.out
    for command in ("image", "sense", "curves", "resolution", "masks", "phase-sim", "calibrate"):
        assert command in captured.out


def test_image_help_lists_flags(capsys, monkeypatch):
    monkeypatch.setattr(sys, "argv", ["ifmimage", "image", "--help"])
    with pytest.raises(SystemExit):
        main()
    out = capsys.readouterr().out
    for flag in ("--mode", "--object", "--masks", "--seed", "--noisy", "--set", "--config"):
        assert flag in out


def test_spi_image_run(capsys, monkeypatch, tmp_path, glyph_path):
    out = tmp_path / "run1"
    captured = _run(monkeypatch, capsys, "image", "--mode", "spi", "--masks", "1024", "--size", "64",
                    "--object", glyph_path("U"), "--seed", "7", "--out", str(out))
    for name in ("spectrum.csv", "recon.pgm", "summary.json"):
        assert (out / name).exists()
    summary = json.loads(captured.out)
    assert summary["mode"] == "spi"
    assert summary["seed"] == 7
    assert summary["results"]["masks"] == 1024
    assert summary["results"]["pearson_r"] >= 0.8
    spectrum_lines = (out / "spectrum.csv").read_text().splitlines()
    assert len(spectrum_lines) == 1025


def test_sense_run(capsys, monkeypatch, tmp_path):
    out = tmp_path / "sense"
    captured = _run(monkeypatch, capsys, "sense", "--trials", "100000", "--seed", "1", "--out", str(out))
    assert (out / "histogram_present.csv").exists()
    assert (out / "histogram_absent.csv").exists()
    results = json.loads(captured.out)["results"]
    assert results["confidence"] >= 0.999
    assert 2950.0 < results["threshold"] < 3500.0


def test_resolution_run(capsys, monkeypatch, tmp_path):
    captured = _run(monkeypatch, capsys, "resolution", "--out", str(tmp_path / "res"))
    results = json.loads(captured.out)["results"]
    assert results["sigma_um"] == pytest.approx(43.0, abs=0.5)
    assert (tmp_path / "res" / "esf.csv").exists()


def test_missing_config_file_exits_with_config_error(capsys, monkeypatch, tmp_path):
    monkeypatch.setattr(sys, "argv", ["ifmimage", "sense", "--config", str(tmp_path / "nope.json"),
                                      "--out", str(tmp_path / "x")])
    with pytest.raises(SystemExit) as exc:
        main()
    assert exc.value.code == 3
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "ConfigError"
    assert "nope.json" in error["message"]


def test_invalid_config_value_exits_with_config_error(capsys, monkeypatch, tmp_path):
    config = tmp_path / "bad.yaml"
    config.write_text("model:\n  signal_vis_factor: 1.5\n")
    monkeypatch.setattr(sys, "argv", ["ifmimage", "curves", "-C", str(config), "--out", str(tmp_path / "x")])
    with pytest.raises(SystemExit) as exc:
        main()
    assert exc.value.code == 3
    assert "signal_vis_factor" in capsys.readouterr().err


def test_unknown_flag_is_a_usage_error(monkeypatch):
    monkeypatch.setattr(sys, "argv", ["ifmimage", "image", "--no-such-flag"])
    with pytest.raises(SystemExit) as exc:
        main()
    assert exc.value.code == 2


def test_unknown_object_is_a_usage_error(capsys, monkeypatch, tmp_path):
    monkeypatch.setattr(sys, "argv", ["ifmimage", "image", "--object", "Q?", "--out", str(tmp_path / "x")])
    with pytest.raises(SystemExit) as exc:
        main()
    assert exc.value.code == 2


def test_impossible_mask_count_flag_is_a_usage_error(capsys, monkeypatch, tmp_path):
    monkeypatch.setattr(sys, "argv", ["ifmimage", "image", "--mode", "spi", "--masks", "5000", "--k", "6",
                                      "--out", str(tmp_path / "x")])
    with pytest.raises(SystemExit) as exc:
        main()
    assert exc.value.code == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "UsageError"
    assert "masks.m" in error["message"]


def test_impossible_mask_count_setting_is_a_config_error(capsys, monkeypatch, tmp_path):
    monkeypatch.setattr(sys, "argv", ["ifmimage", "masks", "--set", "masks.m=5000", "--out", str(tmp_path / "x")])
    with pytest.raises(SystemExit) as exc:
        main()
    assert exc.value.code == 3
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "ConfigError"


    assert exc.value.code == 2


def test_flag_precedence(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"seed": 1, "masks": {"m": 16, "k": 3}}))
    args = parse_arguments(["image", "--mode", "spi", "-C", str(config), "--set", "masks.m=32",
                            "--set", "model.ifm.mode_overlap=0.699", "--masks", "48"])
    resolved = resolve_config(args)
    assert resolved.seed == 1
    assert resolved.masks.m == 48
    assert resolved.masks.k == 3
    assert resolved.model.ifm.mode_overlap == pytest.approx(0.699)
    assert resolved.mode == "spi"


def test_size_flag_targets_the_subcommand():
    assert resolve_config(parse_arguments(["resolution", "--size", "32"])).resolution.size == 32
    assert resolve_config(parse_arguments(["phase-sim", "--size", "96"])).phase.size == 96
    assert resolve_config(parse_arguments(["image", "--size", "32"])).object.size == 32


def test_object_flag_patterns():
    assert resolve_config(parse_arguments(["image", "--object", "knife-edge"])).object.pattern == "knife-edge"
    glyph = resolve_config(parse_arguments(["image", "--object", "j"])).object
    assert (glyph.pattern, glyph.glyph) == ("glyph", "J")
    text = resolve_config(parse_arguments(["image", "--object", "NJU"])).object
    assert (text.pattern, text.text) == ("text", "NJU")


def test_list_history(capsys, monkeypatch, tmp_path):
    _run(monkeypatch, capsys, "calibrate", "--out", str(tmp_path / "cal"))
    captured = _run(monkeypatch, capsys, "--list-history", "3")
    lines = captured.out.strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("1. [")
    assert "calibrate seed=0" in lines[0]


def test_empty_history(capsys, monkeypatch):
    captured = _run(monkeypatch, capsys, "--list-history")
    assert captured.out.strip() == "No run history found."


def test_output_root_environment(capsys, monkeypatch, tmp_path):
    monkeypatch.setenv("IFMIMAGE_OUTPUT_ROOT", str(tmp_path / "root"))
    _run(monkeypatch, capsys, "masks", "--k", "1", "--masks", "4", "--out", "exported")
    assert sorted(os.listdir(tmp_path / "root" / "exported" / "masks")) == [
        "mask_00000.pgm", "mask_00001.pgm", "mask_00002.pgm", "mask_00003.pgm"
    ]


def test_rerun_gives_identical_artifacts(capsys, monkeypatch, tmp_path):
    common = ["image", "--mode", "spi", "--k", "4", "--masks", "200", "--noisy", "--seed", "11"]
    _run(monkeypatch, capsys, *common, "--out", str(tmp_path / "a"))
    _run(monkeypatch, capsys, *common, "--out", str(tmp_path / "b"), "--workers", "3")
    for name in ("spectrum.csv", "recon.pgm", "spectrum.pgm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_masks_default_to_the_full_set(capsys, monkeypatch, tmp_path):
    _run(monkeypatch, capsys, "masks", "--k", "3", "--out", str(tmp_path / "k3"))
    names = sorted(os.listdir(tmp_path / "k3" / "masks"))
    assert len(names) == 64
    assert names[-1] == "mask_00063.pgm"


def test_spi_image_at_small_k_uses_every_mask(capsys, monkeypatch, tmp_path):
    _run(monkeypatch, capsys, "image", "--mode", "spi", "--k", "4", "--size", "16",
         "--out", str(tmp_path / "k4"))
    summary = json.loads((tmp_path / "k4" / "summary.json").read_text())
    assert summary["results"]["masks"] == 256
