"""Command-line tests for vwsd-export."""

import importlib.util

import pytest

from vwsd.embedding import read_store

from vwsd_exporter.cli import main

from conftest import make_png
from test_jobs import INVENTORY


def _write_manifest(path, rows):
    path.write_text("".join(f"{i}\t{v}\n" for i, v in rows), encoding="utf-8")
    return path


def test_export_text_command(tmp_path, capsys):
    manifest = _write_manifest(
        tmp_path / "texts.tsv", [("a", "first text"), ("b", "second text")]
    )
    out = tmp_path / "texts.bin"
    code = main(
        ["export-text", "--model", "hash:32", "--manifest", str(manifest),
         "--out", str(out)]
    )
    assert code == 0
    assert f"wrote 2 text vectors to {out}" in capsys.readouterr().out
    assert read_store(out).ids() == ["a", "b"]


def test_export_images_command_with_skip(tmp_path, capsys):
    make_png(tmp_path / "one.png", seed=1)
    (tmp_path / "bad.png").write_bytes(b"nope")
    manifest = _write_manifest(
        tmp_path / "images.tsv",
        [("one", str(tmp_path / "one.png")), ("two", str(tmp_path / "bad.png"))],
    )
    out = tmp_path / "images.bin"
    argv = ["export-images", "--model", "hash:8", "--manifest", str(manifest),
            "--out", str(out)]

    assert main(argv) == 2  # without --skip-bad the job aborts
    assert "unreadable images: two" in capsys.readouterr().err

    assert main(argv + ["--skip-bad"]) == 0
    output = capsys.readouterr().out
    assert "wrote 1 image vectors" in output
    assert f"skipped 1 unreadable images (see {out}.skipped)" in output


def test_export_gloss_command(tmp_path, capsys):
    inventory = tmp_path / "senses.jsonl"
    inventory.write_text(INVENTORY)
    out = tmp_path / "gloss.bin"
    code = main(
        ["export-gloss", "--model", "hash:16", "--inventory", str(inventory),
         "--out", str(out)]
    )
    assert code == 0
    assert "wrote 3 gloss vectors" in capsys.readouterr().out


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["export-text", "--model", "hash:8"]) == 1  # no manifest/out
    assert main(["no-such-command"]) == 1
    capsys.readouterr()


def test_data_errors_exit_2(tmp_path, capsys):
    out = tmp_path / "o.bin"
    bad = _write_manifest(tmp_path / "bad.tsv", [("a", "one\textra")])
    code = main(
        ["export-text", "--model", "hash:8", "--manifest", str(bad),
         "--out", str(out)]
    )
    assert code == 2
    assert "expected 2 tab-separated columns" in capsys.readouterr().err

    code = main(
        ["export-text", "--model", "hash:oops",
         "--manifest", str(_write_manifest(tmp_path / "ok.tsv", [("a", "x")])),
         "--out", str(out)]
    )
    assert code == 2
    assert "bad hash encoder width" in capsys.readouterr().err


def test_extract_inventory_reports_missing_backend(tmp_path, capsys):
    if importlib.util.find_spec("nltk") is not None:
        pytest.skip("nltk installed; the missing-dependency path is unreachable")
    assert main(["extract-inventory", "--out", str(tmp_path / "inv.jsonl")]) == 2
    assert "needs the nltk package" in capsys.readouterr().err


def test_extract_inventory_rejects_bad_pos(tmp_path, capsys):
    code = main(
        ["extract-inventory", "--out", str(tmp_path / "inv.jsonl"), "--pos", "x"]
    )
    assert code == 2
    assert "part of speech" in capsys.readouterr().err
