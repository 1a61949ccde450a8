"""コマンドラインのテスト (極小動画での encode → decode → eval)"""

import csv
import json

import numpy as np
import pytest

from src import cli
from src.hinerv_features.bitstream import deserialize
from src.hinerv_features.video_io import read_video, write_video
from src.models import RunReport, bits_per_pixel

from .conftest import MICRO_CONFIG_TEXT, moving_gradient_clip


def test_encode_writes_bitstream_and_logs(encoded_clip):
    _, _, output, report = encoded_clip
    assert output.is_file()
    assert report.bitstream_bytes == output.stat().st_size
    assert report.bpp == bits_per_pixel(report.bitstream_bytes, 2, 16, 16)
    assert len(report.frames) == 2 and np.isfinite(report.mean_psnr)
    assert report.encode_seconds is not None and report.decode_seconds is not None
    assert report.config["compression"]["bits"] == 6
    saved = RunReport.model_validate_json(output.with_name("clip.hnrv.report.json").read_text())
    assert saved.bitstream_bytes == report.bitstream_bytes
    with open(output.with_name("clip.hnrv.train.csv"), newline="") as f:
        assert len(list(csv.DictReader(f))) == 2


def test_cli_encode(codec_env, capsys):
    video = codec_env / "clip"
    write_video(moving_gradient_clip(frames=2, height=16, width=16), video)
    config = codec_env / "micro.conf"
    config.write_text(MICRO_CONFIG_TEXT)
    output = codec_env / "out.hnrv"
    checkpoint = codec_env / "model.ckpt"
    code = cli.main(["encode", str(video), str(config), str(output), "--seed", "3", "--epochs", "1",
                     "--qat-epochs", "0", "--checkpoint", str(checkpoint)])
    assert code == 0
    assert output.is_file() and checkpoint.is_file()
    assert "bpp:" in capsys.readouterr().out


def test_decode_eval_round(encoded_clip, codec_env, capsys):
    video, _, bitstream, report = encoded_clip
    decoded = codec_env / "decoded"
    assert cli.main(["decode", str(bitstream), str(decoded)]) == 0
    assert sorted(p.name for p in decoded.iterdir()) == ["000000.png", "000001.png"]

    csv_path, json_path = codec_env / "eval.csv", codec_env / "eval.json"
    assert cli.main(["eval", str(video), str(decoded), str(bitstream), "--csv", str(csv_path),
                     "--json", str(json_path)]) == 0
    evaluated = RunReport.model_validate_json(json_path.read_text())
    assert evaluated.bpp == 8 * bitstream.stat().st_size / (2 * 16 * 16)
    assert evaluated.mean_psnr == pytest.approx(report.mean_psnr, abs=0.05)
    with open(csv_path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["frame", "psnr", "msssim"]
    assert [row[0] for row in rows[1:]] == ["0", "1", "mean"]


def test_decode_frame_range_and_raw(encoded_clip, codec_env):
    bitstream = encoded_clip[2]
    partial = codec_env / "partial"
    assert cli.main(["decode", str(bitstream), str(partial), "--frames", "1..2"]) == 0
    assert [p.name for p in partial.iterdir()] == ["000001.png"]

    raw = codec_env / "clip.rgb"
    assert cli.main(["decode", str(bitstream), str(raw), "--format", "raw", "--frames", "0..1"]) == 0
    assert json.loads(raw.with_name("clip.rgb.json").read_text()) == {"frames": 1, "height": 16, "width": 16}


def test_patch_mode_matches_frame_mode(encoded_clip, codec_env):
    bitstream = encoded_clip[2]
    assert cli.main(["decode", str(bitstream), str(codec_env / "frame")]) == 0
    assert cli.main(["decode", str(bitstream), str(codec_env / "patch"), "--mode", "patch"]) == 0
    by_frame = read_video(codec_env / "frame").frames
    by_patch = read_video(codec_env / "patch").frames
    assert np.max(np.abs(by_frame - by_patch)) <= 1 / 255 + 1e-6
    assert np.mean(by_frame == by_patch) > 0.99


def test_info(encoded_clip, codec_env, capsys):
    bitstream = encoded_clip[2]
    assert cli.main(["info", str(bitstream)]) == 0
    out = capsys.readouterr().out
    assert "version: 1" in out
    assert "stem.weight" in out and "head.bias" in out

    printed = dict(line.split(": ", 1) for line in out.splitlines() if ": " in line and not line.startswith(" "))
    decoded = deserialize(bitstream.read_bytes())
    total = sum(q.values.size for q in decoded.tensors.values())
    pruned = sum(int(keep.size - np.count_nonzero(keep)) for keep in decoded.keep.values())
    assert pruned > 0
    assert float(printed["sparsity"]) == pytest.approx(pruned / total, abs=1e-6)
    assert (int(printed["total record bytes"]) + int(printed["header bytes"]) + int(printed["checksum bytes"])
            == bitstream.stat().st_size)


def test_same_seed_gives_identical_bitstream(codec_env):
    video = codec_env / "clip"
    write_video(moving_gradient_clip(frames=2, height=16, width=16), video)
    config = codec_env / "micro.conf"
    config.write_text(MICRO_CONFIG_TEXT)
    first, second = codec_env / "a.hnrv", codec_env / "b.hnrv"
    assert cli.main(["encode", str(video), str(config), str(first), "--seed", "7"]) == 0
    assert cli.main(["encode", str(video), str(config), str(second), "--seed", "7"]) == 0
    assert first.read_bytes() == second.read_bytes()


class TestExitCodes:
    def test_missing_video(self, codec_env):
        config = codec_env / "micro.conf"
        config.write_text(MICRO_CONFIG_TEXT)
        assert cli.main(["encode", str(codec_env / "none"), str(config), str(codec_env / "o.hnrv")]) == 3

    def test_unknown_config_key(self, codec_env):
        video = codec_env / "clip"
        write_video(moving_gradient_clip(frames=2, height=16, width=16), video)
        config = codec_env / "bad.conf"
        config.write_text(MICRO_CONFIG_TEXT + "colour=blue\n")
        assert cli.main(["encode", str(video), str(config), str(codec_env / "o.hnrv")]) == 2

    def test_corrupt_bitstream(self, encoded_clip, codec_env, capsys):
        blob = bytearray(encoded_clip[2].read_bytes())
        blob[40] ^= 0xFF
        corrupt = codec_env / "corrupt.hnrv"
        corrupt.write_bytes(bytes(blob))
        assert cli.main(["info", str(corrupt)]) == 4
        assert "CRC32" in capsys.readouterr().err

    def test_bad_frame_range(self, encoded_clip, codec_env):
        for frames in ("1..1", "0..3", "x"):
            assert cli.main(["decode", str(encoded_clip[2]), str(codec_env / "d"), "--frames", frames]) == 2

    def test_eval_dimension_mismatch(self, encoded_clip, codec_env):
        other = codec_env / "other"
        write_video(moving_gradient_clip(frames=3, height=16, width=16), other)
        assert cli.main(["eval", str(encoded_clip[0]), str(other), str(encoded_clip[2])]) == 2

    def test_unexpected_error(self, encoded_clip, codec_env, monkeypatch):
        def boom(*args, **kwargs):
            raise RuntimeError("boom")

        monkeypatch.setattr("src.codec_tools.HiNeRVCodec.info", boom)
        assert cli.main(["info", str(encoded_clip[2])]) == 1

    def test_argparse_usage(self):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["decode"])
        assert excinfo.value.code == 2
