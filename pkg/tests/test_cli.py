import csv
import io
import json
import struct

import numpy as np
import pytest

from conformer import cli
from conformer import tensor as tt
from conformer.errors import ConfigError, FormatError
from conformer.frontend import AudioBuffer, FeatureMatrix, write_wav
from conformer.models import BlockParams, ConformerConfig, build_model
from conformer.params import (Allocator, decode_params, encode_params, leaf_map, load_into,
                              load_params, named_leaves, save_params)
from conformer.runconfig import load_run_config, parse_run_config

SMALL_YAML = """\
model: conformer
conformer:
  num_layers: 1
  d_model: 16
  num_heads: 2
  conv_kernel: 5
  decoder_dim: 32
"""


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# -- checksum ----------------------------------------------------------------------------

def test_fnv1a64_reference_vectors():
    assert cli.fnv1a64(b"") == 0xCBF29CE484222325
    assert cli.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert cli.fnv1a64(b"foobar") == 0x85944171F73967E8


# -- forward ---------------------------------------------------------------------------------------

def test_forward_s_preset_shape(capsys):
    code, out, _ = run(capsys, "forward", "--synthetic", "100", "--seed", "3")
    assert code == 0
    report = json.loads(out)
    assert report["output"]["shape"] == [24, 144]
    assert report["seed"] == 3 and report["command"] == "forward"
    assert set(report) >= {"config", "output", "timing_ms"}


def test_forward_same_seed_same_checksum(capsys, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL_YAML)
    sums = []
    for _ in range(2):
        code, out, _ = run(capsys, "forward", "--config", str(cfg), "--synthetic", "40", "--seed", "7")
        assert code == 0
        sums.append(json.loads(out)["output"]["checksum"])
    assert sums[0] == sums[1]
    code, out, _ = run(capsys, "forward", "--config", str(cfg), "--synthetic", "40", "--seed", "8")
    assert json.loads(out)["output"]["checksum"] != sums[0]


def test_forward_writes_cfkt_matching_checksum(capsys, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL_YAML)
    out_path = tmp_path / "y.cfkt"
    code, out, _ = run(capsys, "forward", "--config", str(cfg), "--synthetic", "40", "--out", str(out_path))
    assert code == 0
    y = tt.load_tensor(out_path)
    assert json.loads(out)["output"]["checksum"] == f"{cli.fnv1a64(y.data.tobytes()):016x}"


def test_forward_csv_output(capsys, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL_YAML)
    out_path = tmp_path / "y.csv"
    run(capsys, "forward", "--config", str(cfg), "--synthetic", "40", "--out", str(out_path), "--format", "csv")
    rows = list(csv.reader(open(out_path)))
    assert rows[0] == [f"c{i}" for i in range(16)]
    assert len(rows) == 1 + 9
    assert open(out_path, "rb").read().count(b"\r") == 0


def test_forward_train_mode_with_specaugment(capsys, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL_YAML + "spec_augment:\n  F: 5\n")
    args = ["forward", "--config", str(cfg), "--synthetic", "60", "--mode", "train", "--seed", "1"]
    a = json.loads(run(capsys, *args)[1])["output"]["checksum"]
    b = json.loads(run(capsys, *args)[1])["output"]["checksum"]
    assert a == b


def test_forward_from_wav(capsys, tmp_path):
    wav = tmp_path / "a.wav"
    write_wav(wav, AudioBuffer(0.1 * np.sin(np.arange(8000) * 0.3), 16000))
    cfg = tmp_path / "c.yaml"
    cfg.write_text("model: contextnet\ncontextnet:\n  alpha: 0.25\n")
    code, out, _ = run(capsys, "forward", "--config", str(cfg), "--wav", str(wav))
    assert code == 0
    # 8000 samples -> 48 frames -> 24 -> 12 -> 6
    assert json.loads(out)["output"]["shape"] == [6, 640]


def test_forward_float32(capsys, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL_YAML + "precision: float32\n")
    code, out, _ = run(capsys, "forward", "--config", str(cfg), "--synthetic", "40")
    assert code == 0 and json.loads(out)["output"]["dtype"] == "float32"
    assert tt.default_dtype() == np.float64


def test_malformed_config_exit_2_names_key(capsys, tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(SMALL_YAML.replace("num_heads", "num_hedas"))
    code, _, err = run(capsys, "forward", "--config", str(cfg), "--synthetic", "40")
    assert code == 2
    assert "conformer.num_hedas" in err


def test_invalid_yaml_exit_2(capsys, tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("model: [unclosed\n")
    assert run(capsys, "forward", "--config", str(cfg), "--synthetic", "40")[0] == 2


def test_short_input_exit_2(capsys):
    assert run(capsys, "forward", "--synthetic", "5")[0] == 2


def test_missing_input_exit_3(capsys, tmp_path):
    code, _, err = run(capsys, "forward", "--wav", str(tmp_path / "none.wav"))
    assert code == 3 and "I/O error" in err


def test_corrupt_wav_exit_3(capsys, tmp_path):
    wav = tmp_path / "bad.wav"
    wav.write_bytes(b"JUNK" * 20)
    assert run(capsys, "forward", "--wav", str(wav))[0] == 3


def test_non_finite_exit_4(capsys, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "load_features", lambda run, args, rng: FeatureMatrix(np.full((40, 80), np.nan)))
    assert run(capsys, "forward", "--synthetic", "40")[0] == 4


# -- verify ------------------------------------------------------------------------------------------

def test_verify_oracle_passes(capsys):
    code, out, err = run(capsys, "verify", "--suite", "oracle")
    report = json.loads(out)
    assert code == 0 and report["failed"] == []
    rel = [c for c in report["checks"] if "rel" in c["name"]]
    assert rel and all(c["max_err"] < 1e-12 for c in rel)
    assert "max_err=" in err


def test_verify_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "gradcheck", "--jobs", "4")
    report = json.loads(out)
    assert code == 0
    assert all(c["max_err"] < 1e-5 for c in report["checks"])


def test_verify_detects_swish_sign_error(capsys, monkeypatch):
    from conformer.tensor import ops
    monkeypatch.setattr(ops, "_swish_grad", lambda x, s: -s * (1.0 + x * (1.0 - s)))
    code, out, _ = run(capsys, "verify", "--suite", "gradcheck")
    assert code == 1
    assert "swish" in json.loads(out)["failed"]


# -- params ----------------------------------------------------------------------------------------------

def test_params_table(capsys):
    code, out, _ = run(capsys, "params", "S", "M", "L")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and [r["config"] for r in rows] == ["S", "M", "L"]
    assert [float(r["target_m"]) for r in rows] == [10.3, 30.7, 118.8]
    for r in rows:
        assert abs(float(r["deviation_pct"])) < 10.0
        assert int(r["total"]) == int(r["encoder"]) + int(r["decoder"])


def test_params_ablation_deltas(capsys):
    _, out, _ = run(capsys, "params", "L", "--ablation", "heads(32)", "--ablation", "kernel(3)")
    rows = {r["ablation"]: r for r in csv.DictReader(io.StringIO(out))}
    assert int(rows["heads(32)"]["delta"]) == 0
    assert int(rows["kernel(3)"]["delta"]) == -17 * (32 - 3) * 512


def test_params_unknown_row_exit_2(capsys):
    assert run(capsys, "params", "S", "--ablation", "bogus")[0] == 2
    assert run(capsys, "params", "XL")[0] == 2


def test_params_from_config(capsys, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL_YAML)
    code, out, _ = run(capsys, "params", "--config", str(cfg))
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and rows[0]["config"] == "config" and rows[0]["target_m"] == ""


# -- run config -----------------------------------------------------------------------------------------------

def test_run_config_preset_override_and_ablations():
    run_cfg = parse_run_config({"preset": "M", "conformer": {"num_layers": 2}, "ablations": ["relu", "kernel(7)"]})
    assert run_cfg.model.num_layers == 2 and run_cfg.model.d_model == 256
    assert run_cfg.model.ablation.activation == "relu" and run_cfg.model.conv_kernel == 7


@pytest.mark.parametrize("raw,needle", [
    ({"modle": "conformer"}, "modle"),
    ({"features": {"n_mel": 80}}, "features.n_mel"),
    ({"spec_augment": {"G": 1}}, "spec_augment.G"),
    ({"model": "contextnet", "contextnet": {"beta": 1}}, "contextnet.beta"),
])
def test_unknown_keys_are_named(raw, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_run_config(raw)


def test_run_config_rejects_mismatched_mels():
    with pytest.raises(ConfigError):
        parse_run_config({"preset": "S", "features": {"n_mels": 40}})


def test_load_run_config_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(SMALL_YAML)
    assert load_run_config(path).model == ConformerConfig(1, 16, 2, conv_kernel=5, decoder_dim=32)


# -- parameter container --------------------------------------------------------------------------------------

def test_param_container_round_trip(tmp_path):
    cfg = ConformerConfig(1, 16, 2, conv_kernel=5)
    model = build_model(cfg, seed=4)
    path = tmp_path / "m.cfkp"
    save_params(model, path)
    restored = load_params(path, build_model(cfg, seed=99))
    for (na, a), (nb, b) in zip(named_leaves(model), named_leaves(restored)):
        assert na == nb and a.data.tobytes() == b.data.tobytes()


def test_param_container_layout():
    p = BlockParams.build(ConformerConfig(1, 8, 2, conv_kernel=3), Allocator(0))
    blob = encode_params(p)
    assert blob[:4] == b"CFKP"
    assert struct.unpack_from("<I", blob, 4)[0] == len(leaf_map(p))
    (n,) = struct.unpack_from("<I", blob, 8)
    assert blob[12:12 + n] == b"ffn1/ln/gamma"


def test_param_container_errors():
    p = BlockParams.build(ConformerConfig(1, 8, 2, conv_kernel=3), Allocator(0))
    blob = encode_params(p)
    with pytest.raises(FormatError):
        decode_params(b"NOPE" + blob[4:])
    with pytest.raises(FormatError):
        decode_params(blob[:-3])
    with pytest.raises(FormatError):
        load_into(BlockParams.build(ConformerConfig(1, 8, 2, conv_kernel=5), Allocator(0)), decode_params(blob))
