"""End-to-end tests of the command-line interface.

Every test drives ``rnalign.cli.main`` in-process with absolute paths, so
exit codes, stdout contracts, and written artifacts are all checked exactly
as a shell user would see them.
"""

import json

import numpy as np
import pytest

from rnalign.cli import main
from rnalign.data import load_feature_file
from rnalign.losses import norm_stats
from rnalign.model import load_checkpoint, predict
from rnalign.training import TELEMETRY_HEADER, NormTelemetry

BENCHMARK_INI = """\
[benchmark]
num_domains = 3
num_classes = 3
input_dim_visual = 6
input_dim_audio = 5
samples_per_class = 8
seed = 5
"""

TRAIN_INI = BENCHMARK_INI + """
[experiment]
setting = dg-single
aux_loss = rna
source = 0
target = 1
hidden_dim = 12
feature_dim = 8
iterations = 40
batch_size = 8
checkpoint_average = 3
seed = 2
"""

MATRIX_INI = TRAIN_INI + """
[matrix]
methods = source-only, rna
seeds = 0, 1
pairs = D1->D2, D2->D1
"""


def write_config(tmp_path, text, name="config.ini"):
    path = tmp_path / name
    path.write_text(text, encoding="ascii")
    return str(path)


def run_cli(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def parse_report(out):
    """'key=value' stdout lines -> dict of strings."""
    rows = {}
    for line in out.strip().splitlines():
        key, _, value = line.partition("=")
        rows[key] = value
    return rows


# ---------------------------------------------------------------------------
# generate


def test_generate_writes_domain_files_and_manifest(tmp_path, capsys):
    config = write_config(tmp_path, BENCHMARK_INI)
    out_dir = tmp_path / "data"
    code, out, _ = run_cli(capsys, ["generate", "--config", config,
                                    "--out", str(out_dir)])
    assert code == 0
    names = sorted(p.name for p in out_dir.glob("*.rnafeat"))
    assert names == ["D1_test.rnafeat", "D1_train.rnafeat",
                     "D2_test.rnafeat", "D2_train.rnafeat",
                     "D3_test.rnafeat", "D3_train.rnafeat"]
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["command"] == "generate"
    assert len(manifest["artifacts"]) == 6
    assert manifest["config"]["num_domains"] == 3
    assert "generated 3 domains (6 files)" in out


def test_generate_files_load_with_expected_shapes(tmp_path, capsys):
    config = write_config(tmp_path, BENCHMARK_INI)
    out_dir = tmp_path / "data"
    assert run_cli(capsys, ["generate", "--config", config,
                            "--out", str(out_dir)])[0] == 0
    batch = load_feature_file(out_dir / "D2_train.rnafeat")
    assert batch.visual.shape[1] == 6
    assert batch.audio.shape[1] == 5
    assert batch.labeled
    assert batch.domain_id == "D2_train"
    total = batch.n + load_feature_file(out_dir / "D2_test.rnafeat").n
    assert total == 3 * 8


def test_generate_rerun_is_byte_identical(tmp_path, capsys):
    config = write_config(tmp_path, BENCHMARK_INI)
    dirs = (tmp_path / "a", tmp_path / "b")
    for out_dir in dirs:
        assert run_cli(capsys, ["generate", "--config", config,
                                "--out", str(out_dir)])[0] == 0
    for name in ("D1_train", "D1_test", "D2_train",
                 "D2_test", "D3_train", "D3_test"):
        first = (dirs[0] / f"{name}.rnafeat").read_bytes()
        second = (dirs[1] / f"{name}.rnafeat").read_bytes()
        assert first == second, name


def test_generate_seed_flag_overrides_config(tmp_path, capsys):
    config = write_config(tmp_path, BENCHMARK_INI)
    base, other = tmp_path / "base", tmp_path / "other"
    assert run_cli(capsys, ["generate", "--config", config,
                            "--out", str(base)])[0] == 0
    assert run_cli(capsys, ["generate", "--config", config,
                            "--out", str(other), "--seed", "11"])[0] == 0
    assert ((base / "D1_train.rnafeat").read_bytes()
            != (other / "D1_train.rnafeat").read_bytes())
    manifest = json.loads((other / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 11


def test_generate_invalid_spec_exits_2(tmp_path, capsys):
    config = write_config(tmp_path, "[benchmark]\nnum_domains = 1\n")
    out_dir = tmp_path / "data"
    code, _, err = run_cli(capsys, ["generate", "--config", config,
                                    "--out", str(out_dir)])
    assert code == 2
    assert "error:" in err
    assert list(out_dir.glob("*.rnafeat")) == []


def test_generate_unknown_key_exits_2(tmp_path, capsys):
    config = write_config(tmp_path, "[benchmark]\nnum_domainz = 3\n")
    code, _, err = run_cli(capsys, ["generate", "--config", config,
                                    "--out", str(tmp_path / "d")])
    assert code == 2
    assert "num_domainz" in err


def test_generate_missing_config_exits_2(tmp_path, capsys):
    code, _, err = run_cli(capsys, ["generate",
                                    "--config", str(tmp_path / "nope.ini"),
                                    "--out", str(tmp_path / "d")])
    assert code == 2
    assert "cannot read" in err


# ---------------------------------------------------------------------------
# train


def test_train_writes_artifacts_and_summary_line(tmp_path, capsys):
    config = write_config(tmp_path, TRAIN_INI)
    out_dir = tmp_path / "run"
    code, out, _ = run_cli(capsys, ["train", "--config", config,
                                    "--out", str(out_dir)])
    assert code == 0
    assert (out_dir / "checkpoint.rna").exists()
    assert (out_dir / "telemetry.csv").exists()
    assert (out_dir / "manifest.json").exists()
    line = out.strip().splitlines()[-1]
    assert line.startswith("setting=dg-single aux=rna acc=")
    accuracy = float(line.rsplit("=", 1)[1])
    assert 0.0 <= accuracy <= 1.0


def test_train_telemetry_round_trips(tmp_path, capsys):
    config = write_config(tmp_path, TRAIN_INI)
    out_dir = tmp_path / "run"
    assert run_cli(capsys, ["train", "--config", config,
                            "--out", str(out_dir)])[0] == 0
    text = (out_dir / "telemetry.csv").read_text(encoding="ascii")
    assert text.splitlines()[0] == TELEMETRY_HEADER
    telemetry = NormTelemetry.from_csv(out_dir / "telemetry.csv")
    assert len(telemetry.iterations) == 40
    assert telemetry.iterations[-1].iteration == 39


def test_train_checkpoint_is_usable(tmp_path, capsys):
    config = write_config(tmp_path, TRAIN_INI)
    data_dir, run_dir = tmp_path / "data", tmp_path / "run"
    assert run_cli(capsys, ["generate", "--config", config,
                            "--out", str(data_dir)])[0] == 0
    assert run_cli(capsys, ["train", "--config", config,
                            "--out", str(run_dir)])[0] == 0
    model = load_checkpoint(run_dir / "checkpoint.rna")
    batch = load_feature_file(data_dir / "D2_test.rnafeat")
    labels = predict(model, batch)
    assert labels.shape == (batch.n,)
    assert set(np.unique(labels)) <= {0, 1, 2}


def test_train_same_seed_reproduces_run(tmp_path, capsys):
    config = write_config(tmp_path, TRAIN_INI)
    outs = []
    for name in ("a", "b"):
        out_dir = tmp_path / name
        code, out, _ = run_cli(capsys, ["train", "--config", config,
                                        "--out", str(out_dir), "--quiet"])
        assert code == 0
        outs.append(out)
        assert (out_dir / "telemetry.csv").read_bytes() \
            == (tmp_path / "a" / "telemetry.csv").read_bytes()
        assert (out_dir / "checkpoint.rna").read_bytes() \
            == (tmp_path / "a" / "checkpoint.rna").read_bytes()
    assert outs[0] == outs[1]


def test_train_from_exported_files_matches_generated_run(tmp_path, capsys):
    """Training on saved feature files reproduces the in-memory benchmark
    run bit for bit, so the text format loses nothing that matters."""
    config = write_config(tmp_path, TRAIN_INI)
    data_dir = tmp_path / "data"
    assert run_cli(capsys, ["generate", "--config", config,
                            "--out", str(data_dir)])[0] == 0
    from_spec, from_files = tmp_path / "spec_run", tmp_path / "file_run"
    assert run_cli(capsys, ["train", "--config", config,
                            "--out", str(from_spec)])[0] == 0
    file_config = write_config(
        tmp_path, TRAIN_INI + f"data_dir = {data_dir}\n", name="files.ini")
    assert run_cli(capsys, ["train", "--config", file_config,
                            "--out", str(from_files)])[0] == 0
    assert (from_spec / "telemetry.csv").read_bytes() \
        == (from_files / "telemetry.csv").read_bytes()
    assert (from_spec / "checkpoint.rna").read_bytes() \
        == (from_files / "checkpoint.rna").read_bytes()


def test_train_quiet_suppresses_progress(tmp_path, capsys):
    config = write_config(tmp_path, TRAIN_INI)
    _, _, noisy = run_cli(capsys, ["train", "--config", config,
                                   "--out", str(tmp_path / "a")])
    assert "training:" in noisy
    _, _, quiet = run_cli(capsys, ["train", "--config", config,
                                   "--out", str(tmp_path / "b"), "--quiet"])
    assert quiet == ""


def test_train_missing_data_dir_exits_2_without_artifacts(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    config = write_config(tmp_path, TRAIN_INI + f"data_dir = {empty}\n")
    out_dir = tmp_path / "run"
    code, _, err = run_cli(capsys, ["train", "--config", config,
                                    "--out", str(out_dir)])
    assert code == 2
    assert "rnafeat" in err
    assert not (out_dir / "checkpoint.rna").exists()
    assert not (out_dir / "telemetry.csv").exists()


def test_train_divergence_exits_1(tmp_path, capsys):
    config = write_config(tmp_path,
                          TRAIN_INI + "learning_rate = 1e12\nmomentum = 0\n")
    out_dir = tmp_path / "run"
    code, _, err = run_cli(capsys, ["train", "--config", config,
                                    "--out", str(out_dir), "--quiet"])
    assert code == 1
    assert "error:" in err
    assert not (out_dir / "checkpoint.rna").exists()


def test_train_bad_experiment_value_exits_2(tmp_path, capsys):
    config = write_config(tmp_path, TRAIN_INI + "lambda = -1\n")
    code, _, err = run_cli(capsys, ["train", "--config", config,
                                    "--out", str(tmp_path / "run")])
    assert code == 2
    assert "lambda" in err


# ---------------------------------------------------------------------------
# matrix


def test_matrix_results_table_layout(tmp_path, capsys):
    config = write_config(tmp_path, MATRIX_INI)
    out_dir = tmp_path / "grid"
    code, out, _ = run_cli(capsys, ["matrix", "--config", config,
                                    "--out", str(out_dir), "--quiet"])
    assert code == 0
    lines = (out_dir / "results.csv").read_text(encoding="ascii").splitlines()
    assert lines[0] == "method,D1->D2,D2->D1,mean"
    assert [row.split(",")[0] for row in lines[1:]] == ["source-only", "rna"]
    for row in lines[1:]:
        values = [float(v) for v in row.split(",")[1:]]
        assert np.isclose(values[-1], np.mean(values[:-1]), atol=1e-12)
        assert all(0.0 <= v <= 1.0 for v in values)
    assert "source-only mean=" in out
    assert "rna mean=" in out


def test_matrix_rerun_is_byte_identical(tmp_path, capsys):
    config = write_config(tmp_path, MATRIX_INI)
    for name in ("a", "b"):
        assert run_cli(capsys, ["matrix", "--config", config,
                                "--out", str(tmp_path / name),
                                "--quiet"])[0] == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() \
        == (tmp_path / "b" / "results.csv").read_bytes()


def test_matrix_seed_flag_replaces_seed_list(tmp_path, capsys):
    config = write_config(tmp_path, MATRIX_INI)
    pinned = write_config(tmp_path, MATRIX_INI.replace("seeds = 0, 1",
                                                       "seeds = 4"),
                          name="pinned.ini")
    assert run_cli(capsys, ["matrix", "--config", config,
                            "--out", str(tmp_path / "flag"),
                            "--seed", "4", "--quiet"])[0] == 0
    assert run_cli(capsys, ["matrix", "--config", pinned,
                            "--out", str(tmp_path / "ini"),
                            "--quiet"])[0] == 0
    assert (tmp_path / "flag" / "results.csv").read_bytes() \
        == (tmp_path / "ini" / "results.csv").read_bytes()


def test_matrix_multi_source_pair_labels(tmp_path, capsys):
    config = write_config(
        tmp_path,
        MATRIX_INI.replace("setting = dg-single", "setting = dg-multi")
                  .replace("pairs = D1->D2, D2->D1", "pairs = D3"))
    out_dir = tmp_path / "grid"
    assert run_cli(capsys, ["matrix", "--config", config,
                            "--out", str(out_dir), "--quiet"])[0] == 0
    header = (out_dir / "results.csv").read_text(
        encoding="ascii").splitlines()[0]
    # the multi-source label contains a comma, so the CSV writer quotes it
    assert header == 'method,"D1,D2->D3",mean'


def test_matrix_unknown_method_exits_2(tmp_path, capsys):
    config = write_config(tmp_path,
                          MATRIX_INI.replace("source-only, rna", "sota"))
    code, _, err = run_cli(capsys, ["matrix", "--config", config,
                                    "--out", str(tmp_path / "grid")])
    assert code == 2
    assert "sota" in err


def test_matrix_bad_pair_exits_2(tmp_path, capsys):
    config = write_config(tmp_path,
                          MATRIX_INI.replace("D2->D1", "D9->D1"))
    code, _, err = run_cli(capsys, ["matrix", "--config", config,
                                    "--out", str(tmp_path / "grid")])
    assert code == 2
    assert "D9" in err


# ---------------------------------------------------------------------------
# norms


@pytest.fixture()
def feature_file(tmp_path, capsys):
    config = write_config(tmp_path, BENCHMARK_INI)
    out_dir = tmp_path / "data"
    assert run_cli(capsys, ["generate", "--config", config,
                            "--out", str(out_dir), "--quiet"])[0] == 0
    return out_dir / "D1_train.rnafeat"


def test_norms_feature_report_matches_stats(feature_file, capsys):
    code, out, _ = run_cli(capsys, ["norms", str(feature_file)])
    assert code == 0
    report = parse_report(out)
    batch = load_feature_file(feature_file)
    stats = norm_stats(batch.visual, batch.audio)
    assert int(report["samples"]) == batch.n
    assert float(report["mean_norm_v"]) == stats.mean_norm_visual
    assert float(report["mean_norm_a"]) == stats.mean_norm_audio
    assert float(report["delta"]) == stats.delta
    assert float(report["rho"]) == stats.rho


def test_norms_topk_clamps_to_feature_dim(feature_file, capsys):
    _, out, _ = run_cli(capsys, ["norms", str(feature_file), "--k", "300"])
    report = parse_report(out)
    assert np.isclose(float(report["top6_share_v"]), 1.0, atol=1e-12)
    assert np.isclose(float(report["top5_share_a"]), 1.0, atol=1e-12)


def test_norms_topk_partial_share(feature_file, capsys):
    _, out, _ = run_cli(capsys, ["norms", str(feature_file), "--k", "1"])
    report = parse_report(out)
    share = float(report["top1_share_v"])
    assert 0.0 < share < 1.0


def test_norms_telemetry_report(tmp_path, capsys):
    config = write_config(tmp_path, TRAIN_INI)
    run_dir = tmp_path / "run"
    assert run_cli(capsys, ["train", "--config", config,
                            "--out", str(run_dir), "--quiet"])[0] == 0
    telemetry_path = run_dir / "telemetry.csv"
    code, out, err = run_cli(capsys, ["norms", str(telemetry_path)])
    assert code == 0
    report = parse_report(out)
    last = NormTelemetry.from_csv(telemetry_path).iterations[-1]
    assert int(report["iterations"]) == 40
    assert float(report["rho"]) == last.rho
    assert float(report["delta"]) == last.delta
    assert "top-k norm share" in err  # pointer to the per-feature variant


def test_norms_out_csv_mirrors_stdout(feature_file, tmp_path, capsys):
    csv_path = tmp_path / "report.csv"
    _, out, _ = run_cli(capsys, ["norms", str(feature_file),
                                 "--out", str(csv_path)])
    lines = csv_path.read_text(encoding="ascii").splitlines()
    assert lines[0] == "metric,value"
    report = parse_report(out)
    for line in lines[1:]:
        key, _, value = line.partition(",")
        assert report[key] == value


def test_norms_rejects_unrecognized_input(tmp_path, capsys):
    bogus = tmp_path / "bogus.txt"
    bogus.write_text("hello world\n1,2,3\n", encoding="ascii")
    code, _, err = run_cli(capsys, ["norms", str(bogus)])
    assert code == 2
    assert "line 1" in err


def test_norms_missing_file_exits_2(tmp_path, capsys):
    code, _, err = run_cli(capsys, ["norms", str(tmp_path / "gone.csv")])
    assert code == 2
    assert "cannot read" in err


def test_norms_empty_telemetry_exits_2(tmp_path, capsys):
    path = tmp_path / "empty.csv"
    path.write_text(TELEMETRY_HEADER + "\n", encoding="ascii")
    code, _, err = run_cli(capsys, ["norms", str(path)])
    assert code == 2
    assert "no iteration records" in err


# ---------------------------------------------------------------------------
# top-level parser


def test_version_flag_prints_and_exits_zero(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert capsys.readouterr().out.startswith("rnalign ")


def test_missing_required_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["train"])
    assert excinfo.value.code == 2


def test_unknown_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["evaluate"])
    assert excinfo.value.code == 2
