import subprocess
import sys

import pytest

RUN = [sys.executable, "-m", "spatialspn"]


def run_cli(*args, cwd=None):
    return subprocess.run(
        RUN + list(args), capture_output=True, text=True, cwd=cwd, timeout=600
    )


def parse_kv(stdout):
    out = {}
    for line in stdout.splitlines():
        if ": " in line:
            key, value = line.split(": ", 1)
            out[key] = value
    return out


@pytest.fixture(scope="module")
def mirror_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "mirror.txt"
    result = run_cli("generate", "--preset", "mirror", "--images", "60",
                     "--seed", "3", "--out", str(path))
    assert result.returncode == 0, result.stderr
    return path


@pytest.fixture(scope="module")
def trained_bundle(mirror_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "bundle"
    result = run_cli(
        "train", str(mirror_data), "--mode", "ihs-spn", "--seed", "3",
        "--s", "2", "--D", "1",
        "--generative-epochs", "5", "--discriminative-epochs", "2",
        "--max-pairs-per-epoch", "100", "--out", str(out),
    )
    assert result.returncode == 0, result.stderr
    return out, result.stdout


def test_generate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for path in (a, b):
        result = run_cli("generate", "--preset", "mirror", "--images", "20",
                         "--seed", "7", "--out", str(path))
        assert result.returncode == 0
    assert a.read_bytes() == b.read_bytes()


def test_generate_counts(tmp_path):
    path = tmp_path / "d.txt"
    result = run_cli("generate", "--preset", "mirror", "--images", "200",
                     "--seed", "1", "--out", str(path))
    values = parse_kv(result.stdout)
    assert values["classes"] == "2"
    assert values["images"] == "400"


def test_generate_invalid_spec_exits_2(tmp_path):
    spec = tmp_path / "bad.txt"
    spec.write_text("synthspec v1\nclass a\nbg_rate 2.0\n")
    result = run_cli("generate", "--spec", str(spec), "--out", str(tmp_path / "o.txt"))
    assert result.returncode == 2
    assert "bg_rate" in result.stderr


def test_generate_without_source_exits_2(tmp_path):
    result = run_cli("generate", "--out", str(tmp_path / "o.txt"))
    assert result.returncode == 2


def test_train_prints_pair_counts(trained_bundle):
    _, stdout = trained_bundle
    values = parse_kv(stdout)
    assert values["parts"] == "6"
    assert values["pairs possible"] == "15"  # 6*5/2
    assert "gadgets west" in values
    assert "pairs modeled west" in values


def test_train_writes_bundle_and_log(trained_bundle):
    out, _ = trained_bundle
    names = {p.name for p in out.iterdir()}
    assert {"manifest", "train.log", "east.spn", "west.spn"} <= names
    log_text = (out / "train.log").read_text()
    assert "stage generative" in log_text
    assert "stage discriminative" in log_text


def test_train_determinism(mirror_data, tmp_path):
    outs = []
    for name in ("m1", "m2"):
        out = tmp_path / name
        result = run_cli(
            "train", str(mirror_data), "--mode", "ihs-spn", "--seed", "5",
            "--s", "2", "--D", "1", "--generative-epochs", "3",
            "--discriminative-epochs", "1", "--max-pairs-per-epoch", "40",
            "--out", str(out),
        )
        assert result.returncode == 0, result.stderr
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]


def test_config_file_with_flag_override(mirror_data, tmp_path):
    config = tmp_path / "run.conf"
    config.write_text("s=2\nD=1\ngenerative_epochs=3\ndiscriminative_epochs=0\nseed=9\n")
    out = tmp_path / "model"
    result = run_cli("train", str(mirror_data), "--mode", "ihs-spn",
                     "--config", str(config), "--generative-epochs", "2",
                     "--out", str(out))
    assert result.returncode == 0, result.stderr
    values = parse_kv(result.stdout)
    assert values["config generative_epochs"] == "2"  # flag wins
    assert values["config s"] == "2"
    assert values["config seed"] == "9"


def test_evaluate_report(mirror_data, trained_bundle, tmp_path):
    out, _ = trained_bundle
    report_path = tmp_path / "report.txt"
    result = run_cli("evaluate", str(out), str(mirror_data), "--out", str(report_path))
    assert result.returncode == 0, result.stderr
    values = parse_kv(result.stdout)
    assert float(values["map"]) >= 0.9
    assert float(values["accuracy"]) >= 0.9
    assert report_path.read_text().splitlines()[0] == "classes: 2"


def test_classify_lists_predictions(mirror_data, trained_bundle):
    out, _ = trained_bundle
    result = run_cli("classify", str(out), str(mirror_data))
    assert result.returncode == 0
    lines = [l for l in result.stdout.splitlines() if l.startswith("img ")]
    assert len(lines) == 120
    assert all(" pred " in line for line in lines)


def test_evaluate_vocabulary_mismatch_exits_4(trained_bundle, tmp_path):
    out, _ = trained_bundle
    bad = tmp_path / "bad.txt"
    bad.write_text(
        "spn-data v1 t=40 classes=1\nclass west\nimg i0 west 100 100\ndet 30 5 5\n"
    )
    result = run_cli("evaluate", str(out), str(bad))
    assert result.returncode == 4


def test_inspect_reports_stats_and_ablation(mirror_data, trained_bundle):
    out, _ = trained_bundle
    result = run_cli("inspect", str(out), "--data", str(mirror_data),
                     "--ablate-pairs", "3")
    assert result.returncode == 0, result.stderr
    values = parse_kv(result.stdout)
    assert "pairs possible unordered" in values
    assert "pairs possible ordered double-count" in values
    assert int(values["pairs possible ordered double-count"]) == 2 * int(
        values["pairs possible unordered"]
    )
    ranked = [l for l in result.stdout.splitlines() if l.startswith("ablate rank")]
    assert ranked
    assert ranked[0].startswith("ablate rank 1 pair 0 1 ")


def test_inspect_clamps_oversized_k(mirror_data, trained_bundle):
    out, _ = trained_bundle
    result = run_cli("inspect", str(out), "--data", str(mirror_data),
                     "--ablate-pairs", "999")
    assert result.returncode == 0
    assert "clamping" in result.stdout


def test_verify_passes_and_detects_perturbation():
    ok = run_cli("verify")
    assert ok.returncode == 0
    assert "failures: 0" in ok.stdout
    bad = run_cli("verify", "--perturb-fixture")
    assert bad.returncode == 1
    assert "FAIL" in bad.stdout


def test_cluster_command(tmp_path):
    feats = tmp_path / "feats.txt"
    rng_lines = ["feat v1 dim=2"]
    import numpy as np

    rng = np.random.default_rng(0)
    for blob in range(4):
        cx, cy = 40 * (blob % 2), 40 * (blob // 2)
        for j in range(6):
            x, y = rng.normal(cx, 0.5), rng.normal(cy, 0.5)
            rng_lines.append(f"b{blob}_{j} {x:.6f} {y:.6f}")
    feats.write_text("\n".join(rng_lines) + "\n")
    out = tmp_path / "clusters.txt"
    result = run_cli("cluster", str(feats), "--k-init", "8", "--n-centers", "4",
                     "--seed", "1", "--out", str(out))
    assert result.returncode == 0, result.stderr
    lines = out.read_text().splitlines()
    assert len(lines) == 4
    for line in lines:
        members = line.split(": ", 1)[1].split()
        assert len({m.split("_")[0] for m in members}) == 1

    too_many = run_cli("cluster", str(feats), "--k-init", "8", "--n-centers", "99",
                       "--out", str(tmp_path / "x.txt"))
    assert too_many.returncode == 2


def test_cluster_determinism(tmp_path):
    feats = tmp_path / "feats.txt"
    lines = ["feat v1 dim=2"] + [f"p{i} {i}.0 {i * 2}.0" for i in range(12)]
    feats.write_text("\n".join(lines) + "\n")
    outs = []
    for name in ("c1.txt", "c2.txt"):
        out = tmp_path / name
        result = run_cli("cluster", str(feats), "--k-init", "6", "--n-centers", "3",
                         "--seed", "4", "--out", str(out))
        assert result.returncode == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_resolved_config_echoed(mirror_data, tmp_path):
    result = run_cli("train", str(mirror_data), "--mode", "spn", "--seed", "0",
                     "--generative-epochs", "2", "--discriminative-epochs", "0",
                     "--out", str(tmp_path / "m"))
    assert result.returncode == 0
    assert "config command: train" in result.stdout
    assert "config mode: spn" in result.stdout


def test_training_failure_exits_3(tmp_path):
    # a single-class dataset cannot produce negative images for training
    data = tmp_path / "one.txt"
    data.write_text(
        "spn-data v1 t=2 classes=1\nclass solo\n"
        + "".join(f"img i{i} solo 100 100\ndet 0 10 10\ndet 1 90 90\n" for i in range(8))
    )
    result = run_cli("train", str(data), "--mode", "ihs-spn",
                     "--out", str(tmp_path / "m"))
    assert result.returncode == 3
