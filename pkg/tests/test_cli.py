import json

import pytest

from splitconv.arch import save_arch
from splitconv.cli import main, parse_alpha
from splitconv.spconv import VARIANTS
from splitconv.zoo import builtin_arch


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def exit_code(*argv):
    try:
        return main(list(argv))
    except SystemExit as exc:
        return exc.code


class TestAlpha:
    @pytest.mark.parametrize("text,value", [("1/2", 0.5), ("0.25", 0.25), ("1/16", 0.0625), ("1", 1.0)])
    def test_parse(self, text, value):
        assert parse_alpha(text) == value

    @pytest.mark.parametrize("text", ["0", "3/2", "abc", "1/0", "-1/4"])
    def test_reject(self, text, capsys):
        assert exit_code("analyze", "resnet20", "--alpha", text) == 2


class TestAnalyze:
    def test_resnet20(self, capsys):
        code, out, _ = run(capsys, "analyze", "resnet20", "--alpha", "1/2", "--groups", "2", "--format", "json")
        assert code == 0
        d = json.loads(out)
        assert d["totals"]["params"] == pytest.approx(0.10e6, rel=0.03)
        assert d["baseline"]["params"] == 269722

    def test_resnet50_flops_reduction(self, capsys):
        code, out, _ = run(capsys, "analyze", "resnet50", "--alpha", "1/8", "--format", "json")
        assert code == 0
        assert json.loads(out)["reduction_percent"]["flops"] == pytest.approx(36.72, abs=2.0)

    def test_config_printed_first(self, capsys):
        code, out, _ = run(capsys, "analyze", "resnet20", "--alpha", "1/4")
        assert code == 0
        assert out.splitlines()[0].startswith("# config ")

    def test_byte_identical(self, capsys):
        a = run(capsys, "analyze", "vgg16_cifar", "--alpha", "1/8", "--per-layer")
        b = run(capsys, "analyze", "vgg16_cifar", "--alpha", "1/8", "--per-layer")
        assert a == b

    def test_unknown_arch(self, capsys):
        code, _, err = run(capsys, "analyze", "nosuch")
        assert code == 2 and "nosuch" in err

    def test_invalid_replacement(self, capsys):
        code, _, err = run(capsys, "analyze", "resnet20", "--alpha", "1/16")
        assert code == 2 and "error" in err

    def test_unknown_flag(self):
        assert exit_code("analyze", "resnet20", "--bogus") == 2

    def test_json_file_and_out(self, capsys, tmp_path):
        path = tmp_path / "r8.json"
        save_arch(builtin_arch("resnet8"), path)
        out_dir = tmp_path / "out"
        code, _, _ = run(capsys, "analyze", str(path), "--alpha", "0.5", "--out", str(out_dir))
        assert code == 0
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["config"]["alpha"] == 0.5 and "report.json" in manifest["files"]

    def test_missing_file(self, capsys, tmp_path):
        assert run(capsys, "analyze", str(tmp_path / "none.json"))[0] == 2


class TestTrain:
    def test_epochs_zero_is_chance(self, capsys, tmp_path):
        code, out, _ = run(capsys, "train", "resnet8", "--epochs", "0", "--n-train", "8", "--n-test", "200",
                           "--out", str(tmp_path))
        assert code == 0
        acc = float(out.strip().splitlines()[-1].split()[-1])
        assert abs(acc - 0.25) <= 0.1
        assert (tmp_path / "report.csv").exists() and (tmp_path / "manifest.json").exists()

    def test_one_epoch_writes_csv(self, capsys, tmp_path):
        code, out, _ = run(capsys, "train", "resnet8", "--conv", "spconv", "--alpha", "1/2", "--epochs", "1",
                           "--n-train", "32", "--n-test", "16", "--out", str(tmp_path))
        assert code == 0 and "epoch   1" in out
        rows = (tmp_path / "report.csv").read_text().splitlines()
        assert len(rows) == 2

    def test_bad_cifar_path(self, capsys, tmp_path):
        assert run(capsys, "train", "resnet8", "--dataset", f"cifar10:{tmp_path / 'nope'}")[0] == 2
        assert run(capsys, "train", "resnet8", "--dataset", f"cifar10:{tmp_path}")[0] == 2

    def test_cifar_env_missing(self, capsys, monkeypatch):
        monkeypatch.delenv("SPLITCONV_DATA", raising=False)
        assert run(capsys, "train", "resnet8", "--dataset", "cifar10")[0] == 2

    def test_divergence_exit_3(self, capsys):
        code, _, err = run(capsys, "train", "resnet8", "--epochs", "1", "--n-train", "16", "--n-test", "8",
                           "--lr", "1e30", "--batch-size", "8")
        assert code == 3 and "epoch 1" in err


class TestGradcheck:
    def test_default_passes(self, capsys):
        code, out, _ = run(capsys, "gradcheck")
        assert code == 0 and "PASS" in out

    @pytest.mark.parametrize("variant", sorted(VARIANTS))
    def test_variants(self, capsys, variant):
        assert run(capsys, "gradcheck", "--variant", variant)[0] == 0

    def test_sabotage_fails(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--sabotage")
        assert code == 3 and "FAIL" in out


class TestBench:
    def test_single_sample(self, capsys):
        code, out, _ = run(capsys, "bench", "resnet8", "--batch", "1", "--repeat", "1", "--warmup", "1")
        assert code == 0
        lines = [l for l in out.splitlines() if l.startswith("resnet8")]
        assert len(lines) == 2 and all(l.split()[-1] == "1" for l in lines)

    def test_batch_zero(self):
        assert exit_code("bench", "resnet8", "--batch", "0") == 2


class TestAblate:
    def test_seeds_zero(self):
        assert exit_code("ablate", "--seeds", "0") == 2

    def test_tiny_run(self, capsys, tmp_path):
        code, out, _ = run(capsys, "ablate", "--epochs", "1", "--n-train", "16", "--n-test", "8",
                           "--batch-size", "8", "--out", str(tmp_path))
        assert code == 0
        for v in ("full", "gwc_then_pwc", "vanilla_rep", "no_fusion", "no_redundant"):
            assert v in out
        assert len((tmp_path / "ablation.csv").read_text().splitlines()) == 6
