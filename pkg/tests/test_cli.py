import csv
import json

import numpy as np
import pytest

from craft import __version__
from craft.cli import main
from craft.data import dataset_load
from craft.model import load_checkpoint

SMALL = ["--epochs", "1", "--batch-size", "32", "--d-z", "8", "--hidden", "16", "16", "--no-plots"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def data(tmp_path, capsys):
    path = tmp_path / "d.bin"
    assert run(capsys, "gen-data", "--n", 200, "--seed", 3, "--out", path)[0] == 0
    return path


@pytest.fixture
def ckpt(tmp_path, data, capsys):
    path = tmp_path / "m.ckpt"
    assert run(capsys, "train", "--dataset", data, "--out", path, *SMALL)[0] == 0
    return path


class TestGenData:
    def test_deterministic(self, tmp_path, capsys):
        for name in ("a", "b"):
            code, out, _ = run(capsys, "gen-data", "--spec", "two-cluster-2d", "--n", 5000, "--seed", 7,
                               "--out", tmp_path / name)
            assert code == 0 and "N=5000" in out and "seed=7" in out
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
        ds = dataset_load(tmp_path / "a")
        assert (len(ds), ds.d_s, ds.d_t) == (5000, 2, 2)
        assert ds.meta["generator"] == {"spec": "two-cluster-2d", "n": 5000, "seed": 7}

    def test_zero_rows(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen-data", "--n", 0, "--out", tmp_path / "x")
        assert code == 1 and err.startswith("error:")
        assert not (tmp_path / "x").exists()

    def test_bad_spec(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen-data", "--spec", "nope", "--out", tmp_path / "x")
        assert code == 1 and "nope" in err and len(err.strip().splitlines()) == 1


class TestTrain:
    def test_default_echo(self, tmp_path, data, capsys):
        code, out, _ = run(capsys, "train", "--dataset", data, "--out", tmp_path / "m", "--epochs", 0, "--no-plots")
        assert code == 0
        cfg = json.loads(out[: out.index("\n}\n") + 3])["config"]
        assert cfg["learning_rate"] == 0.0002 and cfg["leaky_alpha"] == 0.2 and cfg["d_z"] == 128

    def test_zero_epochs_is_initialization(self, tmp_path, data, capsys):
        run(capsys, "train", "--dataset", data, "--out", tmp_path / "m", "--epochs", 0, "--seed", 4, "--no-plots")
        from craft.model import CraftModel, TrainConfig

        model = load_checkpoint(tmp_path / "m")
        fresh = CraftModel(2, 2, TrainConfig(epochs=0, rng_seed=4), np.random.default_rng(4))
        for (_, a), (_, b) in zip(model.transformer.net.parameters(), fresh.transformer.net.parameters()):
            assert np.array_equal(a, b)
        lines = (tmp_path / "m.losses.csv").read_text().splitlines()
        assert lines == ["step,d_loss,t_loss"]

    def test_same_seed_bitwise(self, tmp_path, data, capsys):
        for name in ("a", "b"):
            assert run(capsys, "train", "--dataset", data, "--out", tmp_path / name, *SMALL)[0] == 0
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
        assert (tmp_path / "a.losses.csv").read_text().replace("a", "") == (tmp_path / "b.losses.csv").read_text().replace("b", "")

    def test_loss_curve_and_figure(self, tmp_path, data, capsys):
        out = tmp_path / "m"
        assert run(capsys, "train", "--dataset", data, "--out", out, *SMALL[:-1])[0] == 0
        rows = list(csv.DictReader(open(tmp_path / "m.losses.csv")))
        assert len(rows) == 200 // 32 and set(rows[0]) == {"step", "d_loss", "t_loss"}
        assert (tmp_path / "m.losses.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_missing_dataset(self, tmp_path, capsys):
        code, _, err = run(capsys, "train", "--dataset", tmp_path / "none", "--out", tmp_path / "m")
        assert code == 1 and "error" in err


class TestRecommend:
    def test_single_line(self, data, ckpt, capsys):
        code, out, _ = run(capsys, "recommend", "--checkpoint", ckpt, "--dataset", data, "--query-row", 0,
                           "--n-samples", 1, "--k", 1)
        assert code == 0 and len(out.strip().splitlines()) == 1

    def test_default_n_samples(self):
        from craft.cli import build_parser

        args = build_parser().parse_args(["recommend", "--checkpoint", "c", "--query-row", "0"])
        assert args.n_samples == 17 and args.k == 1

    def test_deterministic_and_index(self, tmp_path, data, ckpt, capsys):
        assert run(capsys, "build-index", "--dataset", data, "--out", tmp_path / "i")[0] == 0
        a = run(capsys, "recommend", "--checkpoint", ckpt, "--index", tmp_path / "i", "--dataset", data, "--query-row", 5)
        b = run(capsys, "recommend", "--checkpoint", ckpt, "--dataset", data, "--query-row", 5)
        assert a[0] == 0 and a[1] == b[1]
        assert 1 <= len(a[1].splitlines()) <= 17

    def test_query_file_and_csv(self, tmp_path, ckpt, data, capsys):
        q = tmp_path / "q.txt"
        q.write_text("0.5, -1.0\n")
        code, out, _ = run(capsys, "recommend", "--checkpoint", ckpt, "--dataset", data, "--query-file", q,
                           "--csv", tmp_path / "r.csv")
        assert code == 0
        assert (tmp_path / "r.csv").read_text().splitlines()[1:] == out.splitlines()
        cfg = json.loads((tmp_path / "r.csv.config.json").read_text())["config"]
        assert cfg["query"] == [0.5, -1.0] and cfg["n_samples"] == 17

    def test_dimension_mismatch(self, tmp_path, ckpt, capsys):
        run(capsys, "gen-data", "--spec", "five-cluster-8d", "--n", 20, "--out", tmp_path / "d8")
        code, _, err = run(capsys, "recommend", "--checkpoint", ckpt, "--dataset", tmp_path / "d8", "--query-row", 0)
        assert code == 1 and "error" in err


class TestEvaluate:
    ARGS = ["--n-queries", 12, "--n-recommend", 3, "--K", 5, "--no-plots"]

    def test_twelve_cells_and_determinism(self, tmp_path, data, ckpt, capsys):
        for name in ("a.json", "b.json"):
            code, _, _ = run(capsys, "evaluate", "--checkpoint", ckpt, "--dataset", data, "--spec", "two-cluster-2d",
                             "--out", tmp_path / name, "--seed", 2, *self.ARGS)
            assert code == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        doc = json.loads((tmp_path / "a.json").read_text())
        assert len(doc["cells"]) == 12 and doc["config"]["train"]["d_z"] == 8

    def test_default_k(self):
        from craft.cli import build_parser

        args = build_parser().parse_args(["evaluate", "--checkpoint", "c", "--dataset", "d", "--out", "o"])
        assert args.K == 25 and args.n_recommend == 17 and args.format == "json"

    def test_without_spec(self, tmp_path, data, ckpt, capsys):
        code, _, err = run(capsys, "evaluate", "--checkpoint", ckpt, "--dataset", data, "--format", "csv",
                           "--out", tmp_path / "r.csv", *self.ARGS)
        assert code == 0 and "warning" in err
        rows = list(csv.DictReader(open(tmp_path / "r.csv")))
        assert len(rows) == 12 and "oracle_error" not in rows[0]
        assert (tmp_path / "r.csv.config.json").exists()

    def test_figure(self, tmp_path, data, ckpt, capsys):
        args = [a for a in self.ARGS if a != "--no-plots"]
        run(capsys, "evaluate", "--checkpoint", ckpt, "--dataset", data, "--spec", "two-cluster-2d",
            "--out", tmp_path / "r.json", *args)
        assert (tmp_path / "r.png").stat().st_size > 1000


class TestScoreMap:
    def test_csv_contract(self, tmp_path, data, ckpt, capsys):
        code, _, _ = run(capsys, "score-map", "--checkpoint", ckpt, "--dataset", data, "--query-row", 1,
                         "--out", tmp_path / "s.csv")
        assert code == 0
        with open(tmp_path / "s.csv") as fh:
            assert fh.readline() == "id,x,y,score\n"
        rows = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert len(rows) == 200 and all(0 <= float(r["score"]) <= 1 for r in rows)
        assert json.loads((tmp_path / "s.csv.config.json").read_text())["config"]["query_row"] == 1
        assert (tmp_path / "s.png").exists()

    def test_json(self, tmp_path, data, ckpt, capsys):
        run(capsys, "score-map", "--checkpoint", ckpt, "--dataset", data, "--query-row", 1, "--format", "json",
            "--out", tmp_path / "s.json", "--no-plots")
        doc = json.loads((tmp_path / "s.json").read_text())
        assert len(doc["records"]) == 200 and set(doc["records"][0]) == {"id", "x", "y", "score"}


class TestMisc:
    def test_output_dir_env(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("CRAFT_OUTPUT_DIR", str(tmp_path / "outs"))
        assert run(capsys, "gen-data", "--n", 5, "--out", "sub/d.bin")[0] == 0
        assert (tmp_path / "outs" / "sub" / "d.bin").exists()

    def test_import_and_reduce(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        lines = ["id,s0,s1,s2,t0,t1,t2"] + [f"r{i}," + ",".join(str(float(v)) for v in rng.normal(size=6)) for i in range(30)]
        (tmp_path / "p.csv").write_text("\n".join(lines) + "\n")
        assert run(capsys, "import-csv", tmp_path / "p.csv", "--out", tmp_path / "d")[0] == 0
        code, out, _ = run(capsys, "reduce", "--dataset", tmp_path / "d", "--k-source", 2, "--k-target", 1,
                           "--out", tmp_path / "r")
        assert code == 0 and "d_s=2 d_t=1" in out
        assert dataset_load(tmp_path / "r").item_ids[0] == "r0"

    def test_version(self, capsys):
        with pytest.raises(SystemExit):
            main(["--version"])
        assert __version__ in capsys.readouterr().out
