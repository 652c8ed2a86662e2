import json

import pytest

from nlpmm.cli import main
from nlpmm.markov import ContextTree

from oracles import window_counts

RECORDS = """object,location,time
a,L1,2013-01-01T08:00:00
a,L2,2013-01-01T08:05:00
a,L3,2013-01-01T08:10:00
b,L1,2013-01-01T09:00:00
b,L2,2013-01-01T09:05:00
b,L3,2013-01-01T09:10:00
c,L2,2013-01-01T10:00:00
c,L3,2013-01-01T10:05:00
a,L1,2013-01-02T08:00:00
"""


@pytest.fixture
def store(tmp_path):
    raw = tmp_path / "raw.csv"
    raw.write_text(RECORDS)
    out = tmp_path / "store.json"
    assert main(["ingest", "-i", str(raw), "-o", str(out)]) == 0
    return out


def test_ingest_prints_stats(store, capsys):
    doc = json.loads(store.read_text())
    assert doc["locations"] == ["L1", "L2", "L3"]
    assert len(doc["trajectories"]) == 4


def test_ingest_stats_line(tmp_path, capsys):
    raw = tmp_path / "r.csv"
    raw.write_text(RECORDS)
    main(["ingest", "-i", str(raw), "-o", str(tmp_path / "s.json"), "--ids", str(tmp_path / "ids")])
    assert "singletons=0.25" in capsys.readouterr().out
    assert (tmp_path / "ids.locations.csv").read_text() == "L1,0\nL2,1\nL3,2\n"


def test_ingest_missing_file_is_io_error(tmp_path):
    assert main(["ingest", "-i", str(tmp_path / "nope.csv"), "-o", str(tmp_path / "s.json")]) == 2


def test_ingest_empty_file(tmp_path):
    raw = tmp_path / "empty.csv"
    raw.write_text("")
    out = tmp_path / "s.json"
    assert main(["ingest", "-i", str(raw), "-o", str(out)]) == 0
    assert json.loads(out.read_text())["trajectories"] == []
    assert main(["train", "-i", str(out), "-o", str(tmp_path / "m.json")]) == 1


def test_ingest_parse_error_names_line(tmp_path, capsys):
    raw = tmp_path / "bad.csv"
    raw.write_text("a,L1,2013-01-01T08:00:00\na,L1,yesterday\n")
    assert main(["ingest", "-i", str(raw), "-o", str(tmp_path / "s.json")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_train_gmm_counts_match_oracle(store, tmp_path):
    model = tmp_path / "m.json"
    assert main(["train", "-i", str(store), "-o", str(model), "--variant", "gmm", "--order", "2"]) == 0
    doc = json.loads(model.read_text())
    seqs = [[loc for loc, _ in units] for _, units in json.loads(store.read_text())["trajectories"]]
    tree = ContextTree.from_triples(2, doc["base"]["gmm"])
    assert {c: tree.counts(c) for c in tree.contexts()} == {c: dict(v) for c, v in window_counts(seqs, 2).items()}


def test_train_dc_single_cluster_marked(store, tmp_path, capsys):
    assert main(["train", "-i", str(store), "-o", str(tmp_path / "m.json"), "--variant", "nlpmm-dc", "--clusters", "1"]) == 0
    assert "equivalent-to-base" in capsys.readouterr().out
    assert json.loads((tmp_path / "m.json").read_text())["time"]["equivalent_to_base"] is True


def test_train_too_many_clusters(store, tmp_path):
    args = ["train", "-i", str(store), "-o", str(tmp_path / "m.json"), "--variant", "nlpmm-dc", "--bins", "4", "--clusters", "5"]
    assert main(args) == 1


def test_predict(store, tmp_path, capsys):
    model = tmp_path / "m.json"
    main(["train", "-i", str(store), "-o", str(model)])
    capsys.readouterr()
    assert main(["predict", "-i", str(model), "--object", "a", "--context", "L1,L2", "--topk", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 and lines[0].split("\t")[:2] == ["1", "L3"]


def test_predict_unknown_object_matches_gmm(store, tmp_path, capsys):
    main(["train", "-i", str(store), "-o", str(tmp_path / "n.json")])
    main(["train", "-i", str(store), "-o", str(tmp_path / "g.json"), "--variant", "gmm"])
    capsys.readouterr()
    main(["predict", "-i", str(tmp_path / "n.json"), "--object", "zz", "--context", "L1", "--topk", "3"])
    nl = [l.split("\t")[1] for l in capsys.readouterr().out.splitlines()]
    main(["predict", "-i", str(tmp_path / "g.json"), "--object", "zz", "--context", "L1", "--topk", "3"])
    gm = [l.split("\t")[1] for l in capsys.readouterr().out.splitlines()]
    assert nl == gm == ["L2"]


def test_predict_errors(store, tmp_path):
    model = tmp_path / "m.json"
    main(["train", "-i", str(store), "-o", str(model)])
    assert main(["predict", "-i", str(model), "--context", "L1", "--topk", "0"]) == 1
    assert main(["predict", "-i", str(model), "--context", "L9"]) == 1
    assert main(["predict", "-i", str(tmp_path / "missing.json"), "--context", "L1"]) == 2


def test_time_aware_predict_needs_time(store, tmp_path, capsys):
    model = tmp_path / "m.json"
    main(["train", "-i", str(store), "-o", str(model), "--variant", "nlpmm-tb"])
    assert main(["predict", "-i", str(model), "--context", "L1"]) == 1
    capsys.readouterr()
    assert main(["predict", "-i", str(model), "--context", "L1", "--time", "2013-01-05T08:30:00"]) == 0
    assert capsys.readouterr().out.split("\t")[1] == "L2"


@pytest.fixture
def synth_store(tmp_path):
    out = tmp_path / "syn.json"
    assert main(["synth", "-o", str(out), "--seed", "3", "--objects", "20", "--locations", "8", "--out-degree", "2"]) == 0
    return out


def test_synth_requires_seed(tmp_path):
    assert main(["synth", "-o", str(tmp_path / "x.json")]) == 1


def test_evaluate_deterministic(synth_store, tmp_path):
    outs = []
    for name in ("r1.tsv", "r2.tsv"):
        path = tmp_path / name
        assert main(["evaluate", "-i", str(synth_store), "-o", str(path), "--seed", "1", "--runs", "2",
                     "--variant", "nlpmm,gmm,nlpmm-dc", "--clusters", "2"]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    assert main(["evaluate", "-i", str(synth_store), "-o", str(tmp_path / "r3.tsv"), "--runs", "1"]) == 1


def test_evaluate_default_runs(synth_store, tmp_path, capsys):
    path = tmp_path / "r.tsv"
    assert main(["evaluate", "-i", str(synth_store), "-o", str(path), "--seed", "0", "--variant", "gmm"]) == 0
    assert "# runs=50" in capsys.readouterr().err
    assert "# runs=50\n" in path.read_text()
    assert path.read_text().count("\tgmm\tcoverage\t") == 51


def test_config_file_precedence(synth_store, tmp_path, capsys):
    conf = tmp_path / "c.conf"
    conf.write_text("# settings\nruns = 3\nseed=5\nvariant=gmm\n")
    path = tmp_path / "r.tsv"
    assert main(["evaluate", "--config", str(conf), "-i", str(synth_store), "-o", str(path)]) == 0
    assert "# runs=3" in capsys.readouterr().err
    assert main(["evaluate", "--config", str(conf), "-i", str(synth_store), "-o", str(path), "--runs", "2"]) == 0
    err = capsys.readouterr().err
    assert "# runs=2" in err and "# seed=5" in err
    assert main(["evaluate", "--config", str(tmp_path / "none.conf"), "-i", str(synth_store), "-o", str(path)]) == 2
