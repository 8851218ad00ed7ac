import json

import pytest

from problemchild.cli import HuntReport, main

SPEC = {
    "n_benign_events": 300,
    "hosts": 2,
    "days": 1,
    "seed": 41,
    "injected_chains": [{"template": "discovery", "host": 0}],
}

FAST_TRAIN = ["--rounds", "40", "--k-tfidf", "60", "--seed", "0"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """synth -> train once for the whole module."""
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(SPEC))
    assert main(["synth", str(spec_path), "-o", str(root / "corpus")]) == 0
    events = root / "corpus" / "events.jsonl"
    model = root / "model.pcmodel.json"
    assert main(["train", str(events), "-o", str(model)] + FAST_TRAIN) == 0
    return root


def hunt(workdir, out_name, *extra):
    events = workdir / "corpus" / "events.jsonl"
    model = workdir / "model.pcmodel.json"
    out = workdir / out_name
    code = main(["hunt", str(events), "-m", str(model), "-o", str(out),
                 "--seed", "0", *extra])
    return code, out


class TestSynth:
    def test_outputs_exist(self, workdir):
        assert (workdir / "corpus" / "events.jsonl").exists()
        manifest = json.loads((workdir / "corpus" / "manifest.json").read_text())
        assert len(manifest["chains"]) == 1

    def test_bad_spec_is_an_error(self, tmp_path, capsys):
        bad = tmp_path / "spec.json"
        bad.write_text(json.dumps({"n_benign_events": 10,
                                   "injected_chains": [{"template": "nope"}]}))
        assert main(["synth", str(bad), "-o", str(tmp_path / "x")]) == 1
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_model_schema(self, workdir):
        doc = json.loads((workdir / "model.pcmodel.json").read_text())
        assert doc["format"] == "pcmodel"
        assert len(doc["vocab"]["process_onehot_names"]) == 101
        assert doc["meta"]["params"]["n_rounds"] == 40

    def test_deterministic_model_bytes(self, workdir, tmp_path):
        events = workdir / "corpus" / "events.jsonl"
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["train", str(events), "-o", str(a)] + FAST_TRAIN) == 0
        assert main(["train", str(events), "-o", str(b)] + FAST_TRAIN) == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() == (workdir / "model.pcmodel.json").read_bytes()

    def test_unlabeled_corpus_names_offending_line(self, tmp_path, capsys):
        events = tmp_path / "events.jsonl"
        lines = []
        record = {"event_id": "e1", "host_id": "h", "event_type": "CREATE",
                  "timestamp": "2024-03-11T09:00:00Z", "process_guid": "g1",
                  "process_name": "a.exe", "label": "BENIGN"}
        lines.append(json.dumps(record))
        record2 = dict(record, event_id="e2", process_guid="g2")
        del record2["label"]
        lines.append(json.dumps(record2))
        events.write_text("\n".join(lines) + "\n")
        code = main(["train", str(events), "-o", str(tmp_path / "m.json")])
        assert code == 1
        err = capsys.readouterr().err
        assert "line 2" in err


class TestHunt:
    def test_findings_exit_code_and_report(self, workdir):
        code, out = hunt(workdir, "report.json")
        assert code == 2
        report = json.loads(out.read_text())
        assert report["totals"]["communities_flagged"] == \
            len(report["communities"]) > 0
        assert report["totals"]["events_in"] > 300
        assert report["run"]["threshold"] == 0.38
        assert len(report["run"]["corpus_digest"]) == 64

    def test_flagged_community_contains_chain(self, workdir):
        _, out = hunt(workdir, "report2.json")
        report = json.loads(out.read_text())
        manifest = json.loads((workdir / "corpus" / "manifest.json").read_text())
        (entry,) = manifest["chains"].values()
        events = (workdir / "corpus" / "events.jsonl").read_text().splitlines()
        guid_of = {json.loads(l)["event_id"]: json.loads(l)["process_guid"]
                   for l in events}
        chain_guids = {guid_of[i] for i in entry["event_ids"]}
        hits = [c for c in report["communities"]
                if chain_guids <= {m["guid"] for m in c["members"]}]
        assert len(hits) == 1

    def test_threshold_one_clean_exit(self, workdir):
        code, out = hunt(workdir, "report3.json", "--threshold", "1.0")
        assert code == 0
        assert json.loads(out.read_text())["communities"] == []

    def test_byte_identical_modulo_timestamp(self, workdir):
        _, out_a = hunt(workdir, "det_a.json")
        _, out_b = hunt(workdir, "det_b.json")
        doc_a = json.loads(out_a.read_text())
        doc_b = json.loads(out_b.read_text())
        doc_a.pop("generated_at")
        doc_b.pop("generated_at")
        assert json.dumps(doc_a, sort_keys=True) == \
            json.dumps(doc_b, sort_keys=True)

    def test_report_round_trip(self, workdir):
        _, out = hunt(workdir, "report4.json")
        doc = json.loads(out.read_text())
        report = HuntReport.from_json_dict(doc)
        assert report.to_json_dict() == doc

    def test_text_format_mirrors_chain_listing(self, workdir, capsys):
        events = workdir / "corpus" / "events.jsonl"
        model = workdir / "model.pcmodel.json"
        code = main(["hunt", str(events), "-m", str(model), "--seed", "0",
                     "--format", "text"])
        assert code == 2
        text = capsys.readouterr().out
        assert "chain:" in text
        assert "'ipconfig.exe'" in text and "score" in text

    def test_prevalence_baseline_file(self, workdir, tmp_path):
        events = workdir / "corpus" / "events.jsonl"
        table_path = tmp_path / "base.prev.json"
        assert main(["prevalence", "build", "--events", str(events),
                     "--save-table", str(table_path)]) == 0
        code, out = hunt(workdir, "report5.json",
                         "--prevalence", str(table_path))
        assert code in (0, 2)
        report = json.loads(out.read_text())
        assert report["run"]["prevalence_source"] == str(table_path)

    def test_graph_dump(self, workdir, tmp_path):
        graph_path = tmp_path / "graph.json"
        code, _ = hunt(workdir, "report6.json", "--dump-graph",
                       str(graph_path))
        doc = json.loads(graph_path.read_text())
        assert doc["nodes"] and doc["edges"]


@pytest.fixture(scope="module")
def fixture_corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("prev") / "events.jsonl"
    lines = []
    n = 0

    def add(name, parent=None):
        nonlocal n
        n += 1
        record = {"event_id": f"e{n}", "host_id": "h",
                  "event_type": "CREATE",
                  "timestamp": "2024-03-11T09:00:00Z",
                  "process_guid": f"g{n}", "process_name": name}
        if parent:
            record["parent_guid"] = f"pg{n}"
            record["parent_name"] = parent
        lines.append(json.dumps(record))

    # process counts {a:1, b:5, c:10}; the c's are cmd.exe's sole child
    add("a")
    for _ in range(5):
        add("b")
    for _ in range(10):
        add("c", parent="cmd.exe")
    path.write_text("\n".join(lines) + "\n")
    return path


class TestPrevalenceCommand:

    def test_known_corpus_percentiles(self, fixture_corpus, capsys):
        assert main(["prevalence", "process", "b", "--events",
                     str(fixture_corpus)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["percentile"] == 33 and out["count"] == 5

    def test_unseen_process_scores_zero(self, fixture_corpus, capsys):
        assert main(["prevalence", "process", "evil.exe", "--events",
                     str(fixture_corpus)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out == {"process": "evil.exe", "count": 0, "percentile": 0,
                       "fraction": 0.0}

    def test_sole_child_pair(self, fixture_corpus, capsys):
        assert main(["prevalence", "pair", "cmd.exe", "c",
                     "--events", str(fixture_corpus)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["cond_prob"] == 1.0 and out["percentile"] == 0

    def test_saved_table_queryable(self, fixture_corpus, tmp_path, capsys):
        table = tmp_path / "t.prev.json"
        assert main(["prevalence", "build", "--events", str(fixture_corpus),
                     "--save-table", str(table)]) == 0
        capsys.readouterr()
        assert main(["prevalence", "process", "c", "--table",
                     str(table)]) == 0
        assert json.loads(capsys.readouterr().out)["percentile"] == 66


class TestCalibrateCommand:
    def test_single_group_is_an_error(self, tmp_path, capsys):
        spec = dict(SPEC, hosts=1, days=1, n_benign_events=100)
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        assert main(["synth", str(spec_path), "-o", str(tmp_path)]) == 0
        code = main(["calibrate", str(tmp_path / "events.jsonl")])
        assert code == 1
        assert "2 groups" in capsys.readouterr().err

    def test_calibrate_prints_csv_and_threshold(self, capsys, tmp_path):
        # Every training complement needs both labels: chains on both hosts.
        spec = dict(SPEC, injected_chains=[
            {"template": "discovery", "host": 0},
            {"template": "encoded_download", "host": 1}])
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        assert main(["synth", str(spec_path), "-o", str(tmp_path)]) == 0
        capsys.readouterr()
        roc = tmp_path / "roc.csv"
        code = main(["calibrate", str(tmp_path / "events.jsonl"),
                     "--roc-out", str(roc),
                     "--rounds", "20", "--k-tfidf", "60", "--seed", "0"])
        assert code == 0
        out = capsys.readouterr().out
        assert out.startswith("threshold,fpr,fnr")
        assert "chosen_threshold=" in out
        assert roc.read_text().startswith("threshold,fpr,fnr")


class TestConfigAndErrors:
    def test_env_config_sets_threshold_and_flag_overrides(self, workdir,
                                                          tmp_path,
                                                          monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"threshold": 1.0}))
        monkeypatch.setenv("PROBLEMCHILD_CONFIG", str(cfg))
        code, _ = hunt(workdir, "cfg_a.json")
        assert code == 0  # config raised the threshold above every score
        code, _ = hunt(workdir, "cfg_b.json", "--threshold", "0.38")
        assert code == 2  # explicit flag wins

    def test_unknown_config_key_rejected(self, workdir, tmp_path,
                                         monkeypatch, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"treshold": 0.5}))
        monkeypatch.setenv("PROBLEMCHILD_CONFIG", str(cfg))
        code, _ = hunt(workdir, "cfg_c.json")
        assert code == 1
        assert "unknown config key" in capsys.readouterr().err

    def test_usage_error_exits_one(self, capsys):
        assert main(["definitely-not-a-command"]) == 1
        assert main(["hunt"]) == 1  # missing required arguments

    def test_missing_file_exits_one(self, capsys):
        assert main(["train", "/nonexistent.jsonl", "-o", "/tmp/x.json"]) == 1

    def test_bad_threshold_range_exits_one(self, workdir, capsys):
        code, _ = hunt(workdir, "bad.json", "--threshold", "2.0")
        assert code == 1
