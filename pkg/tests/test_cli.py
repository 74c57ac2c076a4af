from __future__ import annotations

import json


import pytest

from gazefit.cli import main
from gazefit.corpus import load_corpus
from gazefit.ngram import perplexity
from gazefit.surprisal import read_surprisal_table


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthdata")
    spec = {"n_articles": 3, "n_subjects": 4, "n_sentences": 4,
            "segments_per_sentence": 6, "beta": [300.0, 8.0],
            "sd_article": 10.0, "sd_subject": 8.0, "sd_resid": 25.0,
            "seed": 21, "suite": {"n_lms": 4, "shape": "monotone", "seed": 2}}
    spec_path = out / "spec.json"
    spec_path.write_text(json.dumps(spec), encoding="utf-8")
    assert main(["synth", "--spec", str(spec_path), "--out", str(out / "data")]) == 0
    return out / "data"


def test_synth_writes_expected_files(synth_dir):
    for name in ("corpus.tsv", "surprisal_truth.tsv", "counts.tsv", "truth.json"):
        assert (synth_dir / name).exists()
    assert len(list((synth_dir / "suite").glob("*.tsv"))) == 4


def test_filter_subcommand(synth_dir, tmp_path):
    out = tmp_path / "filtered.tsv"
    rc = main(["filter", "--in", str(synth_dir / "corpus.tsv"),
               "--out", str(out), "--sd", "3.0"])
    assert rc == 0
    filtered = load_corpus(out)
    full = load_corpus(synth_dir / "corpus.tsv")
    assert 0 < len(filtered) < len(full)
    # no survivor was line-first/line-last in the original display
    boundary_keys = {(s.article_id, s.subject_id, s.screen_n, s.segment_n)
                     for s in full if s.is_line_first or s.is_line_last}
    survivor_keys = {(s.article_id, s.subject_id, s.screen_n, s.segment_n)
                     for s in filtered}
    assert not (survivor_keys & boundary_keys)


def test_bpe_and_ngram_pipeline(tmp_path):
    text = tmp_path / "train.txt"
    text.write_text("#article a01\n"
                    "the cat sat on the mat\n"
                    "the dog sat on the log\n"
                    "a cat and a dog\n", encoding="utf-8")
    assert main(["bpe-train", "--input", str(text), "--vocab-size", "40",
                 "--coverage", "1.0", "--out", str(tmp_path / "bpe")]) == 0
    assert (tmp_path / "bpe.merges.txt").exists()
    assert (tmp_path / "bpe.vocab.txt").exists()

    assert main(["bpe-encode", "--model", str(tmp_path / "bpe"),
                 "--in", str(text), "--out", str(tmp_path / "enc.txt")]) == 0
    enc = (tmp_path / "enc.txt").read_text(encoding="utf-8").splitlines()
    assert enc[0] == "#article a01"
    assert all(line for line in enc)

    assert main(["ngram-train", "--order", "3", "--in", str(tmp_path / "enc.txt"),
                 "--out", str(tmp_path / "lm.arpa")]) == 0
    assert main(["score", "--arpa", str(tmp_path / "lm.arpa"),
                 "--in", str(tmp_path / "enc.txt"),
                 "--out", str(tmp_path / "scored.tsv")]) == 0
    table = read_surprisal_table(tmp_path / "scored.tsv")
    n_tokens = sum(len(l.split()) for l in enc if not l.startswith("#article"))
    assert len(table.rows) == n_tokens
    assert table.ppl == pytest.approx(
        perplexity([r.surprisal for r in table.rows]), abs=1e-12)


def test_fit_subcommand(synth_dir, tmp_path):
    out = tmp_path / "fit.json"
    rc = main(["fit", "--corpus", str(synth_dir / "corpus.tsv"),
               "--surprisal", str(synth_dir / "surprisal_truth.tsv"),
               "--counts", str(synth_dir / "counts.tsv"),
               "--spillover", "0", "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    for key in ("beta", "variance_components", "sigma2", "loglik", "n",
                "converged", "delta_loglik", "lrt_stat", "df", "p_value"):
        assert key in report
    assert report["converged"] is True
    assert report["delta_loglik"] > 0

    # spillover 2 adds the lagged terms (3 surprisal columns, df 3)
    out2 = tmp_path / "fit2.json"
    rc = main(["fit", "--corpus", str(synth_dir / "corpus.tsv"),
               "--surprisal", str(synth_dir / "surprisal_truth.tsv"),
               "--spillover", "2", "--out", str(out2)])
    assert rc == 0
    report2 = json.loads(out2.read_text(encoding="utf-8"))
    assert report2["df"] == 3
    assert "surprisal_prev_2" in report2["beta"]
    assert report2["n"] < report["n"]  # lag NaNs drop the run-initial points


def test_uid_and_probe_subcommands(synth_dir, tmp_path):
    uid_out = tmp_path / "uid.json"
    assert main(["uid", "--corpus", str(synth_dir / "corpus.tsv"),
                 "--out", str(uid_out), "--plots", str(tmp_path / "p")]) == 0
    uid = json.loads(uid_out.read_text(encoding="utf-8"))
    assert uid["cv"] > 0
    assert (tmp_path / "p" / "position_curve.svg").exists()

    probe_out = tmp_path / "probe.json"
    assert main(["probe", "--corpus", str(synth_dir / "corpus.tsv"),
                 "--surprisal", str(synth_dir / "surprisal_truth.tsv"),
                 "--factor", "syn_category", "--out", str(probe_out)]) == 0
    probe = json.loads(probe_out.read_text(encoding="utf-8"))
    assert {"factor", "value", "total", "df", "n"} <= set(probe)

    dom_out = tmp_path / "dom.json"
    assert main(["probe", "--corpus", str(synth_dir / "corpus.tsv"),
                 "--surprisal", str(synth_dir / "surprisal_truth.tsv"),
                 "--dominance", "--out", str(dom_out)]) == 0
    dom = json.loads(dom_out.read_text(encoding="utf-8"))
    assert len(dom["factor_dominance"]) == 3


def test_run_pipeline_and_report(synth_dir, tmp_path):
    cfg = {"language_style": "japanese_like",
           "corpus": str(synth_dir / "corpus.tsv"),
           "suite": str(synth_dir / "suite"),
           "counts": str(synth_dir / "counts.tsv"),
           "split_ppl": 400.0, "out_dir": str(tmp_path / "out"), "seed": 0}
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
    assert main(["run", "--config", str(cfg_path)]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["n_records"] == 4
    assert "uid" in report
    assert (tmp_path / "out" / "plots" / "scatter.svg").exists()
    assert len(list((tmp_path / "out" / "records").glob("*.json"))) == 4

    # standalone report over the emitted records reproduces the same rhos
    rep2 = tmp_path / "rep2.json"
    assert main(["report", "--suite", str(tmp_path / "out" / "records"),
                 "--split-ppl", "400", "--out", str(rep2),
                 "--plots", str(tmp_path / "plots2")]) == 0
    again = json.loads(rep2.read_text(encoding="utf-8"))
    assert again["rho_all"] == report["rho_all"]
    assert (tmp_path / "plots2" / "factors.svg").exists()


def test_run_missing_corpus_names_path(tmp_path, capsys):
    cfg = {"corpus": str(tmp_path / "nope.tsv"), "surprisal": ["x.tsv"],
           "out_dir": str(tmp_path / "out")}
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
    rc = main(["run", "--config", str(cfg_path)])
    assert rc != 0
    err = capsys.readouterr().err
    assert "nope.tsv" in err and "load" in err
    assert not (tmp_path / "out" / "report.json").exists()


def test_failed_stage_cleans_artifacts(synth_dir, tmp_path, capsys):
    # corpus loads, but the suite dir is empty: the filter artifact written
    # before the failure must be removed again
    empty = tmp_path / "empty"
    empty.mkdir()
    cfg = {"corpus": str(synth_dir / "corpus.tsv"), "suite": str(empty),
           "out_dir": str(tmp_path / "out2")}
    cfg_path = tmp_path / "bad2.json"
    cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
    rc = main(["run", "--config", str(cfg_path)])
    assert rc != 0
    assert "ingest" in capsys.readouterr().err
    assert not (tmp_path / "out2" / "filtered_corpus.tsv").exists()


def test_determinism_byte_identical_reports(synth_dir, tmp_path):
    outs = []
    for name in ("r1", "r2"):
        cfg = {"language_style": "japanese_like",
               "corpus": str(synth_dir / "corpus.tsv"),
               "suite": str(synth_dir / "suite"),
               "out_dir": str(tmp_path / name), "seed": 7}
        cfg_path = tmp_path / f"{name}.json"
        cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
        assert main(["run", "--config", str(cfg_path)]) == 0
        outs.append((tmp_path / name / "report.json").read_bytes())
    assert outs[0] == outs[1]


def test_threads_env_caps_parallelism(monkeypatch):
    from gazefit.cli import _threads
    monkeypatch.delenv("GAZEFIT_THREADS", raising=False)
    assert _threads(None) == 4
    assert _threads(8) == 8
    monkeypatch.setenv("GAZEFIT_THREADS", "2")
    assert _threads(None) == 2
    assert _threads(8) == 2
    assert _threads(1) == 1


def test_uid_filter_flag(synth_dir, tmp_path):
    out = tmp_path / "uid_f.json"
    assert main(["uid", "--corpus", str(synth_dir / "corpus.tsv"),
                 "--filter", "--sd", "3.0", "--out", str(out)]) == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    # line-boundary exclusion removes the first and last sentence positions
    positions = [p for p, _, _ in report["position_curve"]]
    assert min(positions) == 2.0 and max(positions) == 5.0


def test_run_scores_with_arpa_model(synth_dir, tmp_path):
    # Full n-gram arm: BPE on the corpus text, n-gram model on the encoded
    # text, then the pipeline scores the corpus itself and fits.
    full = load_corpus(synth_dir / "corpus.tsv")
    sentences: dict[tuple, dict[int, str]] = {}
    for s in full:
        sentences.setdefault((s.article_id, s.sent_n), {})[s.token_n] = s.text
    text_path = tmp_path / "sents.txt"
    with open(text_path, "w", encoding="utf-8") as fh:
        for key in sorted(sentences):
            toks = [sentences[key][t] for t in sorted(sentences[key])]
            fh.write(" ".join(toks) + "\n")
    assert main(["bpe-train", "--input", str(text_path), "--vocab-size", "80",
                 "--coverage", "1.0", "--out", str(tmp_path / "bpe")]) == 0
    assert main(["bpe-encode", "--model", str(tmp_path / "bpe"),
                 "--in", str(text_path), "--out", str(tmp_path / "enc.txt")]) == 0
    arpa = tmp_path / "lm.arpa"
    assert main(["ngram-train", "--order", "3", "--in", str(tmp_path / "enc.txt"),
                 "--out", str(arpa)]) == 0

    cfg = {"language_style": "japanese_like",
           "corpus": str(synth_dir / "corpus.tsv"),
           "arpa": str(arpa), "bpe_model": str(tmp_path / "bpe"),
           "out_dir": str(tmp_path / "out"), "seed": 0}
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
    assert main(["run", "--config", str(cfg_path)]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["n_records"] == 1
    assert (tmp_path / "out" / "lm.surprisal.tsv").exists()
    rec = json.loads(next((tmp_path / "out" / "records").glob("*.json"))
                     .read_text())
    assert rec["architecture"] == "ngram"
    assert rec["ppl"] > 1.0


def test_thread_count_does_not_change_artifacts(synth_dir, tmp_path, monkeypatch):
    digests = []
    for name, threads in (("t1", "1"), ("t4", "4")):
        monkeypatch.setenv("GAZEFIT_THREADS", threads)
        cfg = {"language_style": "japanese_like",
               "corpus": str(synth_dir / "corpus.tsv"),
               "suite": str(synth_dir / "suite"),
               "out_dir": str(tmp_path / name), "seed": 7}
        cfg_path = tmp_path / f"{name}.json"
        cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
        assert main(["run", "--config", str(cfg_path)]) == 0
        digests.append((tmp_path / name / "report.json").read_bytes())
    assert digests[0] == digests[1]
