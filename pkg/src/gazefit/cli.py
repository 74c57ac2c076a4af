"""Subcommand front end: reproducible pipelines over the library modules.

Every subcommand is pure with respect to (inputs, flags, seed); all
randomness flows from the config seed. Stage failures exit nonzero with a
stage-named diagnostic and remove partially written artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import analysis, bpe, corpus as corpus_mod, ngram, synth
from . import surprisal as surprisal_mod
from .errors import GazefitError, ParameterError


def _json_dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n",
                    encoding="utf-8")


def _read_marked_text(path: str | Path, default_article: str = "doc"):
    """Sentences from a text file; lines '#article <id>' switch articles."""
    out: list[tuple[str, int, list[str]]] = []
    article = default_article
    sent = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#article"):
                article = line.split(None, 1)[1].strip() if " " in line else default_article
                sent = 0
                continue
            sent += 1
            out.append((article, sent, line.split()))
    return out


def _filter_policy(args) -> corpus_mod.FilterPolicy:
    return corpus_mod.FilterPolicy(
        sd_cutoff=args.sd,
        exclude_zero_gd=not getattr(args, "keep_zero_gd", False),
        exclude_punct_num=not getattr(args, "keep_punct", False),
        exclude_next_punct_num=not getattr(args, "keep_next_punct", False),
        exclude_line_boundary=not getattr(args, "keep_line_boundary", False))


def cmd_filter(args) -> int:
    c = corpus_mod.load_corpus(args.infile)
    filtered = corpus_mod.apply_filters(c, _filter_policy(args))
    corpus_mod.write_corpus(filtered, args.out)
    stats = corpus_mod.corpus_stats(filtered)
    print(f"kept {stats.n_data_points} of {len(c)} data points "
          f"({stats.n_segments} segments, mean GD {stats.mean_gd:.1f})",
          file=sys.stderr)
    return 0


def cmd_bpe_train(args) -> int:
    with open(args.input, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()
                 and not ln.startswith("#article")]
    model = bpe.train_bpe(lines, vocab_size=args.vocab_size,
                          character_coverage=args.coverage)
    bpe.save_model(model, args.out)
    print(f"trained {len(model.merges)} merges, vocab {len(model.vocab)}",
          file=sys.stderr)
    return 0


def cmd_bpe_encode(args) -> int:
    model = bpe.load_model(args.model)
    with open(args.infile, encoding="utf-8") as fin, \
            open(args.out, "w", encoding="utf-8") as fout:
        for line in fin:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#article"):
                fout.write(line + "\n")
                continue
            fout.write(" ".join(bpe.encode(model, line)) + "\n")
    return 0


def cmd_ngram_train(args) -> int:
    sentences = [tokens for _, _, tokens in _read_marked_text(args.infile)]
    model = ngram.train_kn(sentences, order=args.order)
    ngram.write_arpa(model, args.out)
    print(f"trained order-{args.order} model, {len(model.table)} grams",
          file=sys.stderr)
    return 0


def cmd_score(args) -> int:
    model = ngram.read_arpa(args.arpa)
    rows = []
    for article, sent, tokens in _read_marked_text(args.infile):
        vals = ngram.sentence_surprisals(model, tokens)
        for idx, (tok, val) in enumerate(zip(tokens, vals)):
            rows.append(surprisal_mod.SurprisalRow(
                article=article, sent=sent, idx=idx, subword=tok,
                surprisal=val))
    table = surprisal_mod.SurprisalTable(lm_id=args.lm_id or Path(args.arpa).stem,
                                         rows=tuple(rows))
    surprisal_mod.write_surprisal_table(table, args.out)
    print(f"ppl {table.ppl:.4f} over {len(rows)} subwords", file=sys.stderr)
    return 0


def _policy_from_args(args) -> analysis.AnalysisPolicy:
    return analysis.AnalysisPolicy(prev_count=args.spillover,
                                   log_gd=args.log_gd, zscore=args.zscore)


def _fit_report(result: analysis.PsychometricResult) -> dict:
    return {
        "lm_id": result.lm_id,
        "ppl": result.ppl,
        "beta": result.full.beta,
        "variance_components": result.full.variance_components,
        "sigma2": result.full.sigma2,
        "loglik": result.full.loglik,
        "loglik_base": result.base.loglik,
        "n": result.n,
        "converged": result.full.converged and result.base.converged,
        "delta_loglik": result.delta_loglik,
        "lrt_stat": result.lrt_stat,
        "df": result.df,
        "p_value": result.p_value,
        "notes": list(result.notes),
    }


def cmd_fit(args) -> int:
    c = corpus_mod.load_corpus(args.corpus)
    table = surprisal_mod.read_surprisal_table(args.surprisal)
    counts = surprisal_mod.read_counts(args.counts) if args.counts else None
    fp = None if args.no_filter else _filter_policy(args)
    result = analysis.psychometric_power(c, table, _policy_from_args(args),
                                         filter_policy=fp, counts=counts)
    _json_dump(_fit_report(result), Path(args.out))
    print(f"delta_loglik {result.delta_loglik:.6f} (p={result.p_value:.3g}, "
          f"n={result.n}, ppl={result.ppl:.2f})", file=sys.stderr)
    return 0


def _load_records(suite_dir: Path) -> list[analysis.LMRecord]:
    records = []
    for path in sorted(suite_dir.glob("*.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        missing = [k for k in ("lm_id", "ppl", "delta_loglik", "p_value")
                   if k not in data]
        if missing:
            raise ParameterError(
                f"{path}: record is missing key(s) {', '.join(missing)}")
        records.append(analysis.LMRecord(
            lm_id=data["lm_id"], ppl=data["ppl"],
            delta_loglik=data["delta_loglik"], p_value=data["p_value"],
            architecture=data.get("architecture"),
            data_size=data.get("data_size"), updates=data.get("updates"),
            seed=data.get("seed")))
    if not records:
        raise ParameterError(f"no record JSON files found in {suite_dir}")
    return records


def cmd_report(args) -> int:
    from . import plots
    records = _load_records(Path(args.suite))
    report = analysis.suite_report(records, split_ppl=args.split_ppl)
    _json_dump(report, Path(args.out))
    if args.plots:
        plots.scatter_ppl_power(records, Path(args.plots) / "scatter.svg",
                                split_ppl=args.split_ppl)
        plots.factor_box_plot(records, Path(args.plots) / "factors.svg")
    rho = report["rho_all"]
    print(f"rho_all={rho if rho is None else round(rho, 4)} over "
          f"{len(records)} LMs", file=sys.stderr)
    return 0


def cmd_uid(args) -> int:
    c = corpus_mod.load_corpus(args.corpus)
    if args.filter:
        c = corpus_mod.apply_filters(c, _filter_policy(args))
    report = analysis.uid_stats(c)
    out = {"cv": report.cv,
           "position_curve": [list(p) for p in report.position_curve],
           "position_slope": report.position_slope,
           "position_slope_p": report.position_slope_p,
           "curve_method": report.curve_method}
    if args.out:
        _json_dump(out, Path(args.out))
    else:
        print(json.dumps(out, sort_keys=True, indent=1))
    if args.plots:
        from . import plots
        plots.position_curve_plot(report, Path(args.plots) / "position_curve.svg")
    return 0


def cmd_probe(args) -> int:
    c = corpus_mod.load_corpus(args.corpus)
    table = surprisal_mod.read_surprisal_table(args.surprisal)
    counts = surprisal_mod.read_counts(args.counts) if args.counts else None
    if args.dominance:
        policy = analysis.AnalysisPolicy(prev_count=0)
        frame, _, _ = analysis.build_point_features(c, table, policy, counts)
        out = {"factor_dominance": analysis.factor_dominance(frame)}
    else:
        seg = analysis.make_segment_frame(c, table, counts)
        effect = analysis.probe_effect(seg, args.factor)
        out = asdict(effect)
    _json_dump(out, Path(args.out)) if args.out else print(
        json.dumps(out, sort_keys=True, indent=1))
    return 0


def cmd_synth(args) -> int:
    cfg = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    suite_cfg = cfg.pop("suite", None)
    spec = synth.SynthSpec(**{k: (tuple(v) if k == "beta" else v)
                              for k, v in cfg.items()})
    data = synth.generate(spec)
    out = Path(args.out)
    synth.emit(data, out)
    if suite_cfg:
        configs = synth.make_suite(
            n_lms=suite_cfg.get("n_lms", 12),
            shape=suite_cfg.get("shape", "monotone"),
            seed=suite_cfg.get("seed", spec.seed),
            turning_ppl=suite_cfg.get("turning_ppl", 400.0))
        synth.emit_suite(data, configs, out / "suite")
    print(f"wrote synthetic corpus ({data.truth['n_data_points']} points) to {out}",
          file=sys.stderr)
    return 0


def _threads(requested: int | None) -> int:
    n = requested or 4
    cap = os.environ.get("GAZEFIT_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def cmd_run(args) -> int:
    cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    out_dir = Path(cfg["out_dir"])
    created: list[Path] = []
    stage = "config"

    def track(path: Path) -> Path:
        created.append(path)
        return path

    try:
        stage = "load"
        for key in ("corpus",):
            if not Path(cfg[key]).exists():
                raise GazefitError(f"corpus path does not exist: {cfg[key]}")
        full = corpus_mod.load_corpus(cfg["corpus"])
        counts = (surprisal_mod.read_counts(cfg["counts"])
                  if cfg.get("counts") else None)

        style = cfg.get("language_style", "english_like")
        if style not in ("english_like", "japanese_like"):
            raise GazefitError(f"unknown language_style {style!r}")
        prev_count = 2 if style == "english_like" else 0
        policy = analysis.AnalysisPolicy(
            prev_count=prev_count, log_gd=bool(cfg.get("log_gd", False)),
            zscore=bool(cfg.get("zscore", False)))

        stage = "filter"
        fcfg = cfg.get("filter") or {}
        fp = corpus_mod.FilterPolicy(
            sd_cutoff=fcfg.get("sd_cutoff", 3.0),
            exclude_zero_gd=fcfg.get("exclude_zero_gd", True),
            exclude_punct_num=fcfg.get("exclude_punct_num", True),
            exclude_next_punct_num=fcfg.get("exclude_next_punct_num",
                                            style == "english_like"),
            exclude_line_boundary=fcfg.get("exclude_line_boundary", True))
        filtered = corpus_mod.apply_filters(full, fp)
        out_dir.mkdir(parents=True, exist_ok=True)
        corpus_mod.write_corpus(filtered, track(out_dir / "filtered_corpus.tsv"))

        stage = "score"
        items: list[tuple[dict, surprisal_mod.SurprisalTable]] = []
        if cfg.get("arpa"):
            model = ngram.read_arpa(cfg["arpa"])
            bpe_model = bpe.load_model(cfg["bpe_model"]) if cfg.get("bpe_model") else None
            seg_rows = analysis.unique_segment_rows(full)
            rows = []
            for (article, sent), group in seg_rows.groupby(["article", "sentN"],
                                                           sort=True):
                texts = group.sort_values("tokenN")["text"].tolist()
                if bpe_model is not None:
                    stream, _ = bpe.encode_segments(bpe_model, texts)
                else:
                    stream = texts  # whole segments as LM tokens
                vals = ngram.sentence_surprisals(model, stream)
                rows.extend(surprisal_mod.SurprisalRow(
                    article=article, sent=int(sent), idx=i, subword=sw,
                    surprisal=v) for i, (sw, v) in enumerate(zip(stream, vals)))
            lm_id = Path(cfg["arpa"]).stem
            table = surprisal_mod.SurprisalTable(lm_id=lm_id, rows=tuple(rows))
            surprisal_mod.write_surprisal_table(
                table, track(out_dir / f"{lm_id}.surprisal.tsv"))
            items.append(({"lm_id": lm_id, "architecture": "ngram"}, table))

        stage = "ingest"
        if cfg.get("suite"):
            suite_dir = Path(cfg["suite"])
            tsvs = sorted(suite_dir.glob("*.tsv"))
            if not tsvs:
                raise GazefitError(f"no surprisal TSVs in suite dir {suite_dir}")
            for tsv in tsvs:
                meta_path = tsv.with_suffix(".json")
                meta = (json.loads(meta_path.read_text(encoding="utf-8"))
                        if meta_path.exists() else {"lm_id": tsv.stem})
                items.append((meta, surprisal_mod.read_surprisal_table(tsv)))
        else:
            paths = cfg.get("surprisal")
            if isinstance(paths, str):
                paths = [paths]
            for p in paths or ():
                items.append(({"lm_id": Path(p).stem},
                              surprisal_mod.read_surprisal_table(p)))
            if not items:
                raise GazefitError("config needs 'surprisal', 'suite', or 'arpa'")

        stage = "fit"
        records = analysis.evaluate_suite(
            full, items, policy, filter_policy=fp, counts=counts,
            threads=_threads(cfg.get("threads")))
        for record in records:
            _json_dump(asdict(record),
                       track(out_dir / "records" / f"{record.lm_id}.json"))

        stage = "report"
        split_ppl = float(cfg.get("split_ppl", 400.0))
        report = (analysis.suite_report(records, split_ppl=split_ppl)
                  if len(records) >= 3 else
                  {"records": [asdict(r) for r in records],
                   "n_records": len(records), "split_ppl": split_ppl})
        uid = analysis.uid_stats(filtered)
        report["uid"] = {
            "cv": uid.cv, "position_slope": uid.position_slope,
            "position_slope_p": uid.position_slope_p,
            "curve_method": uid.curve_method,
            "position_curve": [list(p) for p in uid.position_curve]}
        try:
            frame, _, _ = analysis.build_point_features(
                full, items[0][1], policy, counts)
            mask = analysis.filtered_point_mask(full, fp)
            report["factor_dominance"] = analysis.factor_dominance(
                frame.loc[mask].reset_index(drop=True))
        except GazefitError:
            report["factor_dominance"] = None
        _json_dump(report, track(out_dir / "report.json"))

        from . import plots
        plot_dir = out_dir / "plots"
        track(plots.position_curve_plot(uid, plot_dir / "position_curve.svg"))
        if len(records) >= 3:
            track(plots.scatter_ppl_power(records, plot_dir / "scatter.svg",
                                          split_ppl=split_ppl))
            track(plots.factor_box_plot(records, plot_dir / "factors.svg"))
        print(f"pipeline complete: {len(records)} LM(s), artifacts in {out_dir}",
              file=sys.stderr)
        return 0
    except GazefitError as exc:
        for path in created:
            try:
                path.unlink(missing_ok=True)
            except OSError:
                pass
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return 2


def _add_filter_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sd", type=float, default=3.0,
                   help="SD cutoff for gaze durations (default 3.0)")
    p.add_argument("--keep-next-punct", action="store_true",
                   help="keep segments whose successor has punctuation/digits")
    p.add_argument("--keep-line-boundary", action="store_true")
    p.add_argument("--keep-punct", action="store_true")
    p.add_argument("--keep-zero-gd", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazefit",
        description="Surprisal vs. reading time: LMs, mixed models, and "
                    "information-density analyses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="apply exclusion criteria to a corpus TSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    _add_filter_flags(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("bpe-train", help="train a BPE subword model")
    p.add_argument("--input", required=True)
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--coverage", type=float, default=0.9995)
    p.add_argument("--out", required=True, help="model file prefix")
    p.set_defaults(func=cmd_bpe_train)

    p = sub.add_parser("bpe-encode", help="encode text with a trained BPE model")
    p.add_argument("--model", required=True, help="model file prefix")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bpe_encode)

    p = sub.add_parser("ngram-train", help="train a Kneser-Ney n-gram model")
    p.add_argument("--order", type=int, default=5)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True, help="ARPA output path")
    p.set_defaults(func=cmd_ngram_train)

    p = sub.add_parser("score", help="per-subword surprisals from an ARPA model")
    p.add_argument("--arpa", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lm-id", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fit", help="psychometric power of one surprisal table")
    p.add_argument("--corpus", required=True, help="full (unfiltered) corpus TSV")
    p.add_argument("--surprisal", required=True)
    p.add_argument("--counts", default=None)
    p.add_argument("--spillover", type=int, choices=(0, 2), default=2)
    p.add_argument("--log-gd", action="store_true")
    p.add_argument("--zscore", action="store_true")
    p.add_argument("--no-filter", action="store_true",
                   help="fit on all data points without exclusion filters")
    p.add_argument("--out", required=True)
    _add_filter_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", help="suite report from per-LM record JSONs")
    p.add_argument("--suite", required=True)
    p.add_argument("--split-ppl", type=float, default=400.0)
    p.add_argument("--out", required=True)
    p.add_argument("--plots", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("uid", help="information-uniformity statistics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--plots", default=None)
    p.add_argument("--filter", action="store_true",
                   help="apply exclusion filters before computing statistics")
    _add_filter_flags(p)
    p.set_defaults(func=cmd_uid)

    p = sub.add_parser("probe", help="probe simulated gaze durations, or rank "
                                     "annotation factors on real ones")
    p.add_argument("--corpus", required=True)
    p.add_argument("--surprisal", required=True)
    p.add_argument("--counts", default=None)
    p.add_argument("--factor", default="syn_category",
                   choices=("syn_category", "sem_category", "n_dependents"))
    p.add_argument("--dominance", action="store_true",
                   help="rank all annotation factors against real gaze durations")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("synth", help="generate a synthetic corpus (and suite)")
    p.add_argument("--spec", required=True, help="SynthSpec JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GazefitError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
