#!/usr/bin/env python3
"""Score texts with a causal language model and emit per-subword surprisals
in the shared surprisal TSV format (header: article sent idx subword
surprisal_nats; natural-log values; one row per subword).

Standalone by design: the eye-tracking toolkit consumes the emitted file and
never this code. Invoked with a single JSON config:

    python extract_surprisals.py config.json

Config keys:
    model            "dummy" or a local path / hub id of a causal LM
    tokenizer        "whitespace" (default for dummy) or path / hub id
    input            text file, one sentence per line; lines starting with
                     "#article <id>" switch the article id
    output           surprisal TSV path
    dummy_p          fixed per-token probability for the dummy model (0.5)
    expected_vocab   optional path (one symbol per line); a tokenizer /
                     vocabulary mismatch aborts before any scoring
    marker_map       optional {from: to} replacements applied to emitted
                     token strings (e.g. GPT-2 space marker -> U+2581)
    document_context false (default): sentence-internal context. true keeps
                     a running context per article and warns, since the
                     toolkit's alignment assumes sentence-level scoring.

Reported to stderr: perplexity = exp(mean emitted surprisal).
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

HEADER = ("article", "sent", "idx", "subword", "surprisal_nats")
NORMALIZATION_SAMPLES = 3
NORMALIZATION_TOL = 1e-4


class AdapterError(Exception):
    pass


def read_marked_text(path, default_article="doc"):
    """(article, sent, line) triples; '#article <id>' lines switch articles."""
    out = []
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
            out.append((article, sent, line))
    if not out:
        raise AdapterError(f"{path}: no sentences to score")
    return out


def check_vocab(tokens_by_sentence, vocab_path):
    """Abort before scoring when the segmentation disagrees with the
    declared vocabulary."""
    declared = {line.rstrip("\n") for line in
                open(vocab_path, encoding="utf-8") if line.rstrip("\n")}
    seen = {tok for toks in tokens_by_sentence for tok in toks}
    extra = sorted(seen - declared)
    if extra:
        raise AdapterError(
            f"tokenizer/vocabulary mismatch: {len(extra)} token(s) missing from "
            f"{vocab_path}, e.g. {extra[:5]}")


def score_dummy(sentences, p_token):
    """Deterministic toy model: every token gets probability p_token."""
    surprisal = -math.log(p_token)
    scored = []
    for article, sent, line in sentences:
        tokens = line.split()
        scored.append((article, sent, tokens, [surprisal] * len(tokens)))
    return scored


def score_hf(sentences, cfg):
    """Per-token surprisals from a Hugging Face causal LM."""
    import torch
    from transformers import AutoModelForCausalLM, AutoTokenizer

    model_ref = cfg["model"]
    tok_ref = cfg.get("tokenizer") or model_ref
    tokenizer = AutoTokenizer.from_pretrained(tok_ref)
    model = AutoModelForCausalLM.from_pretrained(model_ref)
    model.eval()

    start_id = tokenizer.bos_token_id
    if start_id is None:
        start_id = tokenizer.eos_token_id
    if start_id is None:
        raise AdapterError("tokenizer defines neither a BOS nor an EOS token; "
                           "cannot condition the first subword")

    document_context = bool(cfg.get("document_context", False))
    if document_context:
        print("warning: document-level context enabled; the toolkit assumes "
              "sentence-internal context", file=sys.stderr)

    if cfg.get("expected_vocab"):
        toks = [tokenizer.tokenize(line) for _, _, line in sentences]
        check_vocab(toks, cfg["expected_vocab"])

    scored = []
    checked = 0
    running: dict[str, list[int]] = {}
    with torch.no_grad():
        for article, sent, line in sentences:
            tokens = tokenizer.tokenize(line)
            ids = tokenizer.convert_tokens_to_ids(tokens)
            if not ids:
                continue
            prefix = running.get(article, [start_id]) if document_context else [start_id]
            input_ids = torch.tensor([prefix + ids])
            logits = model(input_ids).logits[0]
            logprobs = torch.log_softmax(logits, dim=-1)
            if checked < NORMALIZATION_SAMPLES:
                total = float(torch.exp(logprobs[0]).sum())
                if abs(total - 1.0) > NORMALIZATION_TOL:
                    print(f"warning: model probabilities sum to {total:.6f} at a "
                          f"sampled position; expected 1", file=sys.stderr)
                checked += 1
            offset = len(prefix)
            vals = [-float(logprobs[offset - 1 + i, tid])
                    for i, tid in enumerate(ids)]
            scored.append((article, sent, tokens, vals))
            if document_context:
                running[article] = prefix + ids
    return scored


def write_table(scored, out_path, marker_map):
    rows = 0
    total = 0.0
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(HEADER) + "\n")
        for article, sent, tokens, vals in scored:
            for idx, (tok, val) in enumerate(zip(tokens, vals)):
                for src, dst in marker_map.items():
                    tok = tok.replace(src, dst)
                fh.write(f"{article}\t{sent}\t{idx}\t{tok}\t{val!r}\n")
                rows += 1
                total += val
    if rows == 0:
        raise AdapterError("no subwords scored; output would be empty")
    return rows, math.exp(total / rows)


def run(config_path) -> int:
    cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
    for key in ("model", "input", "output"):
        if key not in cfg:
            raise AdapterError(f"config is missing required key {key!r}")
    sentences = read_marked_text(cfg["input"])

    if cfg["model"] == "dummy":
        tokens = [line.split() for _, _, line in sentences]
        if cfg.get("expected_vocab"):
            check_vocab(tokens, cfg["expected_vocab"])
        scored = score_dummy(sentences, float(cfg.get("dummy_p", 0.5)))
    else:
        scored = score_hf(sentences, cfg)

    rows, ppl = write_table(scored, cfg["output"], cfg.get("marker_map", {}))
    print(f"ppl {ppl!r} over {rows} subwords", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print(__doc__, file=sys.stderr)
        return 1
    try:
        return run(argv[0])
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
