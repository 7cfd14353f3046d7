"""File-level stage runners shared by the command line and the tests.

Every runner is a pure function of (config, input files, seed): it writes its
outputs under ``out_dir`` together with the resolved config and returns a
small summary dict.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, header_config, load_checkpoint, read_checkpoint, restore, save_checkpoint
from .config import Config
from .data import caption_targets, gen_synthetic_dataset, load_corpus_csv, load_planted
from .inference import beam_search, greedy_decode
from .keywords import KeywordTable, build_keyword_table, encode_multihot, load_stoplist
from .metrics import EvalPair, evaluate
from .model import Captioner, Vocab
from .numerics import no_grad
from .training import (
    greedy_cider,
    prepare_caption_data,
    scst_finetune,
    teacher_forced_accuracy,
    train_captioner_ce,
    train_encoder,
)

ENCODER_CKPT = "encoder.ckpt"
CE_CKPT = "captioner_ce.ckpt"
RL_CKPT = "captioner_rl.ckpt"


def _out(out_dir, cfg: Config, stage: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / f"{stage}.config.txt")
    return out


def _labels_for(corpus, table: KeywordTable) -> np.ndarray:
    return np.stack([encode_multihot(c.captions, table).bits for c in corpus.clips]).astype(np.float64)


# -- data stages -----------------------------------------------------------------
def run_gen_synth(cfg: Config, out_dir, n_clips: int = 50, frames: int = 64, write_audio: bool = False) -> dict:
    out = _out(out_dir, cfg, "gen-synth")
    planted = gen_synthetic_dataset(out, cfg.seed, n_clips, cfg.feature_params(), frames, write_audio=write_audio)
    return {"clips": len(planted), "captions": str(out / "captions.csv"), "features": str(out / "features")}


def run_build_keywords(cfg: Config, captions_csv, data_dir, out_dir, n: int | None = None,
                       stoplist_path=None) -> dict:
    out = _out(out_dir, cfg, "build-keywords")
    corpus = load_corpus_csv(captions_csv, data_dir)
    table = build_keyword_table(corpus.captions(), n or cfg.n_keywords, load_stoplist(stoplist_path))
    table.to_tsv(out / "keywords.tsv")
    return {"keywords": table.entries, "path": str(out / "keywords.tsv")}


def run_build_labels(cfg: Config, captions_csv, data_dir, keywords_tsv, out_dir) -> dict:
    out = _out(out_dir, cfg, "build-labels")
    corpus = load_corpus_csv(captions_csv, data_dir)
    table = KeywordTable.from_tsv(keywords_tsv)
    labels = _labels_for(corpus, table)
    payload = {"keywords": table.entries,
               "labels": {c.clip_id: [int(b) for b in row] for c, row in zip(corpus.clips, labels)}}
    (out / "labels.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return {"clips": len(corpus), "path": str(out / "labels.json")}


# -- training stages -------------------------------------------------------------
def run_pretrain_encoder(cfg: Config, captions_csv, data_dir, keywords_tsv, out_dir, planted_json=None) -> dict:
    out = _out(out_dir, cfg, "pretrain-encoder")
    corpus = load_corpus_csv(captions_csv, data_dir)
    table = KeywordTable.from_tsv(keywords_tsv)
    if len(table) != cfg.n_keywords:
        raise CheckpointError(f"keyword table has {len(table)} entries, config n_keywords={cfg.n_keywords}")
    labels = _labels_for(corpus, table)
    planted = None
    if planted_json is not None:
        pl = load_planted(planted_json)
        planted = np.zeros_like(labels)
        for i, clip in enumerate(corpus.clips):
            for w in pl[clip.clip_id]["keywords"]:
                if w in table.index:
                    planted[i, table.index[w]] = 1
    X = corpus.feature_matrix(cfg.feature_params())
    encoder, log = train_encoder(X, labels, cfg, planted=planted)
    save_checkpoint(encoder, out / ENCODER_CKPT, cfg, "encoder", len(log.records), keywords=table.entries)
    log.write(out / "encoder.log.jsonl")
    return {"checkpoint": str(out / ENCODER_CKPT), **log.records[-1]["metrics"]}


def load_captioner(path, cfg: Config) -> tuple:
    """Rebuild a captioner from a checkpoint; the config's architecture must match."""
    header, arrays = read_checkpoint(path)
    if header["config_hash"] != cfg.model_hash():
        raise CheckpointError(
            f"{path}: checkpoint config hash {header['config_hash']} != current {cfg.model_hash()} "
            "(architecture keys differ, e.g. a different preset)"
        )
    if header.get("vocab") is None:
        raise CheckpointError(f"{path}: not a captioner checkpoint (no vocabulary)")
    captioner = Captioner(cfg, Vocab(header["vocab"]), header["keywords"], cfg.seed)
    restore(captioner, arrays)
    captioner.eval()
    return captioner, header


def _ce_data(captioner: Captioner, corpus, cfg: Config):
    X = corpus.feature_matrix(cfg.feature_params())
    targets = [caption_targets(c.captions[:cfg.captions_per_clip], captioner.vocab, cfg.max_len)
               for c in corpus.clips]
    return X, prepare_caption_data(captioner, X, targets)


def run_train_ce(cfg: Config, captions_csv, data_dir, encoder_ckpt, out_dir) -> dict:
    out = _out(out_dir, cfg, "train-ce")
    header, _ = load_checkpoint(encoder_ckpt, expect=cfg)
    keywords = header.get("keywords")
    if not keywords or len(keywords) != cfg.n_keywords:
        raise CheckpointError(f"{encoder_ckpt}: keyword table missing or of the wrong size")
    corpus = load_corpus_csv(captions_csv, data_dir, extra_words=keywords)
    captioner = Captioner(cfg, corpus.vocab, keywords, cfg.seed)
    load_checkpoint(encoder_ckpt, captioner, prefix="encoder.")
    X, data = _ce_data(captioner, corpus, cfg)
    log = train_captioner_ce(captioner, data, cfg, eval_every=max(1, cfg.epochs_ce // 4), feats=X)
    acc = teacher_forced_accuracy(captioner, data)
    save_checkpoint(captioner, out / CE_CKPT, cfg, "ce", len(log.records), vocab=captioner.vocab, keywords=keywords)
    log.write(out / "ce.log.jsonl")
    return {"checkpoint": str(out / CE_CKPT), "tf_accuracy": acc, "final_loss": log.records[-1]["loss"]}


def _check_vocab(captioner: Captioner, corpus) -> None:
    rebuilt = Vocab.build((c.tokens for c in corpus.captions()), captioner.keywords)
    if rebuilt.tokens != captioner.vocab.tokens:
        raise CheckpointError("checkpoint vocabulary does not match the training corpus")


def run_finetune_rl(cfg: Config, captions_csv, data_dir, ce_ckpt, out_dir) -> dict:
    out = _out(out_dir, cfg, "finetune-rl")
    captioner, _ = load_captioner(ce_ckpt, cfg)
    corpus = load_corpus_csv(captions_csv, data_dir, vocab=captioner.vocab)
    _check_vocab(captioner, corpus)
    X = corpus.feature_matrix(cfg.feature_params())
    seq, y_hat = captioner.encoder_features(X)
    kw = captioner.keyword_ids(y_hat)
    refs = corpus.references()
    before = greedy_cider(captioner, seq, kw, refs, cfg.max_len)
    log = scst_finetune(captioner, seq, kw, refs, cfg, feats=X)
    after = greedy_cider(captioner, seq, kw, refs, cfg.max_len)
    save_checkpoint(captioner, out / RL_CKPT, cfg, "rl", len(log.records), vocab=captioner.vocab,
                    keywords=captioner.keywords)
    log.write(out / "rl.log.jsonl")
    return {"checkpoint": str(out / RL_CKPT), "cider_d_before": before, "cider_d_after": after}


# -- inference and evaluation ----------------------------------------------------
def _inputs(cfg: Config, captioner: Captioner, captions_csv, data_dir):
    if captions_csv is not None:
        corpus = load_corpus_csv(captions_csv, data_dir, split="test", vocab=captioner.vocab)
        return [c.clip_id for c in corpus.clips], corpus.feature_matrix(cfg.feature_params())
    from .data import Clip, stack_features

    # one clip per stem, named by its audio file as in captions CSVs; the WAV wins over a feature file
    sources = {}
    for p in sorted(Path(data_dir).iterdir()):
        if p.suffix in (".feat", ".wav") and (p.suffix == ".wav" or p.stem not in sources):
            sources[p.stem] = p
    if not sources:
        raise FileNotFoundError(f"no .feat or .wav files in {data_dir}")
    clips = [Clip(stem + ".wav", sources[stem], []) for stem in sorted(sources)]
    return [c.clip_id for c in clips], stack_features(c.features(cfg.feature_params()) for c in clips)


def decode_clips(captioner: Captioner, X, cfg: Config, beam: int | None = None) -> list:
    beam = cfg.beam_size if beam is None else beam
    seq, y_hat = captioner.encoder_features(X)
    kw = captioner.keyword_ids(y_hat)
    results = []
    for i in range(len(X)):
        with no_grad():
            enc = captioner.encode(seq[i:i + 1], kw[i:i + 1])
        if beam <= 1:
            res = greedy_decode(captioner.decoder, enc, cfg.max_len)
        else:
            res = beam_search(captioner.decoder, enc, beam, cfg.max_len, cfg.length_penalty)
        results.append(res)
    return results


def run_infer(cfg: Config, checkpoint, data_dir, out_dir, captions_csv=None, beam: int | None = None) -> dict:
    out = _out(out_dir, cfg, "infer")
    captioner, _ = load_captioner(checkpoint, cfg)
    ids, X = _inputs(cfg, captioner, captions_csv, data_dir)
    results = decode_clips(captioner, X, cfg, beam)
    with open(out / "hypotheses.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["file_name", "caption"])
        for clip_id, res in zip(ids, results):
            w.writerow([clip_id, " ".join(captioner.vocab.decode(res.tokens))])
    return {"path": str(out / "hypotheses.csv"), "clips": len(ids)}


def read_hypotheses(path) -> dict:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"file_name", "caption"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns file_name, caption")
        return {row["file_name"]: row["caption"] for row in reader}


def run_evaluate(cfg: Config, hypotheses_csv, references_csv, data_dir, out_dir, spice: float | None = None,
                 spider_mode: str = "raw") -> dict:
    out = _out(out_dir, cfg, "evaluate")
    hyps = read_hypotheses(hypotheses_csv)
    refs = _reference_rows(references_csv)
    missing = sorted(set(hyps) - set(refs))
    if missing:
        raise ValueError(f"hypotheses without references: {missing[:5]}")
    pairs = [EvalPair(k, hyps[k].split(), refs[k]) for k in sorted(hyps)]
    report = evaluate(pairs, spice=spice, spider_mode=spider_mode)
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "metrics.txt").write_text(report.table() + "\n", encoding="utf-8")
    return report.to_dict()


def _reference_rows(references_csv) -> dict:
    """Tokenised references keyed by file_name (no feature files needed)."""
    from .keywords import EmptyCaptionError, tokenize_caption

    out = {}
    with open(references_csv, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        cols = [c for c in (reader.fieldnames or []) if c.startswith("caption")]
        if "file_name" not in (reader.fieldnames or []) or not cols:
            raise ValueError(f"{references_csv}: expected file_name and caption columns")
        for row in reader:
            refs = []
            for c in cols:
                try:
                    refs.append(list(tokenize_caption(row[c] or "").tokens))
                except EmptyCaptionError:
                    continue
            if refs:
                out[row["file_name"]] = refs
    return out


def run_export_attention(cfg: Config, checkpoint, data_dir, out_dir, captions_csv=None, clip: str | None = None,
                         beam: int | None = None) -> dict:
    out = _out(out_dir, cfg, "export-attention")
    captioner, _ = load_captioner(checkpoint, cfg)
    ids, X = _inputs(cfg, captioner, captions_csv, data_dir)
    if clip is not None:
        if clip not in ids:
            raise KeyError(f"clip {clip!r} not found")
        k = ids.index(clip)
        ids, X = [clip], X[k:k + 1]
    results = decode_clips(captioner, X, cfg, beam)
    payload = []
    for clip_id, res, (seq_kw) in zip(ids, results, captioner.keyword_ids(captioner.encoder_features(X)[1])):
        payload.append({
            "clip_id": clip_id,
            "caption": captioner.vocab.decode(res.tokens),
            "keywords": [captioner.vocab.tokens[i] for i in seq_kw],
            "steps": [{**rec, "word": captioner.vocab.tokens[rec["token"]]} for rec in res.attention],
        })
    (out / "attention.json").write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    return {"path": str(out / "attention.json"), "clips": len(payload)}


__all__ = [
    "run_gen_synth", "run_build_keywords", "run_build_labels", "run_pretrain_encoder", "run_train_ce",
    "run_finetune_rl", "run_infer", "run_evaluate", "run_export_attention", "load_captioner",
    "decode_clips", "header_config",
]
