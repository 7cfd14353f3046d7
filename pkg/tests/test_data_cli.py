import csv
import json

import numpy as np
import pytest

from maac import cli, pipeline
from maac.checkpoint import CheckpointError, checkpoint_bytes, load_checkpoint, read_checkpoint, save_checkpoint
from maac.config import PAPER, TINY, ConfigError, load_config
from maac.data import (
    CorpusError, caption_targets, gen_synthetic_dataset, load_corpus_csv, load_planted, stack_features,
)
from maac.decoder import EOS, PAD, UNK
from maac.encoder import KeywordEncoder
from maac.features import FeatureParams, LogMel, save_features
from maac.keywords import build_keyword_table, encode_multihot, load_stoplist
from maac.model import Captioner, Vocab

PARAMS = TINY.feature_params()


def write_csv(path, rows, header=("file_name",) + tuple(f"caption_{i}" for i in range(1, 6))):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def fake_features(data_dir, *names):
    for n in names:
        save_features(data_dir / (n.rsplit(".", 1)[0] + ".feat"), LogMel(np.zeros((8, PARAMS.n_mels)), PARAMS))


def test_csv_two_rows_five_captions(tmp_path):
    fake_features(tmp_path, "a.wav", "b.wav")
    write_csv(tmp_path / "c.csv", [["a.wav"] + [f"a dog barks {i}" for i in range(5)],
                                   ["b.wav"] + [f"a bird sings {i}" for i in range(5)]])
    corpus = load_corpus_csv(tmp_path / "c.csv", tmp_path)
    assert len(corpus) == 2 and len(corpus.captions()) == 10


def test_csv_empty_captions_and_rejected_rows(tmp_path):
    fake_features(tmp_path, "a.wav", "b.wav")
    write_csv(tmp_path / "c.csv", [["a.wav", "a dog", "", "  ", "dog barks", "!!"], ["b.wav", "", "", "", "", ""]])
    corpus = load_corpus_csv(tmp_path / "c.csv", tmp_path)
    assert [c.clip_id for c in corpus.clips] == ["a.wav"]
    assert len(corpus.clips[0].captions) == 2
    assert corpus.rejected == [(3, "b.wav")]


def test_csv_errors_name_lines(tmp_path):
    fake_features(tmp_path, "a.wav")
    write_csv(tmp_path / "c.csv", [["a.wav", "x", "y"]])
    with pytest.raises(CorpusError, match=":2:"):
        load_corpus_csv(tmp_path / "c.csv", tmp_path)
    write_csv(tmp_path / "m.csv", [["a.wav"] + ["a dog"] * 5, ["gone.wav"] + ["a cat"] * 5,
                                   ["lost.wav"] + ["a cow"] * 5])
    with pytest.raises(CorpusError, match="line 3: gone.wav, line 4: lost.wav"):
        load_corpus_csv(tmp_path / "m.csv", tmp_path)
    write_csv(tmp_path / "h.csv", [["a.wav", "x"]], header=("name", "caption_1"))
    with pytest.raises(CorpusError, match="file_name"):
        load_corpus_csv(tmp_path / "h.csv", tmp_path)


def test_vocab_deterministic_and_eval_split_needs_vocab(tmp_path):
    fake_features(tmp_path, "a.wav", "b.wav")
    write_csv(tmp_path / "c.csv", [["a.wav"] + ["a dog barks"] * 5, ["b.wav"] + ["the bird sings"] * 5])
    v1 = load_corpus_csv(tmp_path / "c.csv", tmp_path).vocab
    v2 = load_corpus_csv(tmp_path / "c.csv", tmp_path).vocab
    assert v1.tokens == v2.tokens and v1.tokens[:4] == ["<bos>", "<eos>", "<pad>", "<unk>"]
    with pytest.raises(CorpusError):
        load_corpus_csv(tmp_path / "c.csv", tmp_path, split="test")
    test = load_corpus_csv(tmp_path / "c.csv", tmp_path, split="test", vocab=v1)
    assert test.vocab is v1
    assert v1.encode(["a", "zebra"]) == [v1.id("a"), UNK, EOS]


def test_vocab_order_independent():
    a = Vocab.build([["b", "a"], ["a", "c"]])
    b = Vocab.build([["a", "c"], ["b", "a"]])
    assert a.tokens == b.tokens == ["<bos>", "<eos>", "<pad>", "<unk>", "a", "b", "c"]


def test_caption_targets_layout():
    v = Vocab.build([["a", "dog"]])
    t = caption_targets([("a", "dog"), ("dog",)], v)
    assert t.tolist() == [[v.id("a"), v.id("dog"), EOS], [v.id("dog"), EOS, PAD]]


def test_stack_features_pads_with_clip_minimum():
    out = stack_features([np.ones((3, 2)), np.array([[5.0, 2.0]])])
    assert out.shape == (2, 3, 2) and np.all(out[1, 1:] == 2.0)


def test_synthetic_dataset_deterministic_and_consistent(tmp_path):
    import time

    t0 = time.perf_counter()
    gen_synthetic_dataset(tmp_path / "a", 3, 50, PARAMS)
    assert time.perf_counter() - t0 < 10.0
    gen_synthetic_dataset(tmp_path / "b", 3, 50, PARAMS)
    for rel in ("captions.csv", "planted.json", "features/clip_0007.feat"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    corpus = load_corpus_csv(tmp_path / "a" / "captions.csv", tmp_path / "a" / "features")
    planted = load_planted(tmp_path / "a" / "planted.json")
    table = build_keyword_table(corpus.captions(), 20, load_stoplist())
    assert sorted(table.entries) == sorted({w for p in planted.values() for w in p["keywords"]})
    for clip in corpus.clips:
        bits = encode_multihot(clip.captions, table).bits
        assert sorted(table.entries[i] for i in np.flatnonzero(bits)) == planted[clip.clip_id]["keywords"]


def small_captioner(cfg=TINY):
    words = ["a", "bird", "chirp", "dog", "bark"] + [f"k{i}" for i in range(cfg.n_keywords - 4)]
    vocab = Vocab(["<bos>", "<eos>", "<pad>", "<unk>"] + words)
    return Captioner(cfg, vocab, words[1:5] + words[5:], seed=0)


def test_checkpoint_round_trip_bytes(tmp_path):
    cap = small_captioner()
    save_checkpoint(cap, tmp_path / "a.ckpt", TINY, "ce", 3, cap.vocab, cap.keywords)
    other = small_captioner()
    for p in other.parameters():
        p.data[...] = 0.0
    load_checkpoint(tmp_path / "a.ckpt", other, expect=TINY)
    save_checkpoint(other, tmp_path / "b.ckpt", TINY, "ce", 3, cap.vocab, cap.keywords)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    header, arrays = read_checkpoint(tmp_path / "a.ckpt")
    assert header["stage"] == "ce" and header["vocab"] == cap.vocab.tokens
    assert all(m["shape"] == list(arrays[m["name"]].shape) for m in header["manifest"])


def test_truncated_checkpoint_leaves_model_untouched(tmp_path):
    cap = small_captioner()
    blob = checkpoint_bytes(cap, TINY, "ce", 0, cap.vocab, cap.keywords)
    (tmp_path / "t.ckpt").write_bytes(blob[:-10])
    other = small_captioner()
    for p in other.parameters():
        p.data[...] = 7.0
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.ckpt", other)
    assert all(np.all(p.data == 7.0) for p in other.parameters())


def test_tiny_checkpoint_rejected_by_paper_config(tmp_path):
    enc = KeywordEncoder(TINY, seed=0)
    save_checkpoint(enc, tmp_path / "e.ckpt", TINY, "encoder")
    with pytest.raises(CheckpointError, match="config hash"):
        load_checkpoint(tmp_path / "e.ckpt", expect=PAPER)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "e.ckpt", KeywordEncoder(TINY.with_overrides(head_dim=16), seed=0))


def test_config_file_and_overrides(tmp_path):
    (tmp_path / "c.txt").write_text("# tiny tweaks\nepochs_ce = 3\nuse_keywords=false\n")
    cfg = load_config(tmp_path / "c.txt", "tiny", {"seed": "9"})
    assert cfg.epochs_ce == 3 and cfg.use_keywords is False and cfg.seed == 9 and cfg.dim == TINY.dim
    (tmp_path / "bad.txt").write_text("nonsense\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.txt")
    with pytest.raises(ConfigError):
        load_config(None, "tiny", {"no_such_key": 1})
    assert load_config(None, "tiny").dumps() == TINY.dumps()


def test_cli_reports_errors_with_exit_code(tmp_path, capsys):
    assert cli.main(["build-keywords", "--captions", str(tmp_path / "none.csv"), "--data-dir", str(tmp_path),
                     "--preset", "tiny", "--out-dir", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    assert cli.main(["gen-synth", "--preset", "tiny", "--set", "bogus", "--out-dir", str(tmp_path)]) == 2


def test_cli_data_stages_write_resolved_config(tmp_path, capsys):
    d = tmp_path / "syn"
    assert cli.main(["gen-synth", "--preset", "tiny", "--n-clips", "6", "--out-dir", str(d), "--seed", "4"]) == 0
    assert "seed=4" in (d / "gen-synth.config.txt").read_text()
    assert cli.main(["build-keywords", "--preset", "tiny", "--captions", str(d / "captions.csv"),
                     "--data-dir", str(d / "features"), "--n", "6", "--out-dir", str(d)]) == 0
    assert cli.main(["build-labels", "--preset", "tiny", "--captions", str(d / "captions.csv"),
                     "--data-dir", str(d / "features"), "--keywords", str(d / "keywords.tsv"),
                     "--out-dir", str(d)]) == 0
    labels = json.loads((d / "labels.json").read_text())
    assert len(labels["keywords"]) == 6 and len(labels["labels"]) == 6
    capsys.readouterr()


def test_evaluate_stage_outputs(tmp_path):
    refs = tmp_path / "refs.csv"
    write_csv(refs, [["a.wav"] + ["a dog barks"] * 5, ["b.wav"] + ["the bird sings"] * 5])
    hyps = tmp_path / "hyp.csv"
    write_csv(hyps, [["a.wav", "a dog barks"], ["b.wav", "the bird sings"]], header=("file_name", "caption"))
    summary = pipeline.run_evaluate(TINY, hyps, refs, None, tmp_path, spice=0.2)
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["bleu1"] == 1.0 and metrics["rouge_l"] == 1.0
    assert "spider" in metrics and "SPIDEr" in (tmp_path / "metrics.txt").read_text()
    assert summary["bleu1"] == 1.0


def test_listing_a_data_dir_names_clips_like_captions_csv(tmp_path):
    from maac.features import Waveform, write_wav

    fake_features(tmp_path, "b.wav", "a.wav")
    write_wav(tmp_path / "b.wav", Waveform(np.zeros(PARAMS.window * 4), PARAMS.sample_rate))
    ids, X = pipeline._inputs(TINY, None, None, tmp_path)
    assert ids == ["a.wav", "b.wav"]
    assert X.shape[0] == 2
