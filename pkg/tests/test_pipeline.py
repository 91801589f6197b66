import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from vqbwe.codec import Waveform, read_wav, write_wav
from vqbwe.nn.optim import PlateauDecay
from vqbwe.pipeline import cli
from vqbwe.pipeline import commands as C
from vqbwe.pipeline.config import RunConfig, load_config, parse_config
from vqbwe.pipeline.synth import spectral_centroid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="module")
def toy():
    return load_config(CONFIGS / "toy.cfg")


@pytest.fixture(scope="module")
def run(tmp_path_factory, toy):
    root = tmp_path_factory.mktemp("toy")
    corpus = C.cmd_synth(toy, root / "corpus")
    ck = C.cmd_train(toy, corpus, root / "ck")
    est = C.cmd_infer(toy, ck, corpus / "test_lowpass", root / "est")
    return {"root": root, "corpus": corpus, "ck": ck, "est": est}


def _tree_bytes(d: Path) -> dict[str, bytes]:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


# -- config ---------------------------------------------------------------------------

def test_config_roundtrip_and_hash():
    cfg = RunConfig().with_updates({"train.lr": "0.01", "eval.cutoffs": "900, 1200", "diffusion.beta_is_total": "false"})
    again = parse_config(cfg.to_text())
    assert again == cfg and again.hash() == cfg.hash()
    assert cfg.eval.cutoffs == (900.0, 1200.0)
    assert cfg.with_seed(3).hash() != cfg.hash()


@pytest.mark.parametrize("text", ["nope.key = 1", "train.lrr = 1", "train.lr = abc", "train = 1",
                                  "train.epochs = 1.5", "seed = 1\nseed = 2", "just words",
                                  "diffusion.beta_is_total = maybe", "eval.cutoffs = 5000"])
def test_config_rejects(text):
    with pytest.raises((KeyError, ValueError)):
        parse_config(text)


def test_config_comments_and_blank_lines():
    cfg = parse_config("# header\n\ntrain.epochs = 7  # inline\n")
    assert cfg.train.epochs == 7


# -- synth -----------------------------------------------------------------------------

def test_synth_byte_identical(tmp_path, toy, run):
    again = C.cmd_synth(toy, tmp_path / "again")
    assert _tree_bytes(again) == _tree_bytes(run["corpus"])


def test_synth_seed_changes_corpus(tmp_path, toy, run):
    other = C.cmd_synth(toy.with_seed(toy.seed + 1), tmp_path / "other")
    assert (other / "train" / "train_0000.wav").read_bytes() != (run["corpus"] / "train" / "train_0000.wav").read_bytes()


def test_synth_energy_on_both_sides_of_cutoffs(toy, run):
    for p in sorted((run["corpus"] / "train").glob("*.wav")):
        w = read_wav(p)
        spec = np.abs(np.fft.rfft(w.samples)) ** 2
        f = np.fft.rfftfreq(len(w), 1 / w.sample_rate)
        total = spec.sum()
        for cut in toy.eval.cutoffs:
            assert spec[f <= cut].sum() > 0.01 * total
            assert spec[f > cut].sum() > 0.01 * total


def test_synth_centroid_matches_analytic(run):
    man = json.loads((run["corpus"] / "manifest.json").read_text())
    for rec in man["utterances"]:
        w = read_wav(run["corpus"] / rec["file"])
        assert spectral_centroid(w.samples, w.sample_rate) == pytest.approx(rec["centroid"], rel=0.05)


def test_synth_unwritable_output(tmp_path, toy):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        C.cmd_synth(toy, blocker / "sub")


# -- train --------------------------------------------------------------------------------

def _curves(ck: Path) -> list[dict]:
    lines = (ck / "losses.tsv").read_text().splitlines()
    head = lines[0].split("\t")
    return [dict(zip(head, map(float, l.split("\t")))) for l in lines[1:]]


def test_train_outputs_and_loss_decreases(toy, run):
    ck = run["ck"]
    for name in ("codebooks.vqcb", "model.vqck", "losses.tsv", "manifest.json", "config.txt"):
        assert (ck / name).exists()
    rows = _curves(ck)
    assert len(rows) == toy.train.epochs
    assert rows[-1]["train_loss"] < rows[0]["train_loss"]
    man = json.loads((ck / "manifest.json").read_text())
    assert man["config_hash"] == toy.hash()


def test_train_lr_follows_plateau_rule(toy, run):
    rows = _curves(run["ck"])
    rule = PlateauDecay(toy.train.decay, toy.train.patience, toy.train.threshold)
    lr = toy.train.lr
    for r in rows:
        assert r["lr"] == pytest.approx(lr, rel=1e-12)
        lr = rule.update(r["val_loss"], lr)


def test_lr_decays_after_two_flat_epochs():
    rule = PlateauDecay(0.8, 2, 1e-4)
    lr = rule.update(1.0, 3e-5)
    lr = rule.update(1.0, lr)
    assert lr == 3e-5
    assert rule.update(1.0, lr) == pytest.approx(0.8 * 3e-5, rel=1e-15)


def test_resume_is_bit_exact(tmp_path, toy, run):
    two = toy.with_updates({"train.epochs": 2})
    three = toy.with_updates({"train.epochs": 3})
    a = C.cmd_train(two, run["corpus"], tmp_path / "a")
    shutil.copytree(a, tmp_path / "b")
    C.cmd_train(three, run["corpus"], tmp_path / "b", resume=True)
    C.cmd_train(three, run["corpus"], tmp_path / "c")
    assert (tmp_path / "b" / "model.vqck").read_bytes() == (tmp_path / "c" / "model.vqck").read_bytes()
    with pytest.raises(ValueError):
        C.cmd_train(three.with_updates({"train.lr": 0.5}), run["corpus"], tmp_path / "b", resume=True)


def test_divergence_keeps_last_good_checkpoint(tmp_path, toy, run, monkeypatch):
    calls = {"n": 0}
    real = C.train_step

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] > toy.train.steps_per_epoch:
            raise FloatingPointError("non-finite loss")
        return real(*args, **kw)

    monkeypatch.setattr(C, "train_step", flaky)
    with pytest.raises(RuntimeError, match="last good checkpoint"):
        C.cmd_train(toy, run["corpus"], tmp_path / "d")
    from vqbwe.nn.train import load_checkpoint
    _, _, meta = load_checkpoint(tmp_path / "d" / "model.vqck")
    assert meta["epoch"] == 1
    assert (tmp_path / "d" / "divergence.txt").exists()


# -- infer ---------------------------------------------------------------------------------

def test_infer_deterministic(tmp_path, toy, run):
    again = C.cmd_infer(toy, run["ck"], run["corpus"] / "test_lowpass", tmp_path / "again")
    assert _tree_bytes(again) == _tree_bytes(run["est"])


def test_infer_preserves_duration(run):
    for p in sorted((run["corpus"] / "test_lowpass").glob("*.wav")):
        src, out = read_wav(p), read_wav(run["est"] / p.name)
        assert len(out) == len(src) and out.sample_rate == src.sample_rate


def test_infer_rejects_sample_rate_mismatch(tmp_path, toy, run):
    d = tmp_path / "in"
    d.mkdir()
    write_wav(d / "x.wav", Waveform(np.zeros(1600), 16000))
    with pytest.raises(ValueError, match="sample rate"):
        C.cmd_infer(toy, run["ck"], d, tmp_path / "out")


def test_mismatched_codec_and_model_refused(tmp_path, toy, run):
    other = C.cmd_train(toy.with_seed(7), run["corpus"], tmp_path / "other")
    mixed = tmp_path / "mixed"
    shutil.copytree(run["ck"], mixed)
    shutil.copy(other / "codebooks.vqcb", mixed / "codebooks.vqcb")
    with pytest.raises(ValueError, match="do not match"):
        C.cmd_infer(toy, mixed, run["corpus"] / "test_lowpass", tmp_path / "est")


def test_eval_refuses_mismatched_manifest(tmp_path, toy, run):
    est = tmp_path / "est"
    shutil.copytree(run["est"], est)
    man = json.loads((est / "manifest.json").read_text())
    man["model_codec_hash"] = "0" * 64
    (est / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(ValueError, match="mismatched"):
        C.evaluate(toy, run["corpus"] / "test", est)


# -- eval -----------------------------------------------------------------------------------

def test_eval_identical_dirs_zero(toy, run):
    rep = C.evaluate(toy, run["corpus"] / "test", run["corpus"] / "test")
    assert rep.rows and all(r["lsd_output"] == 0.0 for r in rep.rows)


def test_eval_aggregate_is_row_mean(tmp_path, toy, run):
    rep = C.cmd_eval(toy, run["corpus"] / "test", run["est"], tmp_path / "ev", inputs=run["corpus"] / "test_lowpass")
    for col in ("lsd_output", "lsd_input"):
        assert abs(rep.aggregate[col] - np.mean([r[col] for r in rep.rows])) <= 1e-9
    recs = [json.loads(l) for l in (tmp_path / "ev" / "report.jsonl").read_text().splitlines()]
    assert recs[0]["type"] == "config" and recs[-1]["type"] == "aggregate"
    assert "visqol" not in recs[1]


def test_eval_report_byte_identical(tmp_path, toy, run):
    for name in ("x", "y"):
        C.cmd_eval(toy, run["corpus"] / "test", run["est"], tmp_path / name, inputs=run["corpus"] / "test_lowpass")
    for f in ("report.jsonl", "report.txt"):
        assert (tmp_path / "x" / f).read_bytes() == (tmp_path / "y" / f).read_bytes()


def test_eval_lists_unpaired(tmp_path, toy, run):
    est = tmp_path / "est"
    est.mkdir()
    names = sorted(p.name for p in (run["corpus"] / "test").glob("*.wav"))
    for n in names[1:]:
        shutil.copy(run["corpus"] / "test" / n, est / n)
    rep = C.evaluate(toy, run["corpus"] / "test", est)
    assert rep.unpaired == [names[0]] and len(rep.rows) == len(names) - 1
    assert "unpaired" in rep.table()


def test_eval_visqol_hook(tmp_path, toy, run, monkeypatch):
    fake = tmp_path / "visqol"
    fake.write_text("#!/bin/sh\necho 'MOS-LQO: 4.25'\n")
    fake.chmod(0o755)
    monkeypatch.setenv("VISQOL_BIN", str(fake))
    rep = C.evaluate(toy, run["corpus"] / "test", run["est"])
    assert all(r["visqol"] == 4.25 for r in rep.rows)
    assert rep.aggregate["visqol"] == 4.25


# -- CLI ---------------------------------------------------------------------------------

def test_cli_synth_and_eval(tmp_path, run, capsys):
    cfg = CONFIGS / "toy.cfg"
    assert cli.main(["synth", "--config", str(cfg), "--seed", "0", "--out", str(tmp_path / "c")]) == 0
    assert _tree_bytes(tmp_path / "c") == _tree_bytes(run["corpus"])
    assert cli.main(["eval", "--config", str(cfg), "--out", str(tmp_path / "e"),
                     "--reference", str(run["corpus"] / "test"), "--estimate", str(run["est"])]) == 0
    assert "mean" in capsys.readouterr().out


def test_cli_reports_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no.such = 1\n")
    assert cli.main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "unknown config key" in capsys.readouterr().err


# -- codec on the synthetic corpus ------------------------------------------------------

# mean round-trip LSD of the toy-config codec on its test split, measured once at 0.2250
ROUNDTRIP_LSD_THRESHOLD = 0.25


def test_codec_roundtrip_lsd_below_pinned_threshold(run):
    from vqbwe.codec import CodebookSet, decode, encode
    from vqbwe.dsp import lsd

    cb = CodebookSet.load(run["ck"] / "codebooks.vqcb")
    waves = [read_wav(p) for p in sorted((run["corpus"] / "test").glob("*.wav"))]
    rt = [lsd(w, decode(encode(w, cb), cb, len(w))) for w in waves]
    rng = np.random.default_rng(0)
    rand = [lsd(w, decode(rng.integers(0, cb.K, encode(w, cb).codes.shape), cb, len(w))) for w in waves]
    assert np.mean(rt) < ROUNDTRIP_LSD_THRESHOLD
    assert all(a < b for a, b in zip(rt, rand))
