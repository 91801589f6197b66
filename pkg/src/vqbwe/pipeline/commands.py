"""The four pipeline stages.  Each writes its artifacts plus a ``manifest.json``
carrying the config hash; all randomness comes from ``(seed, stream, id)``."""
from __future__ import annotations

import json
import math
import os
import re
import subprocess
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import d3pm
from ..codec import CodebookSet, Waveform, decode, encode, mdct, read_wav, train_rvq, write_wav
from ..codec.wav import quantize_pcm16
from ..dsp import lowpass, lsd
from ..nn import autograd as ag
from ..nn.layers import ConMamba2Config
from ..nn.losses import vlb_loss_tensor
from ..nn.model import ConMamba2Denoiser
from ..nn.optim import Adam, PlateauDecay
from ..nn.train import load_checkpoint, make_batch, save_checkpoint, train_step
from ..schedule import NoiseSchedule, linear_schedule
from .config import RunConfig
from .synth import CUTOFF_STREAM, analytic_centroid, make_templates, stream, utterance

TRAIN_STREAM = 10
VAL_STREAM = 11
INFER_STREAM = 12

MANIFEST = "manifest.json"
CODEBOOKS = "codebooks.vqcb"
CHECKPOINT = "model.vqck"
RESUME_EXCLUDE = ("train.epochs",)
# everything the codebooks depend on (plus the seed)
CODEC_SECTIONS = ("corpus", "codec")


def _prepare(out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as e:
        raise OSError(f"output directory {out} is not writable: {e}") from e
    return out


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _load_manifest(d: Path) -> dict:
    p = Path(d) / MANIFEST
    if not p.exists():
        raise FileNotFoundError(f"{d} has no {MANIFEST}")
    return json.loads(p.read_text())


def schedule_for(cfg: RunConfig, K: int) -> NoiseSchedule:
    d = cfg.diffusion
    return linear_schedule(d.T, K, d.gamma_max, d.beta_max, beta_is_total=d.beta_is_total)


def training_cutoff(rng: np.random.Generator, sample_rate: int) -> float:
    nyq = sample_rate / 2
    return float(rng.uniform(nyq / 6, nyq / 2))


# -- synth ------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out) -> Path:
    """Write ``train/``, ``val/``, ``test/`` (clean) and ``test_lowpass/`` WAVs plus a manifest."""
    out = _prepare(out)
    spec = cfg.corpus
    tpl = make_templates(spec, cfg.seed)
    records = []
    splits = [("train", spec.train_count), ("val", spec.val_count), ("test", spec.test_count)]
    utt = 0
    for split, count in splits:
        (out / split).mkdir(exist_ok=True)
        for i in range(count):
            x, seq = utterance(spec, tpl, cfg.seed, utt)
            name = f"{split}_{i:04d}.wav"
            clean = Waveform(quantize_pcm16(x), spec.sample_rate)
            write_wav(out / split / name, clean)
            rec = {"id": utt, "split": split, "file": f"{split}/{name}",
                   "segments": [[k, n] for k, n in seq],
                   "centroid": analytic_centroid(spec, tpl, seq)}
            if split == "test":
                cut = cfg.eval.cutoffs[i % len(cfg.eval.cutoffs)]
                (out / "test_lowpass").mkdir(exist_ok=True)
                write_wav(out / "test_lowpass" / name, lowpass(clean, cut))
                rec["cutoff"] = cut
            records.append(rec)
            utt += 1
    _dump(out / MANIFEST, {"kind": "corpus", "config_hash": cfg.hash(), "seed": cfg.seed,
                           "sample_rate": spec.sample_rate,
                           "templates": (tpl.amplitudes * tpl.gain).tolist(),
                           "utterances": records})
    (out / "config.txt").write_text(cfg.to_text())
    return out


def _split_waves(corpus: Path, split: str) -> list[Waveform]:
    man = _load_manifest(corpus)
    return [read_wav(corpus / r["file"]) for r in man["utterances"] if r["split"] == split]


# -- train --------------------------------------------------------------------------

def train_codec(cfg: RunConfig, waves: list[Waveform]) -> CodebookSet:
    c = cfg.codec
    frames = []
    for i, w in enumerate(waves):
        frames.append(mdct(w.samples, c.window_len))
        rng = stream(cfg.seed, CUTOFF_STREAM, 0, i)
        for _ in range(c.lowpass_variants):
            frames.append(mdct(lowpass(w, training_cutoff(rng, w.sample_rate)).samples, c.window_len))
    return train_rvq(np.concatenate(frames), c.codebooks, c.codebook_size, c.iters, seed=cfg.seed,
                     window_len=c.window_len, sample_rate=cfg.corpus.sample_rate,
                     config_hash=bytes.fromhex(cfg.section_hash(*CODEC_SECTIONS)))


def build_model(cfg: RunConfig, K: int, M: int) -> ConMamba2Denoiser:
    arch = ConMamba2Config(**asdict(cfg.model))
    return ConMamba2Denoiser(arch, K, M, cfg.diffusion.T, seed=cfg.seed)


def _crop(rng, n_frames: int, crop: int) -> slice:
    if n_frames <= crop:
        return slice(0, n_frames)
    start = int(rng.integers(0, n_frames - crop + 1))
    return slice(start, start + crop)


def _low_tokens(w: Waveform, cut: float, cb: CodebookSet) -> np.ndarray:
    return encode(lowpass(w, cut), cb).codes


def validation_loss(cfg: RunConfig, model, cb, s, waves, clean_tokens) -> float:
    """Mean per-token loss on fixed cutoffs and timesteps (identical every epoch)."""
    if not waves:
        return float("nan")
    total, n = 0.0, 0
    with ag.no_grad():
        for i, (w, x0) in enumerate(zip(waves, clean_tokens)):
            rng = stream(cfg.seed, VAL_STREAM, i)
            y = _low_tokens(w, training_cutoff(rng, w.sample_rate), cb)
            k = cfg.train.val_timesteps
            b = make_batch(np.repeat(x0[None], k, 0), np.repeat(y[None], k, 0), s, rng)
            logits = model.logits(b.x_t, b.t, b.y)
            loss, _ = vlb_loss_tensor(b.x0, b.t, b.x_t, logits, s, cfg.diffusion.aux_weight, "mean")
            total += float(loss.data)
            n += 1
    return total / n


def _write_curves(out: Path, history: list[dict]) -> None:
    lines = ["epoch\tstep\ttrain_loss\tval_loss\tlr"]
    lines += [f"{h['epoch']}\t{h['step']}\t{h['train_loss']!r}\t{h['val_loss']!r}\t{h['lr']!r}" for h in history]
    (out / "losses.tsv").write_text("\n".join(lines) + "\n")


def cmd_train(cfg: RunConfig, corpus, out, resume: bool = False) -> Path:
    """Fit the codebooks, then the denoiser; checkpoints after every epoch.

    With ``resume`` an existing checkpoint in ``out`` is continued from its
    last completed epoch (only ``train.epochs`` may differ from the saved run).
    """
    corpus, out = Path(corpus), _prepare(out)
    train_w = _split_waves(corpus, "train")
    val_w = _split_waves(corpus, "val")
    if not train_w:
        raise ValueError(f"corpus {corpus} has no training utterances")
    resume_hash = cfg.hash(RESUME_EXCLUDE)
    ck_path = out / CHECKPOINT
    if resume and ck_path.exists():
        cb = CodebookSet.load(out / CODEBOOKS)
        model, opt, meta = load_checkpoint(ck_path)
        if meta["resume_hash"] != resume_hash:
            raise ValueError("checkpoint was written under a different configuration")
        if meta["codec_hash"] != cb.digest():
            raise ValueError("codebooks do not match the checkpoint")
        plateau = PlateauDecay(cfg.train.decay, cfg.train.patience, cfg.train.threshold)
        plateau.load(meta["plateau"])
        history, start = meta["history"], meta["epoch"]
    else:
        cb = train_codec(cfg, train_w)
        cb.save(out / CODEBOOKS)
        model = build_model(cfg, cb.K, cb.num_stages)
        opt = Adam(model.named_parameters(), lr=cfg.train.lr)
        plateau = PlateauDecay(cfg.train.decay, cfg.train.patience, cfg.train.threshold)
        history, start = [], 0
    s = schedule_for(cfg, cb.K)
    clean = [encode(w, cb).codes for w in train_w]
    val_clean = [encode(w, cb).codes for w in val_w]
    tc = cfg.train
    steps = tc.steps_per_epoch or math.ceil(len(train_w) / tc.batch_size)

    def extra(epoch):
        return {"config_hash": cfg.hash(), "resume_hash": resume_hash, "codec_hash": cb.digest(),
                "epoch": epoch, "plateau": plateau.state(), "history": history}

    for epoch in range(start, tc.epochs):
        rng = stream(cfg.seed, TRAIN_STREAM, epoch)
        order = rng.permutation(len(train_w))
        losses = []
        for step in range(steps):
            idx = [order[(step * tc.batch_size + j) % len(order)] for j in range(tc.batch_size)]
            xs, ys = [], []
            for i in idx:
                y = _low_tokens(train_w[i], training_cutoff(rng, train_w[i].sample_rate), cb)
                sl = _crop(rng, len(y), tc.crop)
                xs.append(clean[i][sl])
                ys.append(y[sl])
            try:
                losses.append(train_step(make_batch(np.stack(xs), np.stack(ys), s, rng), model, opt, s,
                                         cfg.diffusion.aux_weight))
            except FloatingPointError as e:
                (out / "divergence.txt").write_text(f"epoch {epoch} step {step}: {e}\n")
                raise RuntimeError(f"training diverged at epoch {epoch} step {step} ({e}); "
                                   f"last good checkpoint kept at {ck_path}") from e
        val = validation_loss(cfg, model, cb, s, val_w, val_clean)
        history.append({"epoch": epoch, "step": opt.step_count, "train_loss": float(np.mean(losses)),
                        "val_loss": val, "lr": opt.lr})
        if np.isfinite(val):
            opt.lr = plateau.update(val, opt.lr)
        save_checkpoint(ck_path, model, opt, extra(epoch + 1))
        _write_curves(out, history)
    if not ck_path.exists():
        save_checkpoint(ck_path, model, opt, extra(0))
    _dump(out / MANIFEST, {"kind": "checkpoint", "config_hash": cfg.hash(), "codec_hash": cb.digest(),
                           "model_hash": _file_hash(ck_path)})
    (out / "config.txt").write_text(cfg.to_text())
    return out


def _file_hash(path: Path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- infer ------------------------------------------------------------------------

def load_trained(ckdir) -> tuple[ConMamba2Denoiser, CodebookSet, dict]:
    ckdir = Path(ckdir)
    cb = CodebookSet.load(ckdir / CODEBOOKS)
    model, _, meta = load_checkpoint(ckdir / CHECKPOINT)
    if meta.get("codec_hash") != cb.digest():
        raise ValueError(f"codebooks in {ckdir} do not match the model checkpoint "
                         f"({cb.digest()[:12]} vs {str(meta.get('codec_hash'))[:12]})")
    return model, cb, meta


def restore(model, cb, cfg: RunConfig, y: np.ndarray, seed_ids) -> np.ndarray:
    s = schedule_for(cfg, cb.K)
    rng = stream(cfg.seed, INFER_STREAM, *seed_ids)
    return d3pm.sample(model, model.condition(y), s, y.shape, seed=rng)


def cmd_infer(cfg: RunConfig, checkpoint, inputs, out) -> Path:
    """Band-extend every WAV in ``inputs``; outputs keep the input file names and lengths."""
    model, cb, meta = load_trained(checkpoint)
    if model.T != cfg.diffusion.T:
        raise ValueError(f"model trained for T={model.T}, config asks for T={cfg.diffusion.T}")
    out = _prepare(out)
    files = sorted(Path(inputs).glob("*.wav"))
    if not files:
        raise FileNotFoundError(f"no WAV files in {inputs}")
    for i, path in enumerate(files):
        w = read_wav(path)
        if w.sample_rate != cb.sample_rate:
            raise ValueError(f"{path.name}: sample rate {w.sample_rate} != codec rate {cb.sample_rate}")
        x0 = restore(model, cb, cfg, encode(w, cb).codes, (i,))
        write_wav(out / path.name, decode(x0, cb, len(w)))
    _dump(out / MANIFEST, {"kind": "estimates", "config_hash": cfg.hash(), "codec_hash": cb.digest(),
                           "model_codec_hash": meta["codec_hash"],
                           "model_hash": _file_hash(Path(checkpoint) / CHECKPOINT),
                           "files": [p.name for p in files]})
    (out / "config.txt").write_text(cfg.to_text())
    return out


# -- eval -------------------------------------------------------------------------

@dataclass
class EvalReport:
    rows: list[dict]
    aggregate: dict
    config_hash: str
    config_text: str
    unpaired: list[str] = field(default_factory=list)
    wall_clock: float = 0.0

    def records(self) -> list[dict]:
        out = [{"type": "config", "config_hash": self.config_hash}]
        out += [{"type": "utterance", **r} for r in self.rows]
        out += [{"type": "unpaired", "file": f} for f in self.unpaired]
        out.append({"type": "aggregate", **self.aggregate})
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())

    def table(self) -> str:
        cols = [c for c in ("lsd_input", "lsd_output", "visqol") if any(c in r for r in self.rows)]
        lines = ["file".ljust(24) + "".join(c.rjust(12) for c in cols)]
        for r in self.rows:
            lines.append(r["file"].ljust(24) + "".join(f"{r[c]:12.4f}" if r.get(c) is not None else " " * 11 + "-"
                                                       for c in cols))
        lines.append("mean".ljust(24) + "".join(f"{self.aggregate[c]:12.4f}" if self.aggregate.get(c) is not None
                                                else " " * 11 + "-" for c in cols))
        for f in self.unpaired:
            lines.append(f"unpaired: {f}")
        lines.append(f"config {self.config_hash}")
        return "\n".join(lines) + "\n"


def visqol_score(binary: str, ref: Path, est: Path) -> float | None:
    try:
        res = subprocess.run([binary, "--reference_file", str(ref), "--degraded_file", str(est)],
                             capture_output=True, text=True, timeout=600, check=False)
    except OSError:
        return None
    m = re.findall(r"MOS-LQO:\s*([0-9.]+)", res.stdout)
    return float(m[-1]) if res.returncode == 0 and m else None


def _wav_names(d: Path) -> list[str]:
    man = Path(d) / MANIFEST
    if man.exists():
        data = json.loads(man.read_text())
        if "files" in data:
            return sorted(data["files"])
    return sorted(p.name for p in Path(d).glob("*.wav"))


def evaluate(cfg: RunConfig, reference, estimate, inputs=None) -> EvalReport:
    t0 = time.perf_counter()
    reference, estimate = Path(reference), Path(estimate)
    man = estimate / MANIFEST
    if man.exists():
        meta = json.loads(man.read_text())
        if "model_codec_hash" in meta and meta["model_codec_hash"] != meta.get("codec_hash"):
            raise ValueError("estimates were produced by a mismatched codec/model pair")
    ref_names = set(_wav_names(reference))
    est_names = set(_wav_names(estimate))
    paired = sorted(ref_names & est_names)
    unpaired = sorted(ref_names ^ est_names)
    visqol = os.environ.get("VISQOL_BIN")
    e = cfg.eval
    rows = []
    for name in paired:
        ref = read_wav(reference / name)
        est = read_wav(estimate / name)
        row = {"file": name, "lsd_output": lsd(ref, est, e.fft_size, e.hop)}
        if inputs is not None:
            row["lsd_input"] = lsd(ref, read_wav(Path(inputs) / name), e.fft_size, e.hop)
        if visqol:
            row["visqol"] = visqol_score(visqol, reference / name, estimate / name)
        rows.append(row)
    agg = {"count": len(rows)}
    for col in ("lsd_input", "lsd_output", "visqol"):
        vals = [r[col] for r in rows if r.get(col) is not None]
        if vals:
            agg[col] = float(np.mean(vals))
    return EvalReport(rows, agg, cfg.hash(), cfg.to_text(), unpaired, time.perf_counter() - t0)


def cmd_eval(cfg: RunConfig, reference, estimate, out, inputs=None) -> EvalReport:
    """LSD of every estimate against its reference; writes ``report.jsonl``,
    ``report.txt`` and a ``timing.json`` sidecar (the only non-deterministic file)."""
    out = _prepare(out)
    rep = evaluate(cfg, reference, estimate, inputs)
    (out / "report.jsonl").write_text(rep.to_jsonl())
    (out / "report.txt").write_text(rep.table())
    _dump(out / "timing.json", {"wall_clock_seconds": rep.wall_clock})
    return rep


# -- diagnostics --------------------------------------------------------------------

def token_accuracy(cfg: RunConfig, model, cb, clean: list[Waveform], low: list[Waveform],
                   t=None, seed_id: int = 0) -> float:
    """Argmax accuracy of the x0 prediction on ``(low -> clean)`` pairs.

    Timesteps are drawn uniformly from ``[1, T]`` per utterance unless ``t`` is given.
    """
    s = schedule_for(cfg, cb.K)
    rng = stream(cfg.seed, VAL_STREAM, 1000 + seed_id)
    hits = total = 0
    for w_ref, w_low in zip(clean, low):
        x0 = encode(w_ref, cb).codes
        y = encode(w_low, cb).codes
        b = make_batch(x0[None], y[None], s, rng, t=None if t is None else np.array([t]))
        pred = model(b.x_t, b.t, b.y).argmax(-1)
        hits += int((pred == x0[None]).sum())
        total += x0.size
    return hits / total
