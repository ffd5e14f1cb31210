"""The two comparative evaluations: 3D output (direct vs lifted 2D) and 2D output
(direct vs projected 3D), scored with FGD, beat consistency and diversity.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from gesturelift.dataset import GestureDataset, WindowBatch
from gesturelift.diffusion import DenoiserModel, sample_batch
from gesturelift.encoder import FeatureEncoder
from gesturelift.errors import StructuralError
from gesturelift.lifter import LifterModel, lift_dirs
from gesturelift.metrics import (
    BC_SIGMA,
    DIVERSITY_N,
    DIVERSITY_REPEATS,
    diversity,
    encode_stats,
    fgd,
    mean_beat_consistency,
)
from gesturelift.nn import load_bundle
from gesturelift.pose import PoseSequence, project_to_2d
from gesturelift.recurrent import RecurrentModel, generate_batch

log = logging.getLogger(__name__)

MODEL_KINDS = {cls.kind: cls for cls in (DenoiserModel, RecurrentModel, LifterModel, FeatureEncoder)}
GENERATOR_KINDS = ("diffusion", "recurrent")
REPORT_FIELDS = ("run_id", "setting", "metric", "value", "seed", "n_sequences")
METRICS = ("FGD", "BC", "Diversity")


def load_model(path, kind=None, dim=None):
    """Load any bundle; optionally insist on its kind and pose dimensionality."""
    tensors, meta = load_bundle(path)
    found = meta.get("kind")
    if found not in MODEL_KINDS:
        raise StructuralError(f"{path}: unknown model kind {found!r}")
    if kind is not None and found not in ((kind,) if isinstance(kind, str) else kind):
        raise StructuralError(f"{path}: expected a {kind} bundle, found {found!r}")
    model = MODEL_KINDS[found].from_tensors(tensors, meta)
    if dim is not None and found != "lifter" and model.dim != dim:
        raise StructuralError(f"{path}: this {found} model works on {model.dim}D poses, {dim}D required")
    return model


def generate_for(model, batch: WindowBatch, seed=0, guidance_w=None) -> list:
    """Generated sequences for every window of ``batch``."""
    if batch.dirs.shape[-1] != model.dim:
        raise StructuralError(
            f"{model.kind} model generates {model.dim}D poses, evaluation input is {batch.dirs.shape[-1]}D")
    if model.kind == "diffusion":
        return sample_batch(model, batch, guidance_w=guidance_w, seed=seed)
    if model.kind == "recurrent":
        return generate_batch(model, batch)
    raise StructuralError(f"{model.kind!r} is not a generator")


def lift_sequences(lifter: LifterModel, seqs) -> list:
    dirs = lift_dirs(lifter, np.stack([s.dirs for s in seqs]))
    return [PoseSequence(d, s.fps) for d, s in zip(dirs, seqs)]


def project_sequences(seqs) -> list:
    return [project_to_2d(s) for s in seqs]


@dataclass
class EvalParams:
    seed: int = 0
    guidance_w: float | None = None
    sigma: float = BC_SIGMA
    div_n: int = DIVERSITY_N
    div_repeats: int = DIVERSITY_REPEATS


@dataclass
class EvalResult:
    setting_rows: list  # (label, {metric: value}, n_sequences)
    observations: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def value(self, setting, metric):
        for label, vals, _ in self.setting_rows:
            if label == setting:
                return vals[metric]
        raise KeyError(setting)


def score(encoder: FeatureEncoder, real_stats, audio_beats, seqs, params: EvalParams) -> dict:
    latents = encoder.encode(np.stack([s.dirs for s in seqs]))
    return {
        "FGD": fgd(real_stats, encode_stats(latents)),
        "BC": mean_beat_consistency(audio_beats, seqs, params.sigma),
        "Diversity": diversity(latents, n=params.div_n, seed=params.seed, repeats=params.div_repeats),
    }


def _evaluate(dataset, dim, direct, other, convert, convert_label, encoder, params):
    test = dataset.batch("test", dim)
    if len(test) == 0:
        raise StructuralError("the test split is empty")
    if encoder.dim != dim:
        raise StructuralError(f"feature encoder works on {encoder.dim}D poses, {dim}D required")
    other_batch = dataset.batch("test", 5 - dim)
    gt = test.sequences()
    real = encode_stats(encoder.encode(test.dirs))

    direct_seqs = generate_for(direct, test, params.seed, params.guidance_w)
    other_seqs = convert(generate_for(other, other_batch, params.seed, params.guidance_w))
    rows = [
        (f"ground_truth_{dim}d", score(encoder, real, test.audio_beats, gt, params), len(gt)),
        (f"{direct.kind}_direct_{dim}d", score(encoder, real, test.audio_beats, direct_seqs, params),
         len(direct_seqs)),
        (f"{other.kind}_{convert_label}", score(encoder, real, test.audio_beats, other_seqs, params),
         len(other_seqs)),
    ]
    return EvalResult(rows), real


def evaluate_3d(dataset: GestureDataset, gen3d, gen2d, lifter: LifterModel, encoder: FeatureEncoder,
                params: EvalParams = None) -> EvalResult:
    """Ground truth vs direct-3D generation vs 2D generation lifted to 3D."""
    params = params or EvalParams()
    if gen3d.dim != 3 or gen2d.dim != 2:
        raise StructuralError("evaluate-3d needs a 3D generator and a 2D generator")
    result, _ = _evaluate(dataset, 3, gen3d, gen2d, lambda s: lift_sequences(lifter, s),
                          "2d_plus_lift", encoder, params)
    lifted = result.value(f"{gen2d.kind}_2d_plus_lift", "FGD")
    direct = result.value(f"{gen3d.kind}_direct_3d", "FGD")
    result.observations.append(_observation(
        f"FGD({gen2d.kind} 2D+lift) >= FGD({gen3d.kind} direct 3D)", lifted, direct, lifted >= direct))
    return result


def evaluate_2d(dataset: GestureDataset, gen2d, gen3d, encoder: FeatureEncoder,
                params: EvalParams = None) -> EvalResult:
    """Ground truth vs direct-2D generation vs 3D generation with depth removed."""
    params = params or EvalParams()
    if gen3d.dim != 3 or gen2d.dim != 2:
        raise StructuralError("evaluate-2d needs a 2D generator and a 3D generator")
    result, _ = _evaluate(dataset, 2, gen2d, gen3d, project_sequences, "3d_to_2d", encoder, params)
    projected = result.value(f"{gen3d.kind}_3d_to_2d", "FGD")
    direct = result.value(f"{gen2d.kind}_direct_2d", "FGD")
    result.observations.append(_observation(
        f"FGD({gen3d.kind} 3D->2D) <= FGD({gen2d.kind} direct 2D)", projected, direct, projected <= direct))
    return result


def _observation(claim, left, right, holds):
    return f"{claim}: {left:.6g} vs {right:.6g}, {'holds' if holds else 'does not hold'}"


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def report_rows(result: EvalResult, run_id: str, seed: int) -> list:
    return [
        {"run_id": run_id, "setting": label, "metric": m, "value": vals[m], "seed": seed, "n_sequences": n}
        for label, vals, n in result.setting_rows for m in METRICS
    ]


def report_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "value": _fmt(r["value"])})
    return buf.getvalue()


def report_table(result: EvalResult, title: str, header: dict, timestamp: str | None = None) -> str:
    """Human-readable table: one line per setting with FGD, BC and diversity columns."""
    lines = []
    if timestamp:
        lines.append(f"generated: {timestamp}")
    lines.append(title)
    width = max(len(label) for label, _, _ in result.setting_rows) + 2
    lines.append("Setting".ljust(width) + "".join(m.rjust(12) for m in METRICS) + "n".rjust(8))
    for label, vals, n in result.setting_rows:
        lines.append(label.ljust(width) + "".join(f"{vals[m]:12.4f}" for m in METRICS) + f"{n:8d}")
    lines.append("")
    for key, value in header.items():
        lines.append(f"{key}: {value}")
    lines.append("observations (directional, not gated):")
    lines.extend(f"  {o}" for o in result.observations)
    return "\n".join(lines) + "\n"
