"""Acuity-chart testbed: parameterized attacker model, stimuli, evaluation.

An attacker model has five dimensions (message, message appearance, attack
hardware, device profiling, computational resources), all mandatory.  A
testbed run generates letter/scale stimuli for every profiling session,
pushes each through render -> emanate -> capture -> reconstruct, trains
the letter classifier over a growing session schedule, and reports
accuracy per scale plus a per-letter confusion matrix on the held-out
test sessions.

The attacker-model file is INI-style key=value text with one section per
dimension; see parse_spec_file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .classifier import CnnSpec, TrainConfig, init_model, train
from .emanator import ChannelModel, emanate
from .emanator import capture as capture_iq
from .errors import StageError, ValidationError
from .pgmio import write_pgm
from .profiles import PhoneProfile, get_profile
from .raster import CHART_LETTERS, CHART_SCALES, render_eyechart
from .receiver import reconstruct
from .util import derive_seed, dump_json

#: classifier input for testbed letters (emages are block-averaged down)
INPUT_SIDE = 32
#: widened variant of the digit CNN used for the letter task
LETTER_CONV_CHANNELS = (12, 32)
LETTER_FC_SIZES = (240, 120)


@dataclass(frozen=True)
class MessageDim:
    letters: str = CHART_LETTERS
    priors: str = "uniform"

    def __post_init__(self):
        if not self.letters:
            raise ValidationError("message dimension: empty letter set")
        bad = [c for c in self.letters if c not in CHART_LETTERS]
        if bad:
            raise ValidationError(f"message dimension: letters {bad} outside {CHART_LETTERS}")
        if self.priors != "uniform":
            raise ValidationError("message dimension: only uniform priors are supported")


@dataclass(frozen=True)
class AppearanceDim:
    scales: tuple = CHART_SCALES
    contrast: float = 1.0
    background: str = "white"

    def __post_init__(self):
        if not self.scales:
            raise ValidationError("appearance dimension: empty scale set")
        for s in self.scales:
            if not any(float(s) == float(ref) for ref in CHART_SCALES):
                raise ValidationError(f"appearance dimension: unknown scale {s}")
        if not 0.0 < self.contrast <= 1.0:
            raise ValidationError("appearance dimension: contrast must be in (0, 1]")
        if self.background not in ("white", "plain"):
            raise ValidationError("appearance dimension: only a plain white background is supported")


@dataclass(frozen=True)
class HardwareDim:
    profile: PhoneProfile
    sample_rate_hz: float
    bandwidth_hz: float
    target_snr_db: float | None
    distance_r: float = 1.0
    coupling_gain: float = 1.0
    frames: int = 1

    def __post_init__(self):
        if self.sample_rate_hz <= 0 or self.bandwidth_hz <= 0:
            raise ValidationError("hardware dimension: rates must be positive")
        if self.frames < 1:
            raise ValidationError("hardware dimension: frames must be >= 1")


@dataclass(frozen=True)
class ProfilingDim:
    train_items: tuple[int, ...]  # items per class per scale, one per session
    test_items: tuple[int, ...]
    growth: tuple[int, ...] = ()  # session counts per training stage; () = auto

    def __post_init__(self):
        if not self.train_items or not self.test_items:
            raise ValidationError("profiling dimension: need train and test sessions")
        if min(self.train_items) < 1 or min(self.test_items) < 1:
            raise ValidationError("profiling dimension: items per class per scale must be >= 1")
        for g in self.growth:
            if not 1 <= g <= len(self.train_items):
                raise ValidationError(f"profiling dimension: growth stage {g} out of range")

    def stages(self) -> tuple[int, ...]:
        if self.growth:
            return self.growth
        n = len(self.train_items)
        if n < 2:
            return (n,)
        auto = list(range(2, n + 1, 2))
        if auto[-1] != n:
            auto.append(n)
        return tuple(auto)


@dataclass(frozen=True)
class ResourcesDim:
    epochs: int = 40
    batch_size: int = 256
    learning_rate: float = 0.001

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("resources dimension: epochs must be >= 1")


@dataclass(frozen=True)
class AttackerModelSpec:
    message: MessageDim
    appearance: AppearanceDim
    hardware: HardwareDim
    profiling: ProfilingDim
    resources: ResourcesDim


def make_panel_profile(
    visible_w: int,
    visible_h: int,
    f_r: float = 60.0,
    x_t: int | None = None,
    y_t: int | None = None,
    name: str = "custom",
) -> PhoneProfile:
    """A custom display panel for testbed hardware dimensions.

    The reconstruction grid is the timing grid itself (unit pixel ratio).
    """
    import math

    x_t = x_t or math.ceil(1.1 * visible_w)
    y_t = y_t or math.ceil(1.06 * visible_h)
    return PhoneProfile(
        name=name,
        visible_w=visible_w, visible_h=visible_h, x_t=x_t, y_t=y_t, f_r=f_r,
        default_snr_db=25.0, measured_center_hz=0.0,
        crop_h=None, crop_w=None, recon_w=x_t,
        grid_content_w=(visible_w // 40) * 40, grid_content_h=(visible_h // 40) * 40,
    )


def _parse_scalar(text: str):
    return float(text)


def parse_spec_file(path) -> AttackerModelSpec:
    """Read the five-section attacker-model document.

    Every section must be present and non-empty; a run without a complete
    specification is rejected.
    """
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ValidationError(f"cannot read attacker model file {path}")
    required = ["message", "message_appearance", "attack_hardware",
                "device_profiling", "computational_resources"]
    for section in required:
        if section not in cp or not dict(cp[section]):
            raise ValidationError(f"attacker model is incomplete: section [{section}] missing or empty")

    msg = cp["message"]
    message = MessageDim(
        letters="".join(s.strip().upper() for s in msg.get("letters", CHART_LETTERS).split(",") if s.strip()),
        priors=msg.get("priors", "uniform").strip(),
    )

    app = cp["message_appearance"]
    scales = tuple(float(s) for s in app.get("scales", "").split(",") if s.strip()) or CHART_SCALES
    appearance = AppearanceDim(
        scales=scales,
        contrast=float(app.get("contrast", "1.0")),
        background=app.get("background", "white").strip(),
    )

    hw = cp["attack_hardware"]
    profile_name = hw.get("profile", "").strip()
    if not profile_name:
        raise ValidationError("attack_hardware: profile is required")
    if profile_name == "custom":
        profile = make_panel_profile(
            visible_w=int(hw["visible_w"]),
            visible_h=int(hw["visible_h"]),
            f_r=float(hw.get("f_r", "60")),
        )
    else:
        profile = get_profile(profile_name)
    snr_text = hw.get("target_snr_db", "").strip().lower()
    hardware = HardwareDim(
        profile=profile,
        sample_rate_hz=_parse_scalar(hw.get("sample_rate_hz", str(profile.sample_rate_hz))),
        bandwidth_hz=_parse_scalar(hw.get("bandwidth_hz", str(profile.bandwidth_hz))),
        target_snr_db=None if snr_text in ("", "none", "off") else float(snr_text),
        distance_r=float(hw.get("distance_r", "1.0")),
        coupling_gain=float(hw.get("coupling_gain", "1.0")),
        frames=int(hw.get("frames", "1")),
    )

    prof = cp["device_profiling"]
    train_items = tuple(int(s) for s in prof.get("train_items_per_class_per_scale", "").split(",") if s.strip())
    test_items = tuple(int(s) for s in prof.get("test_items_per_class_per_scale", "").split(",") if s.strip())
    growth = tuple(int(s) for s in prof.get("growth", "").split(",") if s.strip())
    profiling = ProfilingDim(train_items=train_items, test_items=test_items, growth=growth)

    res = cp["computational_resources"]
    resources = ResourcesDim(
        epochs=int(res.get("epochs", "40")),
        batch_size=int(res.get("batch_size", "256")),
        learning_rate=float(res.get("learning_rate", "0.001")),
    )
    return AttackerModelSpec(message, appearance, hardware, profiling, resources)


@dataclass(frozen=True)
class Stimulus:
    letter: str
    scale: float
    repetition: int


def generate_stimuli(spec: AttackerModelSpec, repetitions: int = 1) -> list[Stimulus]:
    """Full letters x scales x repetitions cross product, fixed ordering."""
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    return [
        Stimulus(letter, float(scale), rep)
        for letter in spec.message.letters
        for scale in spec.appearance.scales
        for rep in range(repetitions)
    ]


def _emage_to_input(pixels: np.ndarray, profile: PhoneProfile) -> np.ndarray:
    """Center square of the visible area, block-averaged to INPUT_SIDE."""
    vis_w = int(profile.visible_w * Fraction(profile.recon_w, profile.x_t))
    vis_h = profile.visible_h
    side = (min(vis_w, vis_h) // INPUT_SIDE) * INPUT_SIDE
    if side < INPUT_SIDE:
        raise ValidationError(f"visible emage area {vis_w}x{vis_h} too small for {INPUT_SIDE}px input")
    x0 = (vis_w - side) // 2
    y0 = (vis_h - side) // 2
    sq = pixels[y0 : y0 + side, x0 : x0 + side]
    k = side // INPUT_SIDE
    return sq.reshape(INPUT_SIDE, k, INPUT_SIDE, k).mean(axis=(1, 3)).astype(np.float32)


@dataclass
class TestbedReport:
    letters: str
    scales: tuple
    per_scale_accuracy: dict
    per_letter_accuracy: dict
    confusion: np.ndarray  # rows = true letter, cols = predicted
    stages: list[dict]
    overall_accuracy: float
    metadata: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "letters": list(self.letters),
            "scales": [float(s) for s in self.scales],
            "per_scale_accuracy": {f"{s:g}": v for s, v in self.per_scale_accuracy.items()},
            "per_letter_accuracy": self.per_letter_accuracy,
            "confusion": [[int(v) for v in row] for row in self.confusion],
            "stages": self.stages,
            "overall_accuracy": self.overall_accuracy,
            "metadata": self.metadata,
        }

    def save(self, directory) -> None:
        directory = Path(directory)
        dump_json(directory / "report.json", self.as_dict())
        with open(directory / "per_scale.csv", "w", encoding="utf-8") as fh:
            fh.write("scale,accuracy\n")
            for s in self.scales:
                fh.write(f"{s:g},{self.per_scale_accuracy[float(s)]:.6f}\n")
        total = self.confusion.max()
        heat = self.confusion / total if total > 0 else np.zeros_like(self.confusion, dtype=float)
        write_pgm(directory / "confusion.pgm", heat)


def _collect_session(
    spec: AttackerModelSpec,
    repetitions: int,
    session_seed: int,
) -> tuple[np.ndarray, np.ndarray, list[Stimulus]]:
    hw = spec.hardware
    profile = hw.profile
    timing = profile.timing()
    leak_model = profile.leakage(coupling_gain=hw.coupling_gain)
    recon = profile.recon_params()
    stimuli = generate_stimuli(spec, repetitions)
    letters = spec.message.letters

    images = np.empty((len(stimuli), INPUT_SIDE, INPUT_SIDE), dtype=np.float32)
    labels = np.empty(len(stimuli), dtype=np.int64)
    for i, st in enumerate(stimuli):
        try:
            raster = render_eyechart(
                st.letter, st.scale, profile.visible_w, profile.visible_h,
                contrast=spec.appearance.contrast,
            )
            leak = emanate(raster, timing, leak_model, frames=hw.frames)
            rec = capture_iq(
                leak,
                ChannelModel(
                    distance_r=hw.distance_r,
                    target_snr_db=hw.target_snr_db,
                    rng_seed=derive_seed(session_seed, "item", i),
                ),
                sample_rate_hz=hw.sample_rate_hz,
                bandwidth_hz=hw.bandwidth_hz,
            )
            emage = reconstruct(rec, recon)
            images[i] = _emage_to_input(emage.pixels, profile)
            labels[i] = letters.index(st.letter)
        except ValidationError as exc:
            raise StageError("stimulus", f"{st.letter}@{st.scale}: {exc}") from exc
    return images, labels, stimuli


def run_testbed(spec: AttackerModelSpec, seed: int = 0) -> TestbedReport:
    """Execute the full testbed protocol for one attacker model.

    Profiling sessions are simulated per the hardware dimension, training
    sets grow over the session schedule (each split 80/10/10 into
    train/val/internal-test), and the final stage's model is scored on the
    held-out test sessions.
    """
    letters = spec.message.letters
    scales = tuple(float(s) for s in spec.appearance.scales)
    n_letters = len(letters)

    train_sessions = [
        _collect_session(spec, reps, derive_seed(seed, "train-session", j))
        for j, reps in enumerate(spec.profiling.train_items)
    ]
    test_sessions = [
        _collect_session(spec, reps, derive_seed(seed, "test-session", j))
        for j, reps in enumerate(spec.profiling.test_items)
    ]
    x_test = np.concatenate([s[0] for s in test_sessions])
    y_test = np.concatenate([s[1] for s in test_sessions])
    test_stimuli = [st for s in test_sessions for st in s[2]]

    stages = []
    final_model = None
    for stage_idx, n_sessions in enumerate(spec.profiling.stages()):
        x_pool = np.concatenate([train_sessions[j][0] for j in range(n_sessions)])
        y_pool = np.concatenate([train_sessions[j][1] for j in range(n_sessions)])
        rng = np.random.default_rng(derive_seed(seed, "stage-split", stage_idx))
        order = rng.permutation(len(x_pool))
        n_train = int(0.8 * len(order))
        n_val = max(1, int(0.1 * len(order)))
        tr = order[:n_train]
        va = order[n_train : n_train + n_val]
        model = init_model(
            CnnSpec((INPUT_SIDE, INPUT_SIDE), n_letters,
                    conv_channels=LETTER_CONV_CHANNELS, fc_sizes=LETTER_FC_SIZES),
            seed=derive_seed(seed, "init", stage_idx),
        )
        result = train(
            model,
            (x_pool[tr], y_pool[tr]),
            (x_pool[va], y_pool[va]),
            TrainConfig(
                learning_rate=spec.resources.learning_rate,
                epochs=spec.resources.epochs,
                batch_size=spec.resources.batch_size,
                seed=derive_seed(seed, "train", stage_idx),
            ),
        )
        preds = np.empty(len(x_test), dtype=np.int64)
        for i in range(0, len(x_test), 512):
            preds[i : i + 512] = result.model.predict_batch(x_test[i : i + 512])[0]
        stage_acc = float((preds == y_test).mean())
        stages.append({
            "name": f"training{stage_idx + 1}",
            "n_sessions": int(n_sessions),
            "val_accuracy": result.best_val_accuracy,
            "test_accuracy": stage_acc,
        })
        final_model = result.model
        final_preds = preds

    per_scale = {}
    for s in scales:
        idx = [i for i, st in enumerate(test_stimuli) if st.scale == s]
        per_scale[s] = float((final_preds[idx] == y_test[idx]).mean())
    per_letter = {}
    confusion = np.zeros((n_letters, n_letters), dtype=np.int64)
    for i, st in enumerate(test_stimuli):
        confusion[y_test[i], final_preds[i]] += 1
    for li, letter in enumerate(letters):
        row = confusion[li]
        per_letter[letter] = float(row[li] / row.sum()) if row.sum() else float("nan")

    return TestbedReport(
        letters=letters,
        scales=scales,
        per_scale_accuracy=per_scale,
        per_letter_accuracy=per_letter,
        confusion=confusion,
        stages=stages,
        overall_accuracy=float((final_preds == y_test).mean()),
        metadata={
            "seed": seed,
            "profile": spec.hardware.profile.name,
            "sample_rate_hz": spec.hardware.sample_rate_hz,
            "target_snr_db": spec.hardware.target_snr_db,
            "coupling_gain": spec.hardware.coupling_gain,
            "distance_r": spec.hardware.distance_r,
            "epochs": spec.resources.epochs,
        },
    )
