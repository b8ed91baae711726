"""Labeled emage dataset construction.

A session replays the profiling loop end to end in simulation: render a
screen, radiate it, capture, reconstruct, crop, save labeled items.  Grid
sessions tile the screen with digits (the multi-crop scheme: one captured
screen yields rows x cols labeled crops); code sessions render mock push
messages and save the six-digit code region.

Dataset layout on disk:

    <root>/sessions/<id>/manifest.json
    <root>/sessions/<id>/items/item_000000.pgm
    <root>/splits/<name>.json

Manifests and items are byte-identical across runs with equal seeds.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .emanator import ChannelModel, emanate
from .emanator import capture as capture_iq
from .errors import ValidationError
from .profiles import PhoneProfile
from .raster import blank_screen, paste, render_digit_grid, render_security_message
from .receiver import Emage, reconstruct
from .util import derive_seed, dump_json, load_json

# A session whose crops have lower mean dynamic range than this is flagged
# as a failed acquisition and excluded from training by default.
QUALITY_MIN_DYNAMIC_RANGE = 0.2


@dataclass(frozen=True)
class SessionItem:
    path: str  # relative to the session directory
    label: str
    crop: tuple[int, int, int, int]  # (x, y, w, h) in full-emage coordinates
    screen: int

    def as_dict(self) -> dict:
        x, y, w, h = self.crop
        return {"path": self.path, "label": self.label,
                "crop": {"x": x, "y": y, "w": w, "h": h}, "screen": self.screen}


@dataclass
class Session:
    id: str
    profile: str
    kind: str  # "grid" | "code"
    seed: int
    directory: Path
    items: list[SessionItem]
    quality: dict
    params: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return bool(self.quality.get("flagged", False))

    def item_path(self, item: SessionItem) -> Path:
        return self.directory / item.path

    def manifest(self) -> dict:
        return {
            "id": self.id,
            "profile": self.profile,
            "kind": self.kind,
            "seed": self.seed,
            "params": self.params,
            "quality": self.quality,
            "items": [it.as_dict() for it in self.items],
        }

    def save_manifest(self) -> None:
        dump_json(self.directory / "manifest.json", self.manifest())


def load_session(directory) -> Session:
    directory = Path(directory)
    m = load_json(directory / "manifest.json")
    items = [
        SessionItem(
            path=d["path"],
            label=d["label"],
            crop=(d["crop"]["x"], d["crop"]["y"], d["crop"]["w"], d["crop"]["h"]),
            screen=int(d["screen"]),
        )
        for d in m["items"]
    ]
    return Session(
        id=m["id"], profile=m["profile"], kind=m["kind"], seed=int(m["seed"]),
        directory=directory, items=items, quality=m["quality"], params=m.get("params", {}),
    )


def grid_crop(emage: Emage, rows: int, cols: int, cell_w: int, cell_h: int) -> list[Emage]:
    """Row-major rows x cols crops of cell_w x cell_h from the emage origin."""
    if rows * cell_h > emage.height_px or cols * cell_w > emage.width_px:
        raise ValidationError(
            f"{rows}x{cols} cells of {cell_w}x{cell_h} overflow emage "
            f"{emage.width_px}x{emage.height_px}"
        )
    return [
        emage.crop(c * cell_w, r * cell_h, cell_w, cell_h)
        for r in range(rows)
        for c in range(cols)
    ]


def _balanced_digits(total: int, rng: np.random.Generator) -> list[str]:
    """Shuffled digit plan with per-class counts equal within one."""
    base = total // 10
    counts = np.full(10, base)
    extra = rng.choice(10, size=total - 10 * base, replace=False)
    counts[extra] += 1
    plan = np.repeat(np.arange(10), counts)
    rng.shuffle(plan)
    return [str(d) for d in plan]


def _crop_dynamic_range(pixels: np.ndarray) -> float:
    return float(pixels.max() - pixels.min())


def _finalize(session: Session, ranges: list[float]) -> Session:
    mean_range = float(np.mean(ranges)) if ranges else 0.0
    session.quality = {
        "mean_dynamic_range": mean_range,
        "flagged": bool(mean_range < QUALITY_MIN_DYNAMIC_RANGE),
    }
    session.save_manifest()
    return session


def _map_indexed(fn, count: int, workers: int) -> list:
    """fn(i) for i in range(count), optionally on a thread pool.

    Results come back in index order and each call is independently
    seeded, so the output is byte-identical for any worker count.
    """
    if workers <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def run_session(
    profile: PhoneProfile,
    root,
    session_id: str | None = None,
    rows: int = 40,
    cols: int = 40,
    screens: int = 20,
    seed: int = 0,
    frames: int | None = 1,
    target_snr_db: float | None = None,
    distance_r: float = 1.0,
    contrast: float = 1.0,
    workers: int = 1,
) -> Session:
    """Simulated multi-crop grid acquisition session.

    Each screen renders a fresh seeded digit arrangement (class-balanced
    across the whole session), goes through emanate/capture/reconstruct at
    the profile defaults, and is cropped into rows x cols labeled items.
    """
    if target_snr_db is None:
        target_snr_db = profile.default_snr_db
    frames = 1 if frames is None else frames
    cell_w, cell_h = profile.grid_cell(rows, cols)
    if cell_w < 1 or cell_h < 1:
        raise ValidationError(f"grid {rows}x{cols} too fine for profile {profile.name}")
    crop_w, crop_h = profile.crop_cell(rows, cols)
    timing = profile.timing()
    leak_model = profile.leakage(coupling_gain=1.0)
    recon = profile.recon_params()

    session_id = session_id or f"grid-{seed:d}"
    directory = Path(root) / "sessions" / session_id
    rng = np.random.default_rng(derive_seed(seed, "digit-plan"))
    plan = _balanced_digits(rows * cols * screens, rng)

    def one_screen(s: int):
        digits = plan[s * rows * cols : (s + 1) * rows * cols]
        grid = render_digit_grid(rows, cols, digits, cols * cell_w, rows * cell_h, contrast)
        screen = paste(blank_screen(profile.visible_w, profile.visible_h), grid, 0, 0)
        leak = emanate(screen, timing, leak_model, frames=frames)
        recording = capture_iq(
            leak,
            ChannelModel(
                distance_r=distance_r,
                target_snr_db=target_snr_db,
                rng_seed=derive_seed(seed, "screen", s),
            ),
            sample_rate_hz=profile.sample_rate_hz,
            bandwidth_hz=profile.bandwidth_hz,
        )
        return reconstruct(recording, recon), digits

    items: list[SessionItem] = []
    ranges: list[float] = []
    for s, (emage, digits) in enumerate(_map_indexed(one_screen, screens, workers)):
        for idx, crop in enumerate(grid_crop(emage, rows, cols, crop_w, crop_h)):
            n = len(items)
            rel = f"items/item_{n:06d}.pgm"
            crop.save(directory / rel)
            r, c = divmod(idx, cols)
            items.append(SessionItem(
                path=rel,
                label=digits[idx],
                crop=(c * crop_w, r * crop_h, crop_w, crop_h),
                screen=s,
            ))
            ranges.append(_crop_dynamic_range(crop.pixels))

    session = Session(
        id=session_id, profile=profile.name, kind="grid", seed=seed,
        directory=directory, items=items, quality={},
        params={"rows": rows, "cols": cols, "screens": screens, "frames": frames,
                "target_snr_db": target_snr_db, "distance_r": distance_r},
    )
    return _finalize(session, ranges)


def run_code_session(
    profile: PhoneProfile,
    root,
    session_id: str | None = None,
    n_codes: int = 200,
    seed: int = 0,
    frames: int | None = 2,
    target_snr_db: float | None = None,
    distance_r: float = 1.0,
    contrast: float = 1.0,
    workers: int = 1,
) -> Session:
    """Simulated security-code test session.

    Each code renders as a mock push message, the frame is captured twice
    and averaged at reconstruction, and the code region is saved as one
    labeled item (six digits wide, e.g. 126 x 31 on the default profile).
    """
    if target_snr_db is None:
        target_snr_db = profile.default_snr_db
    frames = 2 if frames is None else frames
    digit_w = profile.grid_content_w // 40
    digit_h = profile.grid_content_h // 40
    timing = profile.timing()
    leak_model = profile.leakage(coupling_gain=1.0)
    recon = profile.recon_params()

    session_id = session_id or f"code-{seed:d}"
    directory = Path(root) / "sessions" / session_id
    rng = np.random.default_rng(derive_seed(seed, "codes"))
    codes = ["".join(str(d) for d in rng.integers(0, 10, 6)) for _ in range(n_codes)]

    def one_code(i: int):
        screen = render_security_message(
            codes[i], profile.visible_w, profile.visible_h,
            digit_w=digit_w, digit_h=digit_h, x_align=profile.x_align, contrast=contrast,
        )
        leak = emanate(screen, timing, leak_model, frames=frames)
        recording = capture_iq(
            leak,
            ChannelModel(
                distance_r=distance_r,
                target_snr_db=target_snr_db,
                rng_seed=derive_seed(seed, "code", i),
            ),
            sample_rate_hz=profile.sample_rate_hz,
            bandwidth_hz=profile.bandwidth_hz,
        )
        emage = reconstruct(recording, recon)
        region = screen.annotations[0]
        ex = round(region.x * profile.x_scale)
        ew = round(region.w * profile.x_scale)
        return emage.crop(ex, region.y, ew, region.h), (ex, region.y, ew, region.h)

    items: list[SessionItem] = []
    ranges: list[float] = []
    for i, (crop, rect) in enumerate(_map_indexed(one_code, n_codes, workers)):
        rel = f"items/item_{i:06d}.pgm"
        crop.save(directory / rel)
        items.append(SessionItem(path=rel, label=codes[i], crop=rect, screen=i))
        ranges.append(_crop_dynamic_range(crop.pixels))

    session = Session(
        id=session_id, profile=profile.name, kind="code", seed=seed,
        directory=directory, items=items, quality={},
        params={"n_codes": n_codes, "frames": frames,
                "target_snr_db": target_snr_db, "distance_r": distance_r},
    )
    return _finalize(session, ranges)


@dataclass(frozen=True)
class SplitPlan:
    """How train/val/test material is partitioned.

    "session" mode holds out whole sessions for testing; "fraction" mode
    splits one item pool by the given fractions.
    """

    mode: str
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    train_sessions: tuple[str, ...] = ()
    test_sessions: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mode not in ("fraction", "session"):
            raise ValidationError(f"unknown split mode {self.mode!r}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValidationError(f"fractions {self.fractions} must sum to 1")
        if set(self.train_sessions) & set(self.test_sessions):
            raise ValidationError("train and test session lists overlap")


@dataclass
class TrainingSet:
    name: str
    plan: SplitPlan
    train: list[str]  # item paths relative to the dataset root
    val: list[str]
    test_internal: list[str]

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "mode": self.plan.mode,
            "fractions": list(self.plan.fractions),
            "train_sessions": list(self.plan.train_sessions),
            "test_sessions": list(self.plan.test_sessions),
            "train": self.train,
            "val": self.val,
            "test_internal": self.test_internal,
        }

    def save(self, path) -> None:
        dump_json(path, self.as_dict())


def load_training_set(path) -> TrainingSet:
    d = load_json(path)
    plan = SplitPlan(
        mode=d["mode"],
        fractions=tuple(d["fractions"]),
        train_sessions=tuple(d["train_sessions"]),
        test_sessions=tuple(d["test_sessions"]),
    )
    return TrainingSet(d["name"], plan, d["train"], d["val"], d["test_internal"])


def build_training_sets(
    sessions: list[Session],
    schedule: tuple[int, ...] = (1, 3, 5, 7),
    n_test: int = 2,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    include_flagged: bool = False,
) -> list[TrainingSet]:
    """Growing training sets over a fixed held-out test pair.

    Sessions sort by id; the last n_test become the cross-session test set
    for every training set, and Training k takes the first schedule[k]
    sessions of the remainder (so the sets are nested).  Within each
    training set the items split by the 80/10/10 fractions.
    """
    usable = sorted([s for s in sessions if include_flagged or not s.flagged], key=lambda s: s.id)
    need = max(schedule) + n_test
    if len(usable) < need:
        raise ValidationError(
            f"schedule {schedule} with {n_test} test sessions needs {need} usable sessions, "
            f"got {len(usable)}"
        )
    test_sessions = usable[len(usable) - n_test :] if n_test else []
    pool = usable[: len(usable) - n_test] if n_test else usable

    out = []
    for i, k in enumerate(schedule):
        chosen = pool[:k]
        paths = [f"sessions/{s.id}/{it.path}" for s in chosen for it in s.items]
        rng = np.random.default_rng(derive_seed(seed, "split", k))
        order = rng.permutation(len(paths))
        n_train = int(len(paths) * fractions[0])
        n_val = int(len(paths) * fractions[1])
        plan = SplitPlan(
            mode="session",
            fractions=fractions,
            train_sessions=tuple(s.id for s in chosen),
            test_sessions=tuple(s.id for s in test_sessions),
        )
        out.append(TrainingSet(
            name=f"training{i + 1}",
            plan=plan,
            train=[paths[j] for j in order[:n_train]],
            val=[paths[j] for j in order[n_train : n_train + n_val]],
            test_internal=[paths[j] for j in order[n_train + n_val :]],
        ))
    return out


def load_items(root, paths: list[str], label_of=None) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Load item PGMs into (images, labels, raw_labels).

    ``label_of`` maps the manifest label string to a class index; the
    default works for single digits.
    """
    root = Path(root)
    if label_of is None:
        label_of = int
    images = []
    raw = []
    for rel in paths:
        parts = Path(rel).parts  # sessions/<id>/items/<file>
        if len(parts) < 4 or parts[0] != "sessions":
            raise ValidationError(f"item path {rel!r} is not dataset-relative")
        em = Emage.load(root / rel)
        images.append(em.pixels)
        raw.append(_label_from_manifest(root / parts[0] / parts[1], "/".join(parts[2:])))
    labels = [label_of(lab) for lab in raw]
    return np.stack(images), np.asarray(labels, dtype=np.int64), raw


_MANIFEST_CACHE: dict[Path, dict[str, str]] = {}


def _label_from_manifest(session_dir: Path, rel_item: str) -> str:
    session_dir = Path(session_dir)
    table = _MANIFEST_CACHE.get(session_dir)
    if table is None:
        m = load_json(session_dir / "manifest.json")
        table = {d["path"]: d["label"] for d in m["items"]}
        _MANIFEST_CACHE[session_dir] = table
    return table[rel_item]
