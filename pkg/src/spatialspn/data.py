"""Dataset I/O and synthetic scene generation.

Images are lists of part detections (part id plus center pixel); the file
format is line oriented and lossless. The synthetic generator plants part
and pair-relation rules per class so that structure learning and spatial
training have verifiable ground truth; it stands in for detector output,
which this package does not produce.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, SyntheticSpecError, VocabularyMismatchError
from .spatial import Location, TOKEN_RELATIONS, Relation

log = logging.getLogger(__name__)

DATA_HEADER = "spn-data v1"


@dataclass(frozen=True)
class Detection:
    part: int
    x: float
    y: float

    def location(self) -> Location:
        return Location(self.x, self.y)


@dataclass
class ImageRecord:
    id: str
    klass: str
    width: int
    height: int
    detections: list[Detection] = field(default_factory=list)

    def parts_present(self) -> set[int]:
        return {d.part for d in self.detections}

    def location_of(self, part: int) -> Location | None:
        for det in self.detections:
            if det.part == part:
                return det.location()
        return None


@dataclass
class Dataset:
    vocabulary_size: int
    classes: list[str]
    records: list[ImageRecord] = field(default_factory=list)
    dedup_warnings: int = 0

    def by_class(self, klass: str) -> list[ImageRecord]:
        return [r for r in self.records if r.klass == klass]

    def validate_against_vocabulary(self, vocabulary_size: int) -> None:
        if self.vocabulary_size > vocabulary_size:
            raise VocabularyMismatchError(
                f"dataset uses {self.vocabulary_size} parts, model knows {vocabulary_size}"
            )


def _dedup_detections(detections) -> tuple[list[Detection], int]:
    """Keep the first detection of each part, in input order.

    An image carries at most one location per part; later duplicates are
    dropped and counted so loaders can surface a warning.
    """
    seen = set()
    kept = []
    dropped = 0
    for det in detections:
        if det.part in seen:
            dropped += 1
            continue
        seen.add(det.part)
        kept.append(det)
    return kept, dropped


def save_dataset(dataset: Dataset, path) -> None:
    lines = [f"{DATA_HEADER} t={dataset.vocabulary_size} classes={len(dataset.classes)}"]
    for klass in dataset.classes:
        lines.append(f"class {klass}")
    for record in dataset.records:
        lines.append(f"img {record.id} {record.klass} {record.width} {record.height}")
        for det in record.detections:
            lines.append(f"det {det.part} {det.x:.17g} {det.y:.17g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(0, "empty dataset file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "spn-data" or header[1] != "v1":
        raise DataFormatError(1, "expected 'spn-data v1 t=<parts> classes=<k>' header")
    try:
        vocab = int(header[2].removeprefix("t="))
        n_classes = int(header[3].removeprefix("classes="))
    except ValueError:
        raise DataFormatError(1, "bad header counts") from None

    classes: list[str] = []
    records: list[ImageRecord] = []
    current: ImageRecord | None = None
    pending: list[Detection] = []
    warnings = 0

    def flush():
        nonlocal warnings, current, pending
        if current is not None:
            deduped, dropped = _dedup_detections(pending)
            warnings += dropped
            current.detections = deduped
            records.append(current)
        current, pending = None, []

    for line_no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        tag = tokens[0]
        if tag == "class":
            if len(tokens) != 2:
                raise DataFormatError(line_no, "class line needs one name")
            classes.append(tokens[1])
        elif tag == "img":
            if len(tokens) != 5:
                raise DataFormatError(line_no, "img line needs '<id> <class> <w> <h>'")
            flush()
            _, img_id, klass, w, h = tokens
            if klass not in classes:
                raise DataFormatError(line_no, f"unknown class {klass!r}")
            try:
                width, height = int(w), int(h)
            except ValueError:
                raise DataFormatError(line_no, "bad image size") from None
            if width <= 0 or height <= 0:
                raise DataFormatError(line_no, "image size must be positive")
            current = ImageRecord(id=img_id, klass=klass, width=width, height=height)
        elif tag == "det":
            if current is None:
                raise DataFormatError(line_no, "det line before any img line")
            if len(tokens) != 4:
                raise DataFormatError(line_no, "det line needs '<part> <x> <y>'")
            try:
                part = int(tokens[1])
                x, y = float(tokens[2]), float(tokens[3])
            except ValueError:
                raise DataFormatError(line_no, "bad detection fields") from None
            if not (0 <= part < vocab):
                raise DataFormatError(line_no, f"part {part} outside vocabulary of {vocab}")
            if not (math.isfinite(x) and math.isfinite(y)):
                raise DataFormatError(line_no, "detection coordinates must be finite")
            if not (0 <= x < current.width and 0 <= y < current.height):
                raise DataFormatError(
                    line_no,
                    f"detection at ({x}, {y}) outside image {current.width}x{current.height}",
                )
            pending.append(Detection(part, x, y))
        else:
            raise DataFormatError(line_no, f"unknown line tag {tag!r}")
    flush()

    if len(classes) != n_classes:
        raise DataFormatError(1, f"header declares {n_classes} classes, file has {len(classes)}")
    if warnings:
        log.warning("dropped %d duplicate part detections while loading %s", warnings, path)
    return Dataset(vocabulary_size=vocab, classes=classes, records=records, dedup_warnings=warnings)


# ----------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class PartRule:
    klass: str
    part: int
    rect: tuple[float, float, float, float]  # normalized x0, y0, x1, y1


@dataclass(frozen=True)
class PairRule:
    klass: str
    part_a: int
    part_b: int
    relation: Relation
    rect: tuple[float, float, float, float]
    roam: float = 0.0  # uniform offset applied to the whole rule box, per image


@dataclass
class SyntheticSpec:
    classes: list[str]
    width: int = 100
    height: int = 100
    vocabulary_size: int = 8
    bg_rate: float = 0.0
    drop_rate: float = 0.0
    jitter: float = 2.0
    part_rules: list[PartRule] = field(default_factory=list)
    pair_rules: list[PairRule] = field(default_factory=list)
    images_per_class: int = 100

    def validate(self) -> None:
        if len(self.classes) < 1:
            raise SyntheticSpecError("at least one class required")
        if not (0 <= self.bg_rate < 1 and 0 <= self.drop_rate < 1):
            raise SyntheticSpecError("bg_rate and drop_rate must lie in [0, 1)")
        if self.width < 4 or self.height < 4:
            raise SyntheticSpecError("image must be at least 4x4 pixels")
        for rule in self.part_rules:
            self._check_rule(rule, need_split=False)
        for rule in self.pair_rules:
            self._check_rule(rule, need_split=True)
            if not (0 <= rule.part_a < self.vocabulary_size) or not (
                0 <= rule.part_b < self.vocabulary_size
            ):
                raise SyntheticSpecError(f"pair rule uses part outside vocabulary: {rule}")
            if rule.part_a == rule.part_b:
                raise SyntheticSpecError(f"pair rule needs two distinct parts: {rule}")

    def _check_rule(self, rule, need_split: bool) -> None:
        x0, y0, x1, y1 = rule.rect
        if not (0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1):
            raise SyntheticSpecError(f"rule region {rule.rect} is not a valid sub-rectangle")
        px = (x1 - x0) * self.width
        py = (y1 - y0) * self.height
        # a pair rule splits its box in two along the relation axis
        minimum = 6.0 if need_split else 2.0
        if px < minimum or py < minimum:
            raise SyntheticSpecError(
                f"rule region {rule.rect} too small for jittered placement"
            )
        if isinstance(rule, PartRule) and not (0 <= rule.part < self.vocabulary_size):
            raise SyntheticSpecError(f"part rule uses part outside vocabulary: {rule}")


def _clipped_normal(rng, center, sigma, lo, hi):
    value = center + rng.normal(0.0, sigma)
    return min(max(value, lo), hi)


def _place_pair(rng, spec: SyntheticSpec, rule: PairRule):
    """Positions for both parts; the relation holds strictly by construction."""
    x0, y0, x1, y1 = rule.rect
    if rule.roam:
        dx = float(rng.uniform(-rule.roam, rule.roam))
        dy = float(rng.uniform(-rule.roam, rule.roam))
        dx = min(max(dx, -x0), 1.0 - x1)
        dy = min(max(dy, -y0), 1.0 - y1)
        x0, x1, y0, y1 = x0 + dx, x1 + dx, y0 + dy, y1 + dy
    bx0, bx1 = x0 * spec.width, x1 * spec.width
    by0, by1 = y0 * spec.height, y1 * spec.height
    sigma = spec.jitter

    def halves(lo, hi):
        mid = (lo + hi) / 2.0
        first = (lo, mid - 1.0)
        second = (mid + 1.0, hi - 1e-9)
        return first, second

    if rule.relation in (Relation.LEFT_OF, Relation.RIGHT_OF):
        (lo_a, hi_a), (lo_b, hi_b) = halves(bx0, bx1)
        if rule.relation == Relation.RIGHT_OF:
            (lo_a, hi_a), (lo_b, hi_b) = (lo_b, hi_b), (lo_a, hi_a)
        xa = _clipped_normal(rng, (lo_a + hi_a) / 2, sigma, lo_a, hi_a)
        xb = _clipped_normal(rng, (lo_b + hi_b) / 2, sigma, lo_b, hi_b)
        ya = _clipped_normal(rng, (by0 + by1) / 2, sigma, by0, by1 - 1e-9)
        yb = _clipped_normal(rng, (by0 + by1) / 2, sigma, by0, by1 - 1e-9)
    else:
        (lo_a, hi_a), (lo_b, hi_b) = halves(by0, by1)
        if rule.relation == Relation.BELOW:
            (lo_a, hi_a), (lo_b, hi_b) = (lo_b, hi_b), (lo_a, hi_a)
        ya = _clipped_normal(rng, (lo_a + hi_a) / 2, sigma, lo_a, hi_a)
        yb = _clipped_normal(rng, (lo_b + hi_b) / 2, sigma, lo_b, hi_b)
        xa = _clipped_normal(rng, (bx0 + bx1) / 2, sigma, bx0, bx1 - 1e-9)
        xb = _clipped_normal(rng, (bx0 + bx1) / 2, sigma, bx0, bx1 - 1e-9)
    return (xa, ya), (xb, yb)


def generate_synthetic(spec: SyntheticSpec, rng) -> Dataset:
    """Sample a dataset realizing the spec's planted rules.

    Each rule fires with probability 1 - drop_rate; background parts appear
    uniformly at bg_rate. Planted pair relations hold exactly whenever both
    parts are placed (checked property, not best effort)."""
    spec.validate()
    records = []
    for klass in spec.classes:
        part_rules = [r for r in spec.part_rules if r.klass == klass]
        pair_rules = [r for r in spec.pair_rules if r.klass == klass]
        for i in range(spec.images_per_class):
            detections = []
            placed = set()
            for rule in pair_rules:
                if rng.random() < spec.drop_rate:
                    continue
                (xa, ya), (xb, yb) = _place_pair(rng, spec, rule)
                if rule.part_a not in placed:
                    detections.append(Detection(rule.part_a, xa, ya))
                    placed.add(rule.part_a)
                if rule.part_b not in placed:
                    detections.append(Detection(rule.part_b, xb, yb))
                    placed.add(rule.part_b)
            for rule in part_rules:
                if rng.random() < spec.drop_rate or rule.part in placed:
                    continue
                x0, y0, x1, y1 = rule.rect
                cx = (x0 + x1) / 2 * spec.width
                cy = (y0 + y1) / 2 * spec.height
                x = _clipped_normal(rng, cx, spec.jitter, x0 * spec.width, x1 * spec.width - 1e-9)
                y = _clipped_normal(rng, cy, spec.jitter, y0 * spec.height, y1 * spec.height - 1e-9)
                detections.append(Detection(rule.part, x, y))
                placed.add(rule.part)
            if spec.bg_rate > 0:
                for part in range(spec.vocabulary_size):
                    if part in placed:
                        continue
                    if rng.random() < spec.bg_rate:
                        x = float(rng.uniform(0, spec.width - 1e-9))
                        y = float(rng.uniform(0, spec.height - 1e-9))
                        detections.append(Detection(part, x, y))
            records.append(
                ImageRecord(
                    id=f"{klass}_{i:05d}",
                    klass=klass,
                    width=spec.width,
                    height=spec.height,
                    detections=detections,
                )
            )
    return Dataset(vocabulary_size=spec.vocabulary_size, classes=list(spec.classes), records=records)


# ------------------------------------------------------------------- presets


def mirror_pair_spec(images_per_class=200, bg_rate=0.05, drop_rate=0.1) -> SyntheticSpec:
    """Two classes with identical part marginals and opposite relations.

    The discriminating pair (0, 1) lives in a tight central box: only a cut
    through the box can separate the two parts, so nearly every learnable
    region hosts the pair whole and its left/right relation carries the class
    signal. Part activations are class-independent throughout. The pair rule
    is planted twice: each copy drops independently at drop_rate and the
    second only fires when the first dropped, so the relation is almost
    always observable while per-rule dropout stays at the stated rate."""
    box = (0.46, 0.35, 0.54, 0.65)
    pair_rules = []
    for _ in range(2):
        pair_rules.append(PairRule("west", 0, 1, Relation.LEFT_OF, box))
        pair_rules.append(PairRule("east", 0, 1, Relation.RIGHT_OF, box))
    return SyntheticSpec(
        classes=["west", "east"],
        vocabulary_size=6,
        bg_rate=bg_rate,
        drop_rate=drop_rate,
        jitter=2.0,
        pair_rules=pair_rules,
        part_rules=[
            PartRule("west", 2, (0.05, 0.05, 0.30, 0.30)),
            PartRule("east", 2, (0.05, 0.05, 0.30, 0.30)),
            PartRule("west", 3, (0.70, 0.70, 0.95, 0.95)),
            PartRule("east", 3, (0.70, 0.70, 0.95, 0.95)),
        ],
        images_per_class=images_per_class,
    )


def split_grid_spec(images_per_class=100) -> SyntheticSpec:
    """Two-level planted partition: a vertical cut at 0.4 separates the classes.

    Class 'lo' keeps part 0 left of the cut and part 1 right of it; class 'hi'
    swaps them, so only the exact planted cut classifies perfectly. A second
    level (parts 2 and 3 swapping top/bottom inside the left region, with
    cross-boundary jitter) plants recursive structure without creating another
    perfect whole-image cut."""
    return SyntheticSpec(
        classes=["lo", "hi"],
        vocabulary_size=6,
        bg_rate=0.02,
        drop_rate=0.02,
        jitter=9.0,
        part_rules=[
            PartRule("lo", 0, (0.00, 0.00, 0.40, 1.00)),
            PartRule("lo", 1, (0.40, 0.00, 1.00, 1.00)),
            PartRule("hi", 0, (0.40, 0.00, 1.00, 1.00)),
            PartRule("hi", 1, (0.00, 0.00, 0.40, 1.00)),
            PartRule("lo", 2, (0.00, 0.00, 0.40, 0.55)),
            PartRule("lo", 3, (0.00, 0.45, 0.40, 1.00)),
            PartRule("hi", 2, (0.00, 0.45, 0.40, 1.00)),
            PartRule("hi", 3, (0.00, 0.00, 0.40, 0.55)),
        ],
        images_per_class=images_per_class,
    )


def shared_halves_spec(images_per_class=80, bg_rate=0.02, drop_rate=0.05) -> SyntheticSpec:
    """Four classes; the first two share a planted pair structure in the top half.

    Classes n0 and n1 both plant pair (4, 5) ABOVE in the top half and differ
    by the relation of pair (0, 1) in the bottom half; classes s0 and s1 use
    pair (2, 3) in the bottom half instead. The shared top-half gadget is the
    target of joint training."""
    top = (0.20, 0.05, 0.80, 0.45)
    bottom = (0.20, 0.55, 0.80, 0.95)
    return SyntheticSpec(
        classes=["n0", "n1", "s0", "s1"],
        vocabulary_size=8,
        bg_rate=bg_rate,
        drop_rate=drop_rate,
        jitter=2.0,
        pair_rules=[
            PairRule("n0", 4, 5, Relation.ABOVE, top),
            PairRule("n1", 4, 5, Relation.ABOVE, top),
            PairRule("n0", 0, 1, Relation.LEFT_OF, bottom),
            PairRule("n1", 0, 1, Relation.RIGHT_OF, bottom),
            PairRule("s0", 2, 3, Relation.ABOVE, bottom),
            PairRule("s1", 2, 3, Relation.BELOW, bottom),
            PairRule("s0", 6, 7, Relation.LEFT_OF, top),
            PairRule("s1", 6, 7, Relation.RIGHT_OF, top),
        ],
        images_per_class=images_per_class,
    )


def strip_grid_spec(n_strips=5, parts_per_strip=10, images_per_class=60) -> SyntheticSpec:
    """Parts confined to vertical strips; two classes swap the first two strips.

    Every part is present in nearly every image, so at whole-image scale all
    n*(n-1)/2 pairs co-occur, while each strip only hosts its own parts. Used
    to demonstrate the hierarchical reduction in modeled pair count."""
    vocab = n_strips * parts_per_strip
    rules = []
    for klass in ("a", "b"):
        for strip in range(n_strips):
            source = strip
            if klass == "b" and strip == 0:
                source = 1
            elif klass == "b" and strip == 1:
                source = 0
            x0, x1 = strip / n_strips, (strip + 1) / n_strips
            for j in range(parts_per_strip):
                part = source * parts_per_strip + j
                # spread parts vertically so each strip has internal geometry
                y0 = (j % parts_per_strip) / parts_per_strip
                y1 = min(1.0, y0 + 1.0 / parts_per_strip)
                rules.append(PartRule(klass, part, (x0 + 0.01, max(y0, 0.0) + 0.001, x1 - 0.01, y1 - 0.001)))
    return SyntheticSpec(
        classes=["a", "b"],
        width=200,
        height=200,
        vocabulary_size=vocab,
        bg_rate=0.0,
        drop_rate=0.0,
        jitter=3.0,
        part_rules=rules,
        images_per_class=images_per_class,
    )


PRESETS = {
    "mirror": mirror_pair_spec,
    "split": split_grid_spec,
    "shared": shared_halves_spec,
    "strips": strip_grid_spec,
}


def preset_spec(name: str, images_per_class: int | None = None) -> SyntheticSpec:
    if name not in PRESETS:
        raise SyntheticSpecError(f"unknown preset {name!r}; choices: {sorted(PRESETS)}")
    if images_per_class is None:
        return PRESETS[name]()
    return PRESETS[name](images_per_class=images_per_class)


# --------------------------------------------------------------- spec files


def load_synthetic_spec(path) -> SyntheticSpec:
    """Parse a 'synthspec v1' key-value file with rule lines."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split() != ["synthspec", "v1"]:
        raise SyntheticSpecError("expected 'synthspec v1' header")
    fields = {"classes": [], "part_rules": [], "pair_rules": []}
    scalars = {}
    for line_no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        tag = tokens[0]
        try:
            if tag == "class":
                fields["classes"].append(tokens[1])
            elif tag in ("width", "height", "vocab", "images_per_class"):
                scalars[tag] = int(tokens[1])
            elif tag in ("bg_rate", "drop_rate", "jitter"):
                scalars[tag] = float(tokens[1])
            elif tag == "rule":
                klass, kind = tokens[1], tokens[2]
                if kind == "part":
                    part = int(tokens[3])
                    rect = tuple(float(t) for t in tokens[4:8])
                    fields["part_rules"].append(PartRule(klass, part, rect))
                elif kind == "pair":
                    a, b = int(tokens[3]), int(tokens[4])
                    rel = TOKEN_RELATIONS[tokens[5]]
                    rect = tuple(float(t) for t in tokens[6:10])
                    fields["pair_rules"].append(PairRule(klass, a, b, rel, rect))
                else:
                    raise SyntheticSpecError(f"line {line_no}: unknown rule kind {kind!r}")
            else:
                raise SyntheticSpecError(f"line {line_no}: unknown tag {tag!r}")
        except (IndexError, ValueError, KeyError) as exc:
            raise SyntheticSpecError(f"line {line_no}: malformed line ({exc})") from None
    spec = SyntheticSpec(
        classes=fields["classes"],
        width=scalars.get("width", 100),
        height=scalars.get("height", 100),
        vocabulary_size=scalars.get("vocab", 8),
        bg_rate=scalars.get("bg_rate", 0.0),
        drop_rate=scalars.get("drop_rate", 0.0),
        jitter=scalars.get("jitter", 2.0),
        part_rules=fields["part_rules"],
        pair_rules=fields["pair_rules"],
        images_per_class=scalars.get("images_per_class", 100),
    )
    spec.validate()
    return spec
