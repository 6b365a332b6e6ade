"""Seven-category visual-page benchmark: spec, page building, sample generation and aggregation."""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import assets
from .errors import BenchSpecError, CompletenessError, ScoreRangeError
from .pages import PALETTE, PageElement, PageSpec, page_spec_from_dict, page_spec_to_dict, render_page, write_page
from .raster import RasterImage, read_png, write_png

CATEGORIES = (
    "visual-text",
    "inline-color",
    "inline-visual-reference",
    "object-counting",
    "style-transfer",
    "pose-control",
    "sketch-reference",
)
PROMPTS_PER_CATEGORY = 22
SAMPLES_PER_PROMPT = 4
REQUIRED_ANNOTATIONS = {"inline-color": "expected_rgb", "object-counting": "expected_count"}


@dataclass
class PromptSpec:
    id: str
    category: str
    page: PageSpec
    target: str
    annotations: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"id": self.id, "category": self.category, "target": self.target,
                "annotations": self.annotations, "page": page_spec_to_dict(self.page)}

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> PromptSpec:
        return cls(d["id"], d["category"], page_spec_from_dict(d["page"], base_dir), d.get("target", ""),
                   dict(d.get("annotations", {})))


@dataclass
class BenchSpec:
    prompts: list[PromptSpec]
    samples_per_prompt: int = SAMPLES_PER_PROMPT
    prompts_per_category: int | None = PROMPTS_PER_CATEGORY  # None skips the per-category count check
    name: str = "simple-v2v-desk"

    def by_category(self) -> dict[str, list[PromptSpec]]:
        out: dict[str, list[PromptSpec]] = {c: [] for c in CATEGORIES}
        for p in self.prompts:
            out.setdefault(p.category, []).append(p)
        return out

    def to_dict(self) -> dict:
        return {"name": self.name, "samples_per_prompt": self.samples_per_prompt,
                "prompts_per_category": self.prompts_per_category, "prompts": [p.to_dict() for p in self.prompts]}

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> BenchSpec:
        return cls([PromptSpec.from_dict(p, base_dir) for p in d["prompts"]], d.get("samples_per_prompt", 4),
                   d.get("prompts_per_category", PROMPTS_PER_CATEGORY), d.get("name", "simple-v2v-desk"))

    def validate(self, categories: Sequence[str] = CATEGORIES) -> BenchSpec:
        if self.samples_per_prompt < 1:
            raise BenchSpecError("samples_per_prompt must be >= 1")
        ids = Counter(p.id for p in self.prompts)
        dup = sorted(i for i, n in ids.items() if n > 1)
        if dup:
            raise BenchSpecError(f"duplicate prompt ids: {dup}")
        unknown = sorted({p.category for p in self.prompts} - set(CATEGORIES))
        if unknown:
            raise BenchSpecError(f"unknown categories {unknown}; expected {list(CATEGORIES)}")
        counts = Counter(p.category for p in self.prompts)
        for cat in categories if self.prompts_per_category is not None else ():
            if counts[cat] != self.prompts_per_category:
                raise BenchSpecError(f"category {cat!r} has {counts[cat]} prompts, expected {self.prompts_per_category}")
        extra = sorted(set(counts) - set(categories))
        if extra and self.prompts_per_category is not None:
            raise BenchSpecError(f"categories outside the selected set: {extra}")
        for p in self.prompts:
            key = REQUIRED_ANNOTATIONS.get(p.category)
            if key and key not in p.annotations:
                raise BenchSpecError(f"prompt {p.id} ({p.category}) lacks annotation {key!r}")
        return self


def load_bench_spec(path: str | Path) -> BenchSpec:
    path = Path(path)
    return BenchSpec.from_dict(json.loads(path.read_text()), path.parent)


def save_bench_spec(spec: BenchSpec, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(spec.to_dict(), indent=1) + "\n")
    return path


def shipped_bench_spec() -> BenchSpec:
    text = resources.files("v2v").joinpath("data/bench_spec.json").read_text()
    return BenchSpec.from_dict(json.loads(text))


# -- default prompt generator -------------------------------------------------

WORDS = ("OPEN", "SALE", "EXIT", "HELLO", "RIVER", "CLOUD", "SMILE", "NORTH", "PIZZA", "TRAIN", "MUSIC",
         "OCEAN", "STORM", "BREAD", "LIGHT", "DREAM", "PLANT", "SPACE", "CANDY", "TIGER", "STONE", "HOTEL")
OBJECTS = ("car", "cup", "hat", "bird", "kite", "shoe", "ball", "boat", "lamp", "vase", "fish")
SCENES = ("on grass", "on a desk", "in snow", "at night", "in a bowl", "on a shelf")
MARKS = ("O", "X", "#", "@", "*")
INK_COLORS = ("red", "blue", "green", "purple", "maroon", "navy", "teal", "black")


def default_bench_spec(seed: int = 42, prompts_per_category: int = PROMPTS_PER_CATEGORY) -> BenchSpec:
    """Procedural prompt set with the benchmark's structure (deterministic in ``seed``)."""
    rng = np.random.default_rng(seed)
    colors = [n for n in PALETTE if n != "white"]
    prompts: list[PromptSpec] = []
    n = prompts_per_category

    def pick(seq):
        return seq[int(rng.integers(len(seq)))]

    for i in range(n):
        word = WORDS[i % len(WORDS)]
        prompts.append(PromptSpec(f"visual-text-{i:02d}", "visual-text",
                                  PageSpec("rendered-text-page", [PageElement.text(word)]),
                                  f"a sign that reads {word}", {"expected_word": word}))
    for i in range(n):
        cname, obj = colors[i % len(colors)], pick(OBJECTS)
        rgb = PALETTE[cname]
        page = PageSpec("inline-color-prompt", [PageElement.text("a"), PageElement.swatch(rgb), PageElement.text(obj)])
        prompts.append(PromptSpec(f"inline-color-{i:02d}", "inline-color", page, f"a {cname} {obj}",
                                  {"expected_rgb": list(rgb), "color_name": cname, "object": obj}))
    for i in range(n):
        shape, cname = assets.ICON_SHAPES[i % len(assets.ICON_SHAPES)], pick(colors)
        desc = {"type": "icon", "shape": shape, "color": list(PALETTE[cname])}
        scene = pick(SCENES)
        page = PageSpec("inline-visual-reference", [PageElement.text("a"),
                                                    PageElement.thumbnail(assets.from_descriptor(desc), {"asset": desc}),
                                                    PageElement.text(scene)])
        prompts.append(PromptSpec(f"inline-visual-reference-{i:02d}", "inline-visual-reference", page,
                                  f"a {cname} {shape} {scene}", {"shape": shape, "rgb": list(PALETTE[cname])}))
    for i in range(n):
        count = 1 + i % 9
        mark, ink = pick(MARKS), pick(INK_COLORS)
        page = PageSpec("counting-display", [PageElement.repeat(mark, count, PALETTE[ink])])
        prompts.append(PromptSpec(f"object-counting-{i:02d}", "object-counting", page,
                                  f"exactly {count} {ink} objects",
                                  {"expected_count": count, "mark": mark, "mark_rgb": list(PALETTE[ink])}))
    for i in range(n):
        pattern = assets.STYLE_PATTERNS[i % len(assets.STYLE_PATTERNS)]
        c1, c2 = pick(colors), pick(colors)
        desc = {"type": "style", "pattern": pattern, "colors": [list(PALETTE[c1]), list(PALETTE[c2])]}
        subject = pick(assets.SKETCH_SUBJECTS)
        page = PageSpec("style-reference-page", [PageElement.thumbnail(assets.from_descriptor(desc), {"asset": desc}),
                                                 PageElement.text(f"a {subject}, this style")])
        prompts.append(PromptSpec(f"style-transfer-{i:02d}", "style-transfer", page,
                                  f"a {subject} rendered with {pattern} in {c1} and {c2}",
                                  {"pattern": pattern, "subject": subject}))
    for i in range(n):
        arms = [float(rng.integers(-80, 81)), float(rng.integers(-80, 81))]
        legs = float(rng.integers(5, 46))
        desc = {"type": "pose", "arm_left": arms[0], "arm_right": arms[1], "leg_spread": legs}
        page = PageSpec("structure-reference-page",
                        [PageElement.thumbnail(assets.from_descriptor(desc), {"asset": desc}),
                         PageElement.text("a dancer, this pose")])
        prompts.append(PromptSpec(f"pose-control-{i:02d}", "pose-control", page,
                                  "a dancer matching the skeleton pose", {"pose": desc}))
    for i in range(n):
        subject = assets.SKETCH_SUBJECTS[i % len(assets.SKETCH_SUBJECTS)]
        desc = {"type": "sketch", "subject": subject}
        page = PageSpec("structure-reference-page",
                        [PageElement.thumbnail(assets.from_descriptor(desc), {"asset": desc}),
                         PageElement.text("a photo of this")])
        prompts.append(PromptSpec(f"sketch-reference-{i:02d}", "sketch-reference", page,
                                  f"a photo of a {subject} following the sketch", {"subject": subject}))
    return BenchSpec(prompts, SAMPLES_PER_PROMPT, n)


# -- building and generation --------------------------------------------------

def build_bench(spec: BenchSpec, out_dir: str | Path, categories: Sequence[str] = CATEGORIES) -> list[dict]:
    """Render one page per prompt and write ``manifest.jsonl``; returns the manifest entries."""
    spec.validate(categories)
    out = Path(out_dir)
    (out / "pages").mkdir(parents=True, exist_ok=True)
    manifest = []
    for p in spec.prompts:
        png, boxes = write_page(p.page, out / "pages" / f"{p.id}.png")
        manifest.append({"id": p.id, "category": p.category, "page": str(png.relative_to(out)),
                         "boxes": str(boxes.relative_to(out)), "target": p.target, "annotations": p.annotations,
                         "samples": spec.samples_per_prompt})
    write_jsonl(out / "manifest.jsonl", manifest)
    save_bench_spec(spec, out / "bench_spec.json")
    return manifest


def run_bench(bench_dir: str | Path, generate, samples_per_prompt: int | None = None, workers: int = 1) -> list[dict]:
    """Generate every (prompt, sample) output with ``generate(page, prompt_id, sample_index) -> RasterImage``.

    Writes ``samples/<id>_s<k>.png`` and ``samples.jsonl``. The generator must
    derive its own seed from (prompt_id, sample_index) so results do not
    depend on scheduling.
    """
    root = Path(bench_dir)
    manifest = read_jsonl(root / "manifest.jsonl")
    (root / "samples").mkdir(exist_ok=True)
    jobs = [(m, k) for m in manifest for k in range(samples_per_prompt or m.get("samples", SAMPLES_PER_PROMPT))]

    def one(job):
        m, k = job
        img = generate(read_png(root / m["page"]), m["id"], k)
        rel = Path("samples") / f"{m['id']}_s{k}.png"
        write_png(img, root / rel)
        return {"id": m["id"], "category": m["category"], "sample": k, "output": str(rel)}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, jobs))
    else:
        rows = [one(j) for j in jobs]
    write_jsonl(root / "samples.jsonl", rows)
    return rows


# -- scoring records and aggregation ------------------------------------------

def score_sample(quality: int, alignment: int) -> int:
    for name, v in (("Quality", quality), ("Alignment", alignment)):
        if isinstance(v, bool) or int(v) != v or not 1 <= v <= 10:
            raise ScoreRangeError(f"{name} must be an integer in [1, 10], got {v!r}")
    return int(min(quality, alignment)) * 10


@dataclass
class ScoreRecord:
    prompt_id: str
    category: str
    sample_index: int
    quality: int
    alignment: int
    final: int | None = None
    judge: str = "stub"
    rationale: str = ""

    def __post_init__(self):
        expected = score_sample(self.quality, self.alignment)
        if self.final is None:
            self.final = expected
        elif self.final != expected:
            raise ScoreRangeError(f"final {self.final} != min(Q, A) x 10 = {expected} for {self.prompt_id}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CategoryScore:
    final: float
    quality: float
    alignment: float
    n_prompts: int


@dataclass
class AggregateReport:
    categories: dict[str, CategoryScore]
    overall: CategoryScore

    def to_dict(self) -> dict:
        return {"categories": {c: asdict(s) for c, s in self.categories.items()}, "overall": asdict(self.overall)}

    def to_table(self) -> str:
        from .probe import format_table

        rows = [(c, f"{s.final:.2f}", f"{s.quality:.2f}", f"{s.alignment:.2f}") for c, s in self.categories.items()]
        o = self.overall
        rows.append(("Overall", f"{o.final:.2f}", f"{o.quality:.2f}", f"{o.alignment:.2f}"))
        return format_table(("Category", "Score /100", "Quality", "Alignment"), rows)


def _expected_pairs(expected: Mapping[str, str] | BenchSpec, samples: int):
    if isinstance(expected, BenchSpec):
        samples = expected.samples_per_prompt
        expected = {p.id: p.category for p in expected.prompts}
    return dict(expected), samples


def aggregate(records: Iterable[ScoreRecord], expected: Mapping[str, str] | BenchSpec | None = None,
              samples_per_prompt: int = SAMPLES_PER_PROMPT) -> AggregateReport:
    """Mean over samples per prompt, then over prompts per category, then an unweighted mean over categories.

    ``expected`` maps prompt id -> category (or is a BenchSpec); without it the
    prompt set is taken from the records. Every (prompt, sample) pair in
    ``range(samples_per_prompt)`` must appear exactly once.
    """
    records = list(records)
    if not records:
        raise CompletenessError(["no records"], [])
    if expected is None:
        expected = {r.prompt_id: r.category for r in records}
    expected, samples_per_prompt = _expected_pairs(expected, samples_per_prompt)
    seen = Counter((r.prompt_id, r.sample_index) for r in records)
    want = {(p, k) for p in expected for k in range(samples_per_prompt)}
    missing = sorted(want - set(seen))
    dups = sorted(k for k, n in seen.items() if n > 1)
    stray = sorted(set(seen) - want)
    if missing or dups or stray:
        raise CompletenessError([f"{p}#{k}" for p, k in missing] + [f"unexpected {p}#{k}" for p, k in stray],
                                [f"{p}#{k}" for p, k in dups])
    per_prompt: dict[str, list[ScoreRecord]] = defaultdict(list)
    for r in records:
        if r.category != expected[r.prompt_id]:
            raise CompletenessError([f"{r.prompt_id} recorded as {r.category}, expected {expected[r.prompt_id]}"], [])
        per_prompt[r.prompt_id].append(r)
    by_cat: dict[str, list[tuple[float, float, float]]] = defaultdict(list)
    for pid, rs in per_prompt.items():
        by_cat[expected[pid]].append((float(np.mean([r.final for r in rs])), float(np.mean([r.quality for r in rs])),
                                      float(np.mean([r.alignment for r in rs]))))
    order = [c for c in CATEGORIES if c in by_cat] + sorted(set(by_cat) - set(CATEGORIES))
    cats = {}
    for c in order:
        arr = np.array(by_cat[c])
        cats[c] = CategoryScore(*map(float, arr.mean(axis=0)), n_prompts=len(arr))
    overall = CategoryScore(overall_mean([s.final for s in cats.values()]),
                            overall_mean([s.quality for s in cats.values()]),
                            overall_mean([s.alignment for s in cats.values()]), sum(s.n_prompts for s in cats.values()))
    return AggregateReport(cats, overall)


def overall_mean(category_means: Iterable[float] | Mapping[str, float]) -> float:
    """Unweighted mean over categories."""
    vals = list(category_means.values()) if isinstance(category_means, Mapping) else list(category_means)
    if not vals:
        raise ValueError("no category means")
    return float(np.mean(vals))


# -- reference fixtures -------------------------------------------------------

def reference_tables() -> dict[str, dict]:
    """Published per-category means (final and Quality) plus overall, keyed by model, used as aggregation fixtures."""
    return json.loads(resources.files("v2v").joinpath("data/reference_scores.json").read_text())


def fixture_records(category_means: Mapping[str, float], prompts_per_category: int = PROMPTS_PER_CATEGORY,
                    samples_per_prompt: int = SAMPLES_PER_PROMPT, quality_means: Mapping[str, float] | None = None,
                    judge: str = "fixture") -> list[ScoreRecord]:
    """Integer-valued records whose category means round to the given two-decimal means.

    Alignment is spread as evenly as possible over the category's samples
    (values a or a+1) so that final = 10 x Alignment; Quality is spread the
    same way and never drops below Alignment.
    """
    n = prompts_per_category * samples_per_prompt
    out = []
    for cat, mean in category_means.items():
        total_a = int(round(mean * n / 10.0))
        a_vals = _even_split(total_a, n)
        q_mean = quality_means.get(cat) if quality_means else None
        total_q = max(total_a, int(round(q_mean * n))) if q_mean is not None else 10 * n
        q_vals = _even_split(min(total_q, 10 * n), n)
        for j in range(n):
            q = max(q_vals[j], a_vals[j])
            out.append(ScoreRecord(f"{cat}-{j // samples_per_prompt:02d}", cat, j % samples_per_prompt, q, a_vals[j],
                                   judge=judge))
    return out


def _even_split(total: int, n: int) -> list[int]:
    base, rem = divmod(total, n)
    if not (1 <= base <= 10) or (base == 10 and rem):
        raise ValueError(f"cannot spread {total} over {n} scores in [1, 10]")
    return [base] * (n - rem) + [base + 1] * rem


# -- JSON lines ---------------------------------------------------------------

def write_jsonl(path: str | Path, rows: Iterable[dict]) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return path


def read_jsonl(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_records(path: str | Path, records: Iterable[ScoreRecord]) -> Path:
    return write_jsonl(path, (r.to_dict() for r in records))


def read_records(path: str | Path) -> list[ScoreRecord]:
    return [ScoreRecord(**d) for d in read_jsonl(path)]


def prompt_lookup(spec: BenchSpec) -> dict[str, PromptSpec]:
    return {p.id: p for p in spec.prompts}


def mini_bench(prompts: int = 7, seed: int = 42, categories: Sequence[str] = ("inline-color", "object-counting"),
               samples_per_prompt: int = SAMPLES_PER_PROMPT) -> BenchSpec:
    """Small offline bench drawn from the stub-judgeable categories, round-robin."""
    full = default_bench_spec(seed).by_category()
    picked = []
    for i in range(prompts):
        cat = categories[i % len(categories)]
        picked.append(full[cat][i // len(categories)])
    return BenchSpec(picked, samples_per_prompt, prompts_per_category=None, name="mini")


__all__ = [n for n in dir() if not n.startswith("_")]
