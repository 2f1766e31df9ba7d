"""Synthetic shape/caption corpora and five-way member splits.

Three caption families (``C``, ``F``, ``I``) draw from disjoint word lists and
different palettes, so a model trained on one family is out of distribution on
the others.  Every image holds one or two coloured shapes on a noisy
background; its captions describe exactly the rendered attributes.

On-disk corpus layout (format version 1)::

    <dir>/manifest.jsonl   first line: {"format": "mmia-corpus", "version": 1, "count": N}
                           then one JSON object per pair:
                           {"id", "image", "captions": [str, ...], "attrs": {...}}
    <dir>/images/<id>.npy  float32 array, shape (H, W, 3), values in [0, 1]

``captions[0]`` is the caption used for training; all captions serve as
references when scoring.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InsufficientData, SpecTooSmall

FAMILIES = ("C", "F", "I")
IMAGE_SIZE = 32
MIN_CORPUS = 20
FORMAT_VERSION = 1

# Per-family word lists. No token is shared between families.
VOCAB = {
    "C": dict(
        article="a", prep="on", join="with",
        vertical=("above", "below"), horizontal=("left", "right"),
        colors={"red": (0.9, 0.1, 0.1), "blue": (0.1, 0.2, 0.9), "green": (0.1, 0.75, 0.2),
                "yellow": (0.95, 0.9, 0.1), "purple": (0.6, 0.1, 0.7)},
        shapes={"circle": "disc", "square": "square", "triangle": "triangle", "cross": "cross"},
        backgrounds={"gray": (0.5, 0.5, 0.5), "white": (0.97, 0.97, 0.97), "black": (0.05, 0.05, 0.05)},
    ),
    "F": dict(
        article="one", prep="over", join="holding",
        vertical=("atop", "beneath"), horizontal=("leftward", "rightward"),
        colors={"crimson": (0.7, 0.05, 0.25), "navy": (0.05, 0.1, 0.45), "lime": (0.6, 0.95, 0.2),
                "amber": (1.0, 0.65, 0.0), "violet": (0.55, 0.35, 0.95)},
        shapes={"ring": "ring", "diamond": "diamond", "bar": "hbar", "pillar": "vbar"},
        backgrounds={"sand": (0.85, 0.75, 0.55), "slate": (0.3, 0.35, 0.4), "snow": (0.92, 0.95, 1.0)},
    ),
    "I": dict(
        article="the", prep="against", join="featuring",
        vertical=("higher", "lower"), horizontal=("westof", "eastof"),
        colors={"scarlet": (1.0, 0.15, 0.0), "cobalt": (0.0, 0.28, 0.67), "olive": (0.5, 0.5, 0.0),
                "gold": (0.85, 0.7, 0.2), "magenta": (0.9, 0.0, 0.6)},
        shapes={"orb": "disc", "kite": "diamond", "wedge": "triangle", "plus": "cross"},
        backgrounds={"dusk": (0.35, 0.2, 0.4), "cream": (0.95, 0.9, 0.75), "charcoal": (0.2, 0.2, 0.2)},
    ),
}


def family_vocabulary(family):
    v = VOCAB[family]
    words = {v["article"], v["prep"], v["join"], *v["vertical"], *v["horizontal"]}
    words.update(v["colors"], v["shapes"], v["backgrounds"])
    return words


@dataclass(frozen=True)
class CorpusSpec:
    family: str
    size: int
    seed: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")


@dataclass(eq=False)
class ImageTextPair:
    id: str
    image: np.ndarray
    captions: list
    attrs: dict = field(default_factory=dict)

    @property
    def caption(self):
        return self.captions[0]

    def __eq__(self, other):
        if not isinstance(other, ImageTextPair):
            return NotImplemented
        return (self.id == other.id and self.captions == other.captions
                and self.attrs == other.attrs
                and self.image.shape == other.image.shape
                and np.array_equal(self.image, other.image))


@dataclass
class DatasetBundle:
    member: list
    nonmember: list
    shadow_member: list
    shadow_nonmember: list
    public: list

    SPLITS = ("member", "nonmember", "shadow_member", "shadow_nonmember", "public")

    def sizes(self):
        return tuple(len(getattr(self, s)) for s in self.SPLITS)

    def id_sets(self):
        return {s: [p.id for p in getattr(self, s)] for s in self.SPLITS}

    def check_disjoint(self):
        seen = {}
        for split, ids in self.id_sets().items():
            for i in ids:
                if i in seen:
                    raise AssertionError(f"id {i} in both {seen[i]} and {split}")
                seen[i] = split
        return True


# -- rendering ---------------------------------------------------------------

def _mask(kind, cx, cy, r, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) + 0.5
    dx, dy = xx - cx, yy - cy
    if kind == "disc":
        return dx**2 + dy**2 <= r**2
    if kind == "ring":
        d2 = dx**2 + dy**2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    if kind == "square":
        return (np.abs(dx) <= r * 0.85) & (np.abs(dy) <= r * 0.85)
    if kind == "diamond":
        return np.abs(dx) + np.abs(dy) <= r
    if kind == "triangle":
        return (dy <= r * 0.8) & (dy >= -r) & (np.abs(dx) <= (dy + r) * 0.55)
    if kind == "cross":
        w = max(1.0, r * 0.35)
        return ((np.abs(dx) <= w) & (np.abs(dy) <= r)) | ((np.abs(dy) <= w) & (np.abs(dx) <= r))
    if kind == "hbar":
        return (np.abs(dx) <= r) & (np.abs(dy) <= max(1.0, r * 0.35))
    if kind == "vbar":
        return (np.abs(dy) <= r) & (np.abs(dx) <= max(1.0, r * 0.35))
    raise ValueError(kind)


def render(family, attrs, rng, size=IMAGE_SIZE):
    v = VOCAB[family]
    bg = np.asarray(v["backgrounds"][attrs["background"]], dtype=np.float32)
    img = np.broadcast_to(bg, (size, size, 3)).copy()
    for s in attrs["shapes"]:
        col = np.asarray(v["colors"][s["color"]], dtype=np.float32)
        col = col + rng.uniform(-0.06, 0.06, 3).astype(np.float32)
        m = _mask(v["shapes"][s["shape"]], s["x"], s["y"], s["r"], size)
        img[m] = col
    img += rng.normal(0.0, 0.04, img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _sample_attrs(family, rng, size=IMAGE_SIZE):
    v = VOCAB[family]
    colors, shapes, bgs = list(v["colors"]), list(v["shapes"]), list(v["backgrounds"])
    n_shapes = 2 if rng.random() < 0.75 else 1
    attrs = {"background": bgs[rng.integers(len(bgs))], "relation": None, "shapes": []}

    def shape(xlo, xhi, ylo, yhi):
        r = float(rng.uniform(3.5, 6.0))
        return {"color": colors[rng.integers(len(colors))], "shape": shapes[rng.integers(len(shapes))],
                "x": float(rng.uniform(xlo + r, xhi - r)), "y": float(rng.uniform(ylo + r, yhi - r)),
                "r": round(r, 3)}

    h = size / 2
    if n_shapes == 1:
        attrs["shapes"].append(shape(4, size - 4, 4, size - 4))
    elif rng.random() < 0.5:
        attrs["relation"] = "vertical"
        attrs["shapes"] += [shape(1, size - 1, 0, h), shape(1, size - 1, h, size)]
    else:
        attrs["relation"] = "horizontal"
        attrs["shapes"] += [shape(0, h, 1, size - 1), shape(h, size, 1, size - 1)]
    for s in attrs["shapes"]:
        s["x"], s["y"] = round(s["x"], 3), round(s["y"], 3)
    return attrs


def captions_for(family, attrs):
    """All reference captions for the attributes (canonical order first)."""
    v = VOCAB[family]
    art, prep, join, bg = v["article"], v["prep"], v["join"], attrs["background"]
    objs = [[art, s["color"], s["shape"]] for s in attrs["shapes"]]
    if len(objs) == 1:
        return [objs[0] + [prep, bg], [bg, join] + objs[0]]
    fwd, back = v[attrs["relation"]]
    a, b = objs
    out = []
    for x, rel, y in ((a, fwd, b), (b, back, a)):
        out.append(x + [rel] + y + [prep, bg])
        out.append([bg, join] + x + [rel] + y)
    return out


def parse_caption(family, tokens):
    """Recover (background, relation, [(color, shape), ...]) from a caption.

    Shapes come back in canonical order: top before bottom, left before right.
    """
    v = VOCAB[family]
    toks = list(tokens)
    if toks[0] in v["backgrounds"]:
        bg, body = toks[0], toks[2:]
    else:
        bg, body = toks[-1], toks[:-2]
    if len(body) == 3:
        return bg, None, [(body[1], body[2])]
    x, rel, y = (body[1], body[2]), body[3], (body[5], body[6])
    for axis in ("vertical", "horizontal"):
        if rel in v[axis]:
            pair = [x, y] if rel == v[axis][0] else [y, x]
            return bg, axis, pair
    raise ValueError(f"no relation word in {tokens}")


def generate_corpus(spec):
    if spec.size < MIN_CORPUS:
        raise SpecTooSmall(f"corpus size {spec.size} < {MIN_CORPUS}")
    rng = np.random.default_rng([spec.seed, FAMILIES.index(spec.family)])
    tag = rng.integers(0, 16**6)
    pairs = []
    for i in range(spec.size):
        attrs = _sample_attrs(spec.family, rng)
        image = render(spec.family, attrs, rng)
        caps = captions_for(spec.family, attrs)
        pairs.append(ImageTextPair(f"{spec.family}{tag:06x}-{i:05d}", image, caps, attrs))
    return pairs


def split_corpus(corpus, n_member, n_shadow, seed):
    need = 2 * n_member + 2 * n_shadow
    if len(corpus) < need:
        raise InsufficientData(f"need {need} pairs, corpus has {len(corpus)}")
    idx = np.random.default_rng(seed).permutation(len(corpus))
    cuts = np.cumsum([n_member, n_member, n_shadow, n_shadow])
    parts = np.split(idx, cuts)
    return DatasetBundle(*[[corpus[i] for i in p] for p in parts])


# -- persistence --------------------------------------------------------------

def save_corpus(corpus, path):
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"format": "mmia-corpus", "version": FORMAT_VERSION, "count": len(corpus)})]
    for p in corpus:
        fname = f"images/{p.id}.npy"
        np.save(path / fname, p.image.astype(np.float32), allow_pickle=False)
        lines.append(json.dumps({"id": p.id, "image": fname,
                                 "captions": [" ".join(c) for c in p.captions],
                                 "attrs": p.attrs}, sort_keys=True))
    (path / "manifest.jsonl").write_text("\n".join(lines) + "\n")


def load_corpus(path):
    path = Path(path)
    manifest = path / "manifest.jsonl"
    if not manifest.is_file():
        raise FormatError(f"no manifest.jsonl in {path}")
    lines = manifest.read_text().splitlines()
    try:
        header = json.loads(lines[0])
    except (IndexError, json.JSONDecodeError) as e:
        raise FormatError(f"{manifest}: unreadable header") from e
    if header.get("format") != "mmia-corpus" or header.get("version") != FORMAT_VERSION:
        raise FormatError(f"{manifest}: unsupported header {header}")
    corpus = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            rid = rec["id"]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise FormatError(f"{manifest}:{lineno}: corrupt record (after id "
                              f"{corpus[-1].id if corpus else None})") from e
        try:
            image = np.load(path / rec["image"], allow_pickle=False)
            captions = [c.split() for c in rec["captions"]]
        except Exception as e:
            raise FormatError(f"record {rid}: {e}") from e
        if image.ndim != 3 or image.shape[2] != 3 or not captions or not all(captions):
            raise FormatError(f"record {rid}: bad image shape or empty caption")
        corpus.append(ImageTextPair(rid, image, captions, rec.get("attrs", {})))
    if len(corpus) != header.get("count"):
        raise FormatError(f"{manifest}: expected {header.get('count')} records, found {len(corpus)}"
                          + (f" (last id {corpus[-1].id})" if corpus else ""))
    return corpus
