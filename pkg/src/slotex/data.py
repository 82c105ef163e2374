"""Corpus loading and synthetic generation.

Synthetic sentences are templated clauses with one lexical trigger per
relation, joined by conjunctions. Overlap patterns are built by
construction and re-verified by the independent classifier:

* Normal: no two triples share an entity span.
* SEO: some pair shares exactly one entity span.
* EPO: some pair shares both spans (two relations on one entity pair).

Entity mentions are stored as surface strings in the JSONL format and
resolved to token spans by leftmost exact match; the generator emits
spans already in that canonical form, so save -> load round-trips exactly.
All span indices are marker-inclusive: position 0 is the start marker, so
body tokens occupy 1..n-2.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, ParseError, SchemaError
from .matching import GoldTriple

logger = logging.getLogger(__name__)

PATTERN_NORMAL = "Normal"
PATTERN_SEO = "SEO"
PATTERN_EPO = "EPO"
PATTERNS = (PATTERN_NORMAL, PATTERN_SEO, PATTERN_EPO)

HEAD_WORD_RULES = ("first", "last")

# verb phrases: a clause is "<subject> <phrase> <object>"; shared-entity
# sentences conjoin two phrases around a single mention
DEFAULT_RELATION_PHRASES = {
    "works_for": ["works for", "is employed at"],
    "founded": ["founded", "established"],
    "lives_in": ["lives in", "resides in"],
    "born_in": ["was born in"],
    "leads": ["leads", "runs"],
    "owns": ["owns", "acquired"],
    "located_in": ["is located in", "sits inside"],
    "married_to": ["is married to", "wed"],
    "teaches_at": ["teaches at", "lectures at"],
    "supplies": ["supplies", "ships goods to"],
}

DEFAULT_RELATIONS = list(DEFAULT_RELATION_PHRASES)

_SYLLABLES = ["ba", "den", "kor", "mi", "sol", "tan", "ve", "lor", "shu", "pel",
              "gra", "nim", "ost", "ral", "ze", "quin", "dor", "fay", "lin", "mar",
              "tu", "bren", "cas", "wyn"]
_SECOND_WORDS = ["Group", "Labs", "Holdings", "Valley", "Harbor", "Institute",
                 "Bridge", "Park", "Works", "Point", "Crest", "Field"]
# "while" joins clauses; "and" only ever conjoins the phrases of a
# shared-entity clause, so overlap structure is lexically marked
_CLAUSE_CONNECTOR = "while"
_SHARE_CONNECTOR = "and"


def head_word_index(span, rule):
    """Single head-word position for a span under the configured rule."""
    if rule not in HEAD_WORD_RULES:
        raise ConfigError(f"head_word must be one of {HEAD_WORD_RULES}")
    return span[0] if rule == "first" else span[1]


@dataclass
class Example:
    """One sentence with its gold triple set.

    ``golds`` uses exact spans; ``golds_partial`` holds (subject head,
    relation, object head) under the corpus head-word rule.
    """

    text: str
    tokens: list
    golds: list
    golds_partial: list
    overlap_pattern: str
    triple_count: int

    def surface(self, span):
        return " ".join(self.tokens[span[0] - 1:span[1]])


@dataclass
class CorpusManifest:
    """Generation recipe: split sizes, relation inventory, seed and mixes."""

    train_size: int = 5000
    valid_size: int = 500
    test_size: int = 500
    relations: list = field(default_factory=lambda: list(DEFAULT_RELATIONS))
    seed: int = 0
    pattern_mix: dict = field(default_factory=lambda: {
        PATTERN_NORMAL: 0.60, PATTERN_SEO: 0.24, PATTERN_EPO: 0.16})
    triple_count_mix: dict = field(default_factory=lambda: {
        1: 0.45, 2: 0.25, 3: 0.15, 4: 0.10, 5: 0.05})
    head_word: str = "last"
    entity_pool_size: int = 120
    relation_weights: dict = field(default_factory=dict)

    def validate(self):
        if min(self.train_size, self.valid_size, self.test_size) < 0:
            raise ConfigError("split sizes must be nonnegative")
        if not self.relations:
            raise ConfigError("need at least one relation")
        if len(set(self.relations)) != len(self.relations):
            raise ConfigError("relation names must be unique")
        if self.head_word not in HEAD_WORD_RULES:
            raise ConfigError(f"head_word must be one of {HEAD_WORD_RULES}")
        mix = {p: float(self.pattern_mix.get(p, 0.0)) for p in PATTERNS}
        if any(v < 0 for v in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-6:
            raise ConfigError("pattern_mix must be nonnegative and sum to 1")
        counts = {int(c): float(w) for c, w in self.triple_count_mix.items()}
        if any(c < 1 or c > 5 for c in counts) or any(w < 0 for w in counts.values()):
            raise ConfigError("triple_count_mix supports counts 1..5 with nonnegative weights")
        if abs(sum(counts.values()) - 1.0) > 1e-6:
            raise ConfigError("triple_count_mix must sum to 1")
        if mix[PATTERN_EPO] > 0 and len(self.relations) < 2:
            raise ConfigError("EPO examples need at least 2 relations")
        multi = sum(w for c, w in counts.items() if c >= 2)
        if (mix[PATTERN_SEO] > 0 or mix[PATTERN_EPO] > 0) and multi <= 0:
            raise ConfigError("SEO/EPO examples need triple counts of at least 2")
        if self.entity_pool_size < 12:
            raise ConfigError("entity pool too small")
        for name in self.relation_weights:
            if name not in self.relations:
                raise ConfigError(f"relation_weights names unknown relation {name!r}")
        return self

    def to_json(self, path):
        payload = asdict(self)
        payload["triple_count_mix"] = {str(k): v for k, v in self.triple_count_mix.items()}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path):
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"manifest is not valid JSON: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise SchemaError(f"manifest has unknown keys: {sorted(unknown)}")
        if "triple_count_mix" in payload:
            payload["triple_count_mix"] = {int(k): float(v)
                                           for k, v in payload["triple_count_mix"].items()}
        return cls(**payload).validate()


def rare_relation_manifest(**overrides):
    """Preset reproducing the under-trained long-tail relation regime."""
    relations = list(DEFAULT_RELATIONS) + ["patron_of", "rival_of"]
    weights = {name: 1.0 for name in DEFAULT_RELATIONS}
    weights.update({"patron_of": 0.008, "rival_of": 0.008})
    base = dict(relations=relations, relation_weights=weights)
    base.update(overrides)
    return CorpusManifest(**base).validate()


def classify_overlap(golds):
    """Overlap pattern of a triple set.

    EPO if some pair of triples shares both entity spans, else SEO if some
    pair shares exactly one, else Normal. Permutation-invariant.
    """
    if not golds:
        raise ContractError("classify_overlap needs at least one triple")
    spans = [{g.subject_span, g.object_span} for g in golds]
    best = 0
    for i in range(len(spans)):
        for j in range(i + 1, len(spans)):
            shared = len(spans[i] & spans[j])
            best = max(best, shared)
            if best >= 2:
                return PATTERN_EPO
    return PATTERN_SEO if best == 1 else PATTERN_NORMAL


def find_span(tokens, mention_tokens):
    """Leftmost exact token-sequence match; body coordinates, or None."""
    m = len(mention_tokens)
    if m == 0:
        return None
    for start in range(len(tokens) - m + 1):
        if tokens[start:start + m] == mention_tokens:
            return (start, start + m - 1)
    return None


def _resolve_mention(tokens, surface):
    span = find_span(tokens, surface.split())
    if span is None:
        return None
    return (span[0] + 1, span[1] + 1)  # body -> marker-inclusive


def _example_from_mentions(text, mentions, relation_ids, head_word):
    """Build an Example from (subject surface, object surface, label) rows.

    Returns None when any mention fails to resolve to a span.
    """
    tokens = text.split()
    golds = []
    seen = set()
    for subj, obj, label in mentions:
        s_span = _resolve_mention(tokens, subj)
        o_span = _resolve_mention(tokens, obj)
        if s_span is None or o_span is None:
            return None
        g = GoldTriple(s_span[0], s_span[1], o_span[0], o_span[1], relation_ids[label])
        if g.key() not in seen:
            seen.add(g.key())
            golds.append(g)
    if not golds:
        return None
    partial = [(head_word_index(g.subject_span, head_word), g.rel,
                head_word_index(g.object_span, head_word)) for g in golds]
    return Example(text, tokens, golds, partial, classify_overlap(golds), len(golds))


def load_jsonl(path, relation_inventory, head_word="last"):
    """Read the benchmark JSONL format.

    Each line: {"sentText": str, "relationMentions": [{"em1Text", "em2Text",
    "label"}]}. Unknown labels are rejected; examples whose mentions cannot
    be resolved by leftmost match are skipped with a logged count.
    """
    relation_ids = {name: i for i, name in enumerate(relation_inventory)}
    examples = []
    skipped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), line_number=lineno) from exc
            if not isinstance(obj, dict) or "sentText" not in obj or "relationMentions" not in obj:
                raise SchemaError(f"line {lineno}: need sentText and relationMentions")
            mentions = []
            for m in obj["relationMentions"]:
                if not isinstance(m, dict) or {"em1Text", "em2Text", "label"} - set(m):
                    raise SchemaError(f"line {lineno}: mention needs em1Text/em2Text/label")
                if m["label"] not in relation_ids:
                    raise SchemaError(f"line {lineno}: unknown relation {m['label']!r}")
                mentions.append((m["em1Text"], m["em2Text"], m["label"]))
            ex = _example_from_mentions(obj["sentText"], mentions, relation_ids, head_word)
            if ex is None:
                skipped += 1
                continue
            examples.append(ex)
    if skipped:
        logger.warning("skipped %d examples with unresolvable mentions in %s", skipped, path)
    return examples


def save_jsonl(examples, path, relation_inventory):
    """Write examples in the benchmark JSONL format (inverse of load_jsonl)."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            mentions = [{"em1Text": ex.surface(g.subject_span),
                         "em2Text": ex.surface(g.object_span),
                         "label": relation_inventory[g.rel]} for g in ex.golds]
            fh.write(json.dumps({"sentText": ex.text, "relationMentions": mentions}) + "\n")


# ---------------------------------------------------------------------------
# synthetic generation


def _make_word(rng, taken):
    while True:
        parts = rng.choice(_SYLLABLES, size=int(rng.integers(2, 4)))
        word = "".join(parts).capitalize()
        if word not in taken:
            taken.add(word)
            return word


def _make_entity_pool(rng, size):
    """Distinct entity surfaces; first tokens are unique across the pool so
    leftmost matching can never land inside another entity's mention."""
    taken = set(_SECOND_WORDS)
    pool = []
    for _ in range(size):
        first = _make_word(rng, taken)
        if rng.random() < 0.4:
            second = _SECOND_WORDS[int(rng.integers(0, len(_SECOND_WORDS)))]
            pool.append(f"{first} {second}")
        else:
            pool.append(first)
    return pool


def _phrases_for(relations):
    out = {}
    for name in relations:
        out[name] = DEFAULT_RELATION_PHRASES.get(name, [" ".join(name.split("_"))])
    return out


def _quota(size, mix):
    """Integer pattern counts matching the mix exactly (largest remainder)."""
    raw = {p: size * mix.get(p, 0.0) for p in PATTERNS}
    counts = {p: int(np.floor(v)) for p, v in raw.items()}
    short = size - sum(counts.values())
    for p in sorted(PATTERNS, key=lambda p: raw[p] - counts[p], reverse=True):
        if short == 0:
            break
        counts[p] += 1
        short -= 1
    return counts


def _sample_count(rng, mix, minimum):
    counts = sorted(c for c in mix if mix[c] > 0 and c >= minimum)
    if not counts:
        raise ConfigError(f"triple_count_mix has no mass at counts >= {minimum}")
    weights = np.array([mix[c] for c in counts])
    return int(rng.choice(counts, p=weights / weights.sum()))


def _pick_relation(rng, relations, weights, exclude=None):
    names = [r for r in relations if r != exclude]
    w = np.array([weights.get(r, 1.0) for r in names], dtype=np.float64)
    return names[int(rng.choice(len(names), p=w / w.sum()))]


def _generate_example(rng, pattern, manifest, phrases, pool, relation_ids):
    count = _sample_count(rng, manifest.triple_count_mix,
                          minimum=1 if pattern == PATTERN_NORMAL else 2)
    weights = manifest.relation_weights
    # every entity surface in a sentence is mentioned exactly once; overlap
    # patterns share the single mention between two triples
    if pattern == PATTERN_NORMAL:
        need = 2 * count
    elif pattern == PATTERN_SEO:
        need = 2 * count - 1
    else:
        need = 2 * count - 2
    picks = list(rng.choice(len(pool), size=need, replace=False))
    ents = [pool[i] for i in picks]

    def vp(rel):
        options = phrases[rel]
        return options[int(rng.integers(0, len(options)))]

    def simple_clause(subj, obj):
        rel = _pick_relation(rng, manifest.relations, weights)
        return f"{subj} {vp(rel)} {obj}", [(subj, obj, rel)]

    clauses = []  # (clause text, [(subject, object, relation name)])
    if pattern == PATTERN_SEO:
        rel_a = _pick_relation(rng, manifest.relations, weights)
        rel_b = _pick_relation(rng, manifest.relations, weights)
        shared, other_a, other_b = ents[0], ents[1], ents[2]
        if rng.random() < 0.5:  # shared subject: "S vpA Oa and vpB Ob"
            text = (f"{shared} {vp(rel_a)} {other_a} "
                    f"{_SHARE_CONNECTOR} {vp(rel_b)} {other_b}")
            made = [(shared, other_a, rel_a), (shared, other_b, rel_b)]
        else:  # shared object: "Sa vpA and Sb vpB O"
            text = (f"{other_a} {vp(rel_a)} "
                    f"{_SHARE_CONNECTOR} {other_b} {vp(rel_b)} {shared}")
            made = [(other_a, shared, rel_a), (other_b, shared, rel_b)]
        clauses.append((text, made))
        rest = ents[3:]
    elif pattern == PATTERN_EPO:
        rel_a = _pick_relation(rng, manifest.relations, weights)
        rel_b = _pick_relation(rng, manifest.relations, weights, exclude=rel_a)
        subj, obj = ents[0], ents[1]
        text = f"{subj} {vp(rel_a)} {_SHARE_CONNECTOR} {vp(rel_b)} {obj}"
        clauses.append((text, [(subj, obj, rel_a), (subj, obj, rel_b)]))
        rest = ents[2:]
    else:
        rest = ents

    for i in range(len(rest) // 2):
        clauses.append(simple_clause(rest[2 * i], rest[2 * i + 1]))

    order = rng.permutation(len(clauses))
    text = f" {_CLAUSE_CONNECTOR} ".join(clauses[i][0] for i in order) + " ."
    mentions = [m for i in order for m in clauses[i][1]]
    ex = _example_from_mentions(text, mentions, relation_ids, manifest.head_word)
    if ex is None or ex.overlap_pattern != pattern or ex.triple_count != count:
        raise ContractError(
            f"generated example failed verification: wanted {pattern}/{count}, "
            f"got {None if ex is None else (ex.overlap_pattern, ex.triple_count)}: "
            f"{text!r}")
    return ex


def _generate_split(rng, size, manifest, phrases, pool, relation_ids):
    quota = _quota(size, manifest.pattern_mix)
    schedule = ([PATTERN_NORMAL] * quota[PATTERN_NORMAL]
                + [PATTERN_SEO] * quota[PATTERN_SEO]
                + [PATTERN_EPO] * quota[PATTERN_EPO])
    schedule = [schedule[i] for i in rng.permutation(len(schedule))]
    return [_generate_example(rng, pattern, manifest, phrases, pool, relation_ids)
            for pattern in schedule]


def generate_synthetic(manifest):
    """Deterministic (train, valid, test) corpora from a manifest."""
    manifest.validate()
    phrases = _phrases_for(manifest.relations)
    relation_ids = {name: i for i, name in enumerate(manifest.relations)}
    pool_rng = np.random.default_rng([manifest.seed, 9173])
    pool = _make_entity_pool(pool_rng, manifest.entity_pool_size)
    splits = []
    for split_idx, size in enumerate((manifest.train_size, manifest.valid_size,
                                      manifest.test_size)):
        rng = np.random.default_rng([manifest.seed, split_idx])
        splits.append(_generate_split(rng, size, manifest, phrases, pool, relation_ids))
    return tuple(splits)


def save_corpus(splits, manifest, out_dir):
    """Write manifest.json plus train/valid/test.jsonl into a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest.to_json(out / "manifest.json")
    for name, examples in zip(("train", "valid", "test"), splits):
        save_jsonl(examples, out / f"{name}.jsonl", manifest.relations)
    return out


def load_corpus(data_dir):
    """Read a directory written by save_corpus; returns (manifest, splits)."""
    data_dir = Path(data_dir)
    manifest = CorpusManifest.from_json(data_dir / "manifest.json")
    splits = tuple(
        load_jsonl(data_dir / f"{name}.jsonl", manifest.relations,
                   head_word=manifest.head_word)
        for name in ("train", "valid", "test"))
    return manifest, splits
