"""Deterministic English-like corpus generator for harness and study tests.

Sentences come from hand-written clause templates filled with Zipf-weighted
word choices inside a per-paragraph topic, which yields the statistics the
studies need: a few hundred word types, heavy function-word collocations,
and bursty topical repetition.
"""

from __future__ import annotations

import numpy as np

NOUNS = [
    "river", "bridge", "market", "garden", "engine", "harbor", "library", "mountain",
    "village", "machine", "signal", "window", "journey", "teacher", "student", "doctor",
    "farmer", "sailor", "painter", "writer", "builder", "baker", "miller", "driver",
    "forest", "meadow", "valley", "island", "castle", "tower", "street", "square",
    "letter", "report", "story", "ledger", "map", "chart", "record", "notebook",
    "wheel", "rope", "lantern", "barrel", "wagon", "anchor", "compass", "telescope",
    "morning", "evening", "winter", "summer", "storm", "shadow", "silence", "crowd",
    "council", "committee", "factory", "station", "railway", "canal", "mill", "foundry",
    "question", "answer", "problem", "method", "measure", "pattern", "result", "reason",
    "neighbor", "stranger", "merchant", "captain", "engineer", "clerk", "porter", "guard",
]

VERBS = [
    ("carries", "carried"), ("builds", "built"), ("watches", "watched"),
    ("repairs", "repaired"), ("studies", "studied"), ("describes", "described"),
    ("follows", "followed"), ("crosses", "crossed"), ("measures", "measured"),
    ("records", "recorded"), ("delivers", "delivered"), ("inspects", "inspected"),
    ("opens", "opened"), ("closes", "closed"), ("fills", "filled"),
    ("guides", "guided"), ("signals", "signaled"), ("answers", "answered"),
    ("remembers", "remembered"), ("explains", "explained"), ("observes", "observed"),
    ("finishes", "finished"), ("collects", "collected"), ("protects", "protected"),
]

ADJECTIVES = [
    "old", "quiet", "narrow", "broad", "heavy", "bright", "distant", "familiar",
    "careful", "steady", "sudden", "gentle", "crowded", "empty", "patient", "curious",
    "wooden", "iron", "stone", "northern", "southern", "early", "late", "long",
]

PLACES = [
    "harbor", "market", "station", "bridge", "mill", "square", "canal", "foundry",
    "library", "village", "valley", "railway",
]

TIMES = ["morning", "evening", "winter", "summer", "spring", "autumn"]

TEMPLATES = [
    "the {adj} {noun} {verb} the {noun} near the {place}",
    "in the {time} the {noun} {verb} the {adj} {noun}",
    "the {noun} at the {place} {verb} a {adj} {noun}",
    "a {adj} {noun} {verbp} the {noun} by the {place}",
    "the {noun} {verbp} the {noun} and the {noun} {verbp} the {place}",
    "when the {noun} {verbp} the {place} the {adj} {noun} {verbp} the {noun}",
    "the {noun} of the {place} {verb} the {noun} in the {time}",
    "every {time} the {adj} {noun} {verb} the {noun} of the {place}",
    "the {noun} {verb} the {place} because the {noun} {verbp} the {adj} {noun}",
    "near the {place} the {noun} and the {noun} {verbp} a {adj} {noun}",
]


def _zipf_weights(n: int, s: float = 1.1) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


class _Picker:
    def __init__(self, rng: np.random.Generator, items: list, s: float = 1.1):
        self.rng = rng
        self.items = items
        self.weights = _zipf_weights(len(items), s)

    def pick(self):
        return self.items[self.rng.choice(len(self.items), p=self.weights)]


def generate_corpus(seed: int = 7, target_bytes: int = 80_000) -> str:
    """Paragraph-per-line corpus of at least ``target_bytes`` UTF-8 bytes."""
    rng = np.random.default_rng(seed)
    lines: list[str] = []
    size = 0
    while size < target_bytes:
        # A topic narrows the word pools, so paragraphs repeat their phrases.
        topic_nouns = list(rng.choice(len(NOUNS), size=14, replace=False))
        topic_places = list(rng.choice(len(PLACES), size=4, replace=False))
        nouns = _Picker(rng, [NOUNS[i] for i in topic_nouns])
        places = _Picker(rng, [PLACES[i] for i in topic_places])
        verbs = _Picker(rng, VERBS)
        adjectives = _Picker(rng, ADJECTIVES)
        times = _Picker(rng, TIMES, s=0.8)
        sentences = []
        for _ in range(int(rng.integers(3, 7))):
            template = TEMPLATES[int(rng.choice(len(TEMPLATES), p=_zipf_weights(len(TEMPLATES), 0.7)))]
            out = []
            for word in template.split():
                if word == "{noun}":
                    out.append(nouns.pick())
                elif word == "{verb}":
                    out.append(verbs.pick()[0])
                elif word == "{verbp}":
                    out.append(verbs.pick()[1])
                elif word == "{adj}":
                    out.append(adjectives.pick())
                elif word == "{place}":
                    out.append(places.pick())
                elif word == "{time}":
                    out.append(times.pick())
                else:
                    out.append(word)
            sentences.append(" ".join(out))
        line = " . ".join(sentences) + " ."
        lines.append(line)
        size += len(line.encode("utf-8")) + 1
    return "\n".join(lines) + "\n"
