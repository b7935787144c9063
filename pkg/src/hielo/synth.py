"""Seeded generator for an E2E-style restaurant corpus with UD part-of-speech tags.

Each reference is assembled from tagged phrase templates, so the generator
can emit an external tag file (``token<TAB>UDTAG``) in the same layout a
statistical tagger would produce. Several references are drawn per MR.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .corpus import atomic_write, tokenize

NAMES = ["The Eagle", "Bibimbap House", "Blue Spice", "The Punter", "Green Man", "Aromi",
         "Cotto", "Zizzi", "Fitzbillies", "The Wrestlers", "Giraffe", "Alimentum",
         "Browns Cambridge", "Strada", "Clowns", "The Cricketers", "The Golden Curry",
         "Loch Fyne", "Midsummer House", "The Mill", "The Olive Grove", "The Phoenix",
         "The Plough", "The Rice Boat", "The Twenty Two", "The Vaults", "Wildwood",
         "Travellers Rest Beefeater", "Cocum", "The Dumpling Tree", "The Waterman",
         "The Cambridge Blue", "The Golden Palace", "The Cricketers Arms", "Taste of Cambridge"]
NEAR = ["Clare Hall", "Café Sicilia", "Burger King", "The Portland Arms", "Raja Indian Cuisine",
        "Express by Holiday Inn", "Crowne Plaza Hotel", "Ranch", "Café Rouge", "The Sorrento",
        "Avalon", "Rainbow Vegetarian Café", "All Bar One", "The Bakers", "Yippee Noodle Bar",
        "Café Adriatic", "Café Brazil", "The Six Bells", "Little Seoul", "Trinity College"]
EAT_TYPES = ["restaurant", "pub", "coffee shop"]
FOODS = ["English", "Italian", "French", "Chinese", "Indian", "Japanese", "Fast food"]
PRICES = ["cheap", "moderate", "high", "less than £20", "£20-25", "more than £30"]
RATINGS = ["low", "average", "high", "1 out of 5", "3 out of 5", "5 out of 5"]
AREAS = ["riverside", "city centre"]
FAMILY = ["yes", "no"]

SLOT_ORDER = [("eatType", EAT_TYPES, 0.75), ("food", FOODS, 0.7), ("priceRange", PRICES, 0.7),
              ("customer rating", RATINGS, 0.65), ("area", AREAS, 0.7),
              ("familyFriendly", FAMILY, 0.6), ("near", NEAR, 0.5)]

WORD_TAGS = {
    "a": "DET", "an": "DET", "the": "DET", "this": "DET", "is": "AUX", "are": "AUX", "be": "AUX",
    "does": "AUX", "can": "AUX", "not": "PART", "it": "PRON", "there": "PRON", "that": "PRON",
    "which": "PRON", "you": "PRON", "and": "CCONJ", "also": "ADV", "in": "ADP", "near": "ADP",
    "to": "ADP", "of": "ADP", "by": "ADP", "than": "ADP", "out": "ADP", "with": "ADP",
    ",": "PUNCT", ".": "PUNCT", "serves": "VERB", "offers": "VERB", "provides": "VERB",
    "sells": "VERB", "has": "VERB", "costs": "VERB", "welcomes": "VERB", "located": "VERB",
    "situated": "VERB", "found": "VERB", "rated": "VERB", "priced": "VERB", "called": "VERB",
    "named": "VERB", "find": "VERB", "allow": "VERB", "food": "NOUN", "cuisine": "NOUN",
    "price": "NOUN", "prices": "NOUN", "range": "NOUN", "customer": "NOUN", "customers": "NOUN",
    "rating": "NOUN", "ratings": "NOUN", "area": "NOUN", "children": "NOUN", "family": "NOUN",
    "kid": "NOUN", "child": "NOUN", "families": "NOUN", "restaurant": "NOUN", "pub": "NOUN",
    "coffee": "NOUN", "shop": "NOUN", "riverside": "NOUN", "city": "NOUN", "centre": "NOUN",
    "venue": "NOUN", "place": "NOUN", "friendly": "ADJ", "family-friendly": "ADJ",
    "close": "ADJ", "cheap": "ADJ", "moderate": "ADJ", "high": "ADJ", "low": "ADJ",
    "average": "ADJ", "expensive": "ADJ", "moderately": "ADV", "less": "ADJ", "more": "ADJ",
    "english": "ADJ", "italian": "ADJ", "french": "ADJ", "chinese": "ADJ", "indian": "ADJ",
    "japanese": "ADJ", "fast": "ADJ", "1": "NUM", "3": "NUM", "5": "NUM", "£20": "NUM",
    "£30": "NUM", "£20-25": "NUM", "great": "ADJ", "good": "ADJ", "nice": "ADJ",
    "popular": "ADJ", "where": "ADV", "well": "ADV", "highly": "ADV",
}


def _w(text: str) -> list[tuple[str, str]]:
    """Tag template words; proper-noun spans are passed in pre-tagged."""
    return [(tok, WORD_TAGS[tok]) for tok in tokenize(text)]


def _propn(value: str) -> list[tuple[str, str]]:
    return [(tok, "PROPN") for tok in tokenize(value)]


def _article(next_word: str) -> str:
    return "an" if next_word[0].lower() in "aeiou" else "a"


def _food_phrase(food: str, rng) -> list:
    if food == "Fast food":
        return _w(rng.choice(["serves fast food", "offers fast food", "sells fast food"]))
    verb = rng.choice(["serves", "offers", "provides", "sells"])
    noun = rng.choice(["food", "food", "cuisine"])
    return _w(f"{verb} {food} {noun}")


def _price_phrase(price: str, rng) -> list:
    if price in ("cheap", "moderate", "high"):
        desc = {"cheap": "cheap", "moderate": "moderately priced", "high": "expensive"}[price]
        return _w(rng.choice([f"has a {price} price range", f"is {desc}",
                              f"has {price} prices", f"is {desc} with {price} prices"]))
    if price == "£20-25":
        return _w(rng.choice(["has a price range of £20-25", "costs £20-25",
                              "has prices of £20-25"]))
    return _w(rng.choice([f"has prices {price}", f"costs {price}",
                          f"has a price range of {price}"]))


def _rating_phrase(rating: str, rng) -> list:
    if "out of" in rating:
        return _w(rng.choice([f"has a customer rating of {rating}", f"is rated {rating}",
                              f"has a rating of {rating}", f"is rated {rating} by customers"]))
    art = _article(rating)
    return _w(rng.choice([f"has {art} {rating} customer rating", f"is rated {rating} by customers",
                          f"has {rating} ratings", f"has {art} {rating} rating"]))


def _area_phrase(area: str, rng) -> list:
    return _w(rng.choice([f"is located in the {area}", f"is in the {area} area",
                          f"can be found in the {area}", f"is situated in the {area}"]))


def _family_phrase(value: str, rng) -> list:
    if value == "yes":
        return _w(rng.choice(["is family friendly", "is kid friendly", "is child friendly",
                              "welcomes children", "is family-friendly", "welcomes families"]))
    return _w(rng.choice(["is not family friendly", "is not kid friendly",
                          "does not allow children", "is not child friendly",
                          "is not family-friendly"]))


def _near_phrase(near: str, rng) -> list:
    head = rng.choice(["is near", "is located near", "is close to", "can be found near"])
    return _w(head) + _propn(near)


_PHRASES = {"food": _food_phrase, "priceRange": _price_phrase, "customer rating": _rating_phrase,
            "area": _area_phrase, "familyFriendly": _family_phrase, "near": _near_phrase}


def _join(clauses: list) -> list:
    out = []
    for k, c in enumerate(clauses):
        if k > 0:
            out += _w("and") if k == len(clauses) - 1 else _w(",")
        out += c
    return out


def _eat_np(slots: dict, with_food: bool) -> list:
    eat = slots["eatType"]
    words = []
    if with_food:
        food = slots["food"]
        food_words = _w("fast food") if food == "Fast food" else _w(food)
        words = food_words
    head = words[0][0] if words else eat
    return _w(_article(head)) + words + _w(eat)


def realize(slots: dict, rng) -> list[tuple[str, str]]:
    """One tagged reference for ``slots`` (raw slot name -> value)."""
    name = _propn(slots["name"])
    rest = [k for k in _PHRASES if k in slots]
    opening = None
    if "eatType" in slots:
        options = ["plain", "there"]
        if "food" in slots:
            options += ["food", "food"]
        if "area" in slots:
            options.append("area")
        if "near" in slots:
            options.append("near")
        style = options[int(rng.integers(len(options)))]
        if style == "food":
            opening = name + _w("is") + _eat_np(slots, True)
            rest.remove("food")
        elif style == "there":
            verb = rng.choice(["called", "named"])
            opening = _w("there is") + _eat_np(slots, False) + _w(verb) + name
        elif style == "area":
            opening = name + _w("is") + _eat_np(slots, False) + _w(f"in the {slots['area']}")
            rest.remove("area")
        elif style == "near":
            opening = _w("located near") + _propn(slots["near"]) + _w(",") + name + _w("is") \
                + _eat_np(slots, False)
            rest.remove("near")
        else:
            opening = name + _w("is") + _eat_np(slots, False)
    order = [rest[i] for i in rng.permutation(len(rest))]
    clauses = [_PHRASES[k](slots[k], rng) for k in order]

    sentences = []
    if opening is None:
        take = min(len(clauses), int(rng.integers(1, 4)))
        sentences.append(name + _join(clauses[:take]))
        clauses = clauses[take:]
    else:
        take = min(len(clauses), int(rng.integers(0, 3)))
        first = opening
        if take:
            first = first + _w(rng.choice(["that", "which"])) + _join(clauses[:take])
        sentences.append(first)
        clauses = clauses[take:]
    while clauses:
        take = min(len(clauses), int(rng.integers(1, 4)))
        choices = ["it", "name"] + (["the eat"] if "eatType" in slots else [])
        subj = choices[int(rng.integers(len(choices)))]
        if subj == "it":
            subject = _w("it")
        elif subj == "name":
            subject = name
        else:
            subject = _w("the") + _w(slots["eatType"])
        also = _w("also") if rng.random() < 0.2 else []
        sentences.append(subject + also + _join(clauses[:take]))
        clauses = clauses[take:]
    out = []
    for s in sentences:
        out += s + _w(".")
    return out


def surface(tagged: list) -> str:
    """Readable reference string whose tokenization reproduces the tagged tokens."""
    words, first = [], True
    for tok, tag in tagged:
        if tok in ",." and words:
            words[-1] += tok
            first = tok == "."
            continue
        words.append(tok.capitalize() if first and tag != "PROPN" else tok)
        first = False
    return " ".join(words)


def _cased(tagged: list, slots: dict) -> str:
    text = surface(tagged)
    for key in ("name", "near", "food"):
        if key in slots and slots[key] != "Fast food":
            value = slots[key]
            text = _replace_ci(text, value.lower(), value)
    return text


def _replace_ci(text: str, lower: str, value: str) -> str:
    low = text.lower()
    out, pos = [], 0
    while True:
        k = low.find(lower, pos)
        if k < 0:
            out.append(text[pos:])
            return "".join(out)
        out.append(text[pos:k])
        out.append(value)
        pos = k + len(lower)


def sample_mr(rng) -> dict:
    while True:
        slots = {"name": NAMES[int(rng.integers(len(NAMES)))]}
        for key, values, p in SLOT_ORDER:
            if rng.random() < p:
                slots[key] = values[int(rng.integers(len(values)))]
        if len(slots) >= 3:
            return slots


def mr_string(slots: dict) -> str:
    return ", ".join(f"{k}[{v}]" for k, v in slots.items())


def generate(n_rows: int, seed: int, refs_per_mr=(4, 13), exclude=frozenset()):
    """Rows of (mr string, reference string, tagged tokens), grouped by MR."""
    rng = np.random.default_rng(seed)
    rows, seen = [], set(exclude)
    while len(rows) < n_rows:
        slots = sample_mr(rng)
        mr = mr_string(slots)
        if mr in seen:
            continue
        seen.add(mr)
        k = int(rng.integers(refs_per_mr[0], refs_per_mr[1] + 1))
        for _ in range(min(k, n_rows - len(rows))):
            tagged = realize(slots, rng)
            rows.append((mr, _cased(tagged, slots), tagged))
    return rows


def toy_rows(n: int = 16, seed: int = 7):
    """``n`` distinct MRs with one short reference each."""
    return generate(n, seed, refs_per_mr=(1, 1))


def write_rows(rows, csv_path, tags_path=None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mr", "ref"])
    for mr, ref, _ in rows:
        w.writerow([mr, ref])
    atomic_write(csv_path, buf.getvalue())
    if tags_path is not None:
        lines = []
        for _, ref, tagged in rows:
            toks = tokenize(ref)
            assert toks == [t for t, _ in tagged], (ref, tagged)
            lines += [f"{tok}\t{tag}\n" for tok, tag in tagged] + ["\n"]
        atomic_write(tags_path, "".join(lines))


def write_corpus(out_dir, seed: int = 2018, n_train: int = 42064, n_dev: int = 4673) -> dict:
    """Write ``train.csv/.tags`` and ``dev.csv/.tags`` with disjoint MRs; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = generate(n_train, seed)
    dev = generate(n_dev, seed + 1, exclude=frozenset(r[0] for r in train))
    paths = {}
    for split, rows in (("train", train), ("dev", dev)):
        paths[split] = out / f"{split}.csv"
        paths[f"{split}_tags"] = out / f"{split}.tags"
        write_rows(rows, paths[split], paths[f"{split}_tags"])
    return paths
