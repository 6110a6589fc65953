"""Slow, independent reference implementations used only by the tests.

Each oracle is written from the metric definitions with a different algorithm
from the package code: list-removal matching instead of Counter intersection,
recursive LCS, exact Fraction arithmetic, explicit pair counting, and so on.
"""

from __future__ import annotations

import itertools
import math
import unicodedata
from fractions import Fraction
from functools import lru_cache


def tokens(text: str) -> list[str]:
    out = []
    for raw in text.split():
        chars = list(raw)
        while chars and unicodedata.category(chars[0]).startswith("P"):
            chars.pop(0)
        while chars and unicodedata.category(chars[-1]).startswith("P"):
            chars.pop()
        if chars:
            out.append("".join(chars).lower())
    return out


def grams(seq, n):
    return [tuple(seq[i : i + n]) for i in range(len(seq) - n + 1)]


def clipped_matches(cand_grams, ref_grams) -> int:
    pool = list(ref_grams)
    hits = 0
    for g in cand_grams:
        if g in pool:
            pool.remove(g)
            hits += 1
    return hits


def rouge_n(cand, ref, n):
    c, r = grams(cand, n), grams(ref, n)
    m = clipped_matches(c, r)
    return (Fraction(m, len(c)) if c else Fraction(0), Fraction(m, len(r)) if r else Fraction(0))


def lcs(a, b) -> int:
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def rouge_l(cand, ref):
    m = lcs(cand, ref)
    return (Fraction(m, len(cand)) if cand else Fraction(0), Fraction(m, len(ref)) if ref else Fraction(0))


def f1(p, r):
    return 2 * p * r / (p + r) if p + r else 0


def bleu(cand, ref, max_n=4):
    if not cand:
        return 0.0
    precisions = []
    for n in range(1, max_n + 1):
        c = grams(cand, n)
        m = clipped_matches(c, grams(ref, n))
        if m == 0 and n == 1:
            return 0.0
        precisions.append(Fraction(m, len(c)) if m else (Fraction(m) + Fraction(1, 10)) / (len(c) + Fraction(1, 10)))
    geo = math.prod(float(p) for p in precisions) ** (1 / max_n)
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * geo


def chrf(cand: str, ref: str, max_n=6, beta=2):
    c_s = "".join(ch for ch in cand if not ch.isspace())
    r_s = "".join(ch for ch in ref if not ch.isspace())
    per_order = []
    for n in range(1, max_n + 1):
        c, r = grams(c_s, n), grams(r_s, n)
        if not c and not r:
            continue
        m = clipped_matches(c, r)
        p = Fraction(m, len(c)) if c else Fraction(0)
        rc = Fraction(m, len(r)) if r else Fraction(0)
        b2 = beta * beta
        per_order.append((1 + b2) * p * rc / (b2 * p + rc) if p + rc else Fraction(0))
    return float(sum(per_order) / len(per_order)) if per_order else 0.0


def meteor_from_alignment(n_cand, n_ref, alignment):
    m = len(alignment)
    if m == 0:
        return 0.0
    p, r = Fraction(m, n_cand), Fraction(m, n_ref)
    f_mean = 10 * p * r / (r + 9 * p)
    chunks = 1 + sum(
        1 for (i0, j0), (i1, j1) in zip(alignment, alignment[1:]) if not (i1 == i0 + 1 and j1 == j0 + 1)
    )
    return float(f_mean * (1 - Fraction(1, 2) * Fraction(chunks, m) ** 3))


def syllables(word: str) -> int:
    vowels = set("aeiouy")
    groups, inside = 0, False
    for ch in word.lower():
        if ch in vowels and not inside:
            groups += 1
        inside = ch in vowels
    if word.lower().endswith("e") and not word.lower().endswith("le"):
        groups -= 1
    return groups if groups > 0 else 1


def sentence_count(text: str) -> int:
    count, start, i = 0, 0, 0
    while i < len(text):
        if text[i] in ".!?":
            j = i
            while j < len(text) and text[j] in ".!?":
                j += 1
            if j == len(text) or text[j].isspace():
                if tokens(text[start:i]):
                    count += 1
                start = j
            i = j
        else:
            i += 1
    if tokens(text[start:]):
        count += 1
    return max(count, 1)


def fre(text: str) -> float:
    w = tokens(text)
    s = sentence_count(text)
    syl = sum(syllables(x) for x in w)
    return 206.835 - 1.015 * (len(w) / s) - 84.6 * (syl / len(w))


def dcr(text: str, familiar) -> float:
    w = tokens(text)
    s = sentence_count(text)
    pct = 100 * sum(1 for x in w if x not in familiar) / len(w)
    score = 0.1579 * pct + 0.0496 * (len(w) / s)
    return score + 3.6365 if pct > 5 else score


def kendall_pairs(x, y):
    """tau-b by enumerating every pair."""
    conc = disc = tx = ty = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        dx, dy = x[i] - x[j], y[i] - y[j]
        if dx == 0 and dy == 0:
            continue
        if dx == 0:
            tx += 1
        elif dy == 0:
            ty += 1
        elif (dx > 0) == (dy > 0):
            conc += 1
        else:
            disc += 1
    denom = math.sqrt((conc + disc + tx) * (conc + disc + ty))
    return (conc - disc) / denom


def mode_then_median(scores):
    best = max(scores.count(s) for s in set(scores))
    modes = [s for s in set(scores) if scores.count(s) == best]
    if len(modes) == 1:
        return modes[0]
    return sorted(scores)[(len(scores) + 1) // 2 - 1]


def alpha_coincidence(units, metric):
    """Krippendorff's alpha straight from the coincidence-matrix definition.

    ``units`` is a list of lists of values (missing already dropped).
    """
    units = [u for u in units if len(u) >= 2]
    values = sorted({v for u in units for v in u})
    o = {(c, k): Fraction(0) for c in values for k in values}
    for u in units:
        m = len(u)
        for a, b in itertools.permutations(range(m), 2):
            o[(u[a], u[b])] += Fraction(1, m - 1)
    n_c = {c: sum(o[(c, k)] for k in values) for c in values}
    n = sum(n_c.values())
    if n <= 1:
        return None
    d_o = sum(o[(c, k)] * metric(c, k, n_c) for c in values for k in values)
    d_e = sum(n_c[c] * n_c[k] * metric(c, k, n_c) for c in values for k in values) / (n - 1)
    if d_e == 0:
        return 1.0
    return float(1 - d_o / d_e)


def interval(c, k, _n):
    return Fraction(c - k) ** 2


def nominal(c, k, _n):
    return 0 if c == k else 1


def ordinal(c, k, n_c):
    if c == k:
        return 0
    lo, hi = min(c, k), max(c, k)
    between = sum(n_c[v] for v in n_c if lo <= v <= hi)
    return (between - (n_c[c] + n_c[k]) / 2) ** 2
