"""Top-N metrics: target hit ratio, camouflage hit ratio, precision and NDCG at 10."""
from __future__ import annotations

import math
from fractions import Fraction

TOP_N = 10


def hit_ratio_at_10(recommendations: dict, targets) -> float:
    """Mean over targets of the fraction of users whose list contains the target.

    Hits are counted exactly and divided once, so the value is correctly rounded.
    """
    targets = list(dict.fromkeys(targets))
    if not targets:
        raise ValueError("target set is empty")
    if not recommendations:
        return 0.0
    n_users = len(recommendations)
    hits = dict.fromkeys(targets, 0)
    for lst in recommendations.values():
        for item in set(lst[:TOP_N]):
            if item in hits:
                hits[item] += 1
    return float(Fraction(sum(hits.values()), n_users * len(targets)))


def camouflage_items(profiles) -> set:
    """Union of selected and filler items over injected profiles."""
    out = set()
    for p in profiles:
        out.update(i for i, part in p.part_of.items() if part in ("selected", "filler"))
    return out


def hr_prime_at_10(recommendations: dict, profiles) -> float:
    """Hit ratio of the profiles' selected and filler items."""
    items = camouflage_items(profiles)
    if not items:
        raise ValueError("profiles carry no selected or filler items")
    return hit_ratio_at_10(recommendations, sorted(items, key=str))


def _denominator(pred):
    return TOP_N if len(pred) >= TOP_N else len(pred)


def precision_at_10(predicted: dict, true: dict) -> float:
    """Mean over users of ``|P_u & T_u| / 10`` (a shorter list uses its own length)."""
    if not predicted:
        raise ValueError("no users to evaluate")
    total = Fraction(0)
    for u, pred in predicted.items():
        pred = pred[:TOP_N]
        den = _denominator(pred)
        if den:
            total += Fraction(len(set(pred) & set(true.get(u, ()))), den)
    return float(total / len(predicted))


def ndcg_at_10(predicted: dict, true: dict, literal: bool = False) -> float:
    """Mean over users of DCG@10 with gain ``2^rel - 1``, normalised by the ideal DCG.

    ``literal=True`` evaluates the unnormalised gain ``2^(rel - 1)`` instead, which
    awards 0.5 to every miss; it exists for comparison with published numbers and
    is not bounded by 1.
    """
    if not predicted:
        raise ValueError("no users to evaluate")
    total = 0.0
    for u, pred in predicted.items():
        rel = set(true.get(u, ()))
        pred = pred[:TOP_N]
        if literal:
            total += sum(2.0 ** ((p in rel) - 1) / math.log2(j + 2) for j, p in enumerate(pred))
            continue
        if not rel:
            continue
        dcg = sum(1.0 / math.log2(j + 2) for j, p in enumerate(pred) if p in rel)
        idcg = sum(1.0 / math.log2(j + 2) for j in range(min(len(rel), TOP_N)))
        total += dcg / idcg
    return total / len(predicted)
