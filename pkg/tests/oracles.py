"""Naive pair-enumeration reference implementations of every loss, in plain
numpy. Deliberately written as direct double loops over embeddings, sharing no
code with the package, so they can serve as independent oracles."""

import numpy as np


def h_oracle(u, v, tau):
    cos = float(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return np.exp(cos / tau)


def tcl_oracle(fast, slow, tau):
    """Mean over both anchor directions of every video."""
    B = len(fast)
    terms = []
    for i in range(B):
        for anchor, pos in ((fast[i], slow[i]), (slow[i], fast[i])):
            num = h_oracle(anchor, pos, tau)
            den = num
            for j in range(B):
                if j == i:
                    continue
                den += h_oracle(anchor, slow[j], tau) + h_oracle(anchor, fast[j], tau)
            terms.append(-np.log(num / den))
    return float(np.mean(terms))


def bgm_oracle(fast, slow, fast_mixed, slow_mixed, tau):
    """Mean over all four anchor roles of every video."""
    B = len(fast)
    groups = [
        {"f": fast[i], "s": slow[i], "fm": fast_mixed[i], "sm": slow_mixed[i]}
        for i in range(B)
    ]
    # positive sets per anchor role: other speed same provenance, other speed
    # other provenance, same speed other provenance
    roles = {
        "f": ("s", "sm", "fm"),
        "s": ("f", "fm", "sm"),
        "fm": ("sm", "s", "f"),
        "sm": ("fm", "f", "s"),
    }
    terms = []
    for i in range(B):
        for role, pos_roles in roles.items():
            anchor = groups[i][role]
            positives = [groups[i][r] for r in pos_roles]
            den = sum(h_oracle(anchor, p, tau) for p in positives)
            for j in range(B):
                if j == i:
                    continue
                for r in ("f", "s", "fm", "sm"):
                    den += h_oracle(anchor, groups[j][r], tau)
            term = 0.0
            for p in positives:
                term += -np.log(h_oracle(anchor, p, tau) / den)
            terms.append(term / len(positives))
    return float(np.mean(terms))


def tpl_oracle(fast, slow, labels, tau, supcon=False):
    """Members are all admitted; anchors are both speeds of every member.
    Positives: every member embedding sharing the anchor's label, minus the
    anchor itself. Denominator as printed: positives plus both speeds of every
    other member (same-label ones therefore counted twice); `supcon` instead
    counts every non-anchor member embedding once. Empty-positive anchors
    contribute zero."""
    m = len(fast)
    terms = []
    for i in range(m):
        for anchor_speed in ("f", "s"):
            anchor = fast[i] if anchor_speed == "f" else slow[i]
            positives = []
            for p in range(m):
                if labels[p] != labels[i]:
                    continue
                for s in ("f", "s"):
                    if p == i and s == anchor_speed:
                        continue
                    positives.append(fast[p] if s == "f" else slow[p])
            if not positives:
                terms.append(0.0)
                continue
            if supcon:
                den = 0.0
                for a in range(m):
                    for s in ("f", "s"):
                        if a == i and s == anchor_speed:
                            continue
                        den += h_oracle(anchor, fast[a] if s == "f" else slow[a], tau)
            else:
                den = sum(h_oracle(anchor, p, tau) for p in positives)
                for a in range(m):
                    if a == i:
                        continue
                    den += h_oracle(anchor, fast[a], tau) + h_oracle(anchor, slow[a], tau)
            term = 0.0
            for p in positives:
                term += -np.log(h_oracle(anchor, p, tau) / den)
            terms.append(term / len(positives))
    return float(np.mean(terms))


def ce_oracle(z, y, eps):
    z = np.asarray(z, dtype=np.float64)
    c = len(z)
    e = np.exp(z - z.max())
    probs = e / e.sum()
    target = np.full(c, eps / (c - 1))
    target[y] = 1.0 - eps
    return float(-(target * np.log(probs)).sum())
