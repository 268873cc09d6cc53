#!/usr/bin/env python3
"""Reference BLEU-4 / ROUGE-L / CIDEr-D implementations used only to derive
the golden constants frozen into tests/test_metrics.cpp. Kept deliberately
separate from the C++ code: the algorithms are transcribed from their
published definitions (Papineni et al. 2002; Lin 2004; Vedantam et al. 2015,
with the "D" modifications of the reference cider_scorer).

Run: python3 tools/reference_metrics.py
"""
import math
from collections import Counter, defaultdict


def ngrams(toks, n):
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def bleu4(cand, refs):
    logs = 0.0
    for n in range(1, 5):
        c = ngrams(cand, n)
        maxref = Counter()
        for r in refs:
            for k, v in ngrams(r, n).items():
                maxref[k] = max(maxref[k], v)
        total = sum(c.values())
        clipped = sum(min(v, maxref[k]) for k, v in c.items())
        p = max(clipped, 1e-9) / total if total > 0 else 1e-9
        logs += math.log(p)
    c_len = len(cand)
    r_len = min((abs(len(r) - c_len), len(r)) for r in refs)[1]
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(logs / 4.0)


def lcs(a, b):
    dp = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            dp[i][j] = dp[i - 1][j - 1] + 1 if a[i - 1] == b[j - 1] else max(
                dp[i - 1][j], dp[i][j - 1])
    return dp[-1][-1]


def rouge_l(cand, refs, beta=1.2):
    best = 0.0
    for r in refs:
        l = lcs(cand, r)
        if l == 0:
            continue
        prec, rec = l / len(cand), l / len(r)
        best = max(best, (1 + beta**2) * prec * rec / (rec + beta**2 * prec))
    return best


def cider_d(cands, refs_per_item, sigma=6.0):
    # df over unique ref ngrams per item ("image")
    df = defaultdict(float)
    for refs in refs_per_item:
        seen = set()
        for r in refs:
            for n in range(1, 5):
                seen.update(ngrams(r, n).keys())
        for k in seen:
            df[k] += 1.0
    log_images = math.log(len(refs_per_item))

    def vecs(toks):
        vec, norm, length = [], [], 0.0
        for n in range(1, 5):
            v = {}
            sq = 0.0
            for k, tf in ngrams(toks, n).items():
                w = tf * (log_images - math.log(max(1.0, df[k])))
                v[k] = w
                sq += w * w
                if n == 2:
                    length += tf
            vec.append(v)
            norm.append(math.sqrt(sq))
        return vec, norm, length

    out = []
    for cand, refs in zip(cands, refs_per_item):
        hv, hn, hl = vecs(cand)
        acc = [0.0] * 4
        for r in refs:
            rv, rn, rl = vecs(r)
            pen = math.exp(-((hl - rl)**2) / (2 * sigma**2))
            for n in range(4):
                val = sum(min(w, rv[n].get(k, 0.0)) * rv[n].get(k, 0.0)
                          for k, w in hv[n].items())
                if hn[n] != 0 and rn[n] != 0:
                    val /= hn[n] * rn[n]
                acc[n] += val * pen
        out.append(10.0 * sum(acc) / 4.0 / len(refs))
    return out


CORPUS = [
    ("the red chair is left of the blue table",
     ["the red chair is to the left of the blue table",
      "a red chair left of a blue table"]),
    ("a green lamp above the white shelf",
     ["a green lamp is above the white shelf"]),
    ("this is a black monitor . it is behind the brown box .",
     ["this is a black monitor . it is behind the brown box .",
      "a black monitor behind a brown box ."]),
]

if __name__ == "__main__":
    cands = [c.split() for c, _ in CORPUS]
    refs = [[r.split() for r in rs] for _, rs in CORPUS]
    cd = cider_d(cands, refs)
    for i, (c, rs) in enumerate(CORPUS):
        print(f"item {i}: bleu4={bleu4(cands[i], refs[i]):.15f} "
              f"rouge_l={rouge_l(cands[i], refs[i]):.15f} "
              f"cider_d={cd[i]:.15f}")
