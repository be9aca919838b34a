"""Independent reference implementations used as test oracles.

Everything here is written as plain loops over Python floats (or the most
literal numpy expression) so that it shares no code path with the package.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def mlp2(W1, b1, W2, b2, x):
    """Straight-line two-layer ReLU network."""
    h = []
    for i in range(len(b1)):
        s = b1[i]
        for j in range(len(x)):
            s += W1[i][j] * x[j]
        h.append(max(s, 0.0))
    y = []
    for i in range(len(b2)):
        s = b2[i]
        for j in range(len(h)):
            s += W2[i][j] * h[j]
        y.append(s)
    return np.array(y)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / math.sqrt(sum(float(t) * float(t) for t in v))


def cosine(a, b):
    dot = sum(float(x) * float(y) for x, y in zip(a, b))
    return dot / (math.sqrt(sum(float(x) ** 2 for x in a)) * math.sqrt(sum(float(y) ** 2 for y in b)))


def infonce(anchor, rows, positive, domain, tau):
    """-sum over positives of log(exp(cos/tau) / sum over domain exp(cos/tau))."""
    sims = [cosine(anchor, r) / tau for r in rows]
    denom = sum(math.exp(s) for s, d in zip(sims, domain) if d)
    return -sum(math.log(math.exp(s) / denom) for s, p in zip(sims, positive) if p)


def softmax_xent(logits, label):
    m = max(logits)
    return -(logits[label] - m - math.log(sum(math.exp(v - m) for v in logits)))


def memory_score(encode, decode, bank_rows, scene, obj):
    """Memory-retrieval score spelled out: weights from a hand softmax, weighted row sum,
    decode, squared error."""
    z = encode(scene, obj)
    dots = [sum(float(a) * float(b) for a, b in zip(z, row)) for row in bank_rows]
    m = max(dots)
    ex = [math.exp(d - m) for d in dots]
    tot = sum(ex)
    w = [e / tot for e in ex]
    mix = np.zeros(len(z))
    for wi, row in zip(w, bank_rows):
        mix = mix + wi * np.asarray(row)
    recon = decode(mix)
    return sum((float(a) - float(b)) ** 2 for a, b in zip(obj, recon))


def dbscan_closure(points, eps, min_pts):
    """Brute-force DBSCAN: clusters are connected components of core points
    under the eps-neighbour relation; each border point joins the cluster of
    its first core neighbour in component discovery order.

    Returns a canonical labelling (clusters numbered by their smallest member
    index) so results can be compared with any valid DBSCAN labelling up to
    the border tie-break.
    """
    n = len(points)
    dist = [[1.0 - cosine(points[i], points[j]) for j in range(n)] for i in range(n)]
    nbr = [[j for j in range(n) if dist[i][j] <= eps] for i in range(n)]
    core = [len(nbr[i]) >= min_pts for i in range(n)]
    comp = [-1] * n
    k = 0
    for i in range(n):
        if not core[i] or comp[i] >= 0:
            continue
        stack = [i]
        comp[i] = k
        while stack:
            a = stack.pop()
            for b in nbr[a]:
                if core[b] and comp[b] < 0:
                    comp[b] = k
                    stack.append(b)
        k += 1
    return comp, core, nbr


def gaussian_weight(offset, sigma):
    radius = math.ceil(3 * sigma)
    norm = sum(math.exp(-0.5 * (t / sigma) ** 2) for t in range(-radius, radius + 1))
    return math.exp(-0.5 * (offset / sigma) ** 2) / norm


def auc_pairs(scores, labels):
    """Mann-Whitney by enumerating every (positive, negative) pair."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    credit = 0.0
    for p, q in itertools.product(pos, neg):
        credit += 1.0 if p > q else 0.5 if p == q else 0.0
    return credit / (len(pos) * len(neg))


def rotate(point, parent, alpha):
    """Row vector times [[cos, sin], [-sin, cos]] about the parent."""
    dx, dy = point[0] - parent[0], point[1] - parent[1]
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([dx * c - dy * s + parent[0], dx * s + dy * c + parent[1]])


def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` at array ``x`` (modified in place
    and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def full_object_score(model, banks, scene, app, motion):
    """Final object score from the raw parameters, with loops throughout.

    Encoders and decoders are evaluated with ``mlp2``; the motion term is the
    binary head's abnormal probability when the model has one, else the
    motion reconstruction error.
    """

    def enc(stream):
        p = model.encoders[stream]
        obj = app if stream == "app" else motion
        x = list(scene) + list(obj) if model.config.scene_aware else list(obj)
        return unit(mlp2(p.W1, p.b1, p.W2, p.b2, x))

    def dec(stream):
        p = model.decoders[stream]
        return lambda z: mlp2(p.W1, p.b1, p.W2, p.b2, z)

    s_app = memory_score(lambda s, o: enc("app"), dec("app"), banks["app"].rows, scene, app)
    if motion is None:
        return s_app
    if model.binary is not None:
        b = model.binary
        y = mlp2(b.W1, b.b1, b.W2, b.b2, enc("mot"))
        s_mot = 1.0 / (1.0 + math.exp(y[0] - y[1]))
    else:
        s_mot = memory_score(lambda s, o: enc("mot"), dec("mot"), banks["mot"].rows, scene, motion)
    return (s_app + s_mot) / 2.0
