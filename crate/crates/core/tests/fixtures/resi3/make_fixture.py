"""Writes the 3-model fixture family and its oracle values (numpy/scipy).

Run from this directory: python3 make_fixture.py
"""
import json

import numpy as np
from scipy.stats import kendalltau, spearmanr

N = 6
labels = np.array([0, 1, 0, 1, 1, 0])
rng = np.random.default_rng(20240611)

models = {}
for mid in ["model_a", "model_b", "model_c"]:
    layers = {k: np.round(rng.uniform(-2, 2, size=(N, 3)), 1) for k in (0, 1)}
    models[mid] = {"layers": layers}

# dyadic probabilities so every row sums to exactly 1
hi, lo = 0.75, 0.25
preds = {
    "model_a": [0, 1, 0, 1, 1, 0],
    "model_b": [0, 1, 0, 1, 0, 0],
    "model_c": [1, 1, 0, 0, 0, 0],
}
conf = {"model_a": hi, "model_b": 0.625, "model_c": 0.875}
for mid, p in preds.items():
    c = conf[mid]
    out = np.array([[c, 1 - c] if k == 0 else [1 - c, c] for k in p])
    models[mid]["outputs"] = out
ood = {"model_a": 0.6, "model_b": 0.5, "model_c": 0.3}


def fmt(x):
    return repr(float(x))


def write_csv(path, m):
    with open(path, "w") as f:
        for row in np.atleast_2d(m):
            f.write(",".join(fmt(v) for v in row) + "\n")


for mid, m in models.items():
    for k, rep in m["layers"].items():
        write_csv(f"{mid}_layer{k}.csv", rep)
    write_csv(f"{mid}_outputs.csv", m["outputs"])
write_csv("labels.csv", labels.reshape(-1, 1))

H = np.eye(N) - np.ones((N, N)) / N


def hsic(a, b):
    return np.sum((H @ a @ H) * b) / (N - 1) ** 2


def cka(a, b):
    return hsic(a, b) / np.sqrt(hsic(a, a) * hsic(b, b))


def markov(s):
    c = H @ s @ H
    alpha = 1.0 / (N * np.abs(c).max())
    return np.ones((N, N)) / N + alpha * c


def fused(mid):
    acc = np.eye(N)
    for k in (0, 1):
        r = models[mid]["layers"][k]
        acc = markov(r @ r.T) @ acc
    return acc


def acc(mid):
    return float(np.mean(np.argmax(models[mid]["outputs"], axis=1) == labels))


def jsd_rows(p, q):
    m = 0.5 * (p + q)

    def kl(a):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(a > 0, a * np.log(a / m), 0.0)
        return t.sum(axis=1)

    return float(np.mean(0.5 * kl(p) + 0.5 * kl(q)))


ids = sorted(models)
pairs = [(ids[i], ids[j]) for i in range(3) for j in range(i + 1, 3)]
deltas = {
    "acc": [abs(acc(a) - acc(b)) for a, b in pairs],
    "disagreement": [
        float(np.mean(np.argmax(models[a]["outputs"], 1) != np.argmax(models[b]["outputs"], 1)))
        for a, b in pairs
    ],
    "jsd": [jsd_rows(models[a]["outputs"], models[b]["outputs"]) for a, b in pairs],
}


def lin(mid, k):
    r = models[mid]["layers"][k]
    return r @ r.T


scores = {
    "cka": [cka(lin(a, 1), lin(b, 1)) for a, b in pairs],
    "ad_cka": [cka(fused(a), fused(b)) for a, b in pairs],
}

oracle = {"pairs": [list(p) for p in pairs], "deltas": deltas, "scores": scores, "resi": {}}
for measure, s in scores.items():
    for target, d in deltas.items():
        oracle["resi"][f"{measure}/{target}"] = {
            "spearman_rho": float(spearmanr(s, d)[0]),
            "kendall_tau": float(kendalltau(s, d)[0]),
        }

ref = max(ids, key=lambda m: (ood[m], [-ord(ch) for ch in m]))
others = [m for m in ids if m != ref]
dis = [1 - cka(lin(ref, 1), lin(m, 1)) for m in others]
gap = [abs(ood[ref] - ood[m]) for m in others]
oracle["grs_cka"] = {
    "reference_model": ref,
    "dissimilarity": dis,
    "delta": gap,
    "spearman_rho": float(spearmanr(dis, gap)[0]),
    "kendall_tau": float(kendalltau(dis, gap)[0]),
}

manifest = {
    "models": [
        {
            "model_id": mid,
            "layers": {str(k): f"{mid}_layer{k}.csv" for k in (0, 1)},
            "outputs": f"{mid}_outputs.csv",
            "labels": "labels.csv",
            "ood_accuracy": ood[mid],
        }
        for mid in ids
    ],
    "measure": {"id": "cka", "kernel": "linear", "layer_indices": [1]},
    "protocol": {"id": "resi_test1"},
}
with open("manifest.json", "w") as f:
    json.dump(manifest, f, indent=2)
    f.write("\n")
with open("oracle.json", "w") as f:
    json.dump(oracle, f, indent=2)
    f.write("\n")
