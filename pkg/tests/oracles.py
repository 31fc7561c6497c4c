"""Independent reference implementations used only by the tests."""
from itertools import combinations

import numpy as np


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def max_rel_err(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def brute_force_metrics(dist, q_labels, g_labels, q_cams=None, g_cams=None):
    """CMC and mAP straight from the definitions, one query at a time.

    Sorting uses Python's stable ``sorted`` on (distance, gallery index).
    """
    nq, ng = len(q_labels), len(g_labels)
    first_hits = []
    aps = []
    for i in range(nq):
        order = sorted(range(ng), key=lambda j: (dist[i][j], j))
        if q_cams is not None:
            order = [
                j for j in order
                if not (g_labels[j] == q_labels[i] and g_cams[j] == q_cams[i])
            ]
        relevant = [j for j in order if g_labels[j] == q_labels[i]]
        first = next(r for r, j in enumerate(order, start=1) if g_labels[j] == q_labels[i])
        first_hits.append(first)
        precisions = []
        found = 0
        for r, j in enumerate(order, start=1):
            if g_labels[j] == q_labels[i]:
                found += 1
                precisions.append(found / r)
        aps.append(sum(precisions) / len(relevant))
    cmc = [sum(1 for f in first_hits if f <= r) / nq for r in range(1, ng + 1)]
    return cmc, sum(aps) / nq


def enumerate_pairs(labels):
    pos = neg = 0
    for a, b in combinations(labels, 2):
        if a == b:
            pos += 1
        else:
            neg += 1
    return pos, neg


def micro_batch_gradcheck(ce_mode="fla_weighted", fusion_mode="ffa", seed=0, h=1e-5):
    """Max relative error between backward() and central differences of the
    joint loss on a 4-set, 3-item, 3-identity micro-batch.

    Attention weights are taken from the unperturbed forward pass and held
    fixed while parameters are perturbed, matching their stop-gradient role.
    """
    from idembed.data import MiniBatch
    from idembed.model import EmbedderConfig, init_params
    from idembed.training import TrainConfig, ide_loss
    from idembed import autodiff as ad

    rng = np.random.default_rng(seed)
    cfg = EmbedderConfig(input_dim=6, hidden_dims=(5,), embed_dim=4, num_identities=3)
    params = init_params(cfg, seed)
    for _, node in params.items():
        node.value[...] += 0.1 * rng.standard_normal(node.shape)
    batch = MiniBatch(rng.standard_normal((4, 3, 6)), np.array([0, 0, 2, 2]))
    tcfg = TrainConfig(ce_mode=ce_mode, fusion_mode=fusion_mode)
    params.zero_grad()
    parts = ide_loss(params, batch, tcfg)
    ad.backward(parts.total)
    frozen = parts.quality
    worst = 0.0
    for name, node in params.items():
        numeric = central_diff(
            lambda: float(ide_loss(params, batch, tcfg, frozen=frozen).total.value), node.value, h
        )
        worst = max(worst, max_rel_err(node.grad, numeric))
    return worst
