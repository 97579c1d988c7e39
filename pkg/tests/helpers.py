import hashlib

import numpy as np

from adfl import nn
from adfl.data import ClientShard


def make_shard(dataset, client_id=0):
    return ClientShard(
        client_id=client_id,
        dataset=dataset,
        present_labels=frozenset(np.unique(dataset.labels).tolist()),
        indices=np.arange(len(dataset)),
    )


def params_digest(params) -> str:
    h = hashlib.sha256()
    for a in params.layers:
        h.update(a.tobytes())
    return h.hexdigest()


def random_params(arch, seed):
    p = nn.init_params(arch, seed)
    rng = np.random.default_rng(seed + 1000)
    for a in p.layers:
        a += rng.normal(0, 0.5, a.shape)
    return p
