import numpy as np
import pytest

from groupreid.config import MatcherConfig
from groupreid.features import build_group_graph
from groupreid.matcher import build_affinity


def random_hist_descriptor(rng, dim=64, bins=16):
    """Descriptor whose 16-bin blocks are random probability vectors."""
    blocks = rng.dirichlet(np.ones(bins), dim // bins)
    return blocks.ravel()


def random_graph(rng, n, dim=64, size=(640.0, 360.0), gid="g"):
    w, h = size
    centers = np.column_stack([rng.uniform(0.1 * w, 0.9 * w, n), rng.uniform(0.1 * h, 0.9 * h, n)])
    desc = np.array([random_hist_descriptor(rng, dim) for _ in range(n)])
    return build_group_graph(desc, centers, size, group_id=gid)


def noisy_copy(rng, g, perm=None, noise=0.01, jitter=3.0, gid="q"):
    perm = np.arange(g.n) if perm is None else np.asarray(perm)
    desc = np.clip(g.descriptors[perm] + rng.normal(0, noise, g.descriptors[perm].shape), 1e-6, None)
    centers = g.centers[perm] + rng.normal(0, jitter, (len(perm), 2))
    return build_group_graph(desc, centers, g.image_size, group_id=gid)


def instance(rng, n_p, n_q, dense=True):
    gP = random_graph(rng, n_p, gid="p")
    perm = rng.permutation(max(n_p, n_q))[:n_q]
    extra = random_graph(rng, max(n_q - n_p, 0) + 1, gid="x")
    src_desc = np.vstack([gP.descriptors, extra.descriptors])
    src_cent = np.vstack([gP.centers, extra.centers])
    src = build_group_graph(src_desc, src_cent, gP.image_size)
    gQ = noisy_copy(rng, src, perm % src.n, noise=0.02, jitter=8.0)
    cfg = MatcherConfig(dense=dense)
    H, gran = build_affinity(gP, gQ, cfg, return_granules=True)
    return gP, gQ, H, gran, cfg


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
