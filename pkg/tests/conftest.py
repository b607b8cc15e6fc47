import numpy as np
import pytest

from compoundeye.synthgen import SceneSpec, default_layout, render_compound_frame


@pytest.fixture(scope="session")
def layout():
    return default_layout()


@pytest.fixture(scope="session")
def render(layout):
    """Cached renders keyed by scene parameters."""
    cache = {}

    def _render(**kw):
        key = tuple(sorted(kw.items()))
        if key not in cache:
            cache[key] = render_compound_frame(layout, SceneSpec(**kw))
        return cache[key]

    return _render


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def trained_force():
    """The default 3500-sample dataset, its 70/30 split and a net trained with the default schedule."""
    import time

    from compoundeye.force import DEFAULT_HYPER, ForceDataset, ForceNet, train
    from compoundeye.synthgen import force_dataset

    t0 = time.process_time()
    grids, forces = force_dataset(3500, seed=0, grid_noise=0.1)
    ds = ForceDataset.split(grids, forces, 0.7, seed=0)
    hp = dict(DEFAULT_HYPER)
    net = ForceNet.init(0, hp.pop("input_scale"))
    res = train(net, ds, seed=0, **hp)
    return ds, res, time.process_time() - t0
