"""Helpers shared by the demo scripts: one trained twin, cached on disk."""

import os
import time
from pathlib import Path

import numpy as np

from sagtwin import detection as dt
from sagtwin import expert as ex
from sagtwin import narx as nx
from sagtwin import regulatory as rg
from sagtwin import scenarios as sc
from sagtwin import twin as tw

ARTIFACTS = Path(os.environ.get("SAGTWIN_DEMO_DIR", Path(__file__).with_name("_artifacts")))
PLANT = sc.SyntheticPlant()
TRAIN_STEPS = 8160  # ~68 h of 30 s samples
TEST_STEPS = 1013  # ~8.4 h


def training_data(seed=0):
    schedule = sc.random_limit_schedule(np.random.default_rng(seed + 50), TRAIN_STEPS)
    return sc.generate(PLANT, steps=TRAIN_STEPS, seed=seed, limit_schedule=schedule)


def test_data(seed=100):
    return sc.generate(PLANT, steps=TEST_STEPS, seed=seed)


def trained_twin(seed=0):
    """Regulatory model, 12-lag/2-neuron NARX and residual baselines.

    Trained once (a couple of minutes on one core) and reloaded afterwards.
    """
    reg_path, net_path = ARTIFACTS / "regulatory.json", ARTIFACTS / "narx.json"
    train = training_data(seed)
    if reg_path.exists() and net_path.exists():
        reg, net = rg.load_model(reg_path), nx.load_model(net_path)
    else:
        ARTIFACTS.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        print("training the twin (cached afterwards in %s) ..." % ARTIFACTS)
        search = rg.search_order(train, seed=seed)
        reg = search.models[search.order]
        net = nx.train(train, nx.DEFAULT_LAGS, nx.DEFAULT_LAGS, nx.DEFAULT_WIDTH, nx.TrainConfig(seed=seed))
        rg.save_model(reg, reg_path)
        nx.save_model(net, net_path)
        print(f"  done in {time.perf_counter() - t0:.0f} s, regulatory order {reg.order}")
    res, _ = nx.proportional_residuals(net, train)
    baselines = tuple(dt.fingerprint(res[:, j]) for j in range(2))
    return tw.TwinComponents(ex.default_rulebase(), reg, net), baselines
