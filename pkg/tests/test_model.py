from __future__ import annotations

import numpy as np
import pytest

from provg import lingparse as lp
from provg import numerics as nx
from provg import synthdata as sd
from provg.model import GroundingModel
from provg.pcm import ORDERINGS, VARIANTS, ModulatorConfig


@pytest.fixture(scope="module")
def sample():
    return sd.generate(sd.SceneSpec(seed=21), 1)[0]


def forward(model, sample):
    return model.forward(sample.image, lp.decouple_expression(sample.expression))


def test_output_contract_default_model(sample):
    model = GroundingModel(seed=0)
    out = forward(model, sample)
    assert out.box.shape == (4,)
    assert np.all(out.box.data > 0) and np.all(out.box.data < 1)
    assert out.mask_scores.shape == (4096, 2)
    assert out.mask_score_map().shape == (2, 64, 64)
    assert out.predicted_mask().shape == (64, 64)
    assert out.stage_weights.shape == (1, 4)
    assert abs(out.stage_weights.data.sum() - 1.0) <= 1e-6
    assert len(out.traces) == 4


@pytest.mark.parametrize("variant", VARIANTS)
def test_all_variants_share_shapes(sample, variant):
    model = GroundingModel(ModulatorConfig(variant), seed=1)
    out = forward(model, sample)
    assert out.box.shape == (4,)
    assert out.mask_scores.shape == (4096, 2)


@pytest.mark.parametrize("ordering", ORDERINGS)
def test_all_orderings_share_shapes(sample, ordering):
    model = GroundingModel(ModulatorConfig("progressive", ordering), seed=1)
    out = forward(model, sample)
    assert out.box.shape == (4,)
    assert out.mask_scores.shape == (4096, 2)


@pytest.mark.parametrize("flags", [
    {"cfm_enabled": False}, {"lcm_enabled": False}, {"fa_enabled": False},
    {"cfm_enabled": False, "lcm_enabled": False, "fa_enabled": False},
])
def test_ablation_flags_keep_contract(sample, flags):
    model = GroundingModel(ModulatorConfig(enabled=False), seed=2, **flags)
    out = forward(model, sample)
    assert out.box.shape == (4,)
    assert out.mask_scores.shape == (4096, 2)
    if flags.get("fa_enabled") is False:
        assert out.stage_weights is None


def test_same_seed_same_parameters():
    a = GroundingModel(seed=7)
    b = GroundingModel(seed=7)
    for (na, ta), (nb, tb) in zip(a.parameters().items(), b.parameters().items()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)


def test_different_variants_share_initialisation():
    a = GroundingModel(ModulatorConfig("progressive"), seed=9)
    b = GroundingModel(ModulatorConfig("parallel"), seed=9)
    np.testing.assert_array_equal(a.parameters()["pcm.s1.locate.sal_w"].data,
                                  b.parameters()["pcm.s1.locate.sal_w"].data)


def test_forward_deterministic(sample):
    model = GroundingModel(seed=3)
    a = forward(model, sample)
    b = forward(model, sample)
    assert a.box.data.tobytes() == b.box.data.tobytes()
    assert a.mask_scores.data.tobytes() == b.mask_scores.data.tobytes()


def test_load_arrays_roundtrip(sample):
    model = GroundingModel(seed=4)
    arrays = {k: t.data.copy() for k, t in model.parameters().items()}
    other = GroundingModel(seed=5)
    other.load_arrays(arrays)
    a = forward(model, sample)
    b = forward(other, sample)
    np.testing.assert_array_equal(a.box.data, b.box.data)
    with pytest.raises(ValueError):
        other.load_arrays({"nope": np.zeros(3)})


def test_end_to_end_gradient_reaches_every_module(sample):
    model = GroundingModel(seed=6)
    model.zero_grad()
    out = forward(model, sample)
    target = nx.sum_reduce(out.box) + nx.mean_reduce(out.mask_scores)
    target.backward()
    touched = {name.split(".")[0] for name, t in model.parameters().items()
               if t.grad is not None and np.abs(t.grad).max() > 0}
    assert {"text", "image", "pcm", "cfm", "lcd"} <= touched
