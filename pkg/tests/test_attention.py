import numpy as np
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fgbgvos.attention import GateBank, apply_gate, compute_gate, masked_mean, pool_instance_embeddings


def test_pooled_mean_hand_case():
    # fg pixels with embeddings (1,3) and (3,5) -> fg mean (2,4)
    emb = torch.zeros(2, 1, 3)
    emb[:, 0, 0] = torch.tensor([1.0, 3.0])
    emb[:, 0, 1] = torch.tensor([3.0, 5.0])
    emb[:, 0, 2] = torch.tensor([100.0, 100.0])
    label = torch.tensor([[1, 1, 0]])
    vec = pool_instance_embeddings(emb, label, emb, label, 1)
    assert torch.allclose(vec[:2], torch.tensor([2.0, 4.0]))


def test_pooled_uniform_map():
    emb = torch.full((3, 4, 4), 1.5)
    label = torch.zeros(4, 4, dtype=torch.int64)
    label[1:3, 1:3] = 1
    vec = pool_instance_embeddings(emb, label, emb, label, 1)
    assert vec.shape == (12,)
    assert torch.allclose(vec, torch.full_like(vec, 1.5))


def test_pooled_empty_set_is_zero():
    emb = torch.rand(4, 3, 3)
    label = torch.zeros(3, 3, dtype=torch.int64)  # object 1 absent
    vec = pool_instance_embeddings(emb, label, emb, label, 1)
    assert (vec[:4] == 0).all()       # first-frame fg slot
    assert (vec[8:12] == 0).all()     # previous-frame fg slot
    assert (vec[4:8] != 0).any()      # bg slots carry the actual mean


def test_pooled_order_and_background_toggle():
    emb1 = torch.rand(4, 3, 3)
    emb2 = torch.rand(4, 3, 3)
    label = torch.zeros(3, 3, dtype=torch.int64)
    label[0, 0] = 1
    full = pool_instance_embeddings(emb1, label, emb2, label, 1)
    fg_only = pool_instance_embeddings(emb1, label, emb2, label, 1,
                                       use_background=False)
    assert full.shape == (16,) and fg_only.shape == (8,)
    assert torch.equal(fg_only[:4], full[:4])
    assert torch.equal(fg_only[4:], full[8:12])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_pooled_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    emb = torch.from_numpy(rng.normal(size=(3, 4, 4)))
    mask = torch.from_numpy(rng.random((4, 4)) > 0.4)
    base = masked_mean(emb, mask)
    perm = torch.from_numpy(rng.permutation(16))
    emb_p = emb.reshape(3, -1)[:, perm].reshape(3, 4, 4)
    mask_p = mask.reshape(-1)[perm].reshape(4, 4)
    assert torch.allclose(base, masked_mean(emb_p, mask_p), atol=1e-12)


def test_pooled_scale_linearity():
    emb = torch.rand(5, 4, 4)
    mask = torch.rand(4, 4) > 0.5
    assert torch.allclose(masked_mean(2.0 * emb, mask), 2.0 * masked_mean(emb, mask),
                          atol=1e-6)


def test_gate_zero_preactivation_halves():
    fc = torch.nn.Linear(8, 6)
    torch.nn.init.zeros_(fc.weight)
    torch.nn.init.zeros_(fc.bias)
    gate = compute_gate(torch.randn(8), fc)
    assert torch.allclose(gate, torch.full((6,), 0.5))
    x = torch.rand(1, 6, 2, 2)
    assert torch.allclose(apply_gate(x, gate), 0.5 * x)


def test_gate_saturation_is_identity():
    fc = torch.nn.Linear(4, 3)
    torch.nn.init.zeros_(fc.weight)
    torch.nn.init.constant_(fc.bias, 50.0)
    gate = compute_gate(torch.randn(4), fc)
    x = torch.rand(1, 3, 2, 2)
    assert torch.allclose(apply_gate(x, gate), x, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gate_bounded(seed):
    torch.manual_seed(seed)
    bank = GateBank(8, [4, 6])
    gates = bank(torch.randn(8) * 3)
    for g in gates:
        assert (g > 0).all() and (g < 1).all()


def test_gate_bank_batched():
    torch.manual_seed(0)
    bank = GateBank(6, [4])
    vecs = torch.randn(3, 6)
    out = bank(vecs)[0]
    assert out.shape == (3, 4)
    single = bank(vecs[1])[0]
    assert torch.allclose(out[1], single)
