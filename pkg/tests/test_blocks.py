import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fishfsr.blocks import (
    MSRB,
    PAFB,
    ChannelAttention,
    ConfigError,
    DownModule,
    PAFBGroup,
    RefineBlock,
    ResBlock,
    SpatialAttention,
    UpModule,
    reduction_ratio,
)
from fishfsr.rng import Rng
from fishfsr.tensor import ContractError, Tensor, nearest_resize

C = 8


def feat(seed, c=C, h=6, w=None):
    return Tensor(Rng(seed).normal(size=(2, c, h, w or h)).astype(np.float32))


def mask(seed, h=3):
    return Tensor((Rng(seed).random((2, 1, h, h)) > 0.5).astype(np.float32))


def zero(conv):
    conv.weight.data[...] = 0
    conv.bias.data[...] = 0


# ---------------------------------------------------------------- shapes

def test_shape_preserving_blocks():
    x = feat(0)
    assert ResBlock(C, Rng(1))(x).shape == x.shape
    assert ChannelAttention(C, Rng(1))(x).shape == x.shape
    assert SpatialAttention(Rng(1))(x).shape == x.shape
    assert RefineBlock(C, Rng(1))(x, feat(2, h=3)).shape == x.shape
    assert MSRB(C, 3, Rng(1))(x, [feat(2, h=3), feat(3), feat(4, h=12)]).shape == x.shape
    for toggles in itertools.product((False, True), repeat=3):
        block = PAFB(C, Rng(1), use_ca=toggles[0], use_sa=toggles[1], use_pmb=toggles[2])
        assert block(x, mask(5)).shape == x.shape


def test_up_down_shapes():
    x = feat(0)
    assert UpModule(C, Rng(1))(x).shape == (2, C, 12, 12)
    assert DownModule(C, Rng(1))(x).shape == (2, C, 3, 3)


def test_attention_gate_shapes():
    x = feat(0)
    assert ChannelAttention(C, Rng(1)).gate(x).shape == (2, C, 1, 1)
    assert SpatialAttention(Rng(1)).gate(x).shape == (2, 1, 6, 6)


# ---------------------------------------------------------------- identities

def test_resblock_zeroed_path_is_identity():
    block, x = ResBlock(C, Rng(1)), feat(0)
    zero(block.conv2)
    np.testing.assert_array_equal(block(x).data, x.data)


def test_refine_zeroed_projection_is_identity():
    block, x = RefineBlock(C, Rng(1)), feat(0)
    zero(block.proj2)
    np.testing.assert_array_equal(block(x, feat(1, h=3)).data, x.data)


def test_refine_error_zero_for_matching_previous():
    prev = feat(0, h=3)
    current = nearest_resize(prev, 6, 6)
    err = RefineBlock(C, Rng(1)).error(current, prev)
    assert np.all(err.data == 0)


def test_msrb_zeroed_fusion_is_identity():
    block, x = MSRB(C, 2, Rng(1)), feat(0)
    zero(block.fuse)
    np.testing.assert_array_equal(block(x, [feat(1, h=3), feat(2)]).data, x.data)


@pytest.mark.parametrize("toggles", list(itertools.product((False, True), repeat=3)))
def test_pafb_zeroed_output_is_identity(toggles):
    ca, sa, pmb = toggles
    block, x = PAFB(C, Rng(1), use_ca=ca, use_sa=sa, use_pmb=pmb), feat(0)
    if (ca or sa) and pmb:
        zero(block.final_fuse)
    elif pmb:
        zero(block.parsing_fuse)
    elif ca and sa:
        zero(block.attention_fuse)
    else:
        zero(block.front2)
    np.testing.assert_array_equal(block(x, mask(2)).data, x.data)


def test_pafb_all_off_is_resblock():
    x = feat(0)
    block = PAFB(C, Rng(7), use_ca=False, use_sa=False, use_pmb=False)
    res = ResBlock(C, Rng(7))
    np.testing.assert_array_equal(block(x, None).data, res(x).data)


# ---------------------------------------------------------------- parameters

def test_reduction_ratio():
    assert reduction_ratio(64) == 16 and reduction_ratio(32) == 16
    assert reduction_ratio(16) == 4 and reduction_ratio(8) == 4
    assert ChannelAttention(64, Rng(0)).reduce.cout == 4
    assert ChannelAttention(16, Rng(0)).reduce.cout == 4
    assert ChannelAttention(8, Rng(0), reduction=2).reduce.cout == 4


def test_channel_attention_indivisible():
    with pytest.raises(ConfigError, match="reduction"):
        ChannelAttention(6, Rng(0))


def _sublayers(block):
    return {name.split(".")[0] for name, _ in block.named_parameters()}


def test_pafb_builds_only_enabled_branches():
    assert _sublayers(PAFB(C, Rng(0))) == {
        "front1", "front2", "ca", "sa", "attention_fuse",
        "feature_proj", "parsing_proj", "parsing_fuse", "final_fuse"}
    assert _sublayers(PAFB(C, Rng(0), use_ca=False, use_sa=False)) == {
        "feature_proj", "parsing_proj", "parsing_fuse"}
    assert _sublayers(PAFB(C, Rng(0), use_pmb=False, use_sa=False)) == {"front1", "front2", "ca"}
    assert _sublayers(PAFB(C, Rng(0), use_ca=False, use_sa=False, use_pmb=False)) == {"front1", "front2"}


def test_pafb_group_blocks_are_independent():
    group = PAFBGroup(C, Rng(0), count=2)
    a, b = (dict(blk.named_parameters()) for blk in group.blocks)
    assert a.keys() == b.keys()
    assert all(a[k] is not b[k] for k in a)
    # biases start at zero; weights are drawn separately
    assert all(not np.array_equal(a[k].data, b[k].data) for k in a if k.endswith("weight"))


# ---------------------------------------------------------------- contracts

def test_msrb_wrong_feature_count():
    with pytest.raises(ContractError, match="expected 3 preserved"):
        MSRB(C, 3, Rng(0))(feat(0), [feat(1)])


def test_channel_mismatch():
    with pytest.raises(ContractError, match="C=8"):
        ResBlock(C, Rng(0))(feat(0, c=4))
    with pytest.raises(ContractError, match="C=8"):
        RefineBlock(C, Rng(0))(feat(0), feat(1, c=4))


def test_pafb_parsing_map_channels():
    with pytest.raises(ContractError, match="single-channel"):
        PAFB(C, Rng(0))(feat(0), feat(1, c=2, h=3))


def test_pafb_without_parsing_branch_ignores_map():
    block, x = PAFB(C, Rng(0), use_pmb=False), feat(0)
    np.testing.assert_array_equal(block(x, mask(1)).data, block(x, mask(2)).data)
    np.testing.assert_array_equal(block(x, mask(1)).data, block(x, None).data)


def test_pafb_with_parsing_branch_reads_map():
    block, x = PAFB(C, Rng(0)), feat(0)
    assert not np.array_equal(block(x, mask(1)).data, block(x, mask(2)).data)


# ---------------------------------------------------------------- invariants

@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), scale=st.floats(0.01, 100.0))
def test_attention_gates_shrink_input(seed, scale):
    x = Tensor(Rng(seed).normal(size=(1, C, 5, 5)).astype(np.float32) * np.float32(scale))
    for block in (ChannelAttention(C, Rng(seed + 1)), SpatialAttention(Rng(seed + 1))):
        g = block.gate(x).data
        assert np.all((g >= 0) & (g <= 1))
        assert np.all(np.abs(block(x).data) <= np.abs(x.data))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32), h=st.integers(1, 6))
def test_refine_error_vanishes_on_upsampled_previous(seed, h):
    prev = Tensor(Rng(seed).normal(size=(1, C, h, h)))
    current = nearest_resize(prev, 2 * h, 2 * h)
    assert np.all(RefineBlock(C, Rng(0), np.float64).error(current, prev).data == 0)
