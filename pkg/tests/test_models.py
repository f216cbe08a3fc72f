import numpy as np
import pytest

from pfca.attention import CA_KIND, NONE, PA_KIND, PFCA_KIND, AttentionKind
from pfca.cost import count_params
from pfca.gradsuite import run_suite
from pfca.models import (
    BasicBlock,
    BlockSpec,
    Bottleneck,
    ModelSpec,
    SRBlock,
    build_model,
    msrresnet_spec,
    resnet_spec,
    spec_from_name,
)
from pfca.tensor import ShapeError, Tensor

ALL_KINDS = (NONE, PFCA_KIND, CA_KIND, PA_KIND)


def zero_branch(block):
    for name, p in block.named_parameters():
        if name.startswith(("conv", "attn")) and name.endswith("weight"):
            p.data[...] = 0


def x_of(*shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape).astype(np.float32))


# -- blocks ---------------------------------------------------------------------

@pytest.mark.parametrize("attn", ALL_KINDS, ids=str)
def test_basic_block_zero_branch_is_relu_of_input(attn):
    block = BasicBlock(BlockSpec("basic", 16, 16, 1, attn), rng=np.random.default_rng(0))
    zero_branch(block)
    x = x_of(2, 16, 5, 5)
    block.train()(x)  # populate BN statistics
    out = block.eval()(x).data
    np.testing.assert_allclose(out, np.maximum(x.data, 0), atol=1e-6)


def test_basic_block_downsamples():
    block = BasicBlock(BlockSpec("basic", 64, 128, 2, PFCA_KIND))
    assert block(x_of(1, 64, 8, 8)).shape == (1, 128, 4, 4)


def test_attention_none_equals_unit_gate():
    rng_spec = BlockSpec("basic", 4, 4, 1, NONE)
    plain = BasicBlock(rng_spec, rng=np.random.default_rng(3))
    gated = BasicBlock(BlockSpec("basic", 4, 4, 1, PA_KIND), rng=np.random.default_rng(3))
    # make PA's gate exactly one: sigmoid(huge bias)
    gated.attn.conv.weight.data[...] = 0
    gated.attn.conv.bias.data[...] = 1e4
    for (n1, p1), (n2, p2) in zip(plain.named_parameters(), gated.named_parameters()):
        if not n2.startswith("attn"):
            p2.data = p1.data.copy()
    x = x_of(2, 4, 5, 5)
    np.testing.assert_array_equal(plain(x).data, gated(x).data)


@pytest.mark.parametrize("stride_on", ["1x1", "3x3"])
def test_bottleneck_params_and_shapes(stride_on):
    plain = Bottleneck(BlockSpec("bottleneck", 256, 256, 1, NONE), stride_on=stride_on)
    convs = 256 * 64 + 64 * 64 * 9 + 64 * 256
    bns = 2 * (64 + 64 + 256)
    assert count_params(plain) == convs + bns
    pf = Bottleneck(BlockSpec("bottleneck", 256, 256, 1, PFCA_KIND))
    assert count_params(pf) == count_params(plain)
    ca = Bottleneck(BlockSpec("bottleneck", 256, 256, 1, CA_KIND))
    assert count_params(ca) - count_params(plain) == 2 * 256 * 16 + 16 + 256
    down = Bottleneck(BlockSpec("bottleneck", 256, 512, 2, PFCA_KIND), stride_on=stride_on)
    assert down(x_of(1, 256, 6, 6)).shape == (1, 512, 3, 3)


def test_bottleneck_zero_branch():
    block = Bottleneck(BlockSpec("bottleneck", 16, 16, 1, PFCA_KIND))
    zero_branch(block)
    x = x_of(2, 16, 4, 4)
    block.train()(x)
    np.testing.assert_allclose(block.eval()(x).data, np.maximum(x.data, 0), atol=1e-6)


@pytest.mark.parametrize("attn", ALL_KINDS, ids=str)
def test_sr_block_zero_branch_is_identity(attn):
    block = SRBlock(BlockSpec("compact_sr", 16, 16, 1, attn))
    zero_branch(block)
    for name, p in block.named_parameters():
        p.data[...] = 0
    x = x_of(1, 16, 5, 5)
    np.testing.assert_array_equal(block(x).data, x.data)


def test_sr_block_params_and_shape():
    block = SRBlock(BlockSpec("compact_sr", 64, 64))
    assert count_params(block) == 2 * (64 * 64 * 9 + 64) == 73856
    assert block(x_of(1, 64, 3, 3)).shape == (1, 64, 3, 3)
    assert not any("bn" in n for n, _ in block.named_parameters())


def test_block_spec_validation():
    with pytest.raises(ValueError):
        BlockSpec("compact_sr", 8, 16)
    with pytest.raises(ValueError):
        BlockSpec("bottleneck", 8, 10)
    with pytest.raises(ValueError):
        BlockSpec("dense", 8, 8)


def test_residual_shape_mismatch_raises():
    block = BasicBlock(BlockSpec("basic", 4, 4, 1, NONE))
    block.conv1.stride = 2  # branch halves the map while the identity shortcut does not
    with pytest.raises(ShapeError, match="residual branch"):
        block(x_of(1, 4, 6, 6))


# -- networks ---------------------------------------------------------------------

def test_msrresnet_parameter_counts():
    expected = {NONE: 1_517_571, PFCA_KIND: 1_517_571, CA_KIND: 1_526_851, PA_KIND: 1_584_131}
    for kind, n in expected.items():
        model = build_model(msrresnet_spec(kind))
        assert count_params(model) == n
        assert count_params(msrresnet_spec(kind)) == n


def test_msrresnet_forward_shape_and_skip():
    model = build_model(msrresnet_spec(PFCA_KIND, num_blocks=2, width=8))
    x = x_of(1, 3, 4, 5)
    assert model(x).shape == (1, 3, 16, 20)
    for p in model.parameters():
        p.data[...] = 0
    # the trunk is silent, leaving the bilinear skip of a constant image
    const = Tensor(np.full((1, 3, 4, 4), 0.25, np.float32))
    np.testing.assert_allclose(model(const).data, 0.25, atol=1e-7)


def test_resnet18_logits_shape():
    model = build_model(resnet_spec(18, PFCA_KIND, width=8))
    assert model(x_of(1, 3, 64, 64)).shape == (1, 1000)


@pytest.mark.parametrize("depth,full", [(18, 11_689_512), (50, 25_557_032), (101, 44_549_160)])
def test_resnet_full_model_counts(depth, full):
    spec = resnet_spec(depth)
    assert count_params(spec) == full
    assert count_params(spec.with_attention(PFCA_KIND)) == full


def test_resnet18_built_count_matches_arithmetic():
    model = build_model(resnet_spec(18))
    assert count_params(model) == count_params(resnet_spec(18)) == 11_689_512


def test_resnet50_ca_delta_within_published_range():
    delta = count_params(resnet_spec(50, CA_KIND)) - count_params(resnet_spec(50))
    assert 2.4e6 <= delta <= 2.6e6


def test_stage_layouts():
    assert resnet_spec(18).stages == (2, 2, 2, 2) and resnet_spec(18).block_kind == "basic"
    assert resnet_spec(50).stages == (3, 4, 6, 3) and resnet_spec(50).block_kind == "bottleneck"
    assert resnet_spec(101).stages == (3, 4, 23, 3)
    with pytest.raises(ValueError, match="unsupported ResNet depth"):
        resnet_spec(34)
    with pytest.raises(ValueError):
        msrresnet_spec(upscale=2)


def test_attention_applied_to_every_block():
    model = build_model(resnet_spec(18, CA_KIND, width=16, stem="cifar"))
    attn = [n for n, _ in model.named_modules() if n.endswith(".attn")]
    assert len(attn) == 8


def test_builder_determinism():
    a, b = build_model(resnet_spec(18, CA_KIND, width=16), seed=4), build_model(resnet_spec(18, CA_KIND, width=16), seed=4)
    sa, sb = a.param_store(), b.param_store()
    assert list(sa) == list(sb)
    for name in sa:
        np.testing.assert_array_equal(sa[name].data, sb[name].data)
    c = build_model(resnet_spec(18, CA_KIND, width=16), seed=5)
    assert not np.array_equal(c.param_store()["fc.weight"].data, sa["fc.weight"].data)


def test_hierarchical_names():
    names = list(build_model(msrresnet_spec(num_blocks=2, width=8)).param_store())
    assert "body.1.conv1.weight" in names and names[0] == "conv_first.weight"


def test_spec_from_name_and_labels():
    assert spec_from_name("resnet50", PFCA_KIND).name == "resnet50+pfca"
    assert spec_from_name("msrresnet", AttentionKind("ca", 8)).name == "msrresnet+ca(r=8)"
    with pytest.raises(ValueError, match="unknown model"):
        spec_from_name("vgg16")
    with pytest.raises(ValueError):
        ModelSpec(family="unet")


def test_block_and_model_gradchecks():
    reports = run_suite("blocks") + run_suite("models")
    assert {r.name for r in reports} == {"basic_block", "bottleneck_block", "sr_block", "resnet18_toy", "msrresnet_toy"}
    for r in reports:
        assert r.passed, str(r)
