import numpy as np
import torch
import torch.nn.functional as F
from torch.nn.grad import conv2d_input

from ebnet.bitcore import ConvGeometry, unpack_bits
from ebnet.graph import BinaryConv2d, WeightMode, pack_weights, sign_ste, weight_binarize_ste


def test_sign_forward_and_mask():
    x = torch.tensor([0.4, -2.0, 0.0, 1.0], requires_grad=True)
    y = sign_ste(x)
    assert torch.equal(y, torch.tensor([1.0, -1.0, 1.0, 1.0]))
    y.sum().backward()
    assert torch.equal(x.grad, torch.tensor([1.0, 0.0, 1.0, 1.0]))


def test_weight_binarize_is_identity_in_backward():
    theta = torch.tensor([0.2, -0.9, 3.0], requires_grad=True)
    w = weight_binarize_ste(theta)
    assert torch.equal(w, torch.tensor([1.0, -1.0, 1.0]))
    upstream = torch.tensor([0.5, -2.0, 7.0])
    w.backward(upstream)
    assert torch.equal(theta.grad, upstream)


def test_pack_weights_bits():
    theta = torch.tensor([0.2, -0.9]).view(1, 2, 1, 1)
    bits = unpack_bits(pack_weights(theta))
    np.testing.assert_array_equal(bits.reshape(-1), [1, 0])


def test_input_gradient_is_masked_conv_transpose():
    torch.manual_seed(3)
    geom = ConvGeometry.square(4, 6, 3)
    conv = BinaryConv2d(geom).double()
    with torch.no_grad():
        conv.alpha.uniform_(0.5, 1.5)
    x = (2 * torch.randn(2, 4, 7, 7, dtype=torch.float64)).requires_grad_()
    g = torch.randn(2, 6, 5, 5, dtype=torch.float64)
    conv(x).backward(g)

    expected = conv2d_input(x.shape, conv.theta.detach(), g * conv.alpha.detach().view(1, -1, 1, 1))
    expected = expected * (x.detach().abs() <= 1)
    torch.testing.assert_close(x.grad, expected)


def test_binary_weight_layer_learns_sign_target():
    torch.manual_seed(11)
    geom = ConvGeometry.square(8, 4, 1)
    target_w = torch.where(torch.rand(geom.weight_shape) < 0.5, -1.0, 1.0)
    x = torch.randn(256, 8, 1, 1)
    y_star = F.conv2d(torch.where(x >= 0, 1.0, -1.0), target_w)

    layer = BinaryConv2d(geom)
    layer.configure(weight_mode=WeightMode.BINARY)
    opt = torch.optim.Adam(layer.parameters(), lr=1e-2)

    losses = []
    for _ in range(100):
        opt.zero_grad()
        loss = F.mse_loss(layer(x), y_star)
        loss.backward()
        opt.step()
        layer.clamp_latent_()
        losses.append(float(loss))

    assert losses[-1] < 0.25 * losses[0]
