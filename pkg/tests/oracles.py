"""Independent reference implementations used to check the real code.

Everything here is deliberately slow and simple: central finite differences,
dense convolutions, brute-force searches. None of it imports from the
package's own numerics beyond the Tensor container itself.
"""

import numpy as np


def fd_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar-valued ``f`` at array ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b, floor=1e-8):
    """max |a-b| / max(|a|, |b|, floor), elementwise then reduced."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def dense_conv3d(grid, kernel, bias=None, stride=1):
    """Direct 3x3x3 convolution on a dense (D,H,W,Cin) grid, zero padded.

    ``kernel`` has shape (3,3,3,Cin,Cout). With ``stride=2`` output site
    (i,j,k) reads the input neighborhood centred at (2i,2j,2k).
    """
    D, H, W, ci = grid.shape
    co = kernel.shape[-1]
    if stride == 1:
        od, oh, ow = D, H, W
    else:
        od, oh, ow = (D + 1) // 2, (H + 1) // 2, (W + 1) // 2
    pad = np.zeros((D + 2, H + 2, W + 2, ci))
    pad[1:-1, 1:-1, 1:-1] = grid
    out = np.zeros((od, oh, ow, co))
    for i in range(od):
        for j in range(oh):
            for k in range(ow):
                patch = pad[i * stride:i * stride + 3,
                            j * stride:j * stride + 3,
                            k * stride:k * stride + 3]
                out[i, j, k] = np.einsum("dhwc,dhwco->o", patch, kernel)
    if bias is not None:
        out += bias
    return out


def volume_weights(alphas):
    """Compositing weights w_i = T_i * a_i with T_0 = 1, by direct product."""
    alphas = np.asarray(alphas, dtype=np.float64)
    T = 1.0
    w = np.zeros_like(alphas)
    for i, a in enumerate(alphas):
        w[i] = T * a
        T = T * (1.0 - a)
    return w
