import numpy as np
import pytest

from udehaze import kernels


def conv_oracle(x, w, b, stride, padding, dilation):
    """Direct nested-loop cross-correlation."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for bi in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = b[oc]
                    for ic in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                ii = i * stride - padding + ki * dilation
                                jj = j * stride - padding + kj * dilation
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += x[bi, ic, ii, jj] * w[oc, ic, ki, kj]
                    out[bi, oc, i, j] = acc
    return out


def min_filter_oracle(img, size):
    r = size // 2
    h, w = img.shape
    out = np.empty_like(img)
    for i in range(h):
        for j in range(w):
            rows = np.clip(np.arange(i - r, i + r + 1), 0, h - 1)
            cols = np.clip(np.arange(j - r, j + r + 1), 0, w - 1)
            out[i, j] = img[np.ix_(rows, cols)].min()
    return out


@pytest.mark.parametrize("stride,padding,dilation", [(1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 2, 2), (1, 4, 4), (2, 0, 2)])
def test_im2col_matmul_matches_nested_loops(backend, rng, stride, padding, dilation):
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    cols = backend.im2col(x, 3, 3, stride, padding, dilation)
    ho = backend.conv_output_size(7, 3, stride, padding, dilation)
    wo = backend.conv_output_size(6, 3, stride, padding, dilation)
    out = (np.matmul(w.reshape(4, -1), cols) + b[None, :, None]).reshape(2, 4, ho, wo)
    np.testing.assert_allclose(out, conv_oracle(x, w, b, stride, padding, dilation), atol=1e-12, rtol=0)


@pytest.mark.parametrize("stride,padding,dilation", [(1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 3, 3)])
def test_col2im_is_adjoint_of_im2col(backend, rng, stride, padding, dilation):
    x = rng.standard_normal((2, 2, 9, 8))
    cols = backend.im2col(x, 3, 3, stride, padding, dilation)
    y = rng.standard_normal(cols.shape)
    lhs = np.sum(cols * y)
    rhs = np.sum(x * backend.col2im(y, x.shape, 3, 3, stride, padding, dilation))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_backends_agree(rng):
    if kernels.compiled_backend is None:
        pytest.skip("compiled kernels not built")
    py, cy = kernels.python_backend, kernels.compiled_backend
    x = rng.standard_normal((3, 4, 16, 12))
    for args in [(3, 3, 1, 1, 1), (3, 3, 2, 1, 1), (3, 3, 1, 4, 4), (1, 1, 1, 0, 1)]:
        a, b = py.im2col(x, *args), cy.im2col(x, *args)
        assert np.array_equal(a, b)
        np.testing.assert_allclose(py.col2im(a, x.shape, *args), cy.col2im(a, x.shape, *args),
                                   atol=1e-12, rtol=0)
    img = rng.uniform(size=(20, 17))
    for size in (1, 3, 15):
        assert np.array_equal(py.min_filter2d(img, size), cy.min_filter2d(img, size))


@pytest.mark.parametrize("size", [1, 3, 5, 15])
def test_min_filter_replicates_borders(backend, rng, size):
    img = rng.uniform(size=(11, 9))
    np.testing.assert_array_equal(backend.min_filter2d(img, size), min_filter_oracle(img, size))


def test_active_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")
