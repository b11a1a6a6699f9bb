"""Compare the compiled kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best-of-``repeat`` wall time for one workload under
both backends and the speedup. The workloads cover the raw kernels, a
convolution forward/backward pass and one full optimizer step of the
desk-scale model.
"""

import argparse
import contextlib
import timeit

import numpy as np

from udehaze import kernels, losses
from udehaze.nets import ModelConfig, UDehazeNet
from udehaze.optim import AdamW
from udehaze.tensor import Tensor, conv2d, sum_


@contextlib.contextmanager
def use_backend(module):
    saved = kernels.im2col, kernels.col2im, kernels.min_filter2d
    kernels.im2col, kernels.col2im, kernels.min_filter2d = module.im2col, module.col2im, module.min_filter2d
    try:
        yield
    finally:
        kernels.im2col, kernels.col2im, kernels.min_filter2d = saved


def workloads():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 16, 64, 64))
    cols = kernels.python_backend.im2col(x, 3, 3, 1, 1, 1)
    dark = rng.uniform(size=(256, 256))

    xt = Tensor(x, requires_grad=True)
    w = Tensor(rng.standard_normal((16, 16, 3, 3)) * 0.1, requires_grad=True)
    b = Tensor(np.zeros(16), requires_grad=True)

    def conv_step():
        xt.grad = w.grad = b.grad = None
        sum_(conv2d(xt, w, b, 1, 1, 1)).backward()

    model = UDehazeNet(ModelConfig(base_channels=8, seed=0))
    opt = AdamW(model.parameters())
    images = rng.uniform(size=(8, 3, 64, 64))
    refs = np.clip(images * 1.3 - 0.1, 0, 1)
    a_cl = model.classical_prior(images)

    def train_step():
        out = model(images, a_cl=a_cl)
        losses.compute_losses(out, images, refs, model.beta).total_tensor.backward()
        opt.step()
        opt.zero_grad()

    return [
        ("im2col 8x16x64x64 k3", lambda: kernels.im2col(x, 3, 3, 1, 1, 1)),
        ("col2im 8x16x64x64 k3", lambda: kernels.col2im(cols, x.shape, 3, 3, 1, 1, 1)),
        ("im2col dilated d4", lambda: kernels.im2col(x, 3, 3, 1, 4, 4)),
        ("min_filter 256x256 w15", lambda: kernels.min_filter2d(dark, 15)),
        ("conv2d forward+backward", conv_step),
        ("train step (C=8, 8x64x64)", train_step),
    ]


def best_time(fn, repeat):
    fn()  # warm-up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if kernels.compiled_backend is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")

    print(f"{'workload':<28}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}")
    for name, fn in workloads():
        times = {}
        for label, module in (("python", kernels.python_backend), ("cython", kernels.compiled_backend)):
            with use_backend(module):
                times[label] = best_time(fn, args.repeat)
        print(f"{name:<28}{times['python'] * 1e3:>14.2f}{times['cython'] * 1e3:>14.2f}"
              f"{times['python'] / times['cython']:>9.2f}x")


if __name__ == "__main__":
    main()
