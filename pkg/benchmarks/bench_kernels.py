"""Compare the compiled and numpy kernel backends.

Times each hot kernel at training shapes, then one full training step
(forward, backward, optimizer update) of the fingerprint network.

    python benchmarks/bench_kernels.py [--batch 128] [--repeat 5] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from csirff.autodiff import Adam, _pykernels, functional
from csirff.net import FingerprintNet, NetworkConfig, ce_loss, one_hot

try:
    from csirff.autodiff import _ckernels
except ImportError:
    _ckernels = None

KERNEL_NAMES = ("im2col", "col2im", "gelu_forward", "gelu_backward")


def use_backend(impl) -> None:
    for name in KERNEL_NAMES:
        setattr(functional, name, getattr(impl, name))


def best_of(fn, repeat: int) -> float:
    fn()  # warm up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(batch: int, rng):
    # conv2 of the network: 64 channels, 2x3 kernel on a 2 x (52 + 2) padded image
    xp = rng.standard_normal((batch, 64, 2, 54)).astype(np.float32)
    cols_shape = (64 * 6, batch * 52)  # (C*kh*kw, N*Ho*Wo)
    cols = rng.standard_normal(cols_shape).astype(np.float32)
    act = rng.standard_normal((batch, 64, 1, 52)).astype(np.float32)
    grad = rng.standard_normal(act.shape).astype(np.float32)

    def cases(impl):
        _, cdf = impl.gelu_forward(act)
        return {
            "im2col": lambda: impl.im2col(xp, 2, 3),
            "col2im": lambda: impl.col2im(cols, xp.shape, 2, 3),
            "gelu_forward": lambda: impl.gelu_forward(act),
            "gelu_backward": lambda: impl.gelu_backward(act, cdf, grad),
        }
    return cases


def train_step_case(batch: int, rng):
    net = FingerprintNet(NetworkConfig(num_classes=5), dtype=np.float32)
    opt = Adam(net.parameters())
    csi = rng.standard_normal((batch, 52)) + 1j * rng.standard_normal((batch, 52))
    y = one_hot(rng.integers(0, 5, batch), 5)

    def step():
        net.zero_grad()
        loss = ce_loss(net.classify(net.extract(net.encode(csi))), y)
        loss.backward()
        opt.step()
    return step


def main(argv=None) -> dict:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="write timings to this file")
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    cases = kernel_cases(args.batch, rng)
    results: dict = {}
    original = {name: getattr(functional, name) for name in KERNEL_NAMES}
    try:
        for label, impl in backends.items():
            timings = {name: best_of(fn, args.repeat) for name, fn in cases(impl).items()}
            use_backend(impl)
            timings["train_step"] = best_of(train_step_case(args.batch, np.random.default_rng(1)), args.repeat)
            results[label] = timings
    finally:
        for name, fn in original.items():
            setattr(functional, name, fn)

    names = list(next(iter(results.values())))
    print(f"batch {args.batch}, best of {args.repeat} (milliseconds)")
    print(f"{'kernel':<14}" + "".join(f"{b:>10}" for b in results) + ("   speedup" if len(results) > 1 else ""))
    for name in names:
        row = f"{name:<14}" + "".join(f"{results[b][name] * 1e3:>10.2f}" for b in results)
        if len(results) > 1:
            row += f"{results['python'][name] / results['cython'][name]:>10.2f}x"
        print(row)
    if _ckernels is None:
        print("compiled kernels not built; only the numpy backend was timed")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"batch": args.batch, "repeat": args.repeat, "seconds": results}, fh, indent=2)
    return results


if __name__ == "__main__":
    main()
