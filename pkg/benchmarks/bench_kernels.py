"""Time the compiled kernels against the numpy fallback and the generic tape.

    python benchmarks/bench_kernels.py [--repeat 20] [--batch 64] [--width 128]

Each row is the best-of-``repeat`` wall time for one call.  The tape column
records the same computation with :mod:`wgad.autodiff` for reference.
"""
import argparse
import timeit

import numpy as np

from wgad import autodiff as ad
from wgad import kernels
from wgad.kernels import _fallback
from wgad.nn import NetworkSpec, init_params, tape_params
from wgad.training import penalty_expression

try:
    from wgad.kernels import _core
except ImportError:
    _core = None


def critic_arrays(width, depth, seed=0):
    spec = NetworkSpec.mlp([2] + [width] * depth + [1])
    params = init_params(spec, seed)
    weights = [np.ascontiguousarray(params[f"layer{i}.weight"]) for i in range(len(spec.layers))]
    biases = [np.ascontiguousarray(params[f"layer{i}.bias"]) for i in range(len(spec.layers))]
    acts = [kernels.ACT_CODES[layer.activation] for layer in spec.layers]
    return spec, params, weights, biases, acts


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--depth", type=int, default=2)
    args = p.parse_args(argv)

    spec, params, weights, biases, acts = critic_arrays(args.width, args.depth)
    x = np.random.default_rng(1).normal(size=(args.batch, 2))
    pre, post = _fallback.mlp_forward(weights, biases, acts, x)
    grad_out = np.ones((args.batch, 1)) / args.batch

    def tape_forward():
        from wgad.nn import forward_tape
        tape = ad.Tape()
        forward_tape(spec, tape_params(tape, params), ad.Tensor(x), mode="infer")

    def tape_backward():
        from wgad.nn import forward_tape
        tape = ad.Tape()
        out = forward_tape(spec, tape_params(tape, params), ad.Tensor(x), mode="infer")
        ad.backward(tape, out.mean())

    def tape_penalty():
        tape = ad.Tape()
        ad.backward(tape, penalty_expression(tape, spec, tape_params(tape, params), x))

    cases = {
        "mlp_forward": (lambda m: m.mlp_forward(weights, biases, acts, x), tape_forward),
        "mlp_backward": (lambda m: m.mlp_backward(weights, acts, x, pre, post, grad_out), tape_backward),
        "penalty_grads": (lambda m: m.penalty_grads(weights, biases, acts, x, 1e-12), tape_penalty),
    }
    print(f"batch {args.batch}, critic 2-{'-'.join([str(args.width)] * args.depth)}-1, "
          f"best of {args.repeat}; active backend: {kernels.BACKEND}")
    print(f"{'kernel':<15}{'cython ms':>12}{'numpy ms':>12}{'tape ms':>12}{'numpy/cython':>14}")
    for name, (call, tape_fn) in cases.items():
        t_np = best(lambda: call(_fallback), args.repeat) * 1e3
        t_tape = best(tape_fn, args.repeat) * 1e3
        if _core is not None:
            t_cy = best(lambda: call(_core), args.repeat) * 1e3
            print(f"{name:<15}{t_cy:>12.3f}{t_np:>12.3f}{t_tape:>12.3f}{t_np / t_cy:>14.2f}")
        else:
            print(f"{name:<15}{'n/a':>12}{t_np:>12.3f}{t_tape:>12.3f}{'n/a':>14}")


if __name__ == "__main__":
    main()
