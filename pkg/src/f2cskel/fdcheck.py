"""Full-network finite-difference gradient checking.

The numeric side of the check is built purely from forward-pass loss
evaluations (central differences), so it stays independent of the backward
pass it verifies. As a computational shortcut, features of streams whose
parameters are untouched by a perturbation are reused; they are bitwise
identical by construction.
"""

from __future__ import annotations

import numpy as np

from .encoding import STREAMS
from .layers import dense_forward, relu_forward, softmax_cross_entropy_batch
from .network import network_backward, network_forward, param_spec, stream_forward


def random_params(arch, num_classes, rng, scale=0.4):
    """Random weights AND biases (nonzero biases avoid symmetric dead spots)."""
    params = {}
    for name, shape, fan_in in param_spec(arch, num_classes):
        sigma = scale / np.sqrt(fan_in) if fan_in else 0.1
        params[name] = rng.normal(0.0, sigma, size=shape)
    return params


def _head_loss(feats_concat, params, labels):
    h1, _ = dense_forward(feats_concat, params["head/fc1/w"], params["head/fc1/b"])
    a1, _ = relu_forward(h1)
    logits, _ = dense_forward(a1, params["head/fc2/w"], params["head/fc2/b"])
    loss, _ = softmax_cross_entropy_batch(logits, labels)
    return loss


def full_network_fd_check(
    arch, num_classes, params, xs, labels, step=1e-5, rtol=1e-4, atol=1e-7,
    input_probes=40, probe_rng=None,
):
    """Compare every parameter's backprop gradient against central differences.

    Returns (worst_param_rel_err, worst_input_rel_err, checked_scalars); the
    worst-error stats only count entries above the absolute floor, where the
    relative criterion is the binding one. Failures raise AssertionError
    naming the offending tensor.
    """
    logits, cache = network_forward(xs, params, arch, train=True)
    loss0, dlogits = softmax_cross_entropy_batch(logits, labels)
    grads, dxs = network_backward(dlogits, cache, params, arch)

    base_feats = {}
    for stream in STREAMS:
        base_feats[stream], _ = stream_forward(xs[stream], params, stream, arch)

    def loss_with_stream(stream):
        feats = []
        for s in STREAMS:
            if s == stream:
                f, _ = stream_forward(xs[s], params, s, arch)
            else:
                f = base_feats[s]
            feats.append(f)
        return _head_loss(np.concatenate(feats, axis=1), params, labels)

    def loss_head_only():
        return _head_loss(
            np.concatenate([base_feats[s] for s in STREAMS], axis=1), params, labels
        )

    worst = 0.0
    checked = 0
    for name in sorted(params):
        tensor = params[name]
        stream = name.split("/")[0]
        reval = loss_head_only if stream == "head" else (lambda s=stream: loss_with_stream(s))
        flat = tensor.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = reval()
            flat[i] = orig - step
            lo = reval()
            flat[i] = orig
            fd = (hi - lo) / (2 * step)
            bp = gflat[i]
            err = abs(fd - bp)
            denom = max(abs(fd), abs(bp))
            rel = err / denom if denom > 0 else 0.0
            if err > atol:  # entries under the absolute floor are FD noise
                worst = max(worst, rel)
            assert err <= max(atol, rtol * denom), (
                f"{name}[{i}]: backprop {bp!r} vs finite-diff {fd!r} (rel {rel:.2e})"
            )
            checked += 1

    # Spot-check input gradients on a random subset of pixels per stream.
    worst_in = 0.0
    if input_probes:
        probe_rng = probe_rng or np.random.default_rng(0)
        for stream in STREAMS:
            x = xs[stream]
            flat = x.reshape(-1)
            gflat = dxs[stream].reshape(-1)
            for i in probe_rng.choice(flat.size, size=min(input_probes, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + step
                hi = loss_with_stream(stream)
                flat[i] = orig - step
                lo = loss_with_stream(stream)
                flat[i] = orig
                fd = (hi - lo) / (2 * step)
                bp = gflat[i]
                err = abs(fd - bp)
                denom = max(abs(fd), abs(bp))
                rel = err / denom if denom > 0 else 0.0
                if err > atol:
                    worst_in = max(worst_in, rel)
                assert err <= max(atol, rtol * denom), (
                    f"input {stream}[{i}]: backprop {bp!r} vs finite-diff {fd!r}"
                )
    assert abs(loss0 - loss_with_stream(STREAMS[0])) < 1e-12  # shortcut consistency
    return worst, worst_in, checked
