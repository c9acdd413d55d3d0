"""Built-in verification suites behind the `selftest` CLI command.

Each check re-derives expected values with an independent oracle (naive
sliding loops, central finite differences) and compares against the library
path. Returns structured results so the CLI can print one line per check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dpad import nnkernel as nk
from dpad import morph
from dpad.bgg import build_bgg_params, intra_projection
from dpad.ifm import adaptive_adjacency
from dpad.memd import mcd_decompose, relative_tolerance
from dpad.morph import SEKernel
from dpad.nnkernel import ParameterSet
from dpad.pipeline import DPadModel, ModelConfig, l1_loss

__all__ = ["CheckResult", "run_all"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _naive_dilate(x: np.ndarray, offsets: np.ndarray, c: int) -> np.ndarray:
    out = np.empty_like(x)
    n = x.shape[0]
    for t in range(n):
        best = -np.inf
        for w in range(-c, c + 1):
            src = min(max(t + w, 0), n - 1)
            best = max(best, x[src] + offsets[w + c])
        out[t] = best
    return out


def _naive_erode(x: np.ndarray, offsets: np.ndarray, c: int) -> np.ndarray:
    out = np.empty_like(x)
    n = x.shape[0]
    for t in range(n):
        best = np.inf
        for w in range(-c, c + 1):
            src = min(max(t + w, 0), n - 1)
            best = min(best, x[src] - offsets[w + c])
        out[t] = best
    return out


def check_morphology_oracle(cases: int = 1000, seed: int = 20240) -> CheckResult:
    """dilate/erode match the naive O(T*C) loops exactly; duality is bitwise."""
    rng = np.random.default_rng(seed)
    for i in range(cases):
        c = int(rng.integers(1, 4))
        n = int(rng.integers(2, 65))
        x = rng.normal(0.0, 1.0, n)
        kernel = SEKernel.zero(c)
        d = morph.dilate(x, kernel)
        e = morph.erode(x, kernel)
        if not np.array_equal(d, _naive_dilate(x, kernel.offsets, c)):
            return CheckResult("morphology-oracle", False, f"dilate mismatch on case {i}")
        if not np.array_equal(e, _naive_erode(x, kernel.offsets, c)):
            return CheckResult("morphology-oracle", False, f"erode mismatch on case {i}")
        if not np.array_equal(e, -morph.dilate(-x, kernel)):
            return CheckResult("morphology-oracle", False, f"duality broken on case {i}")
    return CheckResult("morphology-oracle", True, f"{cases} random cases, C in 1..3")


def check_sifting() -> CheckResult:
    """Relative-tolerance hand values and the decomposition reconstruction identity."""
    if relative_tolerance(np.array([2.0, 0.0]), np.array([1.0, 0.0])) != 0.25:
        return CheckResult("sifting", False, "relative tolerance hand value 0.25 failed")
    rng = np.random.default_rng(7)
    t = np.arange(336.0)
    for i in range(50):
        x = rng.normal(0, 0.1, 336)
        for _ in range(int(rng.integers(1, 4))):
            x += rng.uniform(0.3, 1.5) * np.sin(2 * np.pi * rng.uniform(0.01, 0.4) * t
                                                + rng.uniform(0, 2 * np.pi))
        mat = mcd_decompose(x, 6)
        err = np.abs(mat.sum(axis=1) - x).max()
        if err > 1e-9:
            return CheckResult("sifting", False, f"reconstruction error {err:.2e} on case {i}")
    return CheckResult("sifting", True, "RT hand values and 50 reconstruction identities")


def _numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        saved = x[idx]
        x[idx] = saved + eps
        hi = f()
        x[idx] = saved - eps
        lo = f()
        x[idx] = saved
        g[idx] = (hi - lo) / (2 * eps)
        it.iternext()
    return g


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_op_gradients(seed: int = 99) -> CheckResult:
    """Each differentiable op matches central finite differences."""
    rng = np.random.default_rng(seed)
    worst = {}

    def probe(name, build, *arrays, tol=1e-4):
        nodes = [nk.parameter(a) for a in arrays]
        r = rng.normal(0, 1, build(*nodes).data.shape)
        out = build(*nodes)
        out.backward(seed=r)
        for i, (node, arr) in enumerate(zip(nodes, arrays)):
            def f(node=node, arr=arr):
                node.data = arr
                with nk.no_grad():
                    return float((build(*nodes).data * r).sum())
            err = _rel_err(node.grad, _numeric_grad(f, arr))
            worst[f"{name}[{i}]"] = err
            if err > tol:
                raise AssertionError(f"{name} input {i}: rel err {err:.2e}")

    try:
        probe("matmul", lambda a, b: nk.matmul(a, b),
              rng.normal(0, 1, (3, 3)), rng.normal(0, 1, (3, 3)))
        probe("softmax_rows", nk.softmax_rows, rng.normal(0, 1, (4, 5)))
        probe("conv2d", lambda x, k, b: nk.conv2d_components(x, k, b),
              rng.normal(0, 1, (8, 3)), rng.normal(0, 1, (3, 3, 3)), rng.normal(0, 1, (3,)))
        probe("affine", lambda x, w, b: nk.affine(x, w, b),
              rng.normal(0, 1, (6,)), rng.normal(0, 1, (6, 4)), rng.normal(0, 1, (4,)))
        probe("affine_cols", lambda x, w, b: nk.affine_cols(x, w, b),
              rng.normal(0, 1, (4, 5)), rng.normal(0, 1, (3, 4)), rng.normal(0, 1, (3,)))
        probe("mlp", lambda x, w1, b1, w2, b2: nk.mlp(x, [(w1, b1), (w2, b2)]),
              rng.normal(0, 1, (5,)), rng.normal(0, 1, (5, 4)), rng.normal(0, 1, (4,)),
              rng.normal(0, 1, (4, 2)), rng.normal(0, 1, (2,)))
        probe("envelope", lambda x: nk.mean_envelope(x, SEKernel.zero(2)),
              rng.normal(0, 1, (24,)))
        probe("dilate", lambda x: nk.dilate(x, SEKernel.zero(1)), rng.normal(0, 1, (16,)))
        probe("erode", lambda x: nk.erode(x, SEKernel.zero(1)), rng.normal(0, 1, (16,)))
        probe("demean", nk.demean, rng.normal(0, 1, (12,)))
        probe("div", nk.div, rng.normal(1, 0.1, (6,)), rng.normal(2, 0.1, (6,)))
        probe("abs", nk.absolute, rng.normal(0, 1, (9,)))
    except AssertionError as exc:
        return CheckResult("op-gradients", False, str(exc))
    return CheckResult("op-gradients", True,
                       f"{len(worst)} checks, worst rel err {max(worst.values()):.2e}")


def check_model_gradient(seed: int = 5) -> CheckResult:
    """End-to-end loss gradient vs finite differences for 10 sampled parameters.

    Samples that straddle a discrete routing flip (one-sided slopes disagree)
    are non-smooth points where central differences are undefined; they are
    redrawn.
    """
    config = ModelConfig(lookback=16, horizon=4, components=3, levels=2,
                         hidden_dim=8, embed_dim=8, graph_in_dim=8, graph_mid_dim=8,
                         fuse_out_dim=8, seed=seed)
    model = DPadModel(config)
    rng = np.random.default_rng(seed)
    t = np.arange(16.0)
    window = np.sin(2 * np.pi * t / 5) + 0.5 * np.sin(2 * np.pi * t / 16) + rng.normal(0, 0.05, 16)
    target = rng.normal(0, 1, 4)

    loss = l1_loss(model.forward_window(window), target)
    loss.backward()

    def loss_value():
        with nk.no_grad():
            return float(l1_loss(model.forward_window(window), target).data)

    names = model.params.names()
    worst = 0.0
    eps = 1e-6
    base = loss_value()
    checked = 0
    attempts = 0
    while checked < 10 and attempts < 60:
        attempts += 1
        name = names[int(rng.integers(len(names)))]
        p = model.params[name]
        idx = np.unravel_index(int(rng.integers(p.data.size)), p.data.shape)
        analytic = p.grad[idx] if p.grad is not None else 0.0
        saved = p.data[idx]
        p.data[idx] = saved + eps
        hi = loss_value()
        p.data[idx] = saved - eps
        lo = loss_value()
        p.data[idx] = saved
        fwd = (hi - base) / eps
        bwd = (base - lo) / eps
        if abs(fwd - bwd) > 1e-3 * max(abs(fwd), abs(bwd), 1.0):
            continue
        numeric = (hi - lo) / (2 * eps)
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, err)
        if err > 1e-3:
            return CheckResult("model-gradient", False,
                               f"{name}{list(idx)}: analytic {analytic:.3e} vs "
                               f"numeric {numeric:.3e} (rel err {err:.2e})")
        checked += 1
    if checked < 10:
        return CheckResult("model-gradient", False,
                           f"only {checked} smooth sample points in {attempts} draws")
    return CheckResult("model-gradient", True, f"10 parameters, worst rel err {worst:.2e}")


def check_simplex(seed: int = 11) -> CheckResult:
    """Branch-key rows and adjacency rows stay on the 1-simplex."""
    rng = np.random.default_rng(seed)
    for i in range(100):
        ps = ParameterSet()
        params = build_bgg_params(ps, "bgg", length=12, components=4, hidden=6,
                                  mask_span=3, rng=rng)
        key = intra_projection(rng.normal(0, 2, (12, 4)), params)
        if np.abs(key.sum(axis=1) - 1.0).max() > 1e-9 or key.min() < 0:
            return CheckResult("simplex", False, f"branch key off simplex on case {i}")
        e1 = rng.normal(0, 2, (5, 6))
        e2 = rng.normal(0, 2, (5, 6))
        adj = adaptive_adjacency(e1, e2)
        if np.abs(adj.sum(axis=1) - 1.0).max() > 1e-9 or adj.min() < 0:
            return CheckResult("simplex", False, f"adjacency off simplex on case {i}")
    return CheckResult("simplex", True, "100 random parameterizations")


def run_all() -> list[CheckResult]:
    return [
        check_morphology_oracle(),
        check_sifting(),
        check_op_gradients(),
        check_model_gradient(),
        check_simplex(),
    ]
