import numpy as np
import pytest
import torch
from hypothesis import settings

from cardioalign.data import PhantomConfig, default_schema, generate_cohort
from cardioalign.data.io import Dataset
from cardioalign.model.config import ImageModelConfig, ModelConfig, TabularModelConfig
from cardioalign.numerics import finite_difference_grad, float64_mode

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
N_CRITERIA = 12


def max_rel_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-6) -> float:
    """Elementwise |a - n| / max(|a|, |n|, floor), maximised over entries."""
    a, n = analytic.detach().double(), numeric.detach().double()
    scale = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.full_like(a, floor))
    return float(((a - n).abs() / scale).max())


def grad_check(fn, *inputs, h=1e-5):
    """Largest relative error between autograd and central differences over ``inputs``.

    ``fn`` maps the inputs to a scalar; runs in float64.
    """
    worst = 0.0
    with float64_mode():
        xs = [x.detach().double().clone() for x in inputs]
        for i in range(len(xs)):
            leaf = xs[i].clone().requires_grad_(True)
            args = xs[:i] + [leaf] + xs[i + 1:]
            fn(*args).backward()

            def f(v, i=i):
                return fn(*(xs[:i] + [v] + xs[i + 1:]))

            num = finite_difference_grad(f, xs[i], h)
            worst = max(worst, max_rel_error(leaf.grad, num))
    return worst


def entrywise_fd(loss_fn, params, rng, per_tensor=3, h=1e-4):
    """Worst relative error between autograd and central differences on sampled entries.

    Key biases have exactly zero gradient (softmax shift invariance), so the step is
    large enough that cancellation noise stays well under the 1e-6 floor.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            g = p.grad.view(-1)
            for j in rng.choice(flat.numel(), min(per_tensor, flat.numel()), replace=False):
                old = flat[j].item()
                flat[j] = old + h
                up = loss_fn().item()
                flat[j] = old - h
                down = loss_fn().item()
                flat[j] = old
                num = torch.tensor([(up - down) / (2 * h)], dtype=torch.float64)
                worst = max(worst, max_rel_error(g[j:j + 1], num))
    return worst


def tiny_image_config(**kw) -> ImageModelConfig:
    base = dict(dim=16, enc_layers=2, dec_layers=1, heads=2, dec_dim=12, dec_heads=2, crop=16,
                frames=5, n_sa=2, n_la=1)
    base.update(kw)
    return ImageModelConfig(**base)


def tiny_model_config(**kw) -> ModelConfig:
    return ModelConfig(tiny_image_config(**kw), TabularModelConfig(dim=9, layers=1, heads=3),
                       proj_dim=8, head_hidden=12, seg_width=8)


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def tiny_phantom_cfg():
    return PhantomConfig(crop=16, frames=10, n_sa=2, n_la=1, fov_mm=160.0)


@pytest.fixture(scope="session")
def tiny_cohort(schema, tiny_phantom_cfg):
    return Dataset(schema, generate_cohort(6, 3, tiny_phantom_cfg, schema))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_run(epochs: int = 1, batch: int = 2):
    """Run config matching ``tiny_phantom_cfg`` with one short epoch per stage."""
    from cardioalign.pipeline.config import HeadConfig, RunConfig

    run = RunConfig()
    run.image = tiny_image_config()
    run.tabular = TabularModelConfig(dim=9, layers=1, heads=3)
    run.heads = HeadConfig(proj_dim=8, head_hidden=12, seg_width=8)
    for s in run.stages.values():
        s.epochs = epochs
        s.batch_size = batch
        s.warmup_epochs = 0.0
        s.log_every = 0
    return run


def pytest_terminal_summary(terminalreporter):
    ran = [r for k in ("passed", "failed", "error") for r in terminalreporter.stats.get(k, [])
           if "test_acceptance" in getattr(r, "nodeid", "")]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        ok, detail = ACCEPTANCE.get(n, (False, "not run or errored"))
        terminalreporter.write_line(f"CRITERION {n:2d} {'PASS' if ok else 'FAIL'}  {detail}")
