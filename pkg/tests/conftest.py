import numpy as np

from seqreason import diffcore as dc
from seqreason.model import EncoderArch, FreezeSpec, RelationConfig, RelationKind, init_model, sequence_loss


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def readout_model(res: int = 4, theta: float = 0.0):
    """Linear 'encoder' z = pixel[0, 0], built from the conv-free path."""
    arch = EncoderArch(fc_widths=(1,), input_resolution=res)
    m = init_model(arch, RelationConfig(), np.random.default_rng(0), FreezeSpec(conv_removed=True))
    w = np.zeros((1, res * res))
    w[0, 0] = 1.0
    m.params["fc0.w"].data[...] = w
    m.params["fc0.b"].data[...] = 0.0
    m.params["theta"].data[...] = theta
    return m


def images_with_values(vals, res: int = 4):
    ims = np.zeros((len(vals), res, res))
    ims[:, 0, 0] = vals
    return ims


def pipeline_gradcheck(res: int, relation: RelationKind, seed: int, fc=(6, 4, 1)) -> float:
    """Max relative error of backward vs central differences over every parameter."""
    pools = (2, 2) if res < 12 else (2, 3)
    if relation is RelationKind.MLP:
        arch = EncoderArch(conv_channels=(2, 3, 2), input_resolution=res, pool_kernels=pools, fc_widths=())
        rel = RelationConfig(RelationKind.MLP, (5, 3, 1))
    else:
        arch = EncoderArch(conv_channels=(2, 3, 2), input_resolution=res, pool_kernels=pools, fc_widths=fc)
        rel = RelationConfig()
    rng = np.random.default_rng(seed)
    m = init_model(arch, rel, rng)
    if relation is RelationKind.LINEAR_OFFSET:
        m.params["theta"].data[...] = 0.3
    seq = rng.random((5, res, res))
    names = list(m.params)
    m.params.zero_grad()
    dc.backward(sequence_loss(m, seq))
    analytic = [m.params[n].grad for n in names]
    numeric = dc.finite_diff_grad(lambda: sequence_loss(m, seq).data, [m.params[n].data for n in names])
    scale = max(np.abs(g).max() for g in numeric)
    return max(dc.max_relative_error(a, b, floor=1e-6 * scale) for a, b in zip(analytic, numeric))


def tiny_profile(name: str = "vanilla", res: int = 16, n: int = 3, seed: int = 0):
    """A named profile shrunk to ``res`` pixels so harness tests run in milliseconds."""
    from dataclasses import replace

    from seqreason.harness import make_profile

    p = make_profile(name, "desk", seed)
    return replace(p, arch=replace(p.arch, input_resolution=res), render=replace(p.render, resolution=res),
                   problems_per_condition=n)
