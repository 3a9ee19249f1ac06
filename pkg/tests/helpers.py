"""Oracles and drivers shared by the unit and acceptance tests."""

import numpy as np
import torch

from childadult import cli
from childadult.heads import bce_loss
from childadult.objective import ContrastiveEmbeddings, ntxent_oracle


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def ntxent_fd_grad(a, p, tau, step=1e-5):
    """Central differences of the extended-precision NT-Xent oracle w.r.t. anchors and positives."""
    grads = []
    for which in (0, 1):
        base = [a.copy(), p.copy()]
        g = np.zeros_like(base[which])
        for idx in np.ndindex(g.shape):
            hi = [x.copy() for x in base]
            lo = [x.copy() for x in base]
            hi[which][idx] += step
            lo[which][idx] -= step
            f_hi = ntxent_oracle(ContrastiveEmbeddings(torch.from_numpy(hi[0]), torch.from_numpy(hi[1]), tau))
            f_lo = ntxent_oracle(ContrastiveEmbeddings(torch.from_numpy(lo[0]), torch.from_numpy(lo[1]), tau))
            g[idx] = (f_hi - f_lo) / (2 * step)
        grads.append(g)
    return grads


def head_gradient_errors(head, x, y, step=1e-5):
    """Per-parameter relative error of autograd vs central differences (float64, eval mode)."""
    head = head.double().eval()
    x = x.double()
    y = torch.as_tensor(y, dtype=torch.float64)
    head.zero_grad()
    bce_loss(head(x), y).backward()
    errors = {}
    with torch.no_grad():
        for name, p in head.named_parameters():
            analytic = p.grad.detach().clone().numpy()
            numeric = np.zeros_like(analytic)
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                hi = bce_loss(head(x), y).item()
                flat[i] = orig - step
                lo = bce_loss(head(x), y).item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (hi - lo) / (2 * step)
            errors[name] = relative_error(analytic, numeric)
    return errors


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def cli_full_run(root):
    """Every CLI command once on a tiny corpus; returns the produced files."""
    data = root / "data"
    assert run_cli("synth", "--out", data, "--sessions", 7, "--duration", 15, "--seed", 2) == 0
    m = data / "manifest.json"
    assert run_cli("pretrain", "--manifest", m, "--layers", 1, "--epochs", 2, "--batch", 4,
                   "--steps-per-epoch", 2, "--lr", 1e-3, "--out", root / "enc.ckpt") == 0
    assert run_cli("init", "--out", root / "base.ckpt", "--seed", 0) == 0
    assert run_cli("finetune", "--manifest", m, "--backbone", root / "enc.ckpt", "--head", "cnn",
                   "--epochs", 2, "--out", root / "head.ckpt") == 0
    assert run_cli("evaluate", "--manifest", m, "--backbone", root / "enc.ckpt", "--head", root / "head.ckpt",
                   "--report", root / "report.json") == 0
    assert run_cli("tsne", "--manifest", m, "--backbone", root / "enc.ckpt", "--split", "train",
                   "--out", root / "tsne") == 0
    return sorted(p for p in root.rglob("*") if p.is_file())
