"""Central finite-difference gradients with respect to module parameters (float64)."""

import torch


def max_relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-6) -> float:
    """Largest elementwise |a - n| scaled by the tensor's gradient magnitude.

    Scaling by the per-tensor max keeps entries that are exactly zero in both
    (for example query/key maps attending to a single token) from dividing by zero.
    """
    scale = max(analytic.abs().max().item(), numeric.abs().max().item(), floor)
    return ((analytic - numeric).abs().max() / scale).item()


def parameter_gradient_errors(module: torch.nn.Module, loss_fn, eps: float = 1e-6) -> dict[str, float]:
    module.zero_grad()
    loss_fn().backward()
    errors = {}
    for name, p in module.named_parameters():
        analytic = p.grad.detach().clone()
        numeric = torch.zeros_like(p)
        flat, nflat = p.data.view(-1), numeric.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
            nflat[i] = (up - down) / (2 * eps)
        errors[name] = max_relative_error(analytic, numeric)
    return errors
