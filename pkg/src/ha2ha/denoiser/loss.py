"""Cross-prediction loss between half-angle observations."""

from __future__ import annotations

from ..autodiff import ParamStore, Tensor, abs_sum, absolute, mean, sub


def mae(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return mean(absolute(sub(a, b)))


def ha2ha_loss(o1: Tensor, o2: Tensor, y1: Tensor, y2: Tensor, lambda_c: float = 0.5) -> Tensor:
    """(MAE(o1, y2) + MAE(o2, y1) + lambda_c * MAE(o1, o2)) / (2 + lambda_c).

    o1 = f(y1) must predict y2 and vice versa; the consistency term pulls both
    outputs together and its gradient reaches both paths.
    """
    if not (o1.shape == o2.shape == y1.shape == y2.shape):
        raise ValueError("ha2ha_loss needs four tensors of identical shape")
    if lambda_c < 0:
        raise ValueError("lambda_c must be >= 0")
    cross = mae(o1, y2) + mae(o2, y1)
    if lambda_c:
        cross = cross + lambda_c * mae(o1, o2)
    return cross * (1.0 / (2.0 + lambda_c))


def total_loss(ha2ha: Tensor, params: ParamStore, lambda_1: float = 1e-5) -> Tensor:
    """ha2ha + lambda_1 * sum |theta| over the regularized (conv) parameters."""
    if lambda_1 < 0:
        raise ValueError("lambda_1 must be >= 0")
    if lambda_1 == 0:
        return ha2ha
    out = ha2ha
    for name, t in params:
        if name in params.regularized:
            out = out + lambda_1 * abs_sum(t)
    return out
