import torch


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up in an intermediate tensor; the message names where."""


def assert_finite(t, where):
    if not torch.isfinite(t).all():
        raise NonFiniteError(f"non-finite values in {where}")
    return t
