from lsembed.modeling.mlp import GradientBuffer
from lsembed.utils.errors import ValidationError


class SGD:
    """SGD with momentum: v <- mu * v - lr * grad, W <- W + v."""

    def __init__(self, params, lr, momentum=0.0):
        if lr < 0:
            raise ValidationError(f"learning rate must be non-negative, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {momentum}")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = params.zeros_like(GradientBuffer)

    def step(self, grads):
        for name, value in self.params.items():
            v = self.velocity[name]
            v *= self.momentum
            v -= self.lr * grads[name]
            value += v
