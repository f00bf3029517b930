"""Fully-connected network with masked weights and optional batch norm.

Layer layout is linear -> batchnorm -> ReLU for hidden layers and a bare
linear head. Gradients are computed densely (growth criteria need them);
the optimizer step keeps masked-out weights at exactly zero.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor
from .sparse import MaskedParameter, make_mask
from .tensor import BatchNormState, OptimizerState


@dataclass
class Layer:
    param: MaskedParameter
    bn: BatchNormState | None
    activation: str  # "relu" or "none"


class Network:
    """Ordered dense layers f(x) = linear/BN/ReLU ... linear -> logits."""

    def __init__(self, widths, batchnorm: bool = False, rng=None,
                 bn_momentum: float = 0.1):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = tuple(int(w) for w in widths)
        self.batchnorm = bool(batchnorm)
        self.layers: list[Layer] = []
        rng = rng or np.random.default_rng(0)
        for i, (n_in, n_out) in enumerate(zip(self.widths, self.widths[1:])):
            last = i == len(self.widths) - 2
            # Kaiming-uniform fan-in scaling for the dense init.
            limit = np.sqrt(6.0 / n_in)
            values = rng.uniform(-limit, limit, size=(n_in, n_out))
            param = MaskedParameter(values, make_mask(n_in, n_out, fill=True),
                                    np.zeros(n_out))
            bn = None
            if self.batchnorm and not last:
                bn = BatchNormState.identity(n_out, momentum=bn_momentum)
            self.layers.append(Layer(param, bn, "none" if last else "relu"))

    @classmethod
    def from_layers(cls, widths, batchnorm: bool, layers) -> "Network":
        net = cls.__new__(cls)
        net.widths = tuple(int(w) for w in widths)
        net.batchnorm = bool(batchnorm)
        net.layers = layers
        return net

    # -- forward / backward ------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False):
        """Returns (logits, caches); caches feed backward()."""
        caches = []
        h = x
        for layer in self.layers:
            z = tensor.linear_forward(h, layer.param.values, layer.param.bias)
            bn_cache = None
            a_in = z
            if layer.bn is not None:
                a_in, bn_cache = tensor.batchnorm_forward(z, layer.bn, train)
            out = tensor.relu(a_in) if layer.activation == "relu" else a_in
            caches.append((h, a_in, bn_cache))
            h = out
        return h, caches

    def backward(self, caches, dlogits: np.ndarray) -> dict:
        """Dense gradients for every parameter, keyed like named_params()."""
        grads = {}
        d = dlogits
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            h, a_in, bn_cache = caches[idx]
            if layer.activation == "relu":
                d = tensor.relu_backward(a_in, d)
            if layer.bn is not None:
                d, dgamma, dbeta = tensor.batchnorm_backward(bn_cache, d)
                grads[f"l{idx}.bn.gamma"] = dgamma
                grads[f"l{idx}.bn.beta"] = dbeta
            d, dw, db = tensor.linear_backward(h, layer.param.values, d)
            grads[f"l{idx}.w"] = dw
            grads[f"l{idx}.b"] = db
        return grads

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray,
                       train: bool = True):
        logits, caches = self.forward(x, train=train)
        loss, dlogits = tensor.softmax_cross_entropy(logits, labels)
        return loss, self.backward(caches, dlogits)

    def predict_proba(self, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        """Eval-mode softmax probabilities, computed in batches."""
        outs = []
        for start in range(0, x.shape[0], batch_size):
            logits, _ = self.forward(x[start:start + batch_size], train=False)
            outs.append(tensor.softmax(logits))
        return np.concatenate(outs, axis=0)

    # -- parameters ---------------------------------------------------------

    def named_params(self):
        """Yields (name, array, mask-or-None) for every trainable array."""
        for idx, layer in enumerate(self.layers):
            yield f"l{idx}.w", layer.param.values, layer.param.mask
            yield f"l{idx}.b", layer.param.bias, None
            if layer.bn is not None:
                yield f"l{idx}.bn.gamma", layer.bn.gamma, None
                yield f"l{idx}.bn.beta", layer.bn.beta, None

    def sgd_step(self, grads: dict, opt: OptimizerState, lr: float) -> None:
        for name, param, mask in self.named_params():
            tensor.sgd_momentum_step(param, grads[name],
                                     opt.velocity(name, param.shape),
                                     lr, opt.momentum, opt.weight_decay,
                                     mask=mask)

    def masks(self) -> list[np.ndarray]:
        return [layer.param.mask for layer in self.layers]

    def set_masks(self, masks, opt: OptimizerState | None = None) -> None:
        """Install new masks, zeroing newly-dead values and velocities."""
        for idx, (layer, mask) in enumerate(zip(self.layers, masks)):
            layer.param.mask = mask
            layer.param.apply_mask()
            if opt is not None:
                v = opt.velocities.get(f"l{idx}.w")
                if v is not None:
                    v[~mask] = 0.0

    def snapshot(self) -> "Network":
        layers = [Layer(l.param.copy(), l.bn.copy() if l.bn else None,
                        l.activation) for l in self.layers]
        return Network.from_layers(self.widths, self.batchnorm, layers)
