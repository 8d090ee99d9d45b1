# Autodiff basics
#
# Everything in jointcls runs on a small reverse-mode autodiff engine over
# float64 numpy arrays. This script builds a tiny computation by hand, calls
# backward() and compares the result against central finite differences.

import numpy as np

from jointcls import tensor as T
from jointcls.errors import NonFiniteError, NumericDomainError

rng = np.random.default_rng(0)

# A leaf tensor is one whose gradient we want.
x = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = T.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
gain, bias = T.Tensor(np.ones(4)), T.Tensor(np.zeros(4))

# A two-layer toy: layer norm, matmul, GELU, softmax, then a scalar.
h = T.gelu(T.layer_norm(x, gain, bias) @ w)
loss = T.softmax(h, axis=-1)[:, 0].sum()
loss.backward()
print("loss", loss.item())
print("dloss/dw\n", w.grad)


# Central differences on one coordinate of w, by hand.
def f():
    return T.softmax(T.gelu(T.layer_norm(x, gain, bias) @ w), axis=-1)[:, 0].sum().item()


eps = 1e-5
old = w.data[1, 0]
w.data[1, 0] = old + eps
up = f()
w.data[1, 0] = old - eps
down = f()
w.data[1, 0] = old
print("finite difference", (up - down) / (2 * eps), "analytic", w.grad[1, 0])

# Masked softmax: -inf is the one infinity that is allowed in, and masked
# slots come out as exact zeros.
scores = T.Tensor(np.array([[1.0, 2.0, 3.0]]))
masked = T.masked_fill(scores, np.array([[1, 1, 0]]) == 0, -np.inf)
print("masked softmax", T.softmax(masked, axis=-1).data)

# Ops refuse to produce NaN or step outside their domain.
for bad in (lambda: T.log(T.Tensor([-1.0])), lambda: T.Tensor([np.inf]) - T.Tensor([np.inf])):
    try:
        with np.errstate(invalid="ignore"):    # the library raises; numpy need not warn
            bad()
    except (NumericDomainError, NonFiniteError) as e:
        print(type(e).__name__, "-", e)

# Inside no_grad() nothing is recorded, which is how inference runs.
with T.no_grad():
    y = x @ w
print("recorded under no_grad:", y.requires_grad)
