"""What the squeeze-and-excitation gate does to a feature map.

Each channel's time average goes through a small bottleneck MLP that ends in
a sigmoid, giving one gate in (0, 1) per channel.
Here the second linear layer is hand-set so that channels with a large mean
are kept and channels with a small mean are damped.

    python demos/02_squeeze_excitation.py
"""

import numpy as np

from incepse.autodiff import Tape, Tensor
from incepse import autodiff as ad
from incepse.layers import LinearParams
from incepse.model import SEParams, se_block

rng = np.random.default_rng(0)
C, L = 4, 50
means = np.array([3.0, 0.2, 1.5, -1.0])
x = means[None, :, None] + 0.3 * rng.standard_normal((1, C, L))

# hidden unit = relu(mean of channel 0 + mean of channel 2); the gates read it back
fc1 = LinearParams(Tensor(np.array([[1.0, 0.0, 1.0, 0.0]])), Tensor(np.zeros(1)))
fc2 = LinearParams(Tensor(np.array([[2.0], [-2.0], [1.0], [-3.0]])), Tensor(np.zeros(C)))
params = SEParams(fc1, fc2)

y = se_block(Tensor(x), params).values
gates = y[0, :, 0] / x[0, :, 0]
print("channel  mean in   gate     mean out")
for c in range(C):
    print(f"   {c}    {x[0, c].mean():+7.3f}  {gates[c]:.4f}  {y[0, c].mean():+7.3f}")

print("\nwith the second linear zeroed every gate is sigmoid(0) = 0.5:")
zero = SEParams(fc1, LinearParams(Tensor(np.zeros((C, 1))), Tensor(np.zeros(C))))
print(" ", np.unique(se_block(Tensor(x), zero).values / x))

tape = Tape()
xt = tape.leaf(x)
grads = tape.backward(ad.reduce("sum", se_block(xt, params)))
print(f"\ngradient reaches the input through both the gate and the scaled path; |dL/dx| mean = "
      f"{np.abs(grads[xt]).mean():.4f}")
