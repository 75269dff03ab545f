"""The optimiser and learning-rate schedule on a one-parameter quadratic."""

import numpy as np

from topic_convs2s.model import ModelParams
from topic_convs2s.tensor import Tensor
from topic_convs2s.train import STOP, OptimizerState, lr_schedule, nesterov_step

params = ModelParams()
params["w"] = Tensor(np.array([1.0]), requires_grad=True)
state = OptimizerState.for_params(params, lr=0.1, momentum=0.9)
for step in range(5):
    w = params["w"]
    grads = {"w": 2 * w.data}  # f(w) = w^2
    nesterov_step(params, state, grads)
    print(step, params["w"].data)

# a flat validation score decays the rate tenfold each epoch until the floor
state = OptimizerState({}, 0.25)
history = []
while True:
    history.append(0.5)
    lr = lr_schedule(state, history, decay=0.1, floor=1e-5)
    print("epoch", len(history), lr)
    if lr is STOP:
        break
