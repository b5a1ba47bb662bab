# coding: utf-8

# # A tour of the autograd core
#
# Everything in `lwpt` is differentiated by a small tape-based reverse-mode
# engine. This script builds a few graphs by hand, checks them against
# finite differences, and then runs the fused bidirectional LSTM.

# In[1]:

import numpy as np

from lwpt import functional as F
from lwpt import tensor as T
from lwpt.gradcheck import check_gradients
from lwpt.tensor import Tensor, backward, count_ops

rng = np.random.default_rng(0)


# ## Scalars first
#
# d/da of tanh(a) * a^2 at a = 0.5, by hand and by the engine.

# In[2]:

a = Tensor(0.5, requires_grad=True)
backward(T.tanh(a) * a * a)
t = np.tanh(0.5)
print("engine:", a.grad, " by hand:", (1 - t * t) * 0.25 + t * 2 * 0.5)


# ## Broadcasting is undone on the way back
#
# A bias of shape (4,) added to a (3, 4) matrix receives the column sums of
# the upstream gradient.

# In[3]:

x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
b = Tensor(np.zeros(4), requires_grad=True)
backward(T.tsum(x + b))
print("bias grad:", b.grad)


# ## Finite differences agree with the tape
#
# `check_gradients` returns the worst relative error between the analytic
# gradient and central differences.

# In[4]:

H = Tensor(rng.normal(size=(2, 5, 6)), requires_grad=True)
gain, bias = Tensor(np.ones(6), requires_grad=True), Tensor(np.zeros(6), requires_grad=True)
w = Tensor(rng.normal(size=(2, 5, 6)))
err = check_gradients(lambda: T.tsum(F.layer_norm(H, gain, bias) * w), [H, gain, bias])
print(f"layer_norm relative error: {err:.2e}")


# ## A masked bidirectional LSTM
#
# The second sequence has two padding steps. The hidden state is carried
# through padding unchanged, so the real positions come out exactly as if
# the sequence had been short to begin with.

# In[5]:

def weights(d_in, h):
    return (Tensor(rng.normal(scale=0.5, size=(d_in, 4 * h)), requires_grad=True),
            Tensor(rng.normal(scale=0.5, size=(h, 4 * h)), requires_grad=True),
            Tensor(np.zeros(4 * h), requires_grad=True))


fwd, bwd = weights(3, 2), weights(3, 2)
seq = rng.normal(size=(2, 5, 3))
mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]])
out = F.bilstm_layer(Tensor(seq), fwd, bwd, mask).data
short = F.bilstm_layer(Tensor(seq[1:, :3]), fwd, bwd).data
print("padded vs short, max diff:", np.abs(out[1, :3] - short[0]).max())


# In[6]:

# Every finite-difference probe reruns the forward pass; count_ops shows how often.
with count_ops() as ops:
    err = check_gradients(lambda: T.tsum(F.bilstm_layer(Tensor(seq), fwd, bwd, mask)), [*fwd, *bwd])
print(f"bilstm relative error: {err:.2e}")
print("ops recorded:", dict(ops.most_common(3)))
