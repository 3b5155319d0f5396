# %% [markdown]
# # The sampler on a problem with a known answer
#
# Data are +1 or -1 with equal probability.  The exact denoiser for that data
# is E[x0 | x_n] = tanh(sqrt(abar_n) x_n / (1 - abar_n)), so the sampler can
# be run without any learning and its output compared with the data.

# %%
import numpy as np
import torch

from egoforecast.diffusion import make_schedule, posterior_mean, q_sample, sample

for kind, N in (("linear", 1000), ("linear", 50), ("scaled-linear", 50)):
    s = make_schedule(kind, N)
    print(f"{kind:<14} N={N:<5} abar_N={s.alpha_bar[-1]:.4f}")

# %% [markdown]
# With 50 steps the unscaled ramp leaves most of the signal in x_N, which is
# why short chains use the scaled ramp.

# %%
s = make_schedule("linear", 1000)


def oracle(x, n):
    return torch.tanh(np.sqrt(s.alpha_bar[n]) * x / (1 - s.alpha_bar[n])), None


g = torch.Generator().manual_seed(0)
out, _ = sample(oracle, torch.randn(5000, generator=g, dtype=torch.float64), s, g)
o = out.numpy()
print("within 0.05 of +-1:", (np.abs(np.abs(o) - 1) < 0.05).mean(), " positive share:", (o > 0).mean())

# %% [markdown]
# Two exact identities: the final step returns the prediction itself, and a
# noise-free forward path is mapped one step back along itself.

# %%
c = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
print(posterior_mean(torch.zeros(3, dtype=torch.float64), c, 1, s))
n = 400
print(posterior_mean(np.sqrt(s.alpha_bar[n]) * c, c, n, s) / np.sqrt(s.alpha_bar[n - 1]))
print(q_sample(c, 0, torch.randn(3, dtype=torch.float64), s))
