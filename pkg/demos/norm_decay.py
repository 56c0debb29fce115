"""
Ensemble norm decay under recombination
=======================================

With equal singlet and triplet recombination rates k_S = k_T = k the decay
operator is a multiple of the identity, so every state loses norm at the
same exponential rate no matter what field is applied: the ensemble mean
of ||psi(t)||^2 equals exp(-k t) exactly.  The integrator has to reproduce
that law down to its truncation floor, and the floor has to fall fast
under grid refinement.  This script drives a randomly switching field
through the low-pass filter and checks both.
"""

import numpy as np

from spinctrl import (
    ControlSignal,
    FilterConfig,
    Prism,
    TimeGrid,
    build_model,
    filter_field,
    integrate_forward,
    triplet_states,
)

K_RATE = 10.0  # 1/us, both channels

assembly = build_model(p=1)
basis = triplet_states(p=1)
prism = Prism(lower=(3.0, 3.0, 3.0), upper=(6.0, 6.0, 6.0))
rng = np.random.default_rng(7)

# one random bang-bang control, re-sampled onto each grid by repetition so
# every run integrates the same physical field
coarse = np.where(rng.random((100, 3)) < 0.5, 3.0, 6.0)

print("grid      max |mean||psi||^2 - exp(-k t)| / exp(-k t)")
previous = None
for steps in (100, 200, 400, 800):
    grid = TimeGrid(t_final=0.5, steps=steps)
    u = ControlSignal(values=np.repeat(coarse, steps // 100, axis=0), bounds=prism)
    fields = filter_field(u, FilterConfig(gamma=1.0, v0=(3.0, 3.0, 3.0)), grid)
    forward = integrate_forward(assembly, fields, basis, grid)

    norm_sq = np.mean(np.abs(forward.states) ** 2, axis=(1, 2)) * assembly.dim
    exact = np.exp(-K_RATE * grid.nodes)
    worst = np.max(np.abs(norm_sq - exact) / exact)

    note = ""
    if previous is not None:
        note = f"   (shrank {previous / worst:.0f}x)"
    previous = worst
    print(f"{steps:5d}     {worst:.3e}{note}")

print()
print("the law itself is field-independent; the residual is pure RK4")
print("truncation of the decay channel and falls 16x per halving (h^4);")
print("with recombination off the norm drift would superconverge at h^5")
