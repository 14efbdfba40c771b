"""Pure-numpy twin of the compiled stepping kernel."""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def evolve(x0, flows, flow_index, kick_weights, coupling, amplitude, freq,
           t0, h, clock_steps):
    """Apply the kick/flow sequence to ``x0``; same contract as the compiled kernel."""
    x = np.array(x0, dtype=complex, copy=True)
    t = t0
    for s in range(len(kick_weights)):
        f = amplitude * np.cos(TWO_PI * freq * t)
        x *= np.exp(-1j * TWO_PI * kick_weights[s] * h * f * coupling)[:, None]
        x = flows[flow_index[s]] @ x
        t += clock_steps[s] * h
    return x
