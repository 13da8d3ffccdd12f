"""Shared fixtures-as-functions for the unit and acceptance suites."""

from dataclasses import replace

import numpy as np

from savic import preconditioners as pc

RULES = (pc.SQUARE, pc.LINEAR)
CLIPS = (pc.MAX_CLIP, pc.ADD_CLIP)


def admissible_H(rng, config, d):
    """One admissible estimate: |H| <= Gamma (squared for the square rule).

    Under add_clip the entries are drawn from [alpha, Gamma] so that the raw
    diagonal never drops below alpha; without that the additive ceiling can
    outgrow the multiplicative factor (see the counterexample test).
    """
    a, G = config.alpha, config.gamma_cap
    if config.clip == pc.ADD_CLIP:
        h = rng.uniform(a, G, d)
    elif config.rule == pc.SQUARE:
        h = rng.uniform(0.0, G, d)
    else:
        h = rng.uniform(-G, G, d)
    return h * h if config.rule == pc.SQUARE else h


def fuzz_sequence(rng, rule, clip, d=10, steps=30):
    """Yield (prev_state, next_state, beta) along one random admissible sequence."""
    alpha = float(rng.uniform(0.01, 1.0))
    gamma_cap = alpha * float(np.exp(rng.uniform(0.0, np.log(100.0))))
    config = pc.PrecondConfig(rule=rule, clip=clip, alpha=alpha, gamma_cap=gamma_cap)
    raw0 = rng.uniform(alpha, gamma_cap, d)
    state = pc.DiagPrecondState(0, raw0, pc.clip(raw0, config), config)
    out = []
    for _ in range(steps):
        beta = float(rng.uniform(0.0, 1.0))
        cfg = replace(config, beta_schedule=pc.BetaSchedule("constant", beta))
        nxt = pc.update(replace(state, config=cfg), admissible_H(rng, config, d))
        out.append((state, nxt, beta))
        state = replace(nxt, config=config)
    return out


def fuzz_corpus(n=1000, d=10, steps=30, seed=0):
    """``n`` sequences spread evenly over both rules and both clip modes."""
    rng = np.random.default_rng(seed)
    combos = [(r, c) for r in RULES for c in CLIPS]
    for i in range(n):
        rule, clip = combos[i % len(combos)]
        yield fuzz_sequence(rng, rule, clip, d, steps)


def sign_vectors(d):
    """All 2^d Rademacher vectors as rows."""
    idx = np.arange(2**d)[:, None]
    bits = (idx >> np.arange(d)) & 1
    return 1.0 - 2.0 * bits
