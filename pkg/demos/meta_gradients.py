"""The two meta-learners on problems small enough to check by hand.

MAML: for L(w) = (w - c)^2 and one inner step w' = w - 2a(w - c), the
second-order meta-gradient is 2(w' - c)(1 - 2a); the first-order variant
drops the (1 - 2a) factor.

AT: one encoder weight w, one noise parameter t.  Training on the noisy
"seen" loss moves w by an amount that depends on t, so the clean "unseen"
loss after that step has a gradient with respect to t.
"""

import numpy as np

from camadapt import diffcore as dc
from camadapt.meta import at_hypergradient, meta_gradient

w, c, a = 1.3, 0.4, 0.1


def quad(task, p):
    return (p["rgb.w"] - c) * (p["rgb.w"] - c)


for second in (True, False):
    g, _ = meta_gradient({"rgb.w": np.array(w)}, [None], quad, quad, {"rgb.w": a},
                         steps=1, second_order=second)
    print(f"MAML {'second' if second else 'first'}-order: {float(g['rgb.w']):.6f}")
w1 = w - 2 * a * (w - c)
print(f"closed forms: {2 * (w1 - c) * (1 - 2 * a):.6f} / {2 * (w1 - c):.6f}")

x, y, x2, y2, n = 0.9, 0.2, -1.1, 0.5, 1.4


def seen(p, h):
    eps = dc.softplus(h["at.rgb.eps1"]) * n + 1.0
    r = eps * p["rgb.w"] * x - y
    return r * r


def unseen(p):
    r = p["rgb.w"] * x2 - y2
    return r * r


for t in (-3.0, -1.0, 1.0):
    new, hg, info = at_hypergradient({"rgb.w": np.array(0.7)}, {"at.rgb.eps1": np.array(t)},
                                     seen, unseen, {"rgb.w": 0.05})
    print(f"t={t:+.1f}: w after step {float(new['rgb.w']):.4f}, unseen loss {info['L_pu']:.4f}, "
          f"d/dt {float(hg['at.rgb.eps1']):+.5f}")
