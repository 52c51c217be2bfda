"""Additive Runge-Kutta IMEX time stepping with embedded error control.

Uses the six-stage fourth order ARK4(3)6L[2]SA pair of Kennedy and
Carpenter: an explicit tableau for the non-stiff part and an ESDIRK tableau
(diagonal 1/4, stiffly accurate) for the stiff part, with a third order
embedded solution for step control.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import StepSizeUnderflowError

A_EXPLICIT = np.array([
    [0, 0, 0, 0, 0, 0],
    [1.0 / 2, 0, 0, 0, 0, 0],
    [13861.0 / 62500.0, 6889.0 / 62500.0, 0, 0, 0, 0],
    [-116923316275.0 / 2393684061468.0, -2731218467317.0 / 15368042101831.0,
     9408046702089.0 / 11113171139209.0, 0, 0, 0],
    [-451086348788.0 / 2902428689909.0, -2682348792572.0 / 7519795681897.0,
     12662868775082.0 / 11960479115383.0, 3355817975965.0 / 11060851509271.0, 0, 0],
    [647845179188.0 / 3216320057751.0, 73281519250.0 / 8382639484533.0,
     552539513391.0 / 3454668386233.0, 3354512671639.0 / 8306763924573.0, 4040.0 / 17871.0, 0],
])
A_IMPLICIT = np.array([
    [0, 0, 0, 0, 0, 0],
    [1.0 / 4, 1.0 / 4, 0, 0, 0, 0],
    [8611.0 / 62500.0, -1743.0 / 31250.0, 1.0 / 4, 0, 0, 0],
    [5012029.0 / 34652500.0, -654441.0 / 2922500.0, 174375.0 / 388108.0, 1.0 / 4, 0, 0],
    [15267082809.0 / 155376265600.0, -71443401.0 / 120774400.0, 730878875.0 / 902184768.0,
     2285395.0 / 8070912.0, 1.0 / 4, 0],
    [82889.0 / 524892.0, 0, 15625.0 / 83664.0, 69875.0 / 102672.0, -2260.0 / 8211, 1.0 / 4],
])
B_MAIN = A_IMPLICIT[-1].copy()
B_EMBEDDED = np.array([4586570599.0 / 29645900160.0, 0, 178811875.0 / 945068544.0,
                       814220225.0 / 1159782912.0, -3700637.0 / 11593932.0, 61727.0 / 225920.0])
C_NODES = A_EXPLICIT.sum(axis=1)
GAMMA = 0.25


class ImplicitSolveFailed(RuntimeError):
    """Raised by a problem's stage solver to request a smaller step."""


class IMEXProblem:
    """Interface for :func:`integrate`.

    Subclasses provide the split right-hand side ``y' = F_E(r, y) + F_I(r, y)``
    and a solver for the stage equation ``Y - h F_I(r, Y) = rhs``.
    """

    def explicit(self, r, y):
        raise NotImplementedError

    def implicit(self, r, y):
        raise NotImplementedError

    def solve_stage(self, r, rhs, h, guess):
        raise NotImplementedError

    def check_state(self, r, y):
        """Hook called on every stage value; may raise to abort the run."""


def ark_step(problem: IMEXProblem, r, y, dr, fe0=None, fi0=None):
    """One ARK step; returns ``(y_new, error_estimate, fe_last, fi_last)``."""
    s = len(C_NODES)
    Y = [y]
    FE = [problem.explicit(r, y) if fe0 is None else fe0]
    FI = [problem.implicit(r, y) if fi0 is None else fi0]
    h = GAMMA * dr
    for i in range(1, s):
        ri = r + C_NODES[i] * dr
        rhs = y.copy()
        for j in range(i):
            if A_EXPLICIT[i, j]:
                rhs += dr * A_EXPLICIT[i, j] * FE[j]
            if A_IMPLICIT[i, j]:
                rhs += dr * A_IMPLICIT[i, j] * FI[j]
        # predictor: stage equation with the previous stiff derivative
        Yi = problem.solve_stage(ri, rhs, h, rhs + h * FI[-1])
        problem.check_state(ri, Yi)
        Y.append(Yi)
        # stage derivative recovered from the stage equation
        FI.append((Yi - rhs) / h)
        FE.append(problem.explicit(ri, Yi))
    y_new = y.copy()
    err = np.zeros_like(y)
    for j in range(s):
        total = FE[j] + FI[j]
        y_new += dr * B_MAIN[j] * total
        err += dr * (B_MAIN[j] - B_EMBEDDED[j]) * total
    return y_new, err, FE[-1], FI[-1]


@dataclass
class StepLog:
    radii: list = field(default_factory=list)
    sizes: list = field(default_factory=list)
    rejected: int = 0


def integrate(problem: IMEXProblem, y0, radii, rtol=1e-10, atol=1e-12, max_ratio=0.01,
              first_step=None, on_step=None, min_step=1e-12):
    """March ``y`` through the increasing ``radii``, landing on each one.

    Step sizes are capped at ``max_ratio * r``.  ``on_step(r, y, dr)`` is
    called after every accepted step.  Returns the states at ``radii`` and
    the step log.
    """
    radii = np.asarray(radii, dtype=float)
    out = np.empty((radii.size,) + np.shape(y0))
    out[0] = y0
    y = np.array(y0, dtype=float)
    r = radii[0]
    log = StepLog()
    dr = first_step if first_step is not None else max_ratio * r
    fe = fi = None
    for k in range(1, radii.size):
        target = radii[k]
        while r < target:
            dr = min(dr, max_ratio * r)
            last = r + dr >= target * (1.0 - 1e-12)
            step = target - r if last else dr
            if step < min_step * max(1.0, r):
                raise StepSizeUnderflowError(f"step size underflow at r = {r:.6g}", radius=r)
            try:
                y_new, err, _, _ = ark_step(problem, r, y, step, fe, fi)
                scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
                enorm = float(np.max(np.abs(err) / scale))
            except ImplicitSolveFailed:
                enorm = np.inf
            if enorm <= 1.0:
                r = target if last else r + step
                y = y_new
                fe = fi = None
                log.radii.append(r)
                log.sizes.append(step)
                if on_step is not None:
                    on_step(r, y, step)
                factor = 0.9 * enorm ** (-0.25) if enorm > 0 else 5.0
                if last:
                    # a shortened landing step says little about the next size
                    dr = dr * min(1.0, max(0.2, factor))
                else:
                    dr = step * min(5.0, max(0.2, factor))
            else:
                log.rejected += 1
                factor = 0.9 * enorm ** (-0.25) if np.isfinite(enorm) else 0.25
                dr = step * min(0.9, max(0.1, factor))
        out[k] = y
    return out, log
