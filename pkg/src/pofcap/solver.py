"""Levenberg-Marquardt for dense nonlinear least squares.

The cost is the plain sum of squared residuals. Steps solve
``(J^T J + lambda diag(J^T J)) delta = -J^T r`` and are accepted only when the
cost decreases.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

LAMBDA_MAX = 1e12


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class LMSettings:
    max_iter: int = 100
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    ftol: float = 1e-9
    xtol: float = 1e-9
    gtol: float = 1e-12

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    evaluations: int
    converged: bool
    message: str
    history: list = field(default_factory=list)


def _finite(r):
    return r is not None and np.all(np.isfinite(r))


def solve_lm(fun, x0, settings=None):
    """Minimize ||r(x)||^2.

    ``fun(x, jacobian)`` returns ``(r, J)`` (J may be None when not requested).
    """
    settings = settings or LMSettings()
    x = np.array(x0, dtype=float)
    r, J = fun(x, True)
    if not _finite(r) or not np.all(np.isfinite(J)):
        raise SolverError("non-finite residual at the initial point")
    cost = float(r @ r)
    initial = cost
    lam = settings.lambda0
    history = [cost]
    it = evals = 0
    converged, message = False, "max iterations reached"
    while it < settings.max_iter:
        if cost == 0.0:
            converged, message = True, "zero residual"
            break
        g = J.T @ r
        if np.max(np.abs(g), initial=0.0) <= settings.gtol:
            converged, message = True, "gradient below gtol"
            break
        H = J.T @ J
        D = np.diag(H).copy()
        D = np.maximum(D, 1e-12 * max(D.max(initial=0.0), 1.0))
        accepted = False
        while True:
            try:
                delta = np.linalg.solve(H + lam * np.diag(D), -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.all(np.isfinite(delta)):
                if np.linalg.norm(delta) < settings.xtol:
                    converged, message = True, "step below xtol"
                    break
                r_new, _ = fun(x + delta, False)
                evals += 1
                if _finite(r_new):
                    c_new = float(r_new @ r_new)
                    if c_new < cost:
                        x = x + delta
                        rel = (cost - c_new) / cost
                        cost = c_new
                        r, J = fun(x, True)
                        lam = max(lam * settings.lambda_down, 1e-15)
                        it += 1
                        history.append(cost)
                        accepted = True
                        if rel < settings.ftol:
                            converged, message = True, "relative cost change below ftol"
                        break
            lam *= settings.lambda_up
            if lam > LAMBDA_MAX:
                if delta is None or not np.all(np.isfinite(delta)):
                    raise SolverError("singular system after damping escalation")
                converged, message = True, "no further decrease at maximum damping"
                break
        if converged or not accepted:
            break
    return LMResult(x, cost, initial, it, evals, converged, message, history)
