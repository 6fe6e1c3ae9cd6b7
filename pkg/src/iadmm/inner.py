"""Accelerated proximal inner loop for one block subproblem.

Each outer sweep asks block ``i`` to approximately minimize

    f_i(u) + h_i(u) + (rho/2) ||A_i u - b_i + lam/rho||^2
                    + (rho/2) (u - y_i)^T (gamma_i I - A_i^T A_i) (u - y_i)

starting from the current ``x_i``.  The loop is an accelerated gradient
method on the smooth part with an exact prox step on ``h_i``: iterate
``l`` picks a proximal weight ``delta_l`` and a mixing weight
``alpha_l``, linearizes ``f_i`` at the interpolated point
``a_bar = (1 - alpha) a_prev + alpha u_prev``, and solves

    u_l = argmin_u <grad, u> + (delta/2) ||u - u_prev||^2
              + (rho/2) ||A_i u - b_i + lam/rho||^2
              + (rho/2) (u - y_i)^T (gamma_i I - A_i^T A_i) (u - y_i)
              + h_i(u).

Because the two quadratic penalty terms have combined Hessian exactly
``rho * gamma_i * I``, this subproblem is a single prox evaluation with
step ``1 / (delta + rho * gamma_i)``.

Two parameter rules are supported.  The constant rule uses
``delta_l = 2 zeta / ((1 - sigma) l)`` and ``alpha_l = 2 / (l + 1)``,
which needs a Lipschitz bound ``zeta`` for ``grad f_i`` and satisfies
the descent test automatically.  The adaptive rule backtracks a ratio
``delta / alpha`` until the descent test holds and derives
``(delta, alpha)`` from the accumulator ``Lambda = sum_l 1 / delta_l``.
Both rules keep the product ``delta_l * alpha_l * gamma_l`` equal to one,
where ``gamma_1 = 1 / delta_1`` and ``gamma_l = gamma_{l-1} / (1 - alpha_l)``;
that invariant is what the outer-loop guarantees rest on.

The loop stops once ``gamma_l`` has caught up with the previous sweep's
accuracy weight and the scaled step ``||a_l - x_i|| / sqrt(gamma_l)``
falls below the forcing threshold derived from the previous outer
residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericError
from .problem import Block

# relative slack for the descent test so exact ties are accepted in floats
_LS_SLACK = 1e-12


@dataclass
class InnerConfig:
    """Parameters of the inner loop shared across blocks."""

    rule: str = "adaptive"
    sigma: float = 0.99
    delta_min: float = 1e-6
    delta_max: float = 1e6
    eta: float = 2.0
    max_iters: int = 10_000
    max_backtracks: int = 60

    def __post_init__(self):
        if self.rule not in ("constant", "adaptive"):
            raise ConfigError("unknown inner rule %r" % (self.rule,))
        if not 0.0 < self.sigma < 1.0:
            raise ConfigError("sigma must lie strictly between 0 and 1")
        if not 0.0 < self.delta_min <= self.delta_max:
            raise ConfigError("need 0 < delta_min <= delta_max")
        if self.eta <= 1.0:
            raise ConfigError("eta must exceed 1")


@dataclass
class InnerState:
    """Running state of one inner loop (iteration ``l``)."""

    u_prev: np.ndarray
    a_prev: np.ndarray
    u: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None
    a_bar: Optional[np.ndarray] = None
    delta: float = 0.0
    alpha: float = 0.0
    gamma: float = 0.0
    Lambda: float = 0.0
    l: int = 0
    sum_sq: float = 0.0


@dataclass
class InnerResult:
    """Outcome of one inner loop: new iterate, lookahead point, weights."""

    x_next: np.ndarray
    z: np.ndarray
    Gamma: float
    r: float
    iters: int


@dataclass
class InnerTrace:
    """Per-iteration record used by invariant checks and diagnostics."""

    deltas: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    gammas: list = field(default_factory=list)
    xis: list = field(default_factory=list)
    us: list = field(default_factory=list)
    a_s: list = field(default_factory=list)
    step_sq: list = field(default_factory=list)
    backtracks: list = field(default_factory=list)


def params_constant(l, zeta, sigma):
    """Constant-rule pair ``(delta_l, alpha_l)`` for iteration ``l >= 1``.

    Requires a positive Lipschitz bound ``zeta``; with it the descent
    test holds without backtracking and
    ``gamma_l = (1 - sigma) l (l + 1) / (4 zeta)``.
    """
    if l < 1:
        raise ConfigError("inner iteration index starts at 1")
    if zeta is None or zeta <= 0.0:
        raise ConfigError("constant rule needs a positive Lipschitz bound")
    if not 0.0 < sigma < 1.0:
        raise ConfigError("sigma must lie strictly between 0 and 1")
    delta = 2.0 * zeta / ((1.0 - sigma) * l)
    alpha = 2.0 / (l + 1.0)
    return delta, alpha


def line_search_accept(smooth, a_bar, a, delta, alpha, sigma,
                       f_bar=None, grad_bar=None, f_a=None):
    """Descent test comparing ``f`` at ``a`` with its model around ``a_bar``.

    Accepts when
    ``f(a_bar) + <grad f(a_bar), a - a_bar> + (1 - sigma) delta / (2 alpha)
    * ||a - a_bar||^2 >= f(a)`` up to a tiny relative slack.  Cached
    values may be passed to avoid re-evaluation.
    """
    if f_bar is None:
        f_bar = smooth.value(a_bar)
    if grad_bar is None:
        grad_bar = smooth.grad(a_bar)
    if f_a is None:
        f_a = smooth.value(a)
    d = a - a_bar
    lhs = f_bar + float(grad_bar @ d) + (1.0 - sigma) * delta / (2.0 * alpha) * float(d @ d)
    return lhs >= f_a - _LS_SLACK * (1.0 + abs(f_a))


def params_adaptive(Lambda_prev, delta0, eta, accept, max_backtracks=60):
    """Backtracking rule: grow ``delta / alpha`` until ``accept`` passes.

    For trial ``j`` the candidate pair is derived from
    ``theta = 1 / (delta0 * eta**j)`` via
    ``delta = 2 / (theta + sqrt(theta^2 + 4 theta Lambda_prev))`` and
    ``alpha = 1 / (1 + delta * Lambda_prev)``; the pair always satisfies
    ``delta / alpha = delta0 * eta**j``.  ``accept(delta, alpha)`` must
    return ``(ok, payload)``; the payload of the first accepted trial is
    returned along with ``(delta, alpha, j)``.
    """
    for j in range(max_backtracks + 1):
        theta = 1.0 / (delta0 * eta ** j)
        delta = 2.0 / (theta + np.sqrt(theta * theta + 4.0 * theta * Lambda_prev))
        alpha = 1.0 / (1.0 + delta * Lambda_prev)
        ok, payload = accept(delta, alpha)
        if ok:
            return delta, alpha, j, payload
    raise NumericError(
        "descent test failed after %d backtracks" % max_backtracks,
        context={"routine": "params_adaptive", "delta0": delta0},
    )


def _prox_step(grad, u_prev, y_i, w_pen, delta, rho, gamma_i, nonsmooth):
    """Exact minimizer of the linearized subproblem (see module docstring).

    ``w_pen = A_i^T (A_i y_i - b_i + lam / rho)`` is constant within one
    inner loop and is precomputed by the caller.
    """
    scale = delta + rho * gamma_i
    v = (delta * u_prev + rho * gamma_i * y_i - grad - rho * w_pen) / scale
    u = nonsmooth.prox(v, 1.0 / scale)
    if not np.all(np.isfinite(u)):
        raise NumericError("prox step produced non-finite values",
                           context={"routine": "inner_prox_step"})
    return u


def inner_prox_step(op, grad, u_prev, y_i, b_i, lam, delta, rho, gamma_i, nonsmooth):
    """Public single prox step; computes the constant penalty vector itself."""
    w_pen = op.adjoint(op.apply(y_i) - b_i + lam / rho)
    return _prox_step(grad, u_prev, y_i, w_pen, delta, rho, gamma_i, nonsmooth)


def step1b_check(gamma_l, Gamma_prev, a_l, x_k, psi, eps_prev):
    """Stopping test: accuracy weight caught up and scaled step small enough.

    Returns ``True`` when ``gamma_l >= Gamma_prev`` and
    ``||a_l - x_k|| <= psi(eps_prev) * sqrt(gamma_l)``.  With
    ``eps_prev = inf`` the second condition is vacuous, so the first
    sweep of a solve stops after a single inner iteration.
    """
    if gamma_l < Gamma_prev:
        return False
    thr = psi(eps_prev)
    return float(np.linalg.norm(a_l - x_k)) <= thr * np.sqrt(gamma_l)


def run_inner(block: Block, x_i, y_i, lam, b_i, rho, gamma_i, cfg: InnerConfig,
              Gamma_prev, psi_eps, gamma_floor=None, force_iters=None,
              trace=False, ctx=None):
    """Run the inner loop for one block and one outer sweep.

    Parameters
    ----------
    block : Block
        The block's smooth term, prox term, and constraint operator.
    x_i, y_i : ndarray
        Current iterate and corrected point for this block.
    lam : ndarray
        Current multiplier estimate.
    b_i : ndarray
        Effective right-hand side for this block (``b`` minus the other
        blocks' contributions in sweep order).
    rho, gamma_i : float
        Penalty parameter and the block's diagonal weight in ``M``.
    Gamma_prev : float
        Accuracy weight reached in the previous outer sweep.
    psi_eps : float
        Forcing threshold ``psi(eps_prev)``; ``inf`` on the first sweep.
    gamma_floor : float, optional
        Stronger lower bound on ``gamma_l`` than ``Gamma_prev`` (used by
        the growing-penalty mode to keep ``k / Gamma_k`` nonincreasing).
    force_iters : int, optional
        Run exactly this many iterations and skip the stopping test
        (used by invariant checks and the single-step benchmark mode).
    trace : bool
        Also return an :class:`InnerTrace` with per-iteration records.
    ctx : tuple, optional
        ``(outer_iteration, block_index)`` attached to numeric errors.

    Returns
    -------
    (InnerResult, InnerTrace or None)
    """
    smooth, nonsmooth, op = block.smooth, block.nonsmooth, block.op
    zeta = smooth.lipschitz
    zero_f = (zeta == 0.0)
    if not zero_f and cfg.rule == "constant" and (zeta is None or zeta <= 0.0):
        raise ConfigError("constant rule needs a positive Lipschitz bound for nonzero smooth terms")

    x_i = np.asarray(x_i, dtype=np.float64)
    st = InnerState(u_prev=x_i.copy(), a_prev=x_i.copy())
    w_pen = op.adjoint(op.apply(y_i) - b_i + lam / rho)
    floor = Gamma_prev if gamma_floor is None else gamma_floor
    delta0 = min(max(1.0, cfg.delta_min), cfg.delta_max)
    tr = InnerTrace() if trace else None
    if tr is not None:
        tr.us.append(st.u_prev.copy())

    max_l = force_iters if force_iters is not None else cfg.max_iters
    stopped = False
    for l in range(1, max_l + 1):
        st.l = l
        backtracks = 0
        if zero_f:
            # pinned proximal weight; the mixing weight keeps the
            # delta * alpha * gamma product at one for any delta sequence
            delta = cfg.delta_min
            alpha = 1.0 if l == 1 else 1.0 / (1.0 + delta * st.Lambda)
            a_bar = (1.0 - alpha) * st.a_prev + alpha * st.u_prev
            grad = smooth.grad(a_bar)
            u = _prox_step(grad, st.u_prev, y_i, w_pen, delta, rho, gamma_i, nonsmooth)
            a = (1.0 - alpha) * st.a_prev + alpha * u
        elif cfg.rule == "constant":
            delta, alpha = params_constant(l, zeta, cfg.sigma)
            a_bar = (1.0 - alpha) * st.a_prev + alpha * st.u_prev
            grad = smooth.grad(a_bar)
            u = _prox_step(grad, st.u_prev, y_i, w_pen, delta, rho, gamma_i, nonsmooth)
            a = (1.0 - alpha) * st.a_prev + alpha * u
        else:
            def accept(dl, al):
                a_bar = (1.0 - al) * st.a_prev + al * st.u_prev
                f_bar = smooth.value(a_bar)
                g_bar = smooth.grad(a_bar)
                u = _prox_step(g_bar, st.u_prev, y_i, w_pen, dl, rho, gamma_i, nonsmooth)
                a = (1.0 - al) * st.a_prev + al * u
                ok = line_search_accept(smooth, a_bar, a, dl, al, cfg.sigma,
                                        f_bar=f_bar, grad_bar=g_bar)
                return ok, (a_bar, u, a)

            try:
                delta, alpha, backtracks, payload = params_adaptive(
                    st.Lambda, delta0, cfg.eta, accept, cfg.max_backtracks)
            except NumericError as err:
                err.context.update(_ctx(ctx, l))
                raise
            a_bar, u, a = payload
            delta0 = min(max((delta / alpha) / cfg.eta, cfg.delta_min), cfg.delta_max)

        st.delta, st.alpha, st.a_bar = delta, alpha, a_bar
        st.gamma = 1.0 / delta if l == 1 else st.gamma / (1.0 - alpha)
        step = u - st.u_prev
        dsq = float(step @ step)
        st.sum_sq += dsq
        st.Lambda += 1.0 / delta
        st.u, st.a = u, a

        if tr is not None:
            tr.deltas.append(delta)
            tr.alphas.append(alpha)
            tr.gammas.append(st.gamma)
            tr.xis.append(delta * alpha * st.gamma)
            tr.us.append(u.copy())
            tr.a_s.append(a.copy())
            tr.step_sq.append(dsq)
            tr.backtracks.append(backtracks)

        if force_iters is None:
            if st.gamma >= floor and float(np.linalg.norm(a - x_i)) <= psi_eps * np.sqrt(st.gamma):
                stopped = True
                break
        elif l == max_l:
            stopped = True
            break
        st.u_prev, st.a_prev = u, a

    if not stopped:
        raise NumericError(
            "inner loop hit its iteration cap (%d)" % cfg.max_iters,
            context=_ctx(ctx, st.l),
            best=InnerResult(st.u, st.a, st.gamma, st.sum_sq / st.gamma, st.l),
        )
    res = InnerResult(x_next=st.u, z=st.a, Gamma=st.gamma,
                      r=st.sum_sq / st.gamma, iters=st.l)
    return res, tr


def _ctx(ctx, l):
    out = {"inner_iteration": l}
    if ctx is not None:
        out["outer_iteration"], out["block"] = ctx[0], ctx[1]
    return out
