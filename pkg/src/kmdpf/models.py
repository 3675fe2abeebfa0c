"""Built-in dynamical systems and a fixed-step RK4 integrator."""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import fsolve

from .errors import DimensionMismatch, InvalidTopology, NonFiniteState
from .lin_modal import LinearSystem

__all__ = [
    "OdeSystem",
    "canonical_system",
    "lifted_canonical",
    "linear_ode",
    "swing_surrogate",
    "swing_equilibrium",
    "swing4",
    "integrate_rk4",
    "PRESETS",
    "get_preset",
]


@dataclass(frozen=True)
class OdeSystem:
    """Autonomous vector field ``dx/dt = rhs(x)``."""

    n: int
    rhs: object
    name: str
    params: dict = field(default_factory=dict)
    state_names: tuple = None
    default_x0: np.ndarray = None

    def __post_init__(self):
        if self.state_names is None:
            names = tuple(f"x{i}" for i in range(1, self.n + 1))
            object.__setattr__(self, "state_names", names)

    def __call__(self, x):
        return self.rhs(x)


def canonical_system(lambda1=-1.0, lambda2=-0.05):
    """``x1' = lambda1 (x1 - x2^2)``, ``x2' = lambda2 x2``."""
    l1, l2 = float(lambda1), float(lambda2)

    def rhs(x):
        return np.array([l1 * (x[0] - x[1] ** 2), l2 * x[1]])

    return OdeSystem(
        2, rhs, "canonical", {"lambda1": l1, "lambda2": l2},
        default_x0=np.array([-1.0, 2.0]),
    )


def lifted_canonical(lambda1=-1.0, lambda2=-0.05):
    """Exact linear lift of the canonical system in ``w = (x1, x2, x2^2)``."""
    l1, l2 = float(lambda1), float(lambda2)
    return LinearSystem([[l1, 0.0, -l1], [0.0, l2, 0.0], [0.0, 0.0, 2.0 * l2]])


def linear_ode(system, name="linear", default_x0=None):
    A = system.A if isinstance(system, LinearSystem) else LinearSystem(system).A
    return OdeSystem(A.shape[0], lambda x: A @ x, name, {}, default_x0=default_x0)


def _swing_arrays(machines, coupling, damping, inertia, power):
    N = int(machines)
    if N < 2:
        raise InvalidTopology("a swing model needs at least two machines")
    Kc = np.asarray(coupling, dtype=float)
    D = np.asarray(damping, dtype=float).ravel()
    M = np.asarray(inertia, dtype=float).ravel()
    P = np.zeros(N) if power is None else np.asarray(power, dtype=float).ravel()
    if Kc.shape != (N, N):
        raise InvalidTopology(f"coupling must be {N}x{N}, got {Kc.shape}")
    if not np.allclose(Kc, Kc.T) or np.any(Kc < 0):
        raise InvalidTopology("coupling must be symmetric and non-negative")
    if D.size != N or M.size != N or P.size != N:
        raise InvalidTopology("damping, inertia and power need one entry per machine")
    if np.any(M <= 0) or np.any(D < 0):
        raise InvalidTopology("inertia must be positive and damping non-negative")
    Kc = Kc.copy()
    np.fill_diagonal(Kc, 0.0)
    return N, Kc, D, M, P


def swing_surrogate(machines, coupling, damping, inertia, power=None):
    """Classical swing equations with angles in the centre-of-angle frame.

    States are ``delta_1..delta_N, omega_1..omega_N``;
    ``omega_i' = (P_i - sum_j K_ij sin(delta_i - delta_j) - D_i omega_i) / M_i``
    and ``delta_i' = omega_i - omega_coa`` with ``omega_coa`` the
    inertia-weighted mean speed, so ``sum_i M_i delta_i`` is conserved.
    """
    N, Kc, D, M, P = _swing_arrays(machines, coupling, damping, inertia, power)
    Mt = M.sum()

    def rhs(x):
        d, w = x[:N], x[N:]
        pe = (Kc * np.sin(d[:, None] - d[None, :])).sum(axis=1)
        return np.concatenate([w - M @ w / Mt, (P - pe - D * w) / M])

    names = tuple(f"d{i}" for i in range(1, N + 1)) + tuple(f"w{i}" for i in range(1, N + 1))
    params = {"machines": N, "coupling": Kc, "damping": D, "inertia": M, "power": P}
    return OdeSystem(2 * N, rhs, "swing", params, names)


def swing_equilibrium(system):
    """Equilibrium rotor angles (centre-of-angle frame) of a swing model."""
    p = system.params
    N, Kc, M, P = p["machines"], p["coupling"], p["inertia"], p["power"]

    def residual(d):
        pe = (Kc * np.sin(d[:, None] - d[None, :])).sum(axis=1)
        # one balance equation is redundant; replace it by the frame constraint
        return np.concatenate([(P - pe)[:-1], [M @ d]])

    d, info, ok, msg = fsolve(residual, np.zeros(N), full_output=True, xtol=1e-13)
    if ok != 1 or np.abs(residual(d)).max() > 1e-10:
        raise InvalidTopology(f"no synchronous equilibrium found: {msg}")
    return d


def swing4():
    """Four machines in two areas (1-2 and 3-4) joined by a weaker tie 2-3.

    Area 1 exports power to area 2. The default initial state is the
    equilibrium with a post-disturbance speed deviation on machines 1 and 3.
    """
    K = np.zeros((4, 4))
    K[0, 1] = K[1, 0] = 2.0
    K[2, 3] = K[3, 2] = 2.0
    K[1, 2] = K[2, 1] = 1.0
    M = np.array([0.07, 0.07, 0.065, 0.065])
    sysm = swing_surrogate(4, K, damping=1.0 * M, inertia=M, power=[0.3, 0.1, -0.1, -0.3])
    x0 = np.concatenate([swing_equilibrium(sysm), [0.1, 0.0, -0.05, 0.0]])
    return OdeSystem(8, sysm.rhs, "swing4", sysm.params, sysm.state_names, x0)


def integrate_rk4(system, x0, dt, steps):
    """Classic fourth-order Runge-Kutta; returns ``n x (steps+1)``, column 0 = x0."""
    x = np.array(x0, dtype=float).ravel()
    n = getattr(system, "n", x.size)
    if x.size != n:
        raise DimensionMismatch(f"x0 has {x.size} entries, system has {n} states")
    if not dt > 0:
        raise ValueError("dt must be positive")
    steps = int(steps)
    if steps < 1:
        raise ValueError("steps must be at least 1")
    f = system.rhs if hasattr(system, "rhs") else system
    out = np.empty((n, steps + 1))
    out[:, 0] = x
    h2 = dt / 2.0
    for k in range(1, steps + 1):
        k1 = f(x)
        k2 = f(x + h2 * k1)
        k3 = f(x + h2 * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"state became non-finite at step {k} (t = {k * dt:g})")
        out[:, k] = x
    return out


def _canonical_lifted_preset(lambda1=-1.0, lambda2=-0.05):
    x = np.array([-1.0, 2.0])
    return OdeSystem(
        3,
        linear_ode(lifted_canonical(lambda1, lambda2)).rhs,
        "canonical-lifted",
        {"lambda1": float(lambda1), "lambda2": float(lambda2)},
        ("w1", "w2", "w3"),
        np.array([x[0], x[1], x[1] ** 2]),
    )


PRESETS = {
    "canonical": canonical_system,
    "canonical-lifted": _canonical_lifted_preset,
    "swing4": swing4,
}


def get_preset(name, **params):
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**params)
