"""Quadratic Lyapunov certificate for the corrected clock error.

A certificate is a positive definite 2x2 matrix ``P`` plus the constants
needed to turn it into an explicit decay envelope:

* ``sigma``: guaranteed decrease of V at each correction, per unit |eps|^2
* ``alpha1, alpha2``: V is sandwiched between alpha1 |eps|^2 and alpha2 |eps|^2
* ``gamma``: growth rate allowance for V on residence (q=0) intervals
* ``eta, rho``: per-round jump factor and per-jump flow factor

Every 2x2 eigenvalue here is computed in closed form.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .error_model import a_g, check_params, exp_af
from .errors import Infeasible, InvalidCertificateInput, IoError, NoCertificate

LMI_MARGIN = 1e-10
SYM_TOL = 1e-12


@dataclass(frozen=True)
class LmiResult:
    holds: bool
    lambda_min: float
    lambda_max: float


def sym_eig2(M) -> tuple[float, float]:
    """Eigenvalues (ascending) of a symmetric 2x2 matrix."""
    a, b, c = float(M[0][0]), 0.5 * (float(M[0][1]) + float(M[1][0])), float(M[1][1])
    mid = 0.5 * (a + c)
    rad = math.hypot(0.5 * (a - c), b)
    return mid - rad, mid + rad


def _as_matrix(P) -> np.ndarray:
    try:
        Pm = np.asarray(P, dtype=float).reshape(2, 2)
    except (TypeError, ValueError) as exc:
        raise InvalidCertificateInput(f"P is not a 2x2 matrix: {exc}") from None
    if not np.all(np.isfinite(Pm)):
        raise InvalidCertificateInput("P has non-finite entries")
    return Pm


def check_p(P) -> np.ndarray:
    """Validate symmetry and positive definiteness, return P as an array."""
    Pm = _as_matrix(P)
    scale = max(1.0, float(np.max(np.abs(Pm))))
    if abs(Pm[0, 1] - Pm[1, 0]) > SYM_TOL * scale:
        raise InvalidCertificateInput("P is not symmetric")
    if sym_eig2(Pm)[0] <= 0:
        raise InvalidCertificateInput("P is not positive definite")
    return Pm


def default_horizon(c: float, d: float) -> float:
    """Clock-error flow horizon used in the two-node jump condition."""
    return 6.0 * d


def multi_horizon(c: float, d: float) -> float:
    return 3.0 * c + 3.0 * d


def jump_matrix(c: float, d: float, mu: float, horizon: float | None = None) -> np.ndarray:
    h = default_horizon(c, d) if horizon is None else horizon
    return exp_af(h) @ a_g(c, d, mu)


def lmi_matrix(P, c: float, d: float, mu: float, horizon: float | None = None) -> np.ndarray:
    B = jump_matrix(c, d, mu, horizon)
    Pm = _as_matrix(P)
    return B.T @ Pm @ B - Pm


def check_lmi(P, c: float, d: float, mu: float, horizon: float | None = None) -> LmiResult:
    check_p(P)
    lo, hi = sym_eig2(lmi_matrix(P, c, d, mu, horizon))
    return LmiResult(hi < -LMI_MARGIN, lo, hi)


def design_p(
    c: float, d: float, mu: float, q_scale: float = 1.0, horizon: float | None = None
) -> np.ndarray:
    """Solve B'PB - P = -q_scale * I for symmetric P.

    B is upper triangular with eigenvalues 0 and 1 - mu*2(c+d); a positive
    definite solution exists exactly when that eigenvalue is inside the unit
    circle.
    """
    if not q_scale > 0:
        raise InvalidCertificateInput(f"q_scale must be positive, got {q_scale}")
    check_params(c, d, mu)
    B = jump_matrix(c, d, mu, horizon)
    lam = B[1, 1]
    if abs(lam) >= 1.0:
        raise Infeasible(f"round eigenvalue {lam} is not inside the unit circle")

    # the Stein operator restricted to symmetric matrices, in (p11, p12, p22)
    basis = (
        np.array([[1.0, 0.0], [0.0, 0.0]]),
        np.array([[0.0, 1.0], [1.0, 0.0]]),
        np.array([[0.0, 0.0], [0.0, 1.0]]),
    )
    L = np.empty((3, 3))
    for col, E in enumerate(basis):
        R = B.T @ E @ B - E
        L[:, col] = (R[0, 0], R[0, 1], R[1, 1])
    rhs = -q_scale * np.array([1.0, 0.0, 1.0])
    p11, p12, p22 = np.linalg.solve(L, rhs)
    return np.array([[p11, p12], [p12, p22]])


def sigma_of(P, c: float, d: float, mu: float, horizon: float | None = None) -> float:
    res = check_lmi(P, c, d, mu, horizon)
    if not res.holds:
        raise NoCertificate(f"jump condition fails (largest eigenvalue {res.lambda_max})")
    return -res.lambda_max


def phase_horizon(tau: float, p: int, q: int, c: float, d: float) -> float:
    """Remaining flow horizon r used inside V.

    On residence intervals the timer is stretched by d/c so that r drops by
    exactly d per protocol step whatever the phase.
    """
    h = 1.0 + (1 - q) * (d - c) / c
    return tau * h + d * (5 - p)


def flow_grid(c: float, d: float) -> list[float]:
    rs = []
    for q in (0, 1):
        for p in range(6):
            for tau in (0.0, c if q == 0 else d):
                rs.append(phase_horizon(tau, p, q, c, d))
    return rs


def alpha_bounds(P, c: float, d: float) -> tuple[float, float]:
    Pm = check_p(P)
    lo, hi = math.inf, -math.inf
    for r in flow_grid(c, d):
        E = exp_af(r)
        e_lo, e_hi = sym_eig2(E.T @ Pm @ E)
        lo = min(lo, e_lo)
        hi = max(hi, e_hi)
    return lo, hi


def gamma_of(P, c: float, d: float) -> float:
    """Growth allowance on residence intervals, with the Young weight optimised.

    The bound is |alpha| * max(p11*w/2, beta + p11/(2w)); the max is smallest
    where both branches agree.
    """
    Pm = check_p(P)
    alpha = 2.0 * (c - d) / c
    if alpha == 0:
        return 0.0
    p11, p12 = Pm[0, 0], Pm[0, 1]
    beta = 6.0 * d * p11 - p12
    w = (beta + math.sqrt(beta * beta + p11 * p11)) / p11
    return abs(alpha) * p11 * w / 2.0


@dataclass(frozen=True)
class Certificate:
    c: float
    d: float
    mu: float
    P: tuple
    sigma: float
    alpha1: float
    alpha2: float
    gamma: float
    eta: float
    rho: float
    contraction_ok: bool

    @classmethod
    def from_constants(cls, c, d, mu, P, sigma, alpha1, alpha2, gamma) -> "Certificate":
        eta = abs(1.0 - sigma / alpha2)
        rho = math.exp(gamma * c / (2.0 * alpha2))
        Pm = _as_matrix(P)
        return cls(
            c=float(c),
            d=float(d),
            mu=float(mu),
            P=tuple(float(x) for x in Pm.ravel()),
            sigma=float(sigma),
            alpha1=float(alpha1),
            alpha2=float(alpha2),
            gamma=float(gamma),
            eta=eta,
            rho=rho,
            contraction_ok=bool(eta ** (1.0 / 6.0) * rho < 1.0),
        )

    @property
    def P_matrix(self) -> np.ndarray:
        return np.array(self.P, dtype=float).reshape(2, 2)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["P"] = list(self.P)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Certificate":
        keys = ("c", "d", "mu", "P", "sigma", "alpha1", "alpha2", "gamma", "eta", "rho", "contraction_ok")
        missing = [k for k in keys if k not in data]
        if missing:
            raise InvalidCertificateInput(f"certificate is missing {', '.join(missing)}")
        P = data["P"]
        if not isinstance(P, list) or len(P) != 4:
            raise InvalidCertificateInput("P must be a list of 4 numbers (row-major)")
        try:
            return cls(
                c=float(data["c"]),
                d=float(data["d"]),
                mu=float(data["mu"]),
                P=tuple(float(x) for x in P),
                sigma=float(data["sigma"]),
                alpha1=float(data["alpha1"]),
                alpha2=float(data["alpha2"]),
                gamma=float(data["gamma"]),
                eta=float(data["eta"]),
                rho=float(data["rho"]),
                contraction_ok=bool(data["contraction_ok"]),
            )
        except (TypeError, ValueError) as exc:
            raise InvalidCertificateInput(str(exc)) from None

    def save(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        except OSError as exc:
            raise IoError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "Certificate":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise IoError(str(exc)) from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise IoError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise InvalidCertificateInput("certificate must be a JSON object")
        return cls.from_dict(data)


def convergence_factors(P, c: float, d: float, mu: float, horizon: float | None = None) -> Certificate:
    sigma = sigma_of(P, c, d, mu, horizon)
    alpha1, alpha2 = alpha_bounds(P, c, d)
    gamma = gamma_of(P, c, d)
    return Certificate.from_constants(c, d, mu, P, sigma, alpha1, alpha2, gamma)


def lyapunov_value(eps, tau: float, p: int, q: int, P, c: float, d: float) -> float:
    r = phase_horizon(tau, p, q, c, d)
    e0, e1 = float(eps[0]), float(eps[1])
    z0 = e0 + r * e1  # exp_af(r) @ eps without building the matrix
    Pm = np.asarray(P, dtype=float).reshape(2, 2)
    return float(Pm[0, 0] * z0 * z0 + 2.0 * Pm[0, 1] * z0 * e1 + Pm[1, 1] * e1 * e1)


@dataclass(frozen=True)
class BoundEnvelope:
    coefficient: float
    eta_root: float
    rho: float

    def bound(self, j: int, eps0_norm: float) -> float:
        return self.coefficient * math.sqrt(self.eta_root**j * self.rho**j) * eps0_norm


def envelope(cert: Certificate) -> BoundEnvelope:
    if not cert.contraction_ok:
        raise NoCertificate("certificate does not contract, no decay envelope")
    coef = math.sqrt(cert.alpha2 / cert.alpha1 * math.exp(cert.gamma * cert.c / cert.alpha2))
    return BoundEnvelope(coef, cert.eta ** (1.0 / 6.0), cert.rho)


def theoretical_bound(j: int, eps0_norm: float, cert: Certificate) -> float:
    return envelope(cert).bound(j, eps0_norm)
