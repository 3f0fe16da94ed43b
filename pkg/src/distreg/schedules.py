"""Step size, batch size, horizon and second-stage size as functions of ``n``.

With ``A = R^2 n / M^2`` the regularisation horizon is ``eta*T = A^(1/(2r+nu))``
in the well-specified and easy regimes and ``eta*T = A / log^K(n)`` in the
hard regime. Every variant of one regime realises the same ``eta*T`` and
differs only in how it splits that product between step size, iteration
count and batch size.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Literal

from distreg.errors import ConfigError

Regime = Literal["well", "easy", "hard"]

VARIANTS = {"well": (1, 2, 3), "easy": (1, 2), "hard": (1, 2, 3)}
VARIANT_NAMES = {
    ("well", 1): "one-pass SGD",
    ("well", 2): "early-stopped mini-batch SGD",
    ("well", 3): "batch GD",
    ("easy", 1): "multi-pass SGD",
    ("easy", 2): "batch GD",
    ("hard", 1): "single-sample SGD",
    ("hard", 2): "mini-batch SGD",
    ("hard", 3): "large-batch SGD",
}
CSV_HEADER = "regime,variant,n,b,eta,T,N_min,rate_exponent"


def classify(r: float, nu: float) -> Regime:
    if r >= 0.5:
        return "well"
    if 2 * r + nu > 1:
        return "easy"
    return "hard"


def _regime_admits(regime: str, r: float, nu: float) -> bool:
    if regime == "well":
        return r >= 0.5
    if regime == "easy":
        return r <= 0.5 and 2 * r + nu > 1
    if regime == "hard":
        return r <= 0.5 and 2 * r + nu <= 1
    return False


@dataclass(frozen=True)
class ScheduleInput:
    n: int
    r: float = 0.5
    nu: float = 1.0
    alpha: float = 1.0
    R: float = 1.0
    M: float = 1.0
    eta0: float = 0.2
    kappa: float = 1.0
    log_k: float = 1.5
    variant: int = 3
    regime: Regime | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if not self.r > 0:
            raise ConfigError(f"r must be positive, got {self.r}")
        if not 0 < self.nu <= 1:
            raise ConfigError(f"nu must lie in (0, 1], got {self.nu}")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not (self.R > 0 and self.M > 0 and self.kappa > 0):
            raise ConfigError("R, M and kappa must be positive")
        if not 0 < self.eta0 < 1.0 / (4.0 * self.kappa**2):
            raise ConfigError(
                f"eta0={self.eta0} violates 0 < eta0 < 1/(4 kappa^2) = {1 / (4 * self.kappa**2):g}"
            )
        if not self.log_k > 1:
            raise ConfigError(f"log exponent K must exceed 1, got {self.log_k}")
        if self.regime is not None and not _regime_admits(self.regime, self.r, self.nu):
            raise ConfigError(f"regime {self.regime!r} inconsistent with r={self.r}, nu={self.nu}")

    @property
    def resolved_regime(self) -> Regime:
        return self.regime or classify(self.r, self.nu)


@dataclass(frozen=True)
class ScheduleSpec:
    regime: Regime
    variant: int
    n: int
    b: int
    eta: float
    T: int
    N_min: int
    rate_exponent: float

    @property
    def eta_T(self) -> float:
        return self.eta * self.T

    @property
    def squared_rate_exponent(self) -> float:
        return 2.0 * self.rate_exponent

    @property
    def passes(self) -> int:
        return (self.b * self.T) // self.n

    @property
    def name(self) -> str:
        return VARIANT_NAMES[(self.regime, self.variant)]

    def csv_row(self) -> str:
        return (
            f"{self.regime},{self.variant},{self.n},{self.b},{self.eta:.17g},"
            f"{self.T},{self.N_min},{self.rate_exponent:.17g}"
        )

    def as_dict(self) -> dict:
        return asdict(self)


def _ceil(x: float) -> int:
    # guard against 215.99999999999997-style round-up noise
    return int(math.ceil(x - 1e-9 * max(1.0, abs(x))))


def _split_step(horizon: float, eta: float, eta0: float, T: int) -> tuple[float, int]:
    """Cap the step at ``eta0`` and lengthen the run to keep ``eta*T`` fixed."""
    if eta > eta0:
        return eta0, _ceil(horizon / eta0)
    return eta, T


def make_schedule(inp: ScheduleInput) -> ScheduleSpec:
    regime = inp.resolved_regime
    if inp.variant not in VARIANTS[regime]:
        raise ConfigError(
            f"variant {inp.variant} does not exist for the {regime} regime "
            f"(choose from {VARIANTS[regime]})"
        )
    n, r, nu, a = inp.n, inp.r, inp.nu, inp.alpha
    A = inp.R**2 * n / inp.M**2
    log_n = math.log(n)
    s = 2 * r + nu
    eta0 = inp.eta0

    if regime in ("well", "easy"):
        horizon = A ** (1.0 / s)
        if regime == "well":
            N_min = _ceil(log_n ** (2 / a) * A ** ((2 * r + 1) / (a * s)))
            if inp.variant == 1:
                T = _ceil(A)
                eta, T = _split_step(horizon, horizon / A, eta0, T)
                b = 1
            else:
                b = _ceil(n ** ((s - 1) / s)) if inp.variant == 2 else n
                eta, T = eta0, _ceil(horizon / eta0)
        else:
            N_min = _ceil(log_n ** (2 / a) * A ** ((2 + nu) / (a * s)))
            b = _ceil(math.sqrt(n)) if inp.variant == 1 else n
            eta, T = eta0, _ceil(horizon / eta0)
        rate = -r / s
    else:
        B = A / log_n**inp.log_k if log_n > 0 else A
        N_base = B ** ((3 - 2 * r) / a)
        N_min = max(_ceil(N_base), _ceil(log_n ** (2 / a) * N_base))
        if inp.variant == 1:
            b = 1
            eta, T = _split_step(B, B ** (-s), eta0, _ceil(B ** (s + 1)))
        else:
            b = _ceil(B**s) if inp.variant == 2 else _ceil(B)
            eta, T = eta0, _ceil(B / eta0)
        rate = -r

    return ScheduleSpec(
        regime=regime,
        variant=inp.variant,
        n=n,
        b=min(max(b, 1), n),
        eta=float(eta),
        T=max(T, 2),
        N_min=max(N_min, 1),
        rate_exponent=rate,
    )


@dataclass(frozen=True)
class EnvelopeTerms:
    """Leading terms of the excess-risk bound with all constants set to one."""

    bias: float
    capacity: float
    sample_bias: float
    second_stage: float
    sgd_noise: float
    phi: float
    B: float

    @property
    def total(self) -> float:
        return self.bias + self.capacity + self.sample_bias + self.second_stage + self.sgd_noise


def theoretical_envelope(eta: float, T: int, n: int, N: int, r: float, nu: float,
                         alpha: float, b: int = 1) -> EnvelopeTerms:
    """Shape-only diagnostic; never use it as a pass/fail bound.

    The effective dimension is replaced by its capacity bound
    ``N(lambda) = lambda^(-nu)`` with ``lambda = 1/(eta T)``.
    """
    eT = eta * T
    eff = eT**nu
    n_half = math.sqrt(n)
    N_a = N ** (alpha / 2.0)
    expo = max(nu, 1.0 - 2.0 * r)
    low_r = eT**expo if r <= 0.5 else 0.0
    return EnvelopeTerms(
        bias=eT ** (-r),
        capacity=math.sqrt(eff / n),
        sample_bias=eT ** (0.5 - r) / n_half,
        second_stage=math.log(T) * eT / N_a * (1.0 + low_r),
        sgd_noise=math.sqrt(eta / b * eT ** (nu - 1.0)) * math.sqrt(eT / n_half + math.sqrt(eT) / N_a),
        phi=eT ** (expo / 2.0),
        B=2.0 * eT / n + math.sqrt(eT * eff / n) + eT / N_a + 1.0,
    )


def sample_size_condition(n: int, eta: float, T: int, eff_dim: float, op_norm: float,
                          kappa_sq: float = 1.0, delta: float = 0.1) -> bool:
    """Whether ``n`` meets the first-stage size requirement at ``lambda = 1/(eta T)``.

    ``eff_dim`` and ``op_norm`` are usually empirical surrogates computed
    from the normalised Gram; the result is a diagnostic only.
    """
    lam = 1.0 / (eta * T)
    need = 32.0 * kappa_sq * math.log(4.0 / delta) / lam * math.log(
        math.e * eff_dim * (1.0 + lam / op_norm)
    )
    return n >= need
