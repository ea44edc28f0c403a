from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import optimize

AIR_VISCOSITY = 1.81e-5  # kg/(m*s)
AIR_DENSITY = 1.18  # kg/m^3
END_CORRECTION = 0.8
DEFAULT_TEMPERATURE_K = 303.0
DEFAULT_Q_DECAY = 0.25

MIN_TEMPERATURE_K = 200.0
MAX_TEMPERATURE_K = 350.0
MIN_LENGTH_M = 0.05
MAX_LENGTH_M = 3.0
MIN_DIAMETER_M = 0.005
MAX_DIAMETER_M = 0.15

MIN_DESIGN_F0 = 50.0
MAX_DESIGN_F0 = 1000.0
MIN_DESIGN_Q = 5.0
MAX_DESIGN_Q = 100.0

ROOT_SCAN_FLOOR_HZ = 20.0
ROOT_SCAN_STEP_HZ = 0.5
ROOT_XTOL_HZ = 1e-9
POLE_GUARD = 1e-6
DEGENERATE_TOL = 1e-6

# Store-bought tubes (length, diameter) in meters with their measured f0.
REFERENCE_TUBES: dict[int, tuple[float, float, float]] = {
    1: (0.406, 0.0345, 402.16),
    2: (0.613, 0.040, 270.70),
    3: (0.870, 0.052, 191.48),
    4: (0.994, 0.0345, 170.89),
    5: (1.203, 0.052, 140.20),
    6: (1.540, 0.052, 110.36),
}
REFERENCE_TUBE_QUALITY: dict[int, float] = {1: 58, 2: 68, 3: 77, 4: 64, 5: 79, 6: 76}

# Printed two-tube structures (L1, d1, L2, d2) in meters with their measured f0.
REFERENCE_TWO_TUBES: dict[int, tuple[float, float, float, float, float]] = {
    7: (0.0953, 0.021, 0.10, 0.01, 853.1),
    8: (0.1144, 0.0098, 0.089, 0.034, 901.55),
    9: (0.1453, 0.021, 0.10, 0.01, 600.4),
}


class DegenerateTubeError(ValueError):
    pass


@dataclass(frozen=True)
class Environment:
    temperature_k: float = DEFAULT_TEMPERATURE_K

    def __post_init__(self) -> None:
        if not MIN_TEMPERATURE_K <= self.temperature_k <= MAX_TEMPERATURE_K:
            raise ValueError(
                f"Temperature {self.temperature_k} K outside "
                f"[{MIN_TEMPERATURE_K}, {MAX_TEMPERATURE_K}]."
            )

    @property
    def c_air(self) -> float:
        """Speed of sound in dry air, m/s."""
        return 20.05 * math.sqrt(self.temperature_k)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Environment":
        return cls(temperature_k=float(data.get("temperature_k", DEFAULT_TEMPERATURE_K)))

    def to_dict(self) -> dict[str, Any]:
        return {"temperature_k": self.temperature_k}


@dataclass(frozen=True)
class TubeSpec:
    length_m: float
    diameter_m: float

    def __post_init__(self) -> None:
        if not MIN_LENGTH_M <= self.length_m <= MAX_LENGTH_M:
            raise ValueError(
                f"Tube length {self.length_m:.4f} m outside [{MIN_LENGTH_M}, {MAX_LENGTH_M}] m."
            )
        if not MIN_DIAMETER_M <= self.diameter_m <= MAX_DIAMETER_M:
            raise ValueError(
                f"Tube diameter {self.diameter_m:.4f} m outside "
                f"[{MIN_DIAMETER_M}, {MAX_DIAMETER_M}] m."
            )
        if self.diameter_m >= self.length_m:
            raise ValueError("Tube diameter must be smaller than its length.")

    @property
    def area_m2(self) -> float:
        return math.pi * (self.diameter_m / 2) ** 2

    @property
    def effective_length_m(self) -> float:
        return self.length_m + END_CORRECTION * self.diameter_m

    def to_dict(self) -> dict[str, Any]:
        return {"length_m": self.length_m, "diameter_m": self.diameter_m}


@dataclass(frozen=True)
class TwoTubeSpec:
    first: TubeSpec
    second: TubeSpec

    def __post_init__(self) -> None:
        same_length = abs(self.first.length_m - self.second.length_m) < DEGENERATE_TOL
        same_diameter = abs(self.first.diameter_m - self.second.diameter_m) < DEGENERATE_TOL
        if same_length and same_diameter:
            raise DegenerateTubeError(
                "Two identical tubes form a single tube; model it with "
                f"length {self.first.length_m + self.second.length_m:.4f} m instead."
            )

    def to_dict(self) -> dict[str, Any]:
        return {"first": self.first.to_dict(), "second": self.second.to_dict()}


@dataclass(frozen=True)
class ResonanceProfile:
    harmonics: tuple[tuple[float, float], ...]
    nyquist_hz: float
    warning: str | None = None

    def __post_init__(self) -> None:
        harmonics = tuple((float(f), float(q)) for f, q in self.harmonics)
        object.__setattr__(self, "harmonics", harmonics)
        previous = 0.0
        for frequency, quality in harmonics:
            if frequency <= previous:
                raise ValueError("Resonance frequencies must be strictly increasing.")
            if frequency >= self.nyquist_hz:
                raise ValueError(f"Resonance {frequency:.2f} Hz is not below Nyquist.")
            if quality <= 0:
                raise ValueError("Resonance quality factors must be positive.")
            previous = frequency

    def __len__(self) -> int:
        return len(self.harmonics)

    @property
    def fundamental_hz(self) -> float | None:
        return self.harmonics[0][0] if self.harmonics else None

    def frequencies(self) -> np.ndarray:
        return np.array([f for f, _ in self.harmonics])

    def qualities(self) -> np.ndarray:
        return np.array([q for _, q in self.harmonics])

    def to_dict(self) -> dict[str, Any]:
        return {
            "harmonics": [{"frequency_hz": f, "q": q} for f, q in self.harmonics],
            "nyquist_hz": self.nyquist_hz,
            "warning": self.warning,
        }


@dataclass(frozen=True)
class TubeDesign:
    """Outcome of inverse design; ``saturated`` marks an unreachable Q0."""

    tube: TubeSpec
    saturated: bool
    achieved_q: float


def open_pipe_frequency(length_m: float, diameter_m: float, env: Environment) -> float:
    return env.c_air / (2.0 * (length_m + END_CORRECTION * diameter_m))


def quality_at(f0: float, diameter_m: float, env: Environment) -> float:
    """Quality factor of a tube of the given bore resonating at ``f0``."""

    area = math.pi * (diameter_m / 2) ** 2
    c = env.c_air
    radiation = 2 * math.pi * area * f0**2 / c**2
    wall = math.sqrt(AIR_VISCOSITY / (AIR_DENSITY * area * f0))
    return 1.0 / (radiation + wall)


def q_maximizing_diameter(f0: float, env: Environment) -> float:
    # Radiation damping grows as a*d^2 and wall damping falls as b/d.
    a = math.pi**2 * f0**2 / (2 * env.c_air**2)
    b = math.sqrt(4 * AIR_VISCOSITY / (AIR_DENSITY * math.pi * f0))
    return (b / (2 * a)) ** (1.0 / 3.0)


def fundamental_frequency(tube: TubeSpec, env: Environment) -> float:
    return open_pipe_frequency(tube.length_m, tube.diameter_m, env)


def quality_factor(tube: TubeSpec, env: Environment) -> float:
    return quality_at(fundamental_frequency(tube, env), tube.diameter_m, env)


def _decayed(q0: float, index: int, decay_exponent: float) -> float:
    return q0 / index**decay_exponent


def _check_decay(decay_exponent: float) -> None:
    if decay_exponent <= 0:
        raise ValueError(f"Q decay exponent must be positive, got {decay_exponent}.")


def resonance_profile_single(
    tube: TubeSpec,
    env: Environment,
    nyquist: float,
    *,
    decay_exponent: float = DEFAULT_Q_DECAY,
) -> ResonanceProfile:
    _check_decay(decay_exponent)
    f0 = fundamental_frequency(tube, env)
    if f0 >= nyquist:
        raise ValueError(
            f"Fundamental {f0:.2f} Hz is not below Nyquist {nyquist:.2f} Hz; profile is empty."
        )
    q0 = quality_factor(tube, env)
    count = int(math.floor(nyquist / f0))
    if count * f0 >= nyquist:
        count -= 1
    harmonics = tuple(
        (index * f0, _decayed(q0, index, decay_exponent)) for index in range(1, count + 1)
    )
    return ResonanceProfile(harmonics=harmonics, nyquist_hz=nyquist)


def two_tube_residual(spec: TwoTubeSpec, env: Environment):
    """Return g(f) = A1*cot(k*L1') - A2*cot(k*L2') as a vectorized callable."""

    c = env.c_air
    a1, a2 = spec.first.area_m2, spec.second.area_m2
    l1, l2 = spec.first.effective_length_m, spec.second.effective_length_m

    def residual(freqs: Any) -> Any:
        k = 2 * np.pi * np.asarray(freqs, dtype=np.float64) / c
        return a1 / np.tan(k * l1) - a2 / np.tan(k * l2)

    return residual


def _pole_index(freqs: np.ndarray, effective_length: float, c: float) -> np.ndarray:
    return 2 * freqs * effective_length / c


def find_two_tube_roots(
    spec: TwoTubeSpec,
    env: Environment,
    nyquist: float,
    *,
    step_hz: float = ROOT_SCAN_STEP_HZ,
    floor_hz: float = ROOT_SCAN_FLOOR_HZ,
) -> list[float]:
    """Scan for sign changes of the impedance residual and refine by bisection.

    Brackets that straddle a cotangent pole are discarded: the residual flips sign
    there without crossing zero.
    """

    if nyquist <= floor_hz:
        return []
    c = env.c_air
    residual = two_tube_residual(spec, env)
    count = int(math.floor((nyquist - floor_hz) / step_hz)) + 1
    grid = floor_hz + step_hz * np.arange(count)
    grid = grid[grid < nyquist]

    poles = []
    valid = np.ones(grid.size, dtype=bool)
    for tube in (spec.first, spec.second):
        position = _pole_index(grid, tube.effective_length_m, c)
        poles.append(np.floor(position))
        valid &= np.abs(position - np.round(position)) >= POLE_GUARD
    with np.errstate(divide="ignore", invalid="ignore"):
        values = residual(grid)
    valid &= np.isfinite(values)

    usable = valid[:-1] & valid[1:]
    for pole in poles:
        usable &= pole[:-1] == pole[1:]
    left, right = values[:-1], values[1:]
    exact = usable & (left == 0.0) & (grid[:-1] > floor_hz)
    crossing = usable & (left * right < 0)

    roots: list[float] = []
    for index in np.flatnonzero(exact | crossing):
        if exact[index]:
            roots.append(float(grid[index]))
            continue
        root = optimize.bisect(
            lambda f: float(residual(f)), grid[index], grid[index + 1], xtol=ROOT_XTOL_HZ
        )
        if floor_hz < root < nyquist:
            roots.append(float(root))
    return roots


def equivalent_diameter(spec: TwoTubeSpec) -> float:
    a1, a2 = spec.first.area_m2, spec.second.area_m2
    return (a1 * spec.first.diameter_m + a2 * spec.second.diameter_m) / (a1 + a2)


def resonances_two_tube(
    spec: TwoTubeSpec,
    env: Environment,
    nyquist: float,
    *,
    step_hz: float = ROOT_SCAN_STEP_HZ,
    decay_exponent: float = DEFAULT_Q_DECAY,
) -> ResonanceProfile:
    _check_decay(decay_exponent)
    roots = find_two_tube_roots(spec, env, nyquist, step_hz=step_hz)
    if not roots:
        return ResonanceProfile(
            harmonics=(),
            nyquist_hz=nyquist,
            warning=f"No two-tube resonances between {ROOT_SCAN_FLOOR_HZ} Hz and {nyquist} Hz.",
        )
    # Q comes from a single tube spanning both corrected lengths; quality_at
    # takes the resonance directly so no second end correction is applied.
    total_length = spec.first.effective_length_m + spec.second.effective_length_m
    equivalent_f0 = env.c_air / (2 * total_length)
    q0 = quality_at(equivalent_f0, equivalent_diameter(spec), env)
    harmonics = tuple(
        (root, _decayed(q0, index, decay_exponent)) for index, root in enumerate(roots, start=1)
    )
    return ResonanceProfile(harmonics=harmonics, nyquist_hz=nyquist)


def tube_from_resonance(
    f0: float,
    q0: float,
    env: Environment,
    *,
    q_tolerance: float = 0.1,
) -> TubeDesign:
    if not MIN_DESIGN_F0 <= f0 <= MAX_DESIGN_F0:
        raise ValueError(f"f0 {f0} Hz outside [{MIN_DESIGN_F0}, {MAX_DESIGN_F0}] Hz.")
    if not MIN_DESIGN_Q <= q0 <= MAX_DESIGN_Q:
        raise ValueError(f"Q0 {q0} outside [{MIN_DESIGN_Q}, {MAX_DESIGN_Q}].")

    low = min(max(q_maximizing_diameter(f0, env), MIN_DIAMETER_M), MAX_DIAMETER_M)
    high = MAX_DIAMETER_M
    q_peak = quality_at(f0, low, env)
    q_floor = quality_at(f0, high, env)

    if q0 >= q_peak:
        diameter = low
        saturated = q0 - q_peak > q_tolerance
    elif q0 <= q_floor:
        diameter = high
        saturated = q_floor - q0 > q_tolerance
    else:
        diameter = optimize.bisect(
            lambda d: quality_at(f0, d, env) - q0, low, high, xtol=1e-12
        )
        saturated = False

    length = env.c_air / (2 * f0) - END_CORRECTION * diameter
    tube = TubeSpec(length_m=length, diameter_m=diameter)
    return TubeDesign(tube=tube, saturated=saturated, achieved_q=quality_factor(tube, env))
