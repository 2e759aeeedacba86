"""Linear ion-chain geometry, radial modes and per-ion beam couplings."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from scipy.constants import atomic_mass, e as ELEMENTARY_CHARGE, epsilon_0

WELL_SCALES = {
    "cooling": 1.0,
    "single-qubit": 1.0 / np.sqrt(2.0),
    "two-qubit": np.sqrt(1.5),
    "detection": 1.0,
}


class ConfigurationError(ValueError):
    """Trap or beam parameters that do not describe a stable linear chain."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrapConfig:
    """Harmonic trap parameters.

    ``axial_freq`` and ``radial_freqs`` are angular frequencies (rad/s) of the
    cooling well; the other wells rescale the axial frequency by
    ``WELL_SCALES``. The lower radial frequency is the mode set addressed by
    the gate beams.
    """

    n_ions: int = 2
    axial_freq: float = 2 * np.pi * 0.5e6
    radial_freqs: tuple[float, float] = (2 * np.pi * 1.8e6, 2 * np.pi * 2.1e6)
    mass: float = 171 * atomic_mass
    well_scales: dict = field(default_factory=lambda: dict(WELL_SCALES))

    def __post_init__(self):
        if self.n_ions < 1:
            raise ConfigurationError("n_ions must be at least 1")
        if self.axial_freq <= 0 or min(self.radial_freqs) <= 0:
            raise ConfigurationError("trap frequencies must be positive")

    def axial(self, well: str = "cooling") -> float:
        try:
            return self.axial_freq * self.well_scales[well]
        except KeyError:
            raise ConfigurationError(f"unknown well mode {well!r}") from None

    @property
    def addressed_radial(self) -> float:
        return min(self.radial_freqs)

    def length_scale(self, well: str = "cooling") -> float:
        """Characteristic length (q^2 / (4 pi eps0 m w^2))^(1/3) in metres."""
        k = ELEMENTARY_CHARGE**2 / (4 * np.pi * epsilon_0)
        return (k / (self.mass * self.axial(well) ** 2)) ** (1.0 / 3.0)


@dataclass(frozen=True)
class BeamProfile:
    """Raman-beam Rabi-rate and phase-front model (lengths in micrometres)."""

    waist_a: float = 7.0
    waist_b: float = 13.5
    coma: float = 0.08
    curvature: float = 0.01
    tilt: float = 0.05
    rabi: float = 2 * np.pi * 62.5e3
    detuning: float = 0.0

    def __post_init__(self):
        if self.waist_a <= 0 or self.waist_b <= 0:
            raise ConfigurationError("beam waists must be positive")

    @property
    def w_eff(self) -> float:
        # Rabi rate follows the product of the two field profiles
        return 1.0 / np.sqrt(1.0 / self.waist_a**2 + 1.0 / self.waist_b**2)

    def relative_rabi(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float) / self.w_eff
        return np.exp(-(d**2)) * np.clip(1.0 + self.coma * d**3, 0.0, None)

    def phase(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        return self.tilt * d + self.curvature * d**2


def _coulomb_gradient(u: np.ndarray) -> np.ndarray:
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    return u - np.sum(np.sign(diff) / diff**2, axis=1)


def _coulomb_hessian(u: np.ndarray) -> np.ndarray:
    diff = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(diff, np.inf)
    off = -2.0 / diff**3
    hess = off.copy()
    np.fill_diagonal(hess, 1.0 - off.sum(axis=1))
    return hess


def scaled_equilibrium(n: int, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Equilibrium positions in units of the characteristic length.

    Damped Newton iteration on ``u_i - sum_j sgn(u_i-u_j)/(u_i-u_j)^2 = 0``.
    """
    if n < 1:
        raise ConfigurationError("n_ions must be at least 1")
    if n == 1:
        return np.zeros(1)
    u = np.linspace(-1.0, 1.0, n) * 0.5 * n ** 0.6
    for _ in range(max_iter):
        g = _coulomb_gradient(u)
        if np.max(np.abs(g)) < tol:
            return u
        step = np.linalg.solve(_coulomb_hessian(u), g)
        lam = 1.0
        while lam > 1e-6:
            trial = u - lam * step
            if np.all(np.diff(trial) > 0) and (
                np.max(np.abs(_coulomb_gradient(trial))) < np.max(np.abs(g))
            ):
                break
            lam *= 0.5
        u = trial
    g = _coulomb_gradient(u)
    if np.max(np.abs(g)) < tol:
        return u
    raise ConvergenceError(f"equilibrium not reached after {max_iter} iterations")


def equilibrium_positions(cfg: TrapConfig, well: str = "cooling") -> np.ndarray:
    """Axial equilibrium positions in micrometres, ascending and centred."""
    return scaled_equilibrium(cfg.n_ions) * cfg.length_scale(well) * 1e6


def radial_modes(
    cfg: TrapConfig, positions: np.ndarray | None = None, well: str = "two-qubit"
) -> tuple[np.ndarray, np.ndarray]:
    """Addressed radial normal modes.

    Returns ``(freqs, vectors)`` with frequencies (rad/s) in descending order
    and ``vectors[m]`` the orthonormal participation vector of mode ``m``.
    """
    wz = cfg.axial(well)
    wr = cfg.addressed_radial
    if positions is None:
        positions = equilibrium_positions(cfg, well)
    u = np.asarray(positions, dtype=float) * 1e-6 / cfg.length_scale(well)
    n = len(u)
    diff = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(diff, np.inf)
    coupling = 1.0 / diff**3
    # radial Hessian in units of m * wz^2
    K = coupling.copy()
    np.fill_diagonal(K, (wr / wz) ** 2 - coupling.sum(axis=1))
    evals, evecs = np.linalg.eigh(K)
    if np.min(evals) <= 0:
        raise ConfigurationError(
            "radial confinement too weak: linear chain buckles "
            f"(lowest eigenvalue {np.min(evals):.3g})"
        )
    order = np.argsort(evals)[::-1]
    freqs = wz * np.sqrt(evals[order])
    vecs = evecs[:, order].T
    # fix sign: largest-magnitude component positive
    for m in range(n):
        k = np.argmax(np.abs(vecs[m]) + 1e-9 * np.arange(n)[::-1])
        if vecs[m, k] < 0:
            vecs[m] = -vecs[m]
    return freqs, vecs


@dataclass(frozen=True)
class ChainModel:
    """Snapshot of the chain under the beam at one chain offset.

    ``offset`` is the beam centre in chain coordinates (micrometres).
    """

    positions: np.ndarray
    offset: float
    mode_freqs: np.ndarray
    mode_vectors: np.ndarray
    mode_index: int
    rabi: np.ndarray
    phase: np.ndarray
    eta: np.ndarray
    weights: np.ndarray
    well: str

    @property
    def n_ions(self) -> int:
        return len(self.positions)


def couplings(
    beam: BeamProfile,
    offset: float,
    cfg: TrapConfig,
    mode_index: int = 0,
    well: str = "two-qubit",
    eta_max: float = 0.1,
) -> ChainModel:
    """Per-ion Rabi rates, optical phases and MS coupling weights.

    ``c_i = (Omega_i / Omega)(eta_i / eta) / 2`` where ``Omega`` and ``eta``
    are the largest values over the chain.
    """
    pos = equilibrium_positions(cfg, well)
    freqs, vecs = radial_modes(cfg, pos, well)
    if not 0 <= mode_index < len(freqs):
        raise IndexError(f"mode index {mode_index} out of range")
    d = pos - offset
    rel = beam.relative_rabi(d)
    rabi = beam.rabi * rel
    b = vecs[mode_index]
    eta = eta_max * b / np.max(np.abs(b))
    om = np.max(rabi)
    if om > 0:
        weights = 0.5 * (rabi / om) * (eta / eta_max)
    else:
        weights = np.zeros_like(rabi)
    return ChainModel(
        positions=pos,
        offset=float(offset),
        mode_freqs=freqs,
        mode_vectors=vecs,
        mode_index=mode_index,
        rabi=rabi,
        phase=beam.phase(d),
        eta=eta,
        weights=weights,
        well=well,
    )


@dataclass(frozen=True)
class PulseResponse:
    """How one addressed pulse acts on the chain.

    ``ratio[j]`` scales the calibrated rotation angle on ion ``j`` and
    ``dphase[j]`` shifts its axis phase, both relative to the targeted ion's
    own frame.
    """

    target: int
    offset: float
    trailing: dict[int, tuple[float, float]]
    leading: dict[int, tuple[float, float]]


class IonChain:
    """Trap plus beam: the calibrated device seen by compiler and simulator.

    Crosstalk is kept up to the next-nearest neighbour of the target on the
    trailing (cascade) side; ``leading`` records the neighbours on the other
    side, which the compiler treats as crosstalk free. ``side="trailing"``
    centres the beam between ion ``i`` and ``i + 1`` and cascades upwards;
    ``side="leading"`` mirrors both.
    """

    def __init__(
        self,
        cfg: TrapConfig,
        beam: BeamProfile | None = None,
        mode_index: int = 0,
        eta: float = 0.1,
        reach: int = 2,
        side: str = "trailing",
    ):
        if side not in ("trailing", "leading"):
            raise ConfigurationError(f"unknown crosstalk side {side!r}")
        self.cfg = cfg
        self.beam = beam if beam is not None else BeamProfile()
        self.mode_index = mode_index
        self.eta = eta
        self.reach = reach
        self.side = side

    @property
    def direction(self) -> int:
        return 1 if self.side == "trailing" else -1

    @property
    def cascade_order(self) -> list[int]:
        order = list(range(self.n_ions))
        return order if self.direction > 0 else order[::-1]

    @property
    def n_ions(self) -> int:
        return self.cfg.n_ions

    def with_ions(self, n: int) -> "IonChain":
        return IonChain(
            replace(self.cfg, n_ions=n), self.beam, self.mode_index, self.eta, self.reach, self.side
        )

    @cached_property
    def sq_positions(self) -> np.ndarray:
        return equilibrium_positions(self.cfg, "single-qubit")

    @cached_property
    def tq_positions(self) -> np.ndarray:
        return equilibrium_positions(self.cfg, "two-qubit")

    def _balanced_offset(self, xa: float, xb: float) -> float:
        f = lambda x0: float(self.beam.relative_rabi(xa - x0) - self.beam.relative_rabi(xb - x0))
        mid = 0.5 * (xa + xb)
        if abs(f(mid)) < 1e-15:
            return mid
        return brentq(f, xa, xb, xtol=1e-13)

    @cached_property
    def target_offsets(self) -> np.ndarray:
        """Beam centre used when ion ``i`` is targeted (single-qubit well)."""
        x = self.sq_positions
        n = len(x)
        if n == 1:
            return np.array([x[0] + 0.5 * self.cfg.length_scale("single-qubit") * 1e6])
        s = self.direction
        order = self.cascade_order
        offs = np.empty(n)
        for i in order[:-1]:
            offs[i] = self._balanced_offset(*sorted((x[i], x[i + s])))
        last, prev = order[-1], order[-2]
        offs[last] = x[last] + (offs[prev] - x[prev])
        return offs

    @cached_property
    def reference_phases(self) -> np.ndarray:
        """Optical phase each ion sees when it is the target; defines its frame."""
        return self.beam.phase(self.sq_positions - self.target_offsets)

    def pulse_response(self, target: int) -> PulseResponse:
        n = self.n_ions
        if not 0 <= target < n:
            raise IndexError(f"target {target} outside chain of {n}")
        x0 = self.target_offsets[target]
        d = self.sq_positions - x0
        rel = self.beam.relative_rabi(d)
        ph = self.beam.phase(d) - self.reference_phases
        base = rel[target]
        s = self.direction
        trailing = {target: (1.0, 0.0)}
        leading = {}
        for k in range(1, self.reach + 1):
            for j, side in ((target + s * k, trailing), (target - s * k, leading)):
                if 0 <= j < n:
                    side[j] = (float(rel[j] / base), float(ph[j]))
        return PulseResponse(target, float(x0), trailing, leading)

    @cached_property
    def responses(self) -> list[PulseResponse]:
        return [self.pulse_response(i) for i in range(self.n_ions)]

    def ms_offset(self, pair: tuple[int, int]) -> float:
        x = self.tq_positions
        i, j = pair
        return self._balanced_offset(x[i], x[j])

    def ms_model(self, pair: tuple[int, int]) -> ChainModel:
        return couplings(self.beam, self.ms_offset(pair), self.cfg, self.mode_index, "two-qubit", self.eta)

    def ms_frame(self, pair: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        """MS coupling weights and per-ion spin phases relative to each ion's frame."""
        model = self.ms_model(pair)
        return model.weights, model.phase - self.reference_phases
