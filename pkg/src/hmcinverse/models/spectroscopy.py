"""Line-integrated Doppler spectroscopy on the square ``[-1, 1]^2``.

State ``x`` is standard normal a priori. It is split into amplitude, temperature
and velocity coordinates (plus a 2-D center shift for the shell model), correlated
by the Cholesky factor of a squared-exponential kernel, and mapped to positive
amplitude/temperature via softplus. Each grid cell emits a Gaussian line and the
chords integrate the emission cell by cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import expit

from ..errors import InvalidInputError, UnphysicalVelocityError
from ..spectral import cholesky_factor
from ..targets import SplitTarget
from .gaussian import prior_correlation

__all__ = [
    "ChordGeometry",
    "segment_lengths",
    "chord_geometry",
    "RadialBasis",
    "emissivity",
    "SpectroscopyProblem",
    "spectroscopy_forward",
    "spectroscopy_log_posterior",
    "two_peak_observation",
]

_SQRT_2PI = np.sqrt(2 * np.pi)


def segment_lengths(p0, p1, grid: int) -> np.ndarray:
    """Exact length of the segment ``p0 -> p1`` inside every cell of a ``grid x grid`` mesh.

    Cells are indexed ``row * grid + col`` with rows along y. The parametric
    crossings with all grid lines are merged and each sub-segment is charged to
    the cell containing its midpoint.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = p1 - p0
    length = float(np.hypot(*d))
    out = np.zeros(grid * grid)
    if length == 0:
        return out
    lines = np.linspace(-1.0, 1.0, grid + 1)
    ts = [np.array([0.0, 1.0])]
    for axis in range(2):
        if d[axis] != 0:
            ts.append((lines - p0[axis]) / d[axis])
    t = np.unique(np.clip(np.concatenate(ts), 0.0, 1.0))
    mids = p0 + 0.5 * (t[:-1] + t[1:])[:, None] * d
    seg = np.diff(t) * length
    inside = np.all(np.abs(mids) < 1.0, axis=1) & (seg > 0)
    cells = np.clip(((mids[inside] + 1.0) / (2.0 / grid)).astype(int), 0, grid - 1)
    np.add.at(out, cells[:, 1] * grid + cells[:, 0], seg[inside])
    return out


@dataclass
class ChordGeometry:
    """Integration matrix restricted to the cells any chord passes through."""

    grid: int
    heights: np.ndarray
    matrix: np.ndarray
    cell_centers: np.ndarray
    cell_chord: np.ndarray

    @property
    def n_chords(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cells(self) -> int:
        return self.matrix.shape[1]


def chord_geometry(grid: int = 32, n_chords: int = 20, max_height: float = 0.95) -> ChordGeometry:
    """Horizontal chords across the square at equally spaced heights.

    ``cell_chord`` assigns each active cell to the chord whose slab (the band of
    half the inter-chord spacing on either side) contains the cell center.
    """
    heights = np.linspace(-max_height, max_height, n_chords)
    full = np.stack([segment_lengths((-1.0, h), (1.0, h), grid) for h in heights])
    active = np.flatnonzero(full.sum(axis=0) > 0)
    centers_1d = -1.0 + (np.arange(grid) + 0.5) * (2.0 / grid)
    cx = centers_1d[active % grid]
    cy = centers_1d[active // grid]
    centers = np.stack([cx, cy], axis=1)
    cell_chord = np.argmin(np.abs(cy[:, None] - heights[None, :]), axis=1)
    return ChordGeometry(grid, heights, full[:, active], centers, cell_chord)


class RadialBasis:
    """Cardinal cubic-spline basis on radial knots.

    Zero slope at ``r = 0`` keeps fields smooth at the center; the far end is
    natural and the profile continues linearly past the last knot.
    """

    def __init__(self, knots):
        self.knots = np.asarray(knots, dtype=float)
        k = self.knots.size
        sp = CubicSpline(self.knots, np.eye(k), bc_type=((1, np.zeros(k)), (2, np.zeros(k))))
        self._coef = sp.c  # (4, K-1, K)
        self._end_value = sp(self.knots[-1])
        self._end_slope = sp(self.knots[-1], 1)

    def __call__(self, r):
        """Basis values and radial derivatives, each of shape ``r.shape + (K,)``."""
        r = np.asarray(r, dtype=float)
        kn = self.knots
        i = np.clip(np.searchsorted(kn, r, side="right") - 1, 0, kn.size - 2)
        dr = (r - kn[i])[..., None]
        c = self._coef[:, i, :]
        w = ((c[0] * dr + c[1]) * dr + c[2]) * dr + c[3]
        dw = (3 * c[0] * dr + 2 * c[1]) * dr + c[2]
        beyond = r > kn[-1]
        if np.any(beyond):
            ext = (r - kn[-1])[..., None]
            w = np.where(beyond[..., None], self._end_value + ext * self._end_slope, w)
            dw = np.where(beyond[..., None], self._end_slope, dw)
        return w, dw


def emissivity(amplitude, temperature, velocity, nu, nu0=1.0):
    """Doppler-broadened Gaussian line; broadcasts over all arguments."""
    w = np.sqrt(temperature) / nu0
    u = 1.0 / nu - (1.0 - velocity) / nu0
    return amplitude / (_SQRT_2PI * w) * np.exp(-(u * u) / (2 * w * w))


def _softplus(u):
    return np.logaddexp(0.0, u)


@dataclass
class SpectroscopyProblem(SplitTarget):
    """Shell or slab spectroscopy posterior with signal-proportional noise.

    ``observation`` has shape ``(n_frequencies, n_chords)``; it may be left unset
    when only the forward model is needed.
    """

    parameterization: str = "shell"
    grid: int = 32
    n_chords: int = 20
    n_frequencies: int = 200
    nu_range: tuple = (0.95, 1.05)
    nu0: float = 1.0
    n_knots: int = 16
    c_a: float = 1.0
    c_t: float = 2.5e-4
    c_v: float = 0.02
    sigma: float = 2.5
    sigma_p: float = 0.05
    tau: float = 0.3
    delta: float = 1e-3
    center_std: float = 0.1
    observation: np.ndarray | None = None
    geometry: ChordGeometry = field(init=False, repr=False)

    def __post_init__(self):
        if self.parameterization not in ("shell", "slab"):
            raise InvalidInputError(f"unknown parameterization {self.parameterization!r}")
        if not (self.sigma > 0 and self.sigma_p >= 0):
            raise InvalidInputError("need sigma > 0 and sigma_p >= 0")
        self.geometry = chord_geometry(self.grid, self.n_chords)
        self.nu = np.linspace(self.nu_range[0], self.nu_range[1], self.n_frequencies)
        if self.parameterization == "shell":
            self._block = self.n_knots
            knots = np.linspace(0.0, np.sqrt(2.0), self.n_knots)
            self.basis = RadialBasis(knots)
            self.dimension = 3 * self.n_knots + 2
        else:
            self._block = self.n_chords
            knots = self.geometry.heights
            self.dimension = 3 * self.n_chords
        self.prior_factor = cholesky_factor(prior_correlation(knots, self.tau, self.delta))
        if self.observation is not None:
            self.observation = np.asarray(self.observation, dtype=float)
            if self.observation.shape != (self.n_frequencies, self.n_chords):
                raise InvalidInputError(
                    f"observation must have shape {(self.n_frequencies, self.n_chords)}"
                )

    def with_observation(self, y) -> "SpectroscopyProblem":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("geometry",)}
        kw["observation"] = y
        return SpectroscopyProblem(**kw)

    # state -> fields ---------------------------------------------------------

    def _field_terms(self, x):
        """Raw field values per active cell and what the backward pass needs."""
        k = self._block
        lmat = self.prior_factor.matrix
        blocks = [x[:, i * k:(i + 1) * k] @ lmat.T for i in range(3)]
        if self.parameterization == "slab":
            idx = self.geometry.cell_chord
            return [b[:, idx] for b in blocks], None
        center = self.center_std * x[:, 3 * k:3 * k + 2]
        diff = self.geometry.cell_centers[None, :, :] - center[:, None, :]
        r = np.sqrt(np.sum(diff * diff, axis=2))
        w, dw = self.basis(r)
        raw = [np.einsum("bck,bk->bc", w, b) for b in blocks]
        slopes = [np.einsum("bck,bk->bc", dw, b) for b in blocks]
        return raw, (w, slopes, diff, r)

    def fields(self, x):
        """Amplitude, temperature and velocity on the active cells, each ``(B, C)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        raw, _ = self._field_terms(x)
        return self.c_a * _softplus(raw[0]), self.c_t * _softplus(raw[1]), self.c_v * raw[2]

    def predict_from_fields(self, amplitude, temperature, velocity):
        """Line integrals ``(B, F, M)`` of the emission from given cell fields ``(B, C)``."""
        e = emissivity(
            amplitude[:, None, :], temperature[:, None, :], velocity[:, None, :],
            self.nu[None, :, None], self.nu0,
        )
        return e @ self.geometry.matrix.T

    # density -----------------------------------------------------------------

    def _likelihood(self, x, need_grad=True):
        bsz = x.shape[0]
        raw, extra = self._field_terms(x)
        amp = self.c_a * _softplus(raw[0])
        temp = self.c_t * _softplus(raw[1])
        vel = self.c_v * raw[2]
        bad = np.any(vel >= 1.0, axis=1)
        vel = np.where(bad[:, None], 0.0, vel)
        nu = self.nu[None, :, None]
        w2 = temp[:, None, :] / self.nu0**2
        u = 1.0 / nu - (1.0 - vel[:, None, :]) / self.nu0
        shape = np.exp(-(u * u) / (2 * w2)) / (_SQRT_2PI * np.sqrt(w2))
        e = amp[:, None, :] * shape
        imat = self.geometry.matrix
        mu = e @ imat.T
        s2 = self.sigma**2 + self.sigma_p**2 * mu * mu
        resid = self.observation[None] - mu
        ll = -0.5 * np.sum(resid * resid / s2 + np.log(2 * np.pi * s2), axis=(1, 2))
        ll = np.where(bad, -np.inf, ll)
        if not need_grad:
            return ll, None, bad
        dmu = resid / s2 + (resid * resid / (2 * s2 * s2) - 0.5 / s2) * 2 * self.sigma_p**2 * mu
        de = dmu @ imat
        # from the unscaled shape so that an underflowed amplitude stays finite
        g_amp = np.sum(de * shape, axis=1)
        g_temp = np.sum(de * e * (u * u / w2 - 1.0), axis=1) / (2 * temp)
        g_vel = np.sum(de * e * (-u / (w2 * self.nu0)), axis=1)
        g_raw = [
            g_amp * self.c_a * expit(raw[0]),
            g_temp * self.c_t * expit(raw[1]),
            g_vel * self.c_v,
        ]
        k = self._block
        lmat = self.prior_factor.matrix
        grad = np.zeros((bsz, self.dimension))
        if self.parameterization == "slab":
            onehot = np.eye(self.n_chords)[self.geometry.cell_chord]
            for i in range(3):
                grad[:, i * k:(i + 1) * k] = (g_raw[i] @ onehot) @ lmat
        else:
            w, slopes, diff, r = extra
            g_r = np.zeros_like(r)
            for i in range(3):
                grad[:, i * k:(i + 1) * k] = np.einsum("bc,bck->bk", g_raw[i], w) @ lmat
                g_r += g_raw[i] * slopes[i]
            safe = np.where(r > 0, r, 1.0)
            g_center = -np.sum((g_r / safe)[:, :, None] * diff, axis=1)
            grad[:, 3 * k:3 * k + 2] = self.center_std * g_center
        grad[bad] = 0.0
        return ll, grad, bad

    def evaluate_split(self, x):
        if self.observation is None:
            raise InvalidInputError("problem has no observation attached")
        ll, gl, _ = self._likelihood(x)
        lp = -0.5 * np.sum(x * x, axis=1)
        return lp, ll, -x, gl

    def sample_prior(self, rng, n):
        return rng.standard_normal((n, self.dimension))

    def forward(self, x):
        """Predicted measurements ``(B, F, M)``; raises if any velocity reaches 1."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        amp, temp, vel = self.fields(x)
        if np.any(vel >= 1.0):
            raise UnphysicalVelocityError("velocity field reaches the Doppler pole V >= 1")
        return self.predict_from_fields(amp, temp, vel)

    def noise_variance(self, x):
        mu = self.forward(x)
        return self.sigma**2 + self.sigma_p**2 * mu * mu

    def mean_velocity(self, x) -> np.ndarray:
        """Amplitude-weighted mean velocity of each state."""
        amp, _, vel = self.fields(x)
        return np.sum(amp * vel, axis=1) / np.maximum(np.sum(amp, axis=1), np.finfo(float).tiny)

    def velocity_sign(self, x) -> np.ndarray:
        """Sign of the amplitude-weighted mean velocity of each state."""
        amp, _, vel = self.fields(x)
        return np.sign(np.sum(amp * vel, axis=1))

    def linewidth_velocity(self) -> float:
        """Velocity equivalent of the thermal linewidth of the all-zero state."""
        _, temp, _ = self.fields(np.zeros((1, self.dimension)))
        return float(np.sqrt(temp.mean())) / self.nu0

    def velocity_mode(self, x, threshold: float = 1.0) -> np.ndarray:
        """-1, 0 or +1 per state; 0 when ``|mean velocity|`` is under ``threshold`` linewidths.

        The zero class holds single broad lines fitted over both peaks, where the
        sign alone flickers.
        """
        v = self.mean_velocity(x)
        return np.where(np.abs(v) < threshold * self.linewidth_velocity(), 0, np.sign(v)).astype(int)


def spectroscopy_forward(problem: SpectroscopyProblem, x) -> np.ndarray:
    """Per-frequency chord predictions ``(F, M)`` for a single state."""
    return problem.forward(x)[0]


def spectroscopy_log_posterior(problem: SpectroscopyProblem, x, y=None):
    """Log posterior and gradient at one state; ``y`` overrides the attached observation."""
    if y is not None:
        problem = problem.with_observation(y)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lp, ll, gp, gl = problem.evaluate_split(x)
    if not np.all(np.isfinite(ll)):
        raise UnphysicalVelocityError("velocity field reaches the Doppler pole V >= 1")
    return float(lp[0] + ll[0]), (gp + gl)[0]


def two_peak_observation(problem: SpectroscopyProblem, rng, v0=None, split=(0.5, 0.5)) -> np.ndarray:
    """Synthetic data from two species at velocities ``+v0`` and ``-v0``.

    Both use the fields of the all-zero state. ``v0`` defaults to 2.5 linewidths
    of that temperature, so the peaks sit five linewidths apart. ``split`` scales
    the amplitudes of the ``+v0`` and ``-v0`` species.
    """
    zero = np.zeros((1, problem.dimension))
    amp, temp, _ = problem.fields(zero)
    if v0 is None:
        v0 = 2.5 * problem.linewidth_velocity()
    ones = np.ones_like(amp)
    mu = split[0] * problem.predict_from_fields(amp, temp, v0 * ones)
    mu = mu + split[1] * problem.predict_from_fields(amp, temp, -v0 * ones)
    mu = mu[0]
    sd = np.sqrt(problem.sigma**2 + problem.sigma_p**2 * mu * mu)
    return mu + sd * rng.standard_normal(mu.shape)
