"""Scenario configuration: schema, profiles, YAML loading, and overrides.

All powers cross this boundary in dBm and are converted to watts here; the
rest of the package works in linear units only.  Unknown keys are rejected so
typos in config files or ``--set`` overrides fail loudly.
"""

from __future__ import annotations

import warnings

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .geometry import UpaGeometry, rayleigh_distance


class ConfigError(ValueError):
    """Invalid configuration file, key, or value."""


def dbm_to_watt(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0) / 1000.0


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeometryConfig(_Section):
    mx: int = 8
    my: int = 8
    spacing: float = 0.1
    carrier_wavelength: float = 0.2

    @model_validator(mode="after")
    def _positive(self):
        if min(self.mx, self.my) < 1:
            raise ValueError("array dimensions must be >= 1")
        if min(self.spacing, self.carrier_wavelength) <= 0:
            raise ValueError("spacing and wavelength must be positive")
        return self

    def build(self) -> UpaGeometry:
        return UpaGeometry(self.mx, self.my, self.spacing,
                           self.carrier_wavelength)


class SignalConfig(_Section):
    bandwidth_hz: float = 1e4
    n_symbols: int = 64
    n_cpis: int = 20
    cpi_duration_s: float = 0.05
    beta0_db: float = -30.0
    rcs_m2: float = 0.03

    @model_validator(mode="after")
    def _check(self):
        if min(self.bandwidth_hz, self.cpi_duration_s, self.rcs_m2) <= 0:
            raise ValueError("bandwidth, CPI duration, and RCS must be positive")
        if self.n_symbols < 1 or self.n_cpis < 1:
            raise ValueError("n_symbols and n_cpis must be >= 1")
        if self.n_symbols / self.bandwidth_hz > self.cpi_duration_s * (1 + 1e-9):
            raise ValueError(
                "N symbols at 1/B each do not fit inside one CPI: "
                f"N/B = {self.n_symbols / self.bandwidth_hz:.4g} s > "
                f"{self.cpi_duration_s:.4g} s")
        return self

    @property
    def beta0(self) -> float:
        return 10.0 ** (self.beta0_db / 20.0)


class PowerConfig(_Section):
    p_max_dbm: float = 30.0
    sigma2_c_dbm: float = -80.0
    sigma2_e_dbm: float = -80.0
    sigma2_b_dbm: float = -50.0

    @property
    def p_max(self) -> float:
        return dbm_to_watt(self.p_max_dbm)

    @property
    def sigma2_c(self) -> float:
        return dbm_to_watt(self.sigma2_c_dbm)

    @property
    def sigma2_e(self) -> float:
        return dbm_to_watt(self.sigma2_e_dbm)

    @property
    def sigma2_b(self) -> float:
        return dbm_to_watt(self.sigma2_b_dbm)


class TrackingConfig(_Section):
    scale_factors: list[float] = [1.0, 1e-2, 1e-2, 1.0, 1.0, 1.0]
    gamma: float = 0.2
    # White-acceleration process noise intensity (m^2/s^4).  Sized to the
    # centripetal acceleration of the default circular path so the predicted
    # covariance regrows between CPIs and the MSE budget stays active.
    q_accel: float = 60.0
    init_pos_var: float = 1.0
    init_vel_var: float = 4.0
    # Innovation gate in predicted-spread sigmas; components beyond it get
    # their measurement variance inflated instead of being trusted.
    gate_sigma: float = 4.0
    # Additive variance floors on the measurement components; small apertures
    # cannot resolve range curvature or tangential Doppler spread, so their
    # error stops shrinking with SNR and the filter must not over-trust them.
    meas_var_floor: list[float] = [0.0] * 6

    @model_validator(mode="after")
    def _check(self):
        if len(self.scale_factors) != 6 or min(self.scale_factors) <= 0:
            raise ValueError("scale_factors must be 6 positive numbers")
        if self.gamma <= 0 or self.q_accel <= 0:
            raise ValueError("gamma and q_accel must be positive")
        if min(self.init_pos_var, self.init_vel_var) <= 0:
            raise ValueError("initial variances must be positive")
        return self

    def process_cov(self, dt: float) -> np.ndarray:
        """Discretized white-acceleration covariance for one CPI step."""
        eye = np.eye(3)
        q = np.zeros((6, 6))
        q[:3, :3] = dt**4 / 4.0 * eye
        q[:3, 3:] = q[3:, :3] = dt**3 / 2.0 * eye
        q[3:, 3:] = dt**2 * eye
        return self.q_accel * q


class SensingConfig(_Section):
    # Coarse matched-filter grid half-widths around the predicted position
    # and the grid steps; the fine pass refines around the coarse peak.
    r_halfwidth: float = 3.0
    angle_halfwidth_deg: float = 10.0
    r_step: float = 0.5
    angle_step_deg: float = 2.0
    fine_r_step: float = 0.05
    fine_angle_step_deg: float = 0.2
    gradient_max_iters: int = 120
    gradient_initial_step: float = 2.0

    @model_validator(mode="after")
    def _check(self):
        if min(self.r_halfwidth, self.angle_halfwidth_deg, self.r_step,
               self.angle_step_deg, self.fine_r_step,
               self.fine_angle_step_deg) <= 0:
            raise ValueError("sensing grid parameters must be positive")
        if self.gradient_max_iters < 1 or self.gradient_initial_step <= 0:
            raise ValueError("gradient settings must be positive")
        return self


class OptimizeConfig(_Section):
    omega0: float | None = None
    penalty_growth: float = 5.0
    mu2: float = 1e-3
    mu3: float = 1e-3
    mu4: float = 1e-3
    max_outer: int = 8
    max_inner: int = 30
    ao_max_iters: int = 10

    @model_validator(mode="after")
    def _check(self):
        if min(self.mu2, self.mu3, self.mu4) <= 0:
            raise ValueError("tolerances must be positive")
        if self.penalty_growth <= 1:
            raise ValueError("penalty growth factor must exceed 1")
        if min(self.max_outer, self.max_inner, self.ao_max_iters) < 1:
            raise ValueError("iteration caps must be >= 1")
        return self


class ConstraintConfig(_Section):
    box_min: list[float] = [-30.0, -30.0, 25.0]
    box_max: list[float] = [30.0, 30.0, 40.0]
    v_max: float = 5.0
    d_min: float = 7.0
    # Design setpoint above d_min that absorbs CPI-to-CPI jumps of the
    # predicted E-UAV position, keeping the hard d_min constraint reachable.
    collision_margin: float = 2.0

    @model_validator(mode="after")
    def _check(self):
        if len(self.box_min) != 3 or len(self.box_max) != 3:
            raise ValueError("box corners must be 3-vectors")
        if any(hi <= lo for lo, hi in zip(self.box_min, self.box_max)):
            raise ValueError("box_max must exceed box_min in every coordinate")
        if self.v_max <= 0 or self.d_min <= 0:
            raise ValueError("v_max and d_min must be positive")
        if self.collision_margin < 0:
            raise ValueError("collision_margin must be nonnegative")
        return self


class EUavConfig(_Section):
    center: list[float] = [4.6, 8.0, 28.5]
    radius: float = 3.2
    # One revolution over the paper's 80 x 0.05 s horizon.
    angular_rate: float = 2.0 * np.pi / 4.0
    # Phase pi starts the E-UAV on the far side of its circle so every
    # default C-UAV start is collision-feasible from the first CPI.
    initial_phase: float = np.pi

    @model_validator(mode="after")
    def _check(self):
        if len(self.center) != 3:
            raise ValueError("circle center must be a 3-vector")
        if self.radius <= 0 or self.angular_rate <= 0:
            raise ValueError("radius and angular rate must be positive")
        return self


class CUavConfig(_Section):
    initial_position: list[float] = [10.0, 2.0, 30.0]
    # Pinned position for the static-C-UAV baseline.  The baseline exists to
    # show the cost of not flying: it sits at the far edge of the flight box,
    # where the long base-station range depresses the legitimate-link rate.
    static_position: list[float] = [24.0, 6.0, 40.0]

    @field_validator("initial_position", "static_position")
    @classmethod
    def _check(cls, v):
        if len(v) != 3:
            raise ValueError("C-UAV positions must be 3-vectors")
        return v


class ScenarioConfig(_Section):
    geometry: GeometryConfig = GeometryConfig()
    signal: SignalConfig = SignalConfig()
    power: PowerConfig = PowerConfig()
    tracking: TrackingConfig = TrackingConfig()
    sensing: SensingConfig = SensingConfig()
    optimize: OptimizeConfig = OptimizeConfig()
    constraints: ConstraintConfig = ConstraintConfig()
    e_uav: EUavConfig = EUavConfig()
    c_uav: CUavConfig = CUavConfig()
    scheme: str = "proposed"
    seed: int = 0
    nsee_norm: float = 10.0

    @model_validator(mode="after")
    def _check(self):
        if self.scheme not in ("proposed", "PKS", "CSS"):
            raise ValueError("scheme must be one of proposed, PKS, CSS")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.nsee_norm <= 0:
            raise ValueError("nsee_norm must be positive")
        center = np.asarray(self.e_uav.center, dtype=float)
        if np.hypot(center[0], center[1]) <= self.e_uav.radius:
            raise ValueError("E-UAV path crosses the z-axis (azimuth "
                             "undefined there); move the circle center")
        geom = self.geometry.build()
        max_range = np.linalg.norm(center) + self.e_uav.radius
        if max_range >= rayleigh_distance(geom):
            warnings.warn(
                "E-UAV path extends beyond the Rayleigh distance "
                f"({rayleigh_distance(geom):.1f} m) of the configured array; "
                "the spherical-wave model stays exact but wavefront "
                "curvature is weak", stacklevel=2)
        return self


#: Named profiles: array size and run length trade accuracy for runtime.
#: The small-array profiles lower the echo noise floor to -60 dBm so the
#: Table-I tracking budgets stay reachable despite the reduced aperture gain.
PROFILES = {
    "ci": {"geometry": {"mx": 4, "my": 4},
           "signal": {"n_symbols": 64, "n_cpis": 20},
           "power": {"sigma2_b_dbm": -60.0},
           "tracking": {"meas_var_floor": [9.0, 4e-4, 4e-4, 0.0,
                                           25.0, 25.0]}},
    "desk": {"geometry": {"mx": 8, "my": 8},
             "signal": {"n_symbols": 64, "n_cpis": 20},
             "power": {"sigma2_b_dbm": -60.0},
             "tracking": {"meas_var_floor": [9.0, 4e-4, 4e-4, 0.0,
                                             25.0, 25.0]}},
    "paper": {"geometry": {"mx": 16, "my": 16},
              "signal": {"n_symbols": 500, "n_cpis": 80}},
}


def _deep_update(base: dict, extra: dict) -> dict:
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], val)
        else:
            base[key] = val
    return base


def apply_override(data: dict, dotted_key: str, raw_value: str) -> None:
    """Set a dotted-path key (e.g. ``signal.n_symbols``) to a YAML scalar."""
    parts = dotted_key.split(".")
    node = data
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override key {dotted_key!r}: {part!r} is not "
                              "a section")
        node = nxt
    try:
        node[parts[-1]] = yaml.safe_load(raw_value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override value for {dotted_key!r} does not "
                          f"parse: {exc}") from exc


def build_config(data: dict | None = None, profile: str | None = None,
                 overrides: list[str] | None = None,
                 seed: int | None = None) -> ScenarioConfig:
    """Merge profile defaults, explicit data, and dotted overrides."""
    merged: dict = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from "
                              f"{sorted(PROFILES)}")
        _deep_update(merged, {k: dict(v) for k, v in PROFILES[profile].items()})
    if data:
        _deep_update(merged, data)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like KEY=VALUE")
        key, _, value = item.partition("=")
        apply_override(merged, key.strip(), value.strip())
    if seed is not None:
        merged["seed"] = seed
    try:
        return ScenarioConfig(**merged)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str, profile: str | None = None,
                overrides: list[str] | None = None,
                seed: int | None = None) -> ScenarioConfig:
    """Load a YAML config file and apply profile/override layers."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path!r} is not valid YAML: "
                          f"{exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path!r} must contain a mapping")
    return build_config(data, profile=profile, overrides=overrides, seed=seed)
