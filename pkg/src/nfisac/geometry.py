"""Planar-array geometry, spherical coordinates, and near-field steering vectors.

Conventions used throughout the package:

* The array is a rectangular grid in the z=0 plane.  Antenna index
  ``m = a*my + b`` with ``a in 0..mx-1`` and ``b in 1..my`` (1-based ``m``).
* Azimuth ``theta`` is measured from the +y axis toward +x, elevation ``phi``
  from the horizontal plane toward +z, both via arcsine, so

      x = r sin(theta) cos(phi),  y = r cos(theta) cos(phi),  z = r sin(phi).

  This makes the closed-form element-to-target distance exact (it is an
  expansion of the Euclidean norm, not an approximation).
* The x-offsets use (mx-1)/2 and the y-offsets (my+1)/2.  The asymmetry
  de-centers the grid in y by half a spacing; it is kept deliberately so the
  distance formula and the index map stay a matched pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ZenithError(ValueError):
    """Azimuth is undefined for points on the z-axis (x = y = 0)."""


@dataclass(frozen=True)
class UpaGeometry:
    """Uniform planar array: mx columns (x), my rows (y), element spacing d."""

    mx: int
    my: int
    spacing: float
    carrier_wavelength: float

    def __post_init__(self):
        if self.mx < 1 or self.my < 1:
            raise ValueError("array must have at least one element per axis")
        if self.spacing <= 0 or self.carrier_wavelength <= 0:
            raise ValueError("spacing and wavelength must be positive")

    @property
    def n_elements(self) -> int:
        return self.mx * self.my

    def element_positions(self) -> np.ndarray:
        """(M, 3) Cartesian coordinates of every element, index-ordered."""
        a, b = np.divmod(np.arange(self.n_elements), self.my)
        b = b + 1
        x = (a - (self.mx - 1) / 2.0) * self.spacing
        y = (b - (self.my + 1) / 2.0) * self.spacing
        return np.stack([x, y, np.zeros_like(x)], axis=1)


@dataclass(frozen=True)
class SphericalCoord:
    """Range / azimuth / elevation of a point relative to the array center."""

    r: float
    theta: float
    phi: float

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError(f"range must be positive, got {self.r}")


def element_position(geom: UpaGeometry, m: int) -> np.ndarray:
    """Cartesian position of the m-th element (1-based index)."""
    if not 1 <= m <= geom.n_elements:
        raise IndexError(f"element index {m} outside 1..{geom.n_elements}")
    a, b = divmod(m - 1, geom.my)
    b = b + 1
    return np.array([
        (a - (geom.mx - 1) / 2.0) * geom.spacing,
        (b - (geom.my + 1) / 2.0) * geom.spacing,
        0.0,
    ])


def sph_to_cart(s: SphericalCoord) -> np.ndarray:
    ct = np.cos(s.theta)
    cp = np.cos(s.phi)
    return np.array([
        s.r * np.sin(s.theta) * cp,
        s.r * ct * cp,
        s.r * np.sin(s.phi),
    ])


def cart_to_sph(p: np.ndarray) -> SphericalCoord:
    p = np.asarray(p, dtype=float)
    r = float(np.linalg.norm(p))
    if r == 0.0:
        raise ValueError("range undefined at the origin")
    rho = float(np.hypot(p[0], p[1]))
    if rho == 0.0:
        raise ZenithError("azimuth undefined on the z-axis")
    return SphericalCoord(
        r=r,
        theta=float(np.arcsin(np.clip(p[0] / rho, -1.0, 1.0))),
        phi=float(np.arcsin(np.clip(p[2] / r, -1.0, 1.0))),
    )


def spherical_basis(s: SphericalCoord) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal (r_hat, theta_hat, phi_hat) at the target location.

    theta_hat points along increasing azimuth (tangential, horizontal),
    phi_hat along increasing elevation.
    """
    st, ct = np.sin(s.theta), np.cos(s.theta)
    sp, cp = np.sin(s.phi), np.cos(s.phi)
    r_hat = np.array([st * cp, ct * cp, sp])
    theta_hat = np.array([ct, -st, 0.0])
    phi_hat = np.array([-st * sp, -ct * sp, cp])
    return r_hat, theta_hat, phi_hat


def exact_distances(geom: UpaGeometry, target: SphericalCoord) -> np.ndarray:
    """Exact element-to-target distance for all M elements.

    Closed form: sqrt(r^2 + x_m^2 + y_m^2 - 2 r x_m sin(t)cos(p)
                      - 2 r y_m cos(t)cos(p)).
    Identical (to rounding) to the Euclidean norm against sph_to_cart.
    """
    pos = geom.element_positions()
    xm, ym = pos[:, 0], pos[:, 1]
    stcp = np.sin(target.theta) * np.cos(target.phi)
    ctcp = np.cos(target.theta) * np.cos(target.phi)
    d2 = (target.r**2 + xm**2 + ym**2
          - 2.0 * target.r * xm * stcp
          - 2.0 * target.r * ym * ctcp)
    return np.sqrt(d2)


def exact_distance(geom: UpaGeometry, m: int, target: SphericalCoord) -> float:
    if not 1 <= m <= geom.n_elements:
        raise IndexError(f"element index {m} outside 1..{geom.n_elements}")
    return float(exact_distances(geom, target)[m - 1])


def steering_vector(geom: UpaGeometry, target: SphericalCoord) -> np.ndarray:
    """Near-field steering vector: exp(-j 2 pi / lambda * distance_m)."""
    k = 2.0 * np.pi / geom.carrier_wavelength
    return np.exp(-1j * k * exact_distances(geom, target))


def steering_vectors_cart(geom: UpaGeometry, points: np.ndarray) -> np.ndarray:
    """Steering vectors for a batch of Cartesian points; (P, M) complex."""
    pos = geom.element_positions()
    diff = points[:, None, :] - pos[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    return np.exp(-1j * (2.0 * np.pi / geom.carrier_wavelength) * dist)


def rayleigh_distance(geom: UpaGeometry) -> float:
    """2 D^2 / lambda with the full-grid diagonal aperture D."""
    d_ap = geom.spacing * np.hypot(geom.mx, geom.my)
    return 2.0 * d_ap**2 / geom.carrier_wavelength
