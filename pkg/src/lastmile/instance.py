"""Service-region geometry: instance generation, spatial sampling, feature scaling.

All coordinates are in km, measured from the region center. The service region
is a disc of radius L; customers and pickup points follow a three-zone mixture
(one central zone of radius L, two smaller sub-zones of radius 0.5*L) and the
depot sits outside the customer area at distance [L, 1.3*L] from the center.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

SCHEMA_VERSION = 1

# Zone mixture shares: central zone, then the two sub-zones.
ZONE_SHARES = (0.4, 0.3, 0.3)
CENTRAL_RADIUS = 1.0  # unit-L geometry; scaled by L at the end
SUBZONE_RADIUS = 0.5
SUBZONE_CENTER_RANGE = (0.3, 0.8)  # distance of sub-zone centers from origin
DEPOT_RANGE = (1.0, 1.3)

# Feature clamp range: the depot lies outside [0,1] after scaling, so the
# normalized band is widened instead of truncating it to the unit box.
CLAMP_LO = -0.2
CLAMP_HI = 1.2


@dataclass(frozen=True)
class Location:
    x: float
    y: float

    def as_tuple(self) -> Tuple[float, float]:
        return (self.x, self.y)


def distance(a: Location, b: Location) -> float:
    """Euclidean distance in km."""
    return math.hypot(a.x - b.x, a.y - b.y)


@dataclass(frozen=True)
class Instance:
    """One fixed service-region geography.

    Immutable after construction; safe to share across episode workers.
    Pickup point indices are stable for the lifetime of the instance.
    """

    region_radius_L: float
    depot: Location
    pickup_points: Tuple[Location, ...]
    zone_centers: Tuple[Location, Location]
    seed: int

    @property
    def num_pickups(self) -> int:
        return len(self.pickup_points)

    def validate(self) -> None:
        L = self.region_radius_L
        if not (L > 0):
            raise ValueError("region radius must be positive")
        d_dep = math.hypot(self.depot.x, self.depot.y)
        if not (DEPOT_RANGE[0] * L - 1e-9 <= d_dep <= DEPOT_RANGE[1] * L + 1e-9):
            raise ValueError("depot outside the [L, 1.3L] ring")
        for zc in self.zone_centers:
            d = math.hypot(zc.x, zc.y)
            if d > SUBZONE_CENTER_RANGE[1] * L + 1e-9:
                raise ValueError("sub-zone center too far from origin")
        reach = (SUBZONE_CENTER_RANGE[1] + SUBZONE_RADIUS) * L + 1e-9
        for p in self.pickup_points:
            if math.hypot(p.x, p.y) > max(CENTRAL_RADIUS * L, reach):
                raise ValueError("pickup point outside every zone")


def _draw_zone_point(rng: np.random.Generator, centers, scale: float):
    """One draw from the zone mixture; returns (zone index, Location).

    Radius is uniform in [0, zone radius], not uniform-in-area, which
    concentrates density near zone centers on purpose.
    """
    u = rng.random()
    if u < ZONE_SHARES[0]:
        zone, cx, cy, rad = 0, 0.0, 0.0, CENTRAL_RADIUS * scale
    elif u < ZONE_SHARES[0] + ZONE_SHARES[1]:
        zone, (cx, cy), rad = 1, centers[0], SUBZONE_RADIUS * scale
    else:
        zone, (cx, cy), rad = 2, centers[1], SUBZONE_RADIUS * scale
    r = rng.uniform(0.0, rad)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    return zone, Location(cx + r * math.cos(phi), cy + r * math.sin(phi))


def _generate_unit(seed: int, num_pups: int):
    """Unit-radius geometry shared by all L values for a given seed.

    Returns (depot, zone_centers, pickup_points, zone_ids) in unit-L
    coordinates. Kept separate so tests can check the categorical zone draw
    directly.
    """
    rng = np.random.default_rng(seed)
    centers = []
    for _ in range(2):
        d = rng.uniform(*SUBZONE_CENTER_RANGE)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        centers.append((d * math.cos(phi), d * math.sin(phi)))
    d = rng.uniform(*DEPOT_RANGE)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    depot = Location(d * math.cos(phi), d * math.sin(phi))
    points = []
    zones = []
    for _ in range(num_pups):
        zone, loc = _draw_zone_point(rng, centers, 1.0)
        zones.append(zone)
        points.append(loc)
    return depot, centers, points, zones


def generate_instance(L: float, num_pups: int, seed: int) -> Instance:
    """Deterministic instance for (seed, num_pups), scaled by L.

    The unit-radius geometry depends only on (seed, num_pups); coordinates are
    multiplied by L afterwards, so different radii share geography.
    """
    if not (L > 0):
        raise ValueError("L must be positive")
    if num_pups < 0:
        raise ValueError("num_pups must be >= 0")
    depot_u, centers_u, points_u, _ = _generate_unit(seed, num_pups)
    scale = float(L)
    depot = Location(depot_u.x * scale, depot_u.y * scale)
    zone_centers = (
        Location(centers_u[0][0] * scale, centers_u[0][1] * scale),
        Location(centers_u[1][0] * scale, centers_u[1][1] * scale),
    )
    pickups = tuple(Location(p.x * scale, p.y * scale) for p in points_u)
    return Instance(scale, depot, pickups, zone_centers, int(seed))


def sample_customer_location(instance: Instance, rng: np.random.Generator) -> Location:
    """Customer location from the same zone mixture as the pickup points."""
    centers = (instance.zone_centers[0].as_tuple(), instance.zone_centers[1].as_tuple())
    _, loc = _draw_zone_point(rng, centers, instance.region_radius_L)
    return loc


def _clamp(v: float) -> float:
    return min(max(v, CLAMP_LO), CLAMP_HI)


def normalize_features(loc: Location, t: float, L: float, T: float):
    """Scale a location/time pair into the unit box: (d + L) / 2L and t / T.

    Results are clamped to [-0.2, 1.2]; only the depot can leave [0, 1].
    """
    inv = 1.0 / (2.0 * L)
    return (
        _clamp((loc.x + L) * inv),
        _clamp((loc.y + L) * inv),
        _clamp(t / T),
    )


def _fmt(v: float) -> str:
    # 17 significant digits: exact float64 round-trip as decimal text.
    return format(float(v), ".17g")


def instance_to_text(instance: Instance) -> str:
    """Serialize to the instance file format (JSON, deterministic bytes)."""

    def pt(loc: Location) -> str:
        return "[%s, %s]" % (_fmt(loc.x), _fmt(loc.y))

    pups = ", ".join(pt(p) for p in instance.pickup_points)
    return (
        "{\n"
        '  "schema_version": %d,\n' % SCHEMA_VERSION
        + '  "L_km": %s,\n' % _fmt(instance.region_radius_L)
        + '  "seed": %d,\n' % instance.seed
        + '  "depot": %s,\n' % pt(instance.depot)
        + '  "zone_centers": [%s, %s],\n'
        % (pt(instance.zone_centers[0]), pt(instance.zone_centers[1]))
        + '  "pickup_points": [%s]\n' % pups
        + "}\n"
    )


def save_instance(instance: Instance, path) -> Path:
    path = Path(path)
    path.write_text(instance_to_text(instance))
    return path


def load_instance(path) -> Instance:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError("unsupported instance schema: %r" % doc.get("schema_version"))
    zc = doc["zone_centers"]
    return Instance(
        region_radius_L=float(doc["L_km"]),
        depot=Location(*doc["depot"]),
        pickup_points=tuple(Location(*p) for p in doc["pickup_points"]),
        zone_centers=(Location(*zc[0]), Location(*zc[1])),
        seed=int(doc["seed"]),
    )
