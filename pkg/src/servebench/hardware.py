"""Hardware catalog: device profiles with peak compute, memory bandwidth, power and pricing.

The bundled catalog ships four GPU profiles (G1-G4). All quantities are SI:
FLOP/s, bytes/s, bytes, watts, USD/hour.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .errors import CatalogError

CATALOG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CloudOffer:
    provider_label: str
    instance_label: str
    hourly_rate: float  # USD/h

    def to_doc(self) -> dict:
        return {
            "provider_label": self.provider_label,
            "instance_label": self.instance_label,
            "hourly_rate": self.hourly_rate,
        }


@dataclass(frozen=True)
class HardwareProfile:
    id: str
    name: str
    peak_flops_fp32: float  # FLOP/s
    peak_flops_fp16: float  # FLOP/s
    mem_bandwidth: float    # bytes/s
    mem_capacity: float     # bytes
    tdp_power: float        # watts
    cloud_offers: tuple[CloudOffer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.id:
            raise CatalogError("hardware profile requires a non-empty id")
        for attr in ("peak_flops_fp32", "peak_flops_fp16", "mem_bandwidth",
                     "mem_capacity", "tdp_power"):
            if getattr(self, attr) <= 0:
                raise CatalogError(f"hardware {self.id}: {attr} must be > 0")
        for offer in self.cloud_offers:
            if offer.hourly_rate < 0:
                raise CatalogError(f"hardware {self.id}: hourly_rate must be >= 0")

    def peak_flops(self, precision: str = "fp32") -> float:
        if precision == "fp32":
            return self.peak_flops_fp32
        if precision == "fp16":
            return self.peak_flops_fp16
        raise ValueError(f"unknown precision {precision!r}")

    def ridge_point(self, precision: str = "fp32") -> float:
        """Operational intensity (FLOP/byte) at which compute and bandwidth bounds meet."""
        return self.peak_flops(precision) / self.mem_bandwidth

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "peak_flops_fp32": self.peak_flops_fp32,
            "peak_flops_fp16": self.peak_flops_fp16,
            "mem_bandwidth": self.mem_bandwidth,
            "mem_capacity": self.mem_capacity,
            "tdp_power": self.tdp_power,
            "cloud_offers": [o.to_doc() for o in self.cloud_offers],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "HardwareProfile":
        known = {"id", "name", "peak_flops_fp32", "peak_flops_fp16",
                 "mem_bandwidth", "mem_capacity", "tdp_power", "cloud_offers"}
        extra = set(doc) - known
        if extra:
            raise CatalogError(f"unknown hardware fields: {sorted(extra)}")
        missing = known - {"cloud_offers"} - set(doc)
        if missing:
            raise CatalogError(f"hardware entry missing fields: {sorted(missing)}")
        offers = []
        for o in doc.get("cloud_offers") or []:
            extra = set(o) - {"provider_label", "instance_label", "hourly_rate"}
            if extra:
                raise CatalogError(f"unknown cloud offer fields: {sorted(extra)}")
            offers.append(CloudOffer(str(o["provider_label"]), str(o["instance_label"]),
                                     float(o["hourly_rate"])))
        return cls(
            id=str(doc["id"]),
            name=str(doc["name"]),
            peak_flops_fp32=float(doc["peak_flops_fp32"]),
            peak_flops_fp16=float(doc["peak_flops_fp16"]),
            mem_bandwidth=float(doc["mem_bandwidth"]),
            mem_capacity=float(doc["mem_capacity"]),
            tdp_power=float(doc["tdp_power"]),
            cloud_offers=tuple(offers),
        )

    def content_hash(self) -> str:
        blob = json.dumps(self.to_doc(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_hardware_catalog(path: str | Path | None = None) -> list[HardwareProfile]:
    """Load a catalog file, or the bundled defaults (G1-G4) when no path is given."""
    if path is None:
        text = resources.files("servebench.data").joinpath("hardware.yaml").read_text()
        source = "<bundled>"
    else:
        p = Path(path)
        if not p.exists():
            raise CatalogError(f"catalog file not found: {p}")
        text = p.read_text()
        source = str(p)
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise CatalogError(f"{source}: not valid YAML: {e}") from e
    if not isinstance(doc, dict) or "hardware" not in doc:
        raise CatalogError(f"{source}: expected a mapping with a 'hardware' list")
    version = doc.get("schema_version")
    if version != CATALOG_SCHEMA_VERSION:
        raise CatalogError(f"{source}: schema_version must be {CATALOG_SCHEMA_VERSION}, got {version!r}")
    extra = set(doc) - {"schema_version", "hardware"}
    if extra:
        raise CatalogError(f"{source}: unknown top-level keys: {sorted(extra)}")

    profiles: list[HardwareProfile] = []
    seen: set[str] = set()
    for entry in doc["hardware"]:
        profile = HardwareProfile.from_doc(entry)
        if profile.id in seen:
            raise CatalogError(f"{source}: duplicate hardware id {profile.id!r}")
        seen.add(profile.id)
        profiles.append(profile)
    return profiles


def catalog_by_id(profiles: list[HardwareProfile]) -> dict[str, HardwareProfile]:
    return {p.id: p for p in profiles}


def resolve_hardware(hardware_id: str, catalog: list[HardwareProfile] | None = None) -> HardwareProfile:
    table = catalog_by_id(catalog if catalog is not None else load_hardware_catalog())
    try:
        return table[hardware_id]
    except KeyError:
        raise CatalogError(f"unknown hardware id {hardware_id!r}; known: {sorted(table)}") from None
