"""Energy and CO2 accounting for inference runs.

Per-model rates ship as a data file (kWh and kg CO2-eq per 100,000 images);
estimates scale them linearly using exact rational arithmetic so sums and
golden comparisons never drift. Models with a known CO2 rate use their own
implied grid intensity; user-supplied energy-only rates fall back to the
configurable intensity scalar.

Measurement integrates the run's per-request wall time against a configured
device wattage. That is a power-model measurement, not a meter reading; the
README spells out the assumption.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import NoPowerConfigError, UnknownModelRateError

logger = logging.getLogger(__name__)

RATE_BASIS_IMAGES = 100_000
DEFAULT_CARBON_INTENSITY = Fraction("0.0983")  # kg CO2-eq per kWh, implied by the shipped rates

_WATT_MS_PER_KWH = Fraction(3_600_000_000)  # 1 kWh = 3.6e9 watt-milliseconds


class EnergySource(str, Enum):
    MEASURED = "measured"
    ESTIMATED = "estimated"


@dataclass(frozen=True)
class ModelRate:
    kwh_per_image: Fraction
    co2_kg_per_image: Fraction | None = None
    decoder: str | None = None
    parameters_b: float | None = None

    def __post_init__(self):
        if self.kwh_per_image <= 0:
            raise ValueError("kwh_per_image must be > 0")
        if self.co2_kg_per_image is not None and self.co2_kg_per_image <= 0:
            raise ValueError("co2_kg_per_image must be > 0")


@dataclass
class EnergyModel:
    rates: dict[str, ModelRate] = field(default_factory=dict)
    carbon_intensity: Fraction = DEFAULT_CARBON_INTENSITY

    def __post_init__(self):
        if self.carbon_intensity <= 0:
            raise ValueError("carbon_intensity must be > 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "EnergyModel":
        basis = int(raw.get("basis_images", RATE_BASIS_IMAGES))
        rates = {}
        for name, entry in raw.get("models", {}).items():
            co2 = entry.get("co2_kg_per_100k")
            rates[name] = ModelRate(
                kwh_per_image=Fraction(entry["kwh_per_100k"]) / basis,
                co2_kg_per_image=(Fraction(co2) / basis) if co2 is not None else None,
                decoder=entry.get("decoder"),
                parameters_b=entry.get("parameters_b"),
            )
        intensity = raw.get("carbon_intensity_kg_per_kwh")
        return cls(
            rates=rates,
            carbon_intensity=Fraction(intensity) if intensity is not None else DEFAULT_CARBON_INTENSITY,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "EnergyModel":
        # parse_float=Fraction keeps decimal literals exact (no float round trip)
        with Path(path).open("r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh, parse_float=Fraction))

    @classmethod
    def default(cls) -> "EnergyModel":
        raw = resources.files("kindersafe.data").joinpath("energy_rates.json").read_text("utf-8")
        return cls.from_dict(json.loads(raw, parse_float=Fraction))

    def rate_for(self, model_name: str) -> ModelRate:
        try:
            return self.rates[model_name]
        except KeyError:
            raise UnknownModelRateError(model_name, list(self.rates)) from None


@dataclass(frozen=True)
class EnergyReport:
    images_processed: int
    energy_kwh: Fraction
    co2_kg: Fraction
    source: EnergySource
    model_name: str = ""

    def __post_init__(self):
        if self.images_processed < 0:
            raise ValueError("images_processed must be >= 0")

    def __add__(self, other: "EnergyReport") -> "EnergyReport":
        if self.source is not other.source or self.model_name != other.model_name:
            raise ValueError("can only add reports of the same source and model")
        return EnergyReport(
            images_processed=self.images_processed + other.images_processed,
            energy_kwh=self.energy_kwh + other.energy_kwh,
            co2_kg=self.co2_kg + other.co2_kg,
            source=self.source,
            model_name=self.model_name,
        )

    def as_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "images_processed": self.images_processed,
            "energy_kwh": float(self.energy_kwh),
            "co2_kg": float(self.co2_kg),
            "source": self.source.value,
        }


def estimate(model_name: str, image_count: int, energy_model: EnergyModel | None = None) -> EnergyReport:
    """Linear scaling of the model's per-image rates.

    CO2 uses the model's own implied intensity when the rate table carries
    one (this is what reproduces the published per-model figures); otherwise
    energy times the global intensity scalar.
    """
    if image_count < 0:
        raise ValueError("image_count must be >= 0")
    energy_model = energy_model or EnergyModel.default()
    rate = energy_model.rate_for(model_name)
    energy = rate.kwh_per_image * image_count
    if rate.co2_kg_per_image is not None:
        co2 = rate.co2_kg_per_image * image_count
    else:
        co2 = energy * energy_model.carbon_intensity
    return EnergyReport(
        images_processed=image_count,
        energy_kwh=energy,
        co2_kg=co2,
        source=EnergySource.ESTIMATED,
        model_name=model_name,
    )


def measure(
    durations_ms: Sequence[float],
    power_watts: float | None,
    energy_model: EnergyModel | None = None,
    model_name: str | None = None,
) -> EnergyReport:
    """Integrate request wall time against a configured device power draw.

    energy_kwh = sum(duration_s) * watts / 3.6e6. Without a power figure the
    call falls back to a per-model estimate (with a warning); if no model
    rate is available either, raises :class:`NoPowerConfigError`.
    """
    count = len(durations_ms)
    if power_watts is None:
        if model_name:
            try:
                logger.warning(
                    "no device power configured; falling back to the %s rate estimate", model_name
                )
                return estimate(model_name, count, energy_model)
            except UnknownModelRateError as exc:
                raise NoPowerConfigError(
                    f"no device power configured and no rate for {model_name!r}"
                ) from exc
        raise NoPowerConfigError("measurement needs power_watts or a model_name to estimate from")
    if power_watts <= 0:
        raise NoPowerConfigError("power_watts must be > 0")
    total_ms = sum(Fraction(ms) for ms in durations_ms)
    energy = total_ms * Fraction(power_watts) / _WATT_MS_PER_KWH
    intensity = energy_model.carbon_intensity if energy_model is not None else DEFAULT_CARBON_INTENSITY
    co2 = energy * intensity
    return EnergyReport(
        images_processed=count,
        energy_kwh=energy,
        co2_kg=co2,
        source=EnergySource.MEASURED,
        model_name=model_name or "",
    )


def energy_ratio(model_a: str, model_b: str, energy_model: EnergyModel | None = None) -> Fraction:
    """How many times more energy per image model_a uses than model_b."""
    energy_model = energy_model or EnergyModel.default()
    return energy_model.rate_for(model_a).kwh_per_image / energy_model.rate_for(model_b).kwh_per_image
