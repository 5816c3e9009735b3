"""Object presets for the three desk-scale test objects.

Material constants are the measured ones; lengths, cross-sections and the
cable stiffness multipliers are plausible choices and can be overridden.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .rod import CircularSection, RodParameters, SquareSection, StiffnessBuilder


@dataclass(frozen=True)
class ObjectPreset:
    name: str
    length_m: float
    youngs_modulus_pa: float
    poisson_ratio: float
    section: Union[CircularSection, SquareSection]
    n_markers: int
    kt_multiplier: float = 1.0
    kr_multiplier: float = 1.0
    description: str = ""

    def params(self, n_steps: int = 100) -> RodParameters:
        """Nominal rod model, with the composite-cable multipliers applied."""
        b = StiffnessBuilder(self.youngs_modulus_pa, self.poisson_ratio, self.section)
        return RodParameters(
            self.length_m,
            b.kt() * self.kt_multiplier,
            b.kr() * self.kr_multiplier,
            n_steps=n_steps,
        )


PRESETS: dict[str, ObjectPreset] = {
    p.name: p
    for p in (
        ObjectPreset(
            "rubber_band", 0.6, 3.2e6, 0.5, SquareSection(0.010), 3,
            description="elastic band, 10 mm square section",
        ),
        # stranded cables bend far more easily than a solid bar of the same radius
        ObjectPreset(
            "steel_cable", 1.0, 180e9, 0.303, CircularSection(2.5e-3), 4,
            kr_multiplier=0.25,
            description="stranded steel cable, 2.5 mm radius",
        ),
        ObjectPreset(
            "sheathed_cable", 1.0, 180e9, 0.303, CircularSection(1.5e-3), 4,
            kr_multiplier=0.5,
            description="thin steel cable in a polymer sheath, 1.5 mm radius",
        ),
    )
}


def get_preset(name: str) -> ObjectPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
