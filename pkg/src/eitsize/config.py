"""JSON experiment configuration, validated with pydantic."""

from __future__ import annotations

import json
from typing import Literal

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    ValidationError,
    field_validator,
    model_validator,
)

from . import forward
from .experiments import GENERATORS, SweepPlan
from .mesh import InclusionMask, StructuredMesh, block_elements, build_mesh


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration documents."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MeshConfig(_Strict):
    dim: Literal[2, 3]
    n_e: int = Field(ge=3)
    side_l: PositiveFloat = 1.0


class ElectrodeConfig(_Strict):
    axis: int = Field(ge=0, le=2)
    side: Literal[0, 1]
    ranges: list[tuple[int, int]]


class ExcitationConfig(_Strict):
    test: Literal["T1", "T2", "T3", "cosine", "custom"]
    amplitude: PositiveFloat = 1.0
    # Neumann data
    n: int = Field(default=0, ge=0)
    sign: Literal["opposite", "same"] = "opposite"
    patch: list[tuple[int, int]] | None = None
    patch_width: int | None = Field(default=None, ge=1)
    # electrodes
    zeta: PositiveFloat = 0.2
    size: int = Field(default=1, ge=1)
    gap: int = Field(default=3, ge=1)
    currents: list[float] | None = None
    impedances: list[PositiveFloat] | None = None
    electrodes: list[ElectrodeConfig] | None = None


class BlockConfig(_Strict):
    origin: list[int]
    side: int = Field(ge=1)


class InclusionConfig(_Strict):
    k: PositiveFloat
    elements: list[int] | None = None
    block: BlockConfig | None = None

    @model_validator(mode="after")
    def _one_geometry(self):
        if (self.elements is None) == (self.block is None):
            raise ValueError("give exactly one of 'elements' or 'block'")
        return self


class SweepConfig(_Strict):
    generator: Literal[GENERATORS] = "blocks"  # type: ignore[valid-type]
    sizes: tuple[int, int] = (1, 5)
    k: list[PositiveFloat] = Field(default_factory=lambda: [0.1, 10.0], min_length=1)
    d0_min: int = Field(default=1, ge=0)
    d03_min: int | None = Field(default=None, ge=0)
    volume_cap: float = Field(default=0.06, gt=0, le=1)
    samples: int = Field(default=100, ge=1)
    exhaustive_max: int = Field(default=7, ge=0)
    octant: bool = False
    seed: int = Field(default=0, ge=0, lt=2**64)

    @field_validator("k")
    @classmethod
    def _not_one(cls, ks):
        if any(k == 1 for k in ks):
            raise ValueError("k = 1 gives no inclusion; sweeps need k != 1")
        return ks

    @field_validator("sizes")
    @classmethod
    def _range(cls, sizes):
        if not 1 <= sizes[0] <= sizes[1]:
            raise ValueError("size range must satisfy 1 <= lo <= hi")
        return sizes


class OutputConfig(_Strict):
    csv: str | None = None
    dat: str | None = None
    meta: str | None = None


class ExperimentConfig(_Strict):
    model: Literal["neumann", "cem"]
    mesh: MeshConfig
    excitation: ExcitationConfig
    inclusion: InclusionConfig | None = None
    sweep: SweepConfig | None = None
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _check_excitation(self):
        exc = self.excitation
        if self.model == "neumann" and exc.test in ("T3", "custom"):
            raise ValueError(f"test {exc.test} is only defined for the electrode model")
        if self.model == "cem" and exc.test == "cosine":
            raise ValueError("cosine data is only defined for the Neumann model")
        if exc.test == "custom" and (exc.electrodes is None or exc.currents is None):
            raise ValueError("custom layouts need 'electrodes' and 'currents'")
        return self

    # -- builders ------------------------------------------------------------

    def build_mesh(self) -> StructuredMesh:
        return build_mesh(self.mesh.dim, self.mesh.n_e, self.mesh.side_l)

    def build_excitation(self, mesh: StructuredMesh):
        """NeumannSpec or validated ElectrodeLayout; ConfigError if inconsistent."""
        exc = self.excitation
        try:
            if self.model == "neumann":
                if exc.test == "T1":
                    return forward.neumann_t1(mesh.dim, exc.amplitude)
                if exc.test == "T2":
                    if exc.patch is not None:
                        return forward.NeumannSpec("patch", exc.amplitude, axis=0,
                                                   patch=tuple(exc.patch), test_id="T2")
                    return forward.neumann_t2(mesh, exc.patch_width, exc.amplitude)
                return forward.neumann_cosine(mesh.dim, exc.n, exc.amplitude, exc.sign)
            currents = tuple(exc.currents) if exc.currents else (exc.amplitude, -exc.amplitude)
            if exc.test == "T1":
                layout = forward.cem_t1(mesh, exc.zeta, currents)
            elif exc.test == "T2":
                layout = forward.cem_t2(mesh, exc.zeta, exc.size, currents)
            elif exc.test == "T3":
                layout = forward.cem_t3(mesh, exc.zeta, exc.size, exc.gap, currents)
            else:
                els = tuple(forward.Electrode(e.axis, e.side, tuple(e.ranges))
                            for e in exc.electrodes)
                z = exc.impedances or [exc.zeta * mesh.side_l] * len(els)
                layout = forward.ElectrodeLayout(els, tuple(z), currents, "custom")
            layout.validate(mesh)
            return layout
        except ValueError as err:
            raise ConfigError(f"excitation: {err}") from err

    def build_inclusion(self, mesh: StructuredMesh) -> InclusionMask:
        inc = self.inclusion
        if inc is None:
            raise ConfigError("config has no 'inclusion' section")
        try:
            if inc.block is not None:
                elements = block_elements(mesh, inc.block.origin, inc.block.side)
            else:
                elements = inc.elements
            return InclusionMask(mesh, elements, inc.k)
        except (ValueError, IndexError) as err:
            raise ConfigError(f"inclusion: {err}") from err

    def build_plan(self, seed: int | None = None) -> SweepPlan:
        sw = self.sweep
        if sw is None:
            raise ConfigError("config has no 'sweep' section")
        mesh = self.build_mesh()
        return SweepPlan(
            mesh=mesh,
            excitation=self.build_excitation(mesh),
            k_values=tuple(sw.k),
            generator=sw.generator,
            sizes=tuple(sw.sizes),
            d0_min=sw.d0_min,
            d03_min=sw.d03_min,
            volume_cap=sw.volume_cap,
            samples=sw.samples,
            exhaustive_max=sw.exhaustive_max,
            octant=sw.octant,
            seed=sw.seed if seed is None else seed,
        )


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate a JSON document; errors carry line/column positions."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{source}:{err.lineno}:{err.colno}: {err.msg}") from err
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as err:
        lines = [f"{source}: invalid configuration"]
        for e in err.errors():
            loc = ".".join(str(p) for p in e["loc"]) or "<root>"
            lines.append(f"  {loc}: {e['msg']}")
        raise ConfigError("\n".join(lines)) from err


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from err
    return parse_config(text, str(path))
