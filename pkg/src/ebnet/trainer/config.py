"""Training recipes for the two binarization stages."""

from __future__ import annotations

from typing import Literal, Self

from pydantic import Field, model_validator

from ..settings import YamlSettings

Stage = Literal["I", "II"]


class TrainConfig(YamlSettings):
    stage: Stage = Field(
        default="I",
        description="I trains real latent weights against binary activations; II binarizes both.",
    )
    epochs: int = Field(default=60, ge=1)
    base_lr: float = Field(default=1e-3, gt=0)
    milestones: list[int] = Field(
        default_factory=lambda: [30, 45, 55],
        description="Epochs at which the learning rate is multiplied by `decay`.",
    )
    decay: float = Field(default=0.1, description="Learning rate factor applied at every milestone.")
    weight_decay: float = Field(default=1e-5, ge=0, description="L2 penalty; must be 0 in stage II.")
    warmup_epochs: int = Field(default=5, ge=0, description="Length of the linear learning rate ramp.")
    mixup_alpha: float = Field(default=0.0, ge=0, description="Beta(alpha, alpha) mixup; 0 disables mixup.")
    batch_size: int = Field(default=128, ge=1)
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=0, ge=0, description="DataLoader worker processes.")
    max_batches: int | None = Field(
        default=None, ge=1, description="Truncate every epoch to this many batches (smoke runs)."
    )

    @model_validator(mode="after")
    def _check_schedule(self) -> Self:
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {self.milestones}")
        if any(m < 0 or m >= self.epochs for m in self.milestones):
            raise ValueError(f"milestones {self.milestones} must lie in [0, {self.epochs})")
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must be in (0, 1), got {self.decay}")
        if self.warmup_epochs > self.epochs:
            raise ValueError(f"warmup of {self.warmup_epochs} epochs exceeds the {self.epochs} epoch run")
        if self.stage == "II" and self.weight_decay != 0.0:
            raise ValueError(f"stage II trains without weight decay, got {self.weight_decay}")
        return self

    @classmethod
    def desk_default(cls, stage: Stage = "I", **overrides) -> Self:
        """CIFAR-10 recipe: 60 epochs, decays at 30/45/55, 5 warm-up epochs."""
        values = dict(stage=stage, weight_decay=1e-5 if stage == "I" else 0.0)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def imagenet_recipe(cls, stage: Stage = "I", **overrides) -> Self:
        values = dict(
            stage=stage,
            epochs=75,
            milestones=[40, 55, 65],
            warmup_epochs=10,
            base_lr=1e-3,
            weight_decay=1e-5 if stage == "I" else 0.0,
        )
        values.update(overrides)
        return cls(**values)

    def scaled(self, epochs: int) -> Self:
        """The same recipe stretched or shrunk to ``epochs``; milestones that collide are dropped."""
        factor = epochs / self.epochs
        milestones: list[int] = []
        for m in self.milestones:
            m = int(round(m * factor))
            if 0 <= m < epochs and (not milestones or m > milestones[-1]):
                milestones.append(m)
        warmup = min(epochs, int(round(self.warmup_epochs * factor)))
        return self.model_validate(
            self.model_dump() | {"epochs": epochs, "milestones": milestones, "warmup_epochs": warmup}
        )


class PolicyConfig(YamlSettings):
    """Recipes of the staged run: ``stage1`` drives steps 1 and 3, ``stage2`` step 4."""

    stage1: TrainConfig = Field(default_factory=lambda: TrainConfig.desk_default("I"))
    stage2: TrainConfig = Field(default_factory=lambda: TrainConfig.desk_default("II"))
    recalibration_batches: int = Field(
        default=50, ge=0, description="BN statistics pass after expert replication; 0 skips it."
    )

    @model_validator(mode="after")
    def _check_stages(self) -> Self:
        if self.stage1.stage != "I":
            raise ValueError("stage1 must be a stage I recipe")
        if self.stage2.stage != "II":
            raise ValueError("stage2 must be a stage II recipe")
        return self

    @classmethod
    def imagenet_recipe(cls) -> Self:
        return cls(stage1=TrainConfig.imagenet_recipe("I"), stage2=TrainConfig.imagenet_recipe("II"))

    def scaled(self, epochs: int) -> Self:
        return self.model_validate(
            {
                "stage1": self.stage1.scaled(epochs).model_dump(),
                "stage2": self.stage2.scaled(epochs).model_dump(),
                "recalibration_batches": self.recalibration_batches,
            }
        )
