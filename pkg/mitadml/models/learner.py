import io
import json
import struct
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from mitadml.models.config import DEFAULT_SEED

BLOB_MAGIC = b"ODML1"


class LearnerKind(str, Enum):
    LINEAR_RIDGE = "linear_ridge"
    LOGISTIC = "logistic"
    MLP_REGRESSOR = "mlp_regressor"
    MLP_CLASSIFIER = "mlp_classifier"
    MEAN = "mean"

    @property
    def is_classifier(self) -> bool:
        return self in (LearnerKind.LOGISTIC, LearnerKind.MLP_CLASSIFIER, LearnerKind.MEAN)

    @property
    def is_mlp(self) -> bool:
        return self in (LearnerKind.MLP_REGRESSOR, LearnerKind.MLP_CLASSIFIER)


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"


class LearnerSpec(BaseModel):
    """Hyperparameters of a nuisance learner."""

    kind: LearnerKind = Field(default=LearnerKind.MLP_REGRESSOR, description="Learner family")
    ridge_lambda: float = Field(
        default=0.0,
        description="L2 penalty on slopes (linear, logistic) or weights (MLP)",
        ge=0,
    )
    hidden_layers: List[int] = Field(
        default_factory=lambda: [32],
        description="Units per hidden layer; empty gives a linear model with output link",
    )
    activation: Activation = Field(default=Activation.RELU, description="Hidden activation")
    learning_rate: float = Field(default=1e-3, description="Adam step size", gt=0)
    batch_size: int = Field(default=64, description="Mini-batch size", ge=1)
    max_epochs: int = Field(default=500, description="Maximum training epochs", ge=1)
    early_stop_patience: int = Field(
        default=20, description="Epochs without validation improvement before stopping", ge=1
    )
    validation_fraction: float = Field(
        default=0.1, description="Share of rows held out for early stopping", ge=0, lt=1
    )
    seed: int = Field(default=DEFAULT_SEED, description="Initialization and shuffling seed")

    @field_validator("hidden_layers")
    @classmethod
    def _positive_units(cls, value: List[int]) -> List[int]:
        if any(units < 1 for units in value):
            raise ValueError("hidden_layers entries must be positive")
        return value


class TrainedModel(BaseModel):
    """
    A fitted learner.

    ``parameters`` holds the named arrays the predictor needs; the instance is
    treated as immutable after fitting.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    spec: LearnerSpec
    parameters: Dict[str, np.ndarray]
    feature_dim: int = Field(ge=0)
    training_log: List[float] = Field(default_factory=list)
    validation_log: List[float] = Field(default_factory=list)
    best_epoch: Optional[int] = Field(
        default=None, description="Epoch whose weights were kept by early stopping"
    )

    def to_bytes(self) -> bytes:
        """
        Serialize to the versioned binary blob.

        Layout: magic bytes, 4-byte big-endian header length, JSON header,
        numpy ``.npz`` archive of the parameter arrays.
        """
        header = json.dumps(
            {
                "spec": self.spec.model_dump(mode="json"),
                "feature_dim": self.feature_dim,
                "training_log": self.training_log,
                "validation_log": self.validation_log,
                "best_epoch": self.best_epoch,
                "parameters": list(self.parameters),
            },
            sort_keys=True,
        ).encode("utf-8")
        payload = io.BytesIO()
        np.savez(payload, **self.parameters)
        return BLOB_MAGIC + struct.pack(">I", len(header)) + header + payload.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TrainedModel":
        """
        Restore a model written by to_bytes.

        Raises:
            ValueError: If the blob does not start with the expected magic bytes
        """
        if not blob.startswith(BLOB_MAGIC):
            raise ValueError("Not a fitted-model blob (bad magic bytes)")
        offset = len(BLOB_MAGIC)
        (length,) = struct.unpack(">I", blob[offset : offset + 4])
        offset += 4
        header = json.loads(blob[offset : offset + length].decode("utf-8"))
        offset += length
        with np.load(io.BytesIO(blob[offset:]), allow_pickle=False) as archive:
            parameters = {name: archive[name].copy() for name in header["parameters"]}
        return cls(
            spec=LearnerSpec.model_validate(header["spec"]),
            parameters=parameters,
            feature_dim=header["feature_dim"],
            training_log=header["training_log"],
            validation_log=header["validation_log"],
            best_epoch=header.get("best_epoch"),
        )
