"""Ensemble of stacked LSTM regressors trained by backpropagation through time."""

__all__ = [
    "LstmConfig",
    "LstmLayer",
    "LstmParameters",
    "LstmEnsemble",
    "Samples",
    "build_samples",
    "standardization",
    "init_parameters",
    "lstm_forward",
    "loss_and_gradient",
    "train",
    "predict",
]


import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from beet.core.utils import FileSystemPath, JsonDict, dump_json
from pydantic.v1 import BaseModel, validator

from .dataset import MixedFrequencyDataset
from .error import DataError, ModelFileError, ShapeError, TrainingError
from .imputation import FillMethod, fill
from .period import Quarter

logger = logging.getLogger("lstm")


GATES = 4
CLIP_NORM = 100.0
ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8


class LstmConfig(BaseModel):
    """Architecture and training hyperparameters shared by every member."""

    n_timesteps: int = 12
    hidden_size: int = 20
    n_layers: int = 1
    n_networks: int = 10
    learning_rate: float = 1e-2
    n_epochs: int = 200
    batch_size: Optional[int] = None
    seed: int = 0
    fill_method: FillMethod = FillMethod()

    class Config:
        extra = "forbid"
        frozen = True

    @validator("fill_method", pre=True)
    def fill_method_string(cls, value: Any):
        return FillMethod.parse(value)

    @validator("n_timesteps")
    def n_timesteps_quarter(cls, value: int):
        if value < 3:
            raise ValueError("Windows must span at least one quarter (3 timesteps).")
        return value

    @validator("hidden_size", "n_layers", "n_networks", "n_epochs", "batch_size")
    def positive_count(cls, value: Optional[int]):
        if value is not None and value < 1:
            raise ValueError("Must be a positive integer.")
        return value

    @validator("learning_rate")
    def positive_rate(cls, value: float):
        if not value > 0:
            raise ValueError("Learning rate must be positive.")
        return value

    def to_json(self) -> JsonDict:
        data = self.dict()
        data["fill_method"] = str(self.fill_method)
        return data


@dataclass(frozen=True, eq=False)
class LstmLayer:
    """Stacked gate weights of one layer, in input/forget/cell/output order."""

    w_input: np.ndarray
    w_hidden: np.ndarray
    bias: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_input.shape[1]


@dataclass(frozen=True, eq=False)
class LstmParameters:
    """Weights of one network together with its frozen input standardization."""

    layers: Tuple[LstmLayer, ...]
    readout_weight: np.ndarray
    readout_bias: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def __post_init__(self):
        hidden = self.hidden_size
        size = self.n_features

        for index, layer in enumerate(self.layers):
            shapes = (layer.w_input.shape, layer.w_hidden.shape, layer.bias.shape)
            rows = GATES * hidden
            expected = ((rows, size), (rows, hidden), (rows,))
            if shapes != expected:
                raise ShapeError(
                    f"Layer {index} has shapes {shapes}, expected {expected}."
                )
            size = hidden

        if self.readout_weight.shape != (hidden,):
            raise ShapeError(f"Readout weight must have shape ({hidden},).")
        if self.feature_scale.shape != self.feature_mean.shape:
            raise ShapeError("Standardization vectors must have the same shape.")
        if not (self.feature_scale > 0).all():
            raise ShapeError("Standardization deviations must be positive.")

    @property
    def hidden_size(self) -> int:
        return self.layers[0].hidden_size

    @property
    def n_features(self) -> int:
        return self.feature_mean.shape[0]

    def arrays(self) -> Dict[str, np.ndarray]:
        """Return the trainable arrays keyed by name."""
        arrays: Dict[str, np.ndarray] = {}
        for index, layer in enumerate(self.layers):
            arrays[f"layers.{index}.w_input"] = layer.w_input
            arrays[f"layers.{index}.w_hidden"] = layer.w_hidden
            arrays[f"layers.{index}.bias"] = layer.bias
        arrays["readout_weight"] = self.readout_weight
        arrays["readout_bias"] = np.array([self.readout_bias])
        return arrays

    def with_arrays(self, arrays: Dict[str, np.ndarray]) -> "LstmParameters":
        """Return a copy holding the given trainable arrays."""
        return replace(
            self,
            layers=tuple(
                LstmLayer(
                    arrays[f"layers.{index}.w_input"].copy(),
                    arrays[f"layers.{index}.w_hidden"].copy(),
                    arrays[f"layers.{index}.bias"].copy(),
                )
                for index in range(len(self.layers))
            ),
            readout_weight=arrays["readout_weight"].copy(),
            readout_bias=float(arrays["readout_bias"][0]),
        )

    def standardize(self, inputs: np.ndarray) -> np.ndarray:
        return (inputs - self.feature_mean) / self.feature_scale

    def to_json(self) -> JsonDict:
        return {
            "layers": [
                {
                    "w_input": layer.w_input.tolist(),
                    "w_hidden": layer.w_hidden.tolist(),
                    "bias": layer.bias.tolist(),
                }
                for layer in self.layers
            ],
            "readout_weight": self.readout_weight.tolist(),
            "readout_bias": self.readout_bias,
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
        }

    @classmethod
    def from_json(cls, data: JsonDict) -> "LstmParameters":
        return cls(
            layers=tuple(
                LstmLayer(
                    np.array(layer["w_input"], dtype=float),
                    np.array(layer["w_hidden"], dtype=float),
                    np.array(layer["bias"], dtype=float),
                )
                for layer in data["layers"]
            ),
            readout_weight=np.array(data["readout_weight"], dtype=float),
            readout_bias=float(data["readout_bias"]),
            feature_mean=np.array(data["feature_mean"], dtype=float),
            feature_scale=np.array(data["feature_scale"], dtype=float),
        )


class Samples(NamedTuple):
    """Supervised windows paired with their quarterly targets."""

    inputs: np.ndarray
    targets: np.ndarray
    periods: List[Quarter]


def build_samples(ds: MixedFrequencyDataset, n_timesteps: int) -> Samples:
    """Cut one feature window per observed target value with enough history."""
    features = ds.values[:, ds.feature_indices]
    if np.isnan(features).any():
        raise DataError("Feature columns must be filled before building samples.")

    target = ds.values[:, ds.target_index]
    rows = [
        int(row)
        for row in np.flatnonzero(~np.isnan(target))
        if row - n_timesteps + 1 >= 0
    ]

    if not rows:
        raise DataError(
            f"No observed target value has {n_timesteps} rows of history.",
            ds.target,
        )

    return Samples(
        inputs=np.stack([features[row - n_timesteps + 1 : row + 1] for row in rows]),
        targets=target[rows].copy(),
        periods=[ds.start.shift(row).quarter for row in rows],
    )


def standardization(inputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return per-feature mean and deviation over every window row."""
    flat = inputs.reshape(-1, inputs.shape[-1])
    mean = flat.mean(axis=0)
    scale = flat.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def init_parameters(
    config: LstmConfig,
    n_features: int,
    rng: np.random.Generator,
    feature_mean: Optional[np.ndarray] = None,
    feature_scale: Optional[np.ndarray] = None,
) -> LstmParameters:
    """Draw every weight uniformly in (-k, k) with k = 1/sqrt(hidden_size)."""
    hidden = config.hidden_size
    bound = 1 / np.sqrt(hidden)

    def uniform(*shape: int) -> np.ndarray:
        return rng.uniform(-bound, bound, size=shape)

    layers: List[LstmLayer] = []
    size = n_features
    for _ in range(config.n_layers):
        layers.append(
            LstmLayer(
                uniform(GATES * hidden, size),
                uniform(GATES * hidden, hidden),
                uniform(GATES * hidden),
            )
        )
        size = hidden

    return LstmParameters(
        layers=tuple(layers),
        readout_weight=uniform(hidden),
        readout_bias=float(uniform(1)[0]),
        feature_mean=np.zeros(n_features) if feature_mean is None else feature_mean,
        feature_scale=np.ones(n_features) if feature_scale is None else feature_scale,
    )


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1 + np.tanh(0.5 * x))


class StepCache(NamedTuple):
    inputs: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray


def forward_batch(
    params: LstmParameters,
    inputs: np.ndarray,
) -> Tuple[np.ndarray, List[List[StepCache]], np.ndarray]:
    """Run standardized windows [batch, timesteps, features] through the network."""
    if inputs.ndim != 3 or inputs.shape[2] != params.n_features:
        raise ShapeError(
            f"Expected windows with {params.n_features} features, got shape {inputs.shape}."
        )

    sequence = params.standardize(inputs)
    batch, timesteps, _ = sequence.shape
    hidden = params.hidden_size
    caches: List[List[StepCache]] = []

    for layer in params.layers:
        h = np.zeros((batch, hidden))
        c = np.zeros((batch, hidden))
        outputs = np.empty((batch, timesteps, hidden))
        steps: List[StepCache] = []

        for t in range(timesteps):
            x = sequence[:, t]
            z = x @ layer.w_input.T + h @ layer.w_hidden.T + layer.bias
            i = sigmoid(z[:, :hidden])
            f = sigmoid(z[:, hidden : 2 * hidden])
            g = np.tanh(z[:, 2 * hidden : 3 * hidden])
            o = sigmoid(z[:, 3 * hidden :])
            c_next = f * c + i * g
            tanh_c = np.tanh(c_next)
            steps.append(StepCache(x, h, c, i, f, g, o, tanh_c))
            h, c = o * tanh_c, c_next
            outputs[:, t] = h

        caches.append(steps)
        sequence = outputs

    last = sequence[:, -1]
    return last @ params.readout_weight + params.readout_bias, caches, last


def backward_batch(
    params: LstmParameters,
    caches: List[List[StepCache]],
    last: np.ndarray,
    d_output: np.ndarray,
) -> Dict[str, np.ndarray]:
    """Backpropagate output gradients through time and layers."""
    grads: Dict[str, np.ndarray] = {
        "readout_weight": last.T @ d_output,
        "readout_bias": np.array([d_output.sum()]),
    }

    batch, hidden = last.shape
    timesteps = len(caches[0])
    d_sequence = np.zeros((batch, timesteps, hidden))
    d_sequence[:, -1] = np.outer(d_output, params.readout_weight)

    for index in reversed(range(len(params.layers))):
        layer = params.layers[index]
        steps = caches[index]
        d_w_input = np.zeros_like(layer.w_input)
        d_w_hidden = np.zeros_like(layer.w_hidden)
        d_bias = np.zeros_like(layer.bias)
        d_inputs = np.zeros((batch, timesteps, layer.input_size))
        dh_next = np.zeros((batch, hidden))
        dc_next = np.zeros((batch, hidden))

        for t in reversed(range(timesteps)):
            step = steps[t]
            dh = d_sequence[:, t] + dh_next
            do = dh * step.tanh_c
            dc = dc_next + dh * step.o * (1 - step.tanh_c**2)
            dz = np.concatenate(
                [
                    dc * step.g * step.i * (1 - step.i),
                    dc * step.c_prev * step.f * (1 - step.f),
                    dc * step.i * (1 - step.g**2),
                    do * step.o * (1 - step.o),
                ],
                axis=1,
            )
            d_w_input += dz.T @ step.inputs
            d_w_hidden += dz.T @ step.h_prev
            d_bias += dz.sum(axis=0)
            d_inputs[:, t] = dz @ layer.w_input
            dh_next = dz @ layer.w_hidden
            dc_next = dc * step.f

        grads[f"layers.{index}.w_input"] = d_w_input
        grads[f"layers.{index}.w_hidden"] = d_w_hidden
        grads[f"layers.{index}.bias"] = d_bias
        d_sequence = d_inputs

    return grads


def lstm_forward(params: LstmParameters, window: np.ndarray) -> float:
    """Return the prediction of one network for a [timesteps, features] window."""
    window = np.asarray(window, dtype=float)
    if window.ndim != 2:
        raise ShapeError(f"Expected a 2-dimensional window, got shape {window.shape}.")
    output, _, _ = forward_batch(params, window[np.newaxis])
    return float(output[0])


def loss_and_gradient(
    params: LstmParameters,
    inputs: np.ndarray,
    targets: np.ndarray,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Return the mean squared error and its gradient for every trainable array."""
    output, caches, last = forward_batch(params, inputs)
    error = output - targets
    loss = float(np.mean(error**2))
    grads = backward_batch(params, caches, last, 2 * error / len(targets))
    return loss, grads


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float = CLIP_NORM):
    norm = np.sqrt(sum(float(np.sum(g**2)) for g in grads.values()))
    if norm > max_norm:
        for name in grads:
            grads[name] = grads[name] * (max_norm / norm)


def train_member(
    config: LstmConfig,
    samples: Samples,
    member: int,
    feature_mean: np.ndarray,
    feature_scale: np.ndarray,
) -> Tuple[LstmParameters, List[float]]:
    """Train one network with Adam on the full set of samples."""
    rng = np.random.default_rng(config.seed + member)
    n_samples = len(samples.targets)
    params = init_parameters(
        config, samples.inputs.shape[2], rng, feature_mean, feature_scale
    )

    weights = {name: array.copy() for name, array in params.arrays().items()}
    first_moment = {name: np.zeros_like(array) for name, array in weights.items()}
    second_moment = {name: np.zeros_like(array) for name, array in weights.items()}
    batch_size = min(config.batch_size or n_samples, n_samples)
    beta1, beta2 = ADAM_BETAS
    history: List[float] = []
    step = 0

    for epoch in range(config.n_epochs):
        shuffle = batch_size < n_samples
        order = rng.permutation(n_samples) if shuffle else np.arange(n_samples)
        epoch_loss = 0.0

        for begin in range(0, n_samples, batch_size):
            batch = order[begin : begin + batch_size]
            params = params.with_arrays(weights)
            loss, grads = loss_and_gradient(
                params, samples.inputs[batch], samples.targets[batch]
            )
            if not np.isfinite(loss):
                raise TrainingError(epoch, member, loss)
            clip_gradients(grads)

            step += 1
            for name, grad in grads.items():
                first_moment[name] = beta1 * first_moment[name] + (1 - beta1) * grad
                second_moment[name] = (
                    beta2 * second_moment[name] + (1 - beta2) * grad**2
                )
                m_hat = first_moment[name] / (1 - beta1**step)
                v_hat = second_moment[name] / (1 - beta2**step)
                weights[name] = weights[name] - config.learning_rate * m_hat / (
                    np.sqrt(v_hat) + ADAM_EPSILON
                )

            epoch_loss += loss * len(batch) / n_samples

        history.append(epoch_loss)
        logger.debug("Member %d epoch %d loss %.6g.", member, epoch, epoch_loss)

    return params.with_arrays(weights), history


@dataclass(frozen=True, eq=False)
class LstmEnsemble:
    """Identically configured networks whose outputs are averaged."""

    config: LstmConfig
    members: Tuple[LstmParameters, ...]
    feature_columns: Tuple[str, ...]
    training_window: Tuple[Quarter, Quarter]
    target_mean: float = 0.0
    loss_history: Tuple[Tuple[float, ...], ...] = ()

    def __post_init__(self):
        if len(self.members) != self.config.n_networks:
            raise ShapeError(
                f"Ensemble holds {len(self.members)} members "
                f"but the config asks for {self.config.n_networks}."
            )
        shapes = {
            tuple(array.shape for array in member.arrays().values())
            for member in self.members
        }
        if len(shapes) > 1:
            raise ShapeError("Ensemble members must share the same architecture.")

    def window(self, ds: MixedFrequencyDataset, target_period: Quarter) -> np.ndarray:
        """Return the filled feature window ending at the target's quarter-end month."""
        if ds.feature_columns != self.feature_columns:
            raise ShapeError(
                f"Snapshot features {list(ds.feature_columns)} don't match "
                f"the trained features {list(self.feature_columns)}."
            )

        end = Quarter.parse(target_period).end
        filled = fill(ds.extend_to(end), self.config.fill_method)
        row = filled.row_of(end)
        first = row - self.config.n_timesteps + 1

        if first < 0:
            raise DataError(
                f"Window for {target_period} extends before the grid start {ds.start}."
            )

        return filled.values[first : row + 1][:, filled.feature_indices]

    def member_predictions(
        self,
        ds: MixedFrequencyDataset,
        target_period: Quarter,
    ) -> np.ndarray:
        window = self.window(ds, target_period)
        return np.array([lstm_forward(member, window) for member in self.members])

    def predict(self, ds: MixedFrequencyDataset, target_period: Quarter) -> float:
        """Return the averaged nowcast of every member."""
        return float(np.mean(self.member_predictions(ds, target_period)))

    def to_json(self) -> JsonDict:
        return {
            "config": self.config.to_json(),
            "feature_columns": list(self.feature_columns),
            "training_window": [str(quarter) for quarter in self.training_window],
            "target_mean": self.target_mean,
            "members": [member.to_json() for member in self.members],
            "loss_history": [list(history) for history in self.loss_history],
        }

    @classmethod
    def from_json(cls, data: JsonDict) -> "LstmEnsemble":
        first, last = data["training_window"]
        return cls(
            config=LstmConfig(**data["config"]),
            members=tuple(LstmParameters.from_json(m) for m in data["members"]),
            feature_columns=tuple(data["feature_columns"]),
            training_window=(Quarter.parse(first), Quarter.parse(last)),
            target_mean=float(data["target_mean"]),
            loss_history=tuple(tuple(h) for h in data.get("loss_history", [])),
        )

    def save(self, path: FileSystemPath, meta: Optional[JsonDict] = None):
        Path(path).write_text(dump_json({"meta": meta or {}, **self.to_json()}))

    @classmethod
    def load(cls, path: FileSystemPath) -> "LstmEnsemble":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ModelFileError(
                f"Couldn't load ensemble from {str(path)!r}: {exc}"
            ) from exc


def train(config: LstmConfig, ds: MixedFrequencyDataset) -> LstmEnsemble:
    """Train every member of the ensemble on the windows of the dataset."""
    filled = fill(ds, config.fill_method)
    samples = build_samples(filled, config.n_timesteps)
    feature_mean, feature_scale = standardization(samples.inputs)

    members: List[LstmParameters] = []
    histories: List[Tuple[float, ...]] = []

    for member in range(config.n_networks):
        params, history = train_member(
            config, samples, member, feature_mean, feature_scale
        )
        members.append(params)
        histories.append(tuple(history))
        logger.info(
            "Trained member %d/%d, final loss %.6g.",
            member + 1,
            config.n_networks,
            history[-1] if history else float("nan"),
        )

    return LstmEnsemble(
        config=config,
        members=tuple(members),
        feature_columns=ds.feature_columns,
        training_window=(samples.periods[0], samples.periods[-1]),
        target_mean=float(samples.targets.mean()),
        loss_history=tuple(histories),
    )


def predict(
    ens: LstmEnsemble,
    ds: MixedFrequencyDataset,
    target_period: Quarter,
) -> float:
    """Nowcast the target quarter from a vintage snapshot."""
    return ens.predict(ds, target_period)

