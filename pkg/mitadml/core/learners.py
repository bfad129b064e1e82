"""
Nuisance learners behind one fit/predict contract.

Linear ridge and logistic regression are solved in closed form or by Newton
iterations; the multilayer perceptron is a small numpy network trained with
mini-batch Adam and early stopping.
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import expit

from mitadml.core.exceptions import (
    ConstantTreatment,
    DimensionMismatch,
    NonFiniteLoss,
    SeparationDetected,
    SingularDesign,
)
from mitadml.models.learner import Activation, LearnerKind, LearnerSpec, TrainedModel

logger = logging.getLogger("mitadml")

PROB_FLOOR = 1e-15
LOSS_CLIP = 1e-7
SEPARATION_BOUND = 30.0
NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 100
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
GRAD_CHECK_STEP = 1e-5
RELU_MARGIN = 1e-3


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return x


def _scale(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0) if len(x) else np.zeros(x.shape[1])
    scale = x.std(axis=0) if len(x) else np.ones(x.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def _require_both_classes(d: np.ndarray) -> None:
    if np.unique(d).size < 2:
        raise ConstantTreatment(details={"n": int(len(d))})


def fit_linear(x, y, lam: float = 0.0, spec: Optional[LearnerSpec] = None) -> TrainedModel:
    """
    Ridge regression with an unpenalized intercept.

    Minimizes ||y - x b - b0||^2 + lam ||b||^2 through a Cholesky solve of
    the centered normal equations.

    Args:
        x: Feature matrix (n, p)
        y: Target vector (n,)
        lam: Penalty on the slopes
        spec: Learner spec to record on the model

    Returns:
        Trained model with parameters "coef" and "intercept"

    Raises:
        SingularDesign: If lam is 0 and the centered features are rank-deficient
    """
    x = _as_matrix(x)
    y = np.asarray(y, dtype=np.float64)
    spec = spec or LearnerSpec(kind=LearnerKind.LINEAR_RIDGE, ridge_lambda=lam)
    n, p = x.shape
    if lam < 0:
        raise ValueError(f"lam must be non-negative, got {lam}")

    y_mean = float(y.mean())
    if p == 0:
        coef = np.zeros(0)
    else:
        x_mean = x.mean(axis=0)
        xc = x - x_mean
        if lam == 0 and np.linalg.matrix_rank(xc) < p:
            raise SingularDesign(
                "Feature matrix is rank-deficient", {"rows": n, "columns": p}
            )
        gram = xc.T @ xc + lam * np.eye(p)
        try:
            factor = linalg.cho_factor(gram)
        except linalg.LinAlgError:
            raise SingularDesign("Normal equations are not positive definite", {"columns": p})
        coef = linalg.cho_solve(factor, xc.T @ (y - y_mean))
        y_mean = y_mean - float(x_mean @ coef)

    return TrainedModel(
        spec=spec,
        parameters={"coef": coef, "intercept": np.array([y_mean])},
        feature_dim=p,
        training_log=[float(np.mean((y - x @ coef - y_mean) ** 2))],
    )


def _log_likelihood(eta: np.ndarray, d: np.ndarray) -> float:
    # log p = -log(1 + e^-eta), log(1-p) = -log(1 + e^eta)
    return float(-np.sum(d * np.logaddexp(0.0, -eta) + (1 - d) * np.logaddexp(0.0, eta)))


def _separated(eta: np.ndarray, d: np.ndarray) -> bool:
    return bool(eta[d == 1].min() > eta[d == 0].max())


def fit_logistic(x, d, lam: float = 0.0, spec: Optional[LearnerSpec] = None) -> TrainedModel:
    """
    Penalized logistic regression by damped Newton iterations.

    The objective is the Bernoulli log-likelihood minus lam/2 ||b||^2 with
    the intercept unpenalized. Iterations run on standardized features with
    the penalty rescaled so the optimum is that of the raw problem.

    Args:
        x: Feature matrix (n, p)
        d: Binary labels (n,)
        lam: Penalty on the slopes
        spec: Learner spec to record on the model

    Returns:
        Trained model with parameters "coef" and "intercept"

    Raises:
        ConstantTreatment: If d has a single class
        SeparationDetected: If the unpenalized fit diverges under separation
    """
    x = _as_matrix(x)
    d = np.asarray(d, dtype=np.float64)
    spec = spec or LearnerSpec(kind=LearnerKind.LOGISTIC, ridge_lambda=lam)
    _require_both_classes(d)
    n, p = x.shape

    x_mean, x_scale = _scale(x) if p else (np.zeros(0), np.ones(0))
    z = np.column_stack([np.ones(n), (x - x_mean) / x_scale])
    penalty = np.diag(np.concatenate([[0.0], lam / x_scale**2]))

    share = d.mean()
    w = np.zeros(p + 1)
    w[0] = np.log(share / (1 - share))

    def objective(w: np.ndarray) -> float:
        return _log_likelihood(z @ w, d) - 0.5 * float(w @ penalty @ w)

    current = objective(w)
    converged = False
    log: List[float] = []
    for iteration in range(NEWTON_MAX_ITER):
        prob = expit(z @ w)
        grad = z.T @ (d - prob) - penalty @ w
        if np.max(np.abs(grad)) < NEWTON_TOL:
            converged = True
            break
        hessian = (z * (prob * (1 - prob))[:, None]).T @ z + penalty
        try:
            step = linalg.solve(hessian, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            if lam == 0 and _separated(z @ w, d):
                raise SeparationDetected(
                    "Classes are perfectly separated", {"iteration": iteration}
                )
            raise SingularDesign("Logistic Hessian is singular", {"iteration": iteration})

        t = 1.0
        while t > 1e-10:
            candidate = objective(w + t * step)
            if candidate >= current:
                break
            t *= 0.5
        else:
            converged = True
            break
        w = w + t * step
        current = candidate
        log.append(-current / n)

        if lam == 0 and np.max(np.abs(w)) > SEPARATION_BOUND:
            raise SeparationDetected(
                "Logistic coefficients diverge; classes are perfectly separated",
                {"iteration": iteration, "max_abs_coef": float(np.max(np.abs(w)))},
            )

    if not converged:
        if lam == 0 and _separated(z @ w, d):
            raise SeparationDetected("Classes are perfectly separated")
        logger.warning(f"Logistic fit did not converge in {NEWTON_MAX_ITER} iterations")

    coef = w[1:] / x_scale
    intercept = w[0] - float(x_mean @ coef)
    return TrainedModel(
        spec=spec,
        parameters={"coef": coef, "intercept": np.array([intercept])},
        feature_dim=p,
        training_log=log,
    )


def fit_mean(x, y, spec: Optional[LearnerSpec] = None) -> TrainedModel:
    """Constant learner that predicts the training mean of y."""
    x = _as_matrix(x)
    spec = spec or LearnerSpec(kind=LearnerKind.MEAN)
    y = np.asarray(y, dtype=np.float64)
    return TrainedModel(
        spec=spec,
        parameters={"intercept": np.array([float(y.mean())])},
        feature_dim=x.shape[1],
    )


# Network internals. Parameters are stored as W0, b0, W1, b1, ... with
# W_l of shape (fan_in, fan_out).


def _layer_sizes(spec: LearnerSpec, n_features: int) -> List[int]:
    return [n_features] + list(spec.hidden_layers) + [1]


def _init_network(
    spec: LearnerSpec, n_features: int, rng: np.random.Generator
) -> Dict[str, np.ndarray]:
    params = {}
    sizes = _layer_sizes(spec, n_features)
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in) if fan_in else 1.0
        params[f"W{layer}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{layer}"] = rng.uniform(-bound, bound, size=fan_out)
    return params


def _n_layers(params: Dict[str, np.ndarray]) -> int:
    return sum(1 for name in params if name.startswith("W"))


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return (z > 0).astype(np.float64)
    return 1.0 - np.tanh(z) ** 2


def _forward(
    params: Dict[str, np.ndarray], x: np.ndarray, activation: Activation
) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Return the output pre-activation plus per-layer inputs and pre-activations."""
    inputs, pre = [], []
    a = x
    n_layers = _n_layers(params)
    for layer in range(n_layers):
        inputs.append(a)
        z = a @ params[f"W{layer}"] + params[f"b{layer}"]
        pre.append(z)
        a = _activate(z, activation) if layer < n_layers - 1 else z
    return a[:, 0], inputs, pre


def _data_loss(out: np.ndarray, y: np.ndarray, classifier: bool) -> float:
    if classifier:
        prob = np.clip(expit(out), LOSS_CLIP, 1 - LOSS_CLIP)
        return float(-np.mean(y * np.log(prob) + (1 - y) * np.log(1 - prob)))
    return float(np.mean((out - y) ** 2))


def _penalty(params: Dict[str, np.ndarray], weight: float) -> float:
    if weight == 0:
        return 0.0
    return weight * sum(float(np.sum(w**2)) for name, w in params.items() if name.startswith("W"))


def _backward(
    params: Dict[str, np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    activation: Activation,
    classifier: bool,
    l2_weight: float,
) -> Dict[str, np.ndarray]:
    out, inputs, pre = _forward(params, x, activation)
    m = len(y)
    if classifier:
        prob = expit(out)
        inside = (prob > LOSS_CLIP) & (prob < 1 - LOSS_CLIP)
        delta = ((prob - y) * inside / m)[:, None]
    else:
        delta = (2.0 * (out - y) / m)[:, None]

    grads = {}
    for layer in reversed(range(_n_layers(params))):
        weights = params[f"W{layer}"]
        grads[f"W{layer}"] = inputs[layer].T @ delta + 2.0 * l2_weight * weights
        grads[f"b{layer}"] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights.T) * _activate_grad(pre[layer - 1], activation)
    return grads


def fit_mlp(x, y, spec: LearnerSpec) -> TrainedModel:
    """
    Train a multilayer perceptron with mini-batch Adam and early stopping.

    Features are standardized with the statistics of the rows passed in, and
    so is the target of a regressor. A seeded share of rows is held out and
    training stops once the validation loss has not improved for
    ``early_stop_patience`` epochs; the best checkpoint is returned.

    Args:
        x: Feature matrix (n, p)
        y: Target (regressor) or binary labels (classifier)
        spec: Learner spec of an MLP kind

    Returns:
        Trained model

    Raises:
        ValueError: If spec is not an MLP kind
        ConstantTreatment: If a classifier target has a single class
        NonFiniteLoss: If training diverges
    """
    if not spec.kind.is_mlp:
        raise ValueError(f"fit_mlp needs an MLP learner kind, got {spec.kind.value}")
    x = _as_matrix(x)
    y = np.asarray(y, dtype=np.float64)
    classifier = spec.kind is LearnerKind.MLP_CLASSIFIER
    if classifier:
        _require_both_classes(y)
    n, p = x.shape

    x_mean, x_scale = _scale(x)
    xs = (x - x_mean) / x_scale
    if classifier:
        y_mean, y_scale = 0.0, 1.0
    else:
        y_mean = float(y.mean())
        y_scale = float(y.std()) or 1.0
    ys = (y - y_mean) / y_scale

    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(n)
    n_val = int(round(spec.validation_fraction * n)) if n >= 10 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_train, y_train = xs[train_idx], ys[train_idx]
    x_val, y_val = xs[val_idx], ys[val_idx]
    n_train = len(train_idx)
    l2_weight = spec.ridge_lambda / n_train

    params = _init_network(spec, p, rng)
    moments = {name: (np.zeros_like(v), np.zeros_like(v)) for name, v in params.items()}
    beta1, beta2 = ADAM_BETAS
    step = 0

    training_log: List[float] = []
    validation_log: List[float] = []
    best_loss = np.inf
    best_epoch: Optional[int] = None
    best_params = {name: v.copy() for name, v in params.items()}
    stale = 0

    for epoch in range(spec.max_epochs):
        shuffled = rng.permutation(n_train)
        for start in range(0, n_train, spec.batch_size):
            batch = shuffled[start : start + spec.batch_size]
            grads = _backward(
                params, x_train[batch], y_train[batch], spec.activation, classifier, l2_weight
            )
            step += 1
            for name, g in grads.items():
                m, v = moments[name]
                m *= beta1
                m += (1 - beta1) * g
                v *= beta2
                v += (1 - beta2) * g**2
                m_hat = m / (1 - beta1**step)
                v_hat = v / (1 - beta2**step)
                update = spec.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
                params[name] = params[name] - update

        out, _, _ = _forward(params, x_train, spec.activation)
        train_loss = _data_loss(out, y_train, classifier)
        if not np.isfinite(train_loss):
            raise NonFiniteLoss(epoch)
        training_log.append(train_loss)

        if n_val == 0:
            best_params = {name: v.copy() for name, v in params.items()}
            continue
        out_val, _, _ = _forward(params, x_val, spec.activation)
        val_loss = _data_loss(out_val, y_val, classifier)
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(epoch)
        validation_log.append(val_loss)
        if val_loss < best_loss:
            best_loss = val_loss
            best_epoch = epoch
            best_params = {name: v.copy() for name, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= spec.early_stop_patience:
                logger.debug(f"Early stop at epoch {epoch} (best validation loss {best_loss:.6g})")
                break

    parameters = dict(best_params)
    parameters["x_mean"] = x_mean
    parameters["x_scale"] = x_scale
    parameters["y_affine"] = np.array([y_mean, y_scale])
    return TrainedModel(
        spec=spec,
        parameters=parameters,
        feature_dim=p,
        training_log=training_log,
        validation_log=validation_log,
        best_epoch=best_epoch,
    )


def fit(spec: LearnerSpec, x, y) -> TrainedModel:
    """
    Fit the learner described by spec.

    Args:
        spec: Learner spec
        x: Feature matrix
        y: Target

    Returns:
        Trained model
    """
    if spec.kind is LearnerKind.LINEAR_RIDGE:
        return fit_linear(x, y, spec.ridge_lambda, spec=spec)
    if spec.kind is LearnerKind.LOGISTIC:
        return fit_logistic(x, y, spec.ridge_lambda, spec=spec)
    if spec.kind is LearnerKind.MEAN:
        return fit_mean(x, y, spec=spec)
    return fit_mlp(x, y, spec)


def predict(model: TrainedModel, x) -> np.ndarray:
    """
    Predict with a trained model.

    Args:
        model: Trained model
        x: Feature matrix with model.feature_dim columns

    Returns:
        Predictions; probabilities strictly inside (0, 1) for classifiers

    Raises:
        DimensionMismatch: If the number of columns differs from the fitted one
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[1] != model.feature_dim:
        raise DimensionMismatch(
            "Prediction input has the wrong number of columns",
            {"expected": model.feature_dim, "got": x.shape[1]},
        )
    if x.shape[0] == 0:
        return np.zeros(0)

    kind = model.spec.kind
    params = model.parameters
    if kind is LearnerKind.MEAN:
        return np.full(x.shape[0], float(params["intercept"][0]))
    if kind in (LearnerKind.LINEAR_RIDGE, LearnerKind.LOGISTIC):
        eta = x @ params["coef"] + params["intercept"][0]
        if kind is LearnerKind.LOGISTIC:
            return np.clip(expit(eta), PROB_FLOOR, 1 - PROB_FLOOR)
        return eta

    xs = (x - params["x_mean"]) / params["x_scale"]
    network = {name: v for name, v in params.items() if name[0] in "Wb" and name[1:].isdigit()}
    out, _, _ = _forward(network, xs, model.spec.activation)
    if kind is LearnerKind.MLP_CLASSIFIER:
        return np.clip(expit(out), PROB_FLOOR, 1 - PROB_FLOOR)
    y_mean, y_scale = params["y_affine"]
    return out * y_scale + y_mean


def evaluate_loss(model: TrainedModel, x, y) -> float:
    """Mean squared error for regressors, log-loss for classifiers."""
    y = np.asarray(y, dtype=np.float64)
    pred = predict(model, x)
    if len(y) == 0:
        return float("nan")
    kind = model.spec.kind
    binary = bool(np.isin(y, (0.0, 1.0)).all())
    classifier = kind in (LearnerKind.LOGISTIC, LearnerKind.MLP_CLASSIFIER)
    if classifier or (kind is LearnerKind.MEAN and binary):
        prob = np.clip(pred, LOSS_CLIP, 1 - LOSS_CLIP)
        return float(-np.mean(y * np.log(prob) + (1 - y) * np.log(1 - prob)))
    return float(np.mean((pred - y) ** 2))


def _nudge_relu_kinks(params: Dict[str, np.ndarray], x: np.ndarray) -> None:
    """Shift hidden biases until no pre-activation sits within RELU_MARGIN of 0."""
    n_layers = _n_layers(params)
    for layer in range(n_layers - 1):
        for _ in range(50):
            _, _, pre = _forward(params, x, Activation.RELU)
            close = np.abs(pre[layer]).min(axis=0) < RELU_MARGIN
            if not close.any():
                break
            params[f"b{layer}"] = params[f"b{layer}"] + close * 1.7 * RELU_MARGIN


def grad_check(spec: LearnerSpec, x, y) -> float:
    """
    Compare backpropagated gradients with central finite differences.

    The network is initialized from spec.seed on the raw inputs. For relu
    networks hidden biases are first shifted so no pre-activation lies near
    the kink.

    Args:
        spec: Learner spec of an MLP kind
        x: Small feature matrix
        y: Targets

    Returns:
        Maximum relative error over every parameter entry
    """
    if not spec.kind.is_mlp:
        raise ValueError(f"grad_check needs an MLP learner kind, got {spec.kind.value}")
    x = _as_matrix(x)
    y = np.asarray(y, dtype=np.float64)
    classifier = spec.kind is LearnerKind.MLP_CLASSIFIER
    l2_weight = spec.ridge_lambda / len(y)

    params = _init_network(spec, x.shape[1], np.random.default_rng(spec.seed))
    if spec.activation is Activation.RELU and spec.hidden_layers:
        _nudge_relu_kinks(params, x)

    def loss() -> float:
        out, _, _ = _forward(params, x, spec.activation)
        return _data_loss(out, y, classifier) + _penalty(params, l2_weight)

    analytic = _backward(params, x, y, spec.activation, classifier, l2_weight)
    worst = 0.0
    for name, values in params.items():
        flat = values.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + GRAD_CHECK_STEP
            upper = loss()
            flat[i] = original - GRAD_CHECK_STEP
            lower = loss()
            flat[i] = original
            numeric = (upper - lower) / (2 * GRAD_CHECK_STEP)
            denom = max(abs(grad[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(grad[i] - numeric) / denom)
    logger.debug(f"Gradient check {spec.kind.value} {spec.hidden_layers}: {worst:.3e}")
    return worst
