"""Synthetic timeseries, window forecasters, and private forecast emission.

Ground truth is an integrated MA(1) walk scaled per channel into the unit
range (so forecast sensitivities are 1).  Each source fits a ridge
least-squares map from the last `window` steps to the next `horizon`
steps, reports its prediction-error covariance, and releases forecasts
perturbed by its Laplace mechanism.

A series is an array of shape (length, channels); stacked horizon vectors
follow the time-major convention of lqr.py.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError
from .privacy import PrivacyProfile, dp_noise_for_source

DEFAULT_RIDGE = 1e-6

PSD_ATOL = 1e-12


@dataclass(frozen=True)
class ArimaParams:
    """Integrated MA(1) generator: x_t = x_{t-1} + e_t + theta*e_{t-1}."""

    theta: float
    noise_std: float
    length: int

    def __post_init__(self) -> None:
        if not self.noise_std > 0:
            raise InvalidInputError(f"noise_std must be > 0, got {self.noise_std}")
        if self.length < 3:
            raise InvalidInputError(f"length must be >= 3, got {self.length}")


def generate_arima_raw(rng: np.random.Generator, params: ArimaParams, channels: int = 1) -> np.ndarray:
    """Unscaled series, one independent integrated-MA(1) walk per channel."""
    if channels < 1:
        raise InvalidInputError(f"channels must be >= 1, got {channels}")
    e = rng.normal(0.0, params.noise_std, size=(params.length, channels))
    increments = e[1:] + params.theta * e[:-1]
    series = np.zeros((params.length, channels))
    series[1:] = np.cumsum(increments, axis=0)
    return series


def scale_unit(series: np.ndarray) -> np.ndarray:
    """Affinely map each channel into [0, 1]; degenerate channels go to 0.5."""
    series = np.asarray(series, dtype=float)
    lo = series.min(axis=0)
    span = series.max(axis=0) - lo
    safe = np.where(span > 1e-12, span, 1.0)
    scaled = (series - lo) / safe
    return np.where(span > 1e-12, scaled, 0.5)


def generate_arima(rng: np.random.Generator, params: ArimaParams, channels: int = 1) -> np.ndarray:
    """Synthetic ground truth: integrated MA(1) walks scaled into the unit range."""
    return scale_unit(generate_arima_raw(rng, params, channels))


def _as_series(series) -> np.ndarray:
    arr = np.asarray(series, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInputError(f"series must be 1-d or 2-d, got shape {arr.shape}")
    return arr


def _window_pairs(series: np.ndarray, window: int, horizon: int):
    """Supervised pairs: flattened w-step histories -> flattened next-T futures."""
    length, channels = series.shape
    count = length - window - horizon + 1
    if count < 1:
        raise InvalidInputError(
            f"series of length {length} too short for window {window} + horizon {horizon}"
        )
    views = sliding_window_view(series, window_shape=window, axis=0)  # (length-w+1, p, w)
    flat = views.transpose(0, 2, 1).reshape(-1, window * channels)
    hist = flat[:count]
    futs = sliding_window_view(series, window_shape=horizon, axis=0)
    future = futs.transpose(0, 2, 1).reshape(-1, horizon * channels)[window:window + count]
    return hist, future


@dataclass(frozen=True)
class Forecaster:
    """Linear direct multi-horizon forecaster.

    Maps the flattened last `window` steps to the flattened next `horizon`
    steps: prediction = weights @ history + intercept.
    """

    window: int
    horizon: int
    channels: int
    weights: np.ndarray | None = None
    intercept: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.weights is not None and self.intercept is not None

    def predict(self, history) -> np.ndarray:
        """Forecast the next `horizon` steps from a history of >= `window` steps."""
        if not self.fitted:
            raise InvalidInputError("forecaster must be fitted before predict")
        hist = _as_series(history)
        if hist.shape[0] < self.window:
            raise InvalidInputError(
                f"history has {hist.shape[0]} steps, window needs {self.window}"
            )
        if hist.shape[1] != self.channels:
            raise InvalidInputError(
                f"history has {hist.shape[1]} channels, expected {self.channels}"
            )
        x = hist[-self.window:].reshape(-1)
        return self.weights @ x + self.intercept


def fit_linear_forecaster(train, window: int, horizon: int, ridge: float = DEFAULT_RIDGE) -> Forecaster:
    """Ridge least squares from sliding histories to futures, intercept unpenalized.

    Centering the design makes the in-sample residual mean exactly zero per
    output, matching the zero-mean error model downstream.
    """
    series = _as_series(train)
    channels = series.shape[1]
    if window < 1 or horizon < 1:
        raise InvalidInputError("window and horizon must be >= 1")
    hist, future = _window_pairs(series, window, horizon)
    needed = channels * (window + horizon)
    if hist.shape[0] < needed:
        raise InvalidInputError(
            f"need at least {needed} supervised pairs, got {hist.shape[0]}"
        )
    x_mean = hist.mean(axis=0)
    y_mean = future.mean(axis=0)
    xc = hist - x_mean
    yc = future - y_mean
    gram = xc.T @ xc + ridge * np.eye(xc.shape[1])
    coef = np.linalg.solve(gram, xc.T @ yc)  # (p*w, p*T)
    intercept = y_mean - x_mean @ coef
    return Forecaster(
        window=window, horizon=horizon, channels=channels,
        weights=coef.T, intercept=intercept,
    )


def forecaster_residuals(f: Forecaster, series) -> np.ndarray:
    """Stacked prediction-error vectors of `f` over a series, one row per origin."""
    arr = _as_series(series)
    if not f.fitted:
        raise InvalidInputError("forecaster must be fitted")
    hist, future = _window_pairs(arr, f.window, f.horizon)
    return hist @ f.weights.T + f.intercept - future


def estimate_error_covariance(f: Forecaster, holdout, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Second moment of the forecaster's stacked residuals, floored by ridge*I.

    Residuals are treated as zero-mean (the forecaster's intercept removes
    any in-sample bias), so the uncentered moment is the quantity that
    weights the regret.
    """
    resid = forecaster_residuals(f, holdout)
    dim = f.channels * f.horizon
    if resid.shape[0] < dim + 1:
        raise InvalidInputError(
            f"need at least {dim + 1} residual vectors, got {resid.shape[0]}"
        )
    sigma = resid.T @ resid / resid.shape[0]
    sigma = 0.5 * (sigma + sigma.T)
    return sigma + ridge * np.eye(dim)


@dataclass(frozen=True)
class SourceProfile:
    """One forecast source: privacy parameters, fitted model, reported covariance."""

    privacy: PrivacyProfile
    forecaster: Forecaster
    sigma: np.ndarray

    def __post_init__(self) -> None:
        sigma = np.asarray(self.sigma, dtype=float)
        dim = self.forecaster.channels * self.forecaster.horizon
        if sigma.shape != (dim, dim):
            raise InvalidInputError(f"sigma must be {dim}x{dim}, got {sigma.shape}")
        scale = max(np.abs(sigma).max(), 1.0)
        if np.abs(sigma - sigma.T).max() > 1e-9 * scale:
            raise InvalidInputError("sigma must be symmetric")
        if np.linalg.eigvalsh(sigma).min() < -PSD_ATOL * scale:
            raise InvalidInputError("sigma must be positive semidefinite")
        object.__setattr__(self, "sigma", 0.5 * (sigma + sigma.T))


def emit_private_forecast(rng: np.random.Generator, src: SourceProfile, history, truth, rho: float) -> np.ndarray:
    """Forecast the horizon from `history` and add the source's mechanism noise.

    The output decomposes as truth + prediction error + mechanism noise;
    `truth` fixes the decomposition but never enters the released value.
    """
    prediction = src.forecaster.predict(history)
    dim = src.forecaster.channels * src.forecaster.horizon
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if truth.size != dim:
        raise InvalidInputError(f"truth must have length {dim}, got {truth.size}")
    return prediction + dp_noise_for_source(rng, src.privacy, rho, dim)
