"""Parameter-to-data maps and the batch evaluator with its fidelity policy."""
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import BatchError, DimensionError


class Fidelity(enum.Enum):
    HIGH = "high"
    REDUCED = "reduced"


class EvaluationPolicy(enum.Enum):
    ALL_HIGH = "all-high"
    MEAN_HIGH_OTHERS_REDUCED = "mean-high-others-reduced"

    def fidelity(self, index):
        if self is EvaluationPolicy.ALL_HIGH or index == 0:
            return Fidelity.HIGH
        return Fidelity.REDUCED


@runtime_checkable
class ForwardModel(Protocol):
    """Behavioral contract for a forward map.

    ``evaluate`` must be deterministic in ``(theta, fidelity)``. Models without
    a reduced variant treat ``Fidelity.REDUCED`` as ``Fidelity.HIGH``. A model
    that cannot be called from several threads sets ``thread_safe = False``.
    Models may also provide ``evaluate_many(points, fidelity)`` returning a
    2-D array; it must agree with per-point ``evaluate`` calls.
    """

    parameter_dim: int
    observation_dim: int

    def evaluate(self, theta, fidelity=Fidelity.HIGH): ...


class FunctionModel:
    """Adapter turning plain callables into a :class:`ForwardModel`."""

    def __init__(self, high, parameter_dim, observation_dim, reduced=None, thread_safe=True):
        self._high = high
        self._reduced = reduced
        self.parameter_dim = parameter_dim
        self.observation_dim = observation_dim
        self.thread_safe = thread_safe

    def evaluate(self, theta, fidelity=Fidelity.HIGH):
        fn = self._reduced if fidelity is Fidelity.REDUCED and self._reduced is not None else self._high
        return np.asarray(fn(np.asarray(theta, dtype=float)), dtype=float)


@dataclass(frozen=True)
class BatchResult:
    outputs: np.ndarray  # (k, N_y), row j aligned with input point j
    high_count: int
    reduced_count: int


def _checked(out, model, index):
    out = np.asarray(out, dtype=float).reshape(-1)
    if out.shape[0] != model.observation_dim:
        raise BatchError(index, DimensionError(
            f"model returned {out.shape[0]} values, expected {model.observation_dim}"))
    return out


def evaluate_batch(model, points, policy=EvaluationPolicy.ALL_HIGH, max_workers=None):
    """Evaluate ``model`` at every row of ``points`` under ``policy``.

    With ``max_workers > 1`` and a thread-safe model the evaluations are fanned
    out to a thread pool; results are always reassembled in input order. Any
    failure aborts the batch with a :class:`BatchError` naming the point index.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k = points.shape[0]
    if points.shape[1] != model.parameter_dim:
        raise DimensionError(f"points have dimension {points.shape[1]}, model expects {model.parameter_dim}")
    fidelities = [policy.fidelity(j) for j in range(k)]
    outputs = np.empty((k, model.observation_dim))

    def one(j):
        try:
            out = model.evaluate(points[j], fidelities[j])
        except BatchError:
            raise
        except Exception as exc:
            raise BatchError(j, exc) from exc
        outputs[j] = _checked(out, model, j)

    many = getattr(model, "evaluate_many", None)
    parallel = max_workers is not None and max_workers > 1 and getattr(model, "thread_safe", True)
    if many is not None and not parallel:
        for fid in Fidelity:
            idx = [j for j in range(k) if fidelities[j] is fid]
            if not idx:
                continue
            try:
                block = np.asarray(many(points[idx], fid), dtype=float)
            except Exception as exc:
                # locate the failing point; blame the block if no single point fails
                for j in idx:
                    one(j)
                raise BatchError(idx[0], exc) from exc
            if block.shape != (len(idx), model.observation_dim):
                raise BatchError(idx[0], DimensionError(f"evaluate_many returned shape {block.shape}"))
            outputs[idx] = block
    elif parallel:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(one, j) for j in range(k)]
            for fut in futures:
                fut.result()
    else:
        for j in range(k):
            one(j)
    high = sum(f is Fidelity.HIGH for f in fidelities)
    return BatchResult(outputs, high, k - high)
