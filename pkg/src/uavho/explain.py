"""Shapley attributions of one Q-value logit against a background set.

Three estimators share the interventional value function
v(S) = mean_b f(x_S, b_{not S}):

* ``exact_shapley`` enumerates all 2^n coalitions once per instance;
* ``sampled_shapley`` averages marginal contributions over random feature
  orderings (each ordering telescopes, so efficiency holds per sample);
* ``deeplift_rescale`` propagates rescale-rule multipliers backwards through
  the affine/ReLU stack for every background sample and averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import nn
from .errors import InvalidArgument, UnsupportedArchitecture

MAX_EXACT_FEATURES = 20
DEEPLIFT_EPS = 1e-9
_CHUNK_ROWS = 1 << 16


@dataclass(frozen=True)
class BackgroundSet:
    states: np.ndarray  # (B, n) normalized
    provenance: str = "simulated"

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if s.shape[0] < 1:
            raise InvalidArgument("background set needs at least one state")
        if self.provenance not in ("simulated", "ingested"):
            raise InvalidArgument(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "states", s)

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass
class Attribution:
    feature_values: np.ndarray  # raw (denormalized) values, for reporting
    shapley: np.ndarray
    base_value: float
    output_value: float
    action: int
    method: str  # "exact", "permutation(n)" or "deeplift"
    normalized_values: Optional[np.ndarray] = None

    @property
    def efficiency_gap(self) -> float:
        return float(np.sum(self.shapley) - (self.output_value - self.base_value))


def _background(background) -> np.ndarray:
    if isinstance(background, BackgroundSet):
        return background.states
    return BackgroundSet(background).states


def _output(model: nn.Mlp, rows: np.ndarray, action: int) -> np.ndarray:
    out = np.empty(rows.shape[0])
    for lo in range(0, rows.shape[0], _CHUNK_ROWS):
        out[lo:lo + _CHUNK_ROWS] = model(rows[lo:lo + _CHUNK_ROWS])[:, action]
    return out


def _coalition_values(model, x, bg, masks: np.ndarray, action: int) -> np.ndarray:
    """v(S) for each boolean row of ``masks`` (shape (m, n))."""
    m, n = masks.shape
    B = bg.shape[0]
    vals = np.empty(m)
    per = max(1, _CHUNK_ROWS // B)
    for lo in range(0, m, per):
        mk = masks[lo:lo + per]
        hybrid = np.where(mk[:, None, :], x[None, None, :], bg[None, :, :])
        out = _output(model, hybrid.reshape(-1, n), action).reshape(len(mk), B)
        vals[lo:lo + per] = out.mean(axis=1)
    return vals


def value_function(model: nn.Mlp, instance, background, subset: Sequence[int],
                   action: int) -> float:
    x = np.asarray(instance, dtype=np.float64)
    bg = _background(background)
    mask = np.zeros((1, x.shape[0]), dtype=bool)
    for i in subset:
        if not 0 <= i < x.shape[0]:
            raise InvalidArgument(f"feature index {i} out of range")
        mask[0, i] = True
    return float(_coalition_values(model, x, bg, mask, action)[0])


@lru_cache(maxsize=None)
def shapley_weights(n: int) -> np.ndarray:
    """|S|! (n - |S| - 1)! / n! for |S| = 0 .. n-1, exact then rounded."""
    fn = math.factorial(n)
    return np.array([float(Fraction(math.factorial(s) * math.factorial(n - s - 1), fn))
                     for s in range(n)])


@lru_cache(maxsize=None)
def _all_masks(n: int) -> tuple[np.ndarray, np.ndarray]:
    codes = np.arange(1 << n, dtype=np.int64)
    masks = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
    return masks, masks.sum(axis=1)


def shapley_from_values(values: np.ndarray, n: int) -> np.ndarray:
    """Combine the 2^n coalition values (indexed by bitmask) into psi."""
    _, sizes = _all_masks(n)
    w = shapley_weights(n)
    codes = np.arange(1 << n)
    psi = np.empty(n)
    for i in range(n):
        bit = 1 << i
        without = codes[(codes & bit) == 0]
        psi[i] = np.sum(w[sizes[without]] * (values[without | bit] - values[without]))
    return psi


def exact_shapley(model: nn.Mlp, instance, background, target_action: int) -> Attribution:
    x = np.asarray(instance, dtype=np.float64)
    n = x.shape[0]
    if n > MAX_EXACT_FEATURES:
        raise InvalidArgument(
            f"{n} features is too many to enumerate; use sampled_shapley instead")
    bg = _background(background)
    masks, _ = _all_masks(n)
    values = _coalition_values(model, x, bg, masks, target_action)
    psi = shapley_from_values(values, n)
    return Attribution(x.copy(), psi, float(values[0]), float(values[-1]),
                       int(target_action), "exact", x.copy())


def sampled_shapley(model: nn.Mlp, instance, background, target_action: int,
                    n_permutations: int, rng: np.random.Generator) -> Attribution:
    if n_permutations < 1:
        raise InvalidArgument("n_permutations must be >= 1")
    x = np.asarray(instance, dtype=np.float64)
    n = x.shape[0]
    bg = _background(background)
    perms = np.array([rng.permutation(n) for _ in range(n_permutations)])
    # coalition k of ordering p holds its first k features
    masks = np.zeros((n_permutations, n + 1, n), dtype=bool)
    for k in range(1, n + 1):
        masks[:, k] = masks[:, k - 1]
        masks[np.arange(n_permutations), k, perms[:, k - 1]] = True
    values = _coalition_values(model, x, bg, masks.reshape(-1, n), target_action)
    values = values.reshape(n_permutations, n + 1)
    marginal = np.diff(values, axis=1)
    psi = np.zeros(n)
    for k in range(n):
        np.add.at(psi, perms[:, k], marginal[:, k])
    psi /= n_permutations
    base = float(values[0, 0])
    out = float(values[0, -1])
    return Attribution(x.copy(), psi, base, out, int(target_action),
                       f"permutation({n_permutations})", x.copy())


def deeplift_contributions(model: nn.Mlp, instance, reference, target_action: int) -> np.ndarray:
    """Rescale-rule contributions of each input for one reference point."""
    x = np.asarray(instance, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    for kind in model.activations:
        if kind not in ("relu", "identity"):
            raise UnsupportedArchitecture(f"no rescale rule for {kind!r}")
    _, tx = nn.forward(model, x)
    _, tr = nn.forward(model, r)
    m = np.zeros(model.n_outputs)
    m[target_action] = 1.0
    for i in range(len(model.weights) - 1, -1, -1):
        if model.activations[i] == "relu":
            zx, zr = tx.pre[i][0], tr.pre[i][0]
            dz = zx - zr
            da = np.maximum(zx, 0.0) - np.maximum(zr, 0.0)
            small = np.abs(dz) < DEEPLIFT_EPS
            ratio = np.where(small, (zx > 0).astype(float), da / np.where(small, 1.0, dz))
            m = m * ratio
        m = m @ model.weights[i]
    return m * (x - r)


def deeplift_rescale(model: nn.Mlp, instance, background, target_action: int) -> Attribution:
    x = np.asarray(instance, dtype=np.float64)
    bg = _background(background)
    contrib = np.array([deeplift_contributions(model, x, b, target_action) for b in bg])
    base = float(np.mean(model(bg)[:, target_action]))
    out = float(model(x)[target_action])
    return Attribution(x.copy(), contrib.mean(axis=0), base, out, int(target_action),
                       "deeplift", x.copy())


def explain(model, instance, background, target_action, method: str = "exact",
            n_permutations: int = 2000, rng: Optional[np.random.Generator] = None) -> Attribution:
    if method == "exact":
        return exact_shapley(model, instance, background, target_action)
    if method == "sampled":
        if rng is None:
            rng = np.random.default_rng(0)
        return sampled_shapley(model, instance, background, target_action, n_permutations, rng)
    if method == "deeplift":
        return deeplift_rescale(model, instance, background, target_action)
    raise InvalidArgument(f"unknown method {method!r}")


def explain_trace(model: nn.Mlp, states, background, method: str = "exact",
                  normalizer=None, n_permutations: int = 2000,
                  rng: Optional[np.random.Generator] = None) -> list[Attribution]:
    """One attribution per state, explaining the greedy action's Q-value.

    ``states`` are raw StateVectors (or raw arrays) when a normalizer is
    given, otherwise already-normalized arrays.
    """
    out = []
    for s in states:
        raw = np.asarray(getattr(s, "values", s), dtype=np.float64)
        z = normalizer.normalize(raw) if normalizer is not None else raw
        action = int(np.argmax(model(z)))
        a = explain(model, z, background, action, method, n_permutations, rng)
        a.normalized_values = z
        a.feature_values = raw.copy()
        out.append(a)
    return out
