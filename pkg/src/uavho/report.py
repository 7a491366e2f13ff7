"""Aggregation of attributions into rankings, plot-ready tables and text."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .env import FEATURE_NAMES
from .errors import InvalidArgument
from .explain import Attribution

ATTRIBUTION_COLUMNS = ("step", "feature_name", "feature_raw_value", "feature_normalized_value",
                       "shapley_value", "base_value", "output_value", "action", "method")
IMPORTANCE_COLUMNS = ("rank", "feature", "mean_abs_shap", "mean_shap", "corr_sign")
COMPARE_COLUMNS = ("feature", "rank_a", "rank_b", "rank_shift", "mean_abs_a", "mean_abs_b",
                   "mean_abs_delta")


@dataclass
class GlobalImportance:
    features: tuple
    mean_abs: np.ndarray
    mean: np.ndarray
    corr_sign: np.ndarray  # sign of corr(feature value, psi); 0 if undefined
    ranking: list  # feature indices, most important first

    def rank_of(self, name: str) -> int:
        """1-based rank of a feature."""
        return self.ranking.index(self.features.index(name)) + 1

    def top(self, k: int) -> list[str]:
        return [self.features[i] for i in self.ranking[:k]]


def _rank(mean_abs: np.ndarray) -> list[int]:
    return sorted(range(len(mean_abs)), key=lambda i: (-mean_abs[i], i))


def global_importance(attributions: Sequence[Attribution],
                      features: Sequence[str] = FEATURE_NAMES) -> GlobalImportance:
    if not attributions:
        raise InvalidArgument("no attributions to aggregate")
    psi = np.array([a.shapley for a in attributions])
    vals = np.array([a.feature_values for a in attributions])
    if psi.shape[1] != len(features):
        raise InvalidArgument("feature layout mismatch")
    mean_abs = np.abs(psi).mean(axis=0)
    signs = np.zeros(psi.shape[1])
    for i in range(psi.shape[1]):
        v, p = vals[:, i], psi[:, i]
        if len(v) > 1 and np.std(v) > 0 and np.std(p) > 0:
            signs[i] = np.sign(np.corrcoef(v, p)[0, 1])
    return GlobalImportance(tuple(features), mean_abs, psi.mean(axis=0), signs, _rank(mean_abs))


@dataclass
class WaterfallData:
    base_value: float
    features: list
    contributions: np.ndarray
    cumulative: np.ndarray  # starts at base_value, one entry per contribution after it
    output_value: float


def waterfall(attribution: Attribution, features: Sequence[str] = FEATURE_NAMES) -> WaterfallData:
    psi = np.asarray(attribution.shapley)
    order = sorted(range(len(psi)), key=lambda i: (-abs(psi[i]), i))
    contrib = psi[order]
    cum = attribution.base_value + np.concatenate([[0.0], np.cumsum(contrib)])
    return WaterfallData(attribution.base_value, [features[i] for i in order], contrib, cum,
                         attribution.output_value)


@dataclass
class ExplanationText:
    template_id: str
    text: str
    top_features: list = field(default_factory=list)  # (name, signed share %)


TEMPLATES = {
    "handover": ("UAV {uav} at t={t}: the model initiated a handover from BS {serving} "
                 "to BS {target}. {factors}"),
    "stay": "UAV {uav} at t={t}: the model kept BS {serving} as the serving cell. {factors}",
    "no_dominant_factor": ("UAV {uav} at t={t}: the model {decision}; no feature moved the "
                           "decision value away from its baseline."),
}


def _feature_phrase(name: str, share: float, psi: float) -> str:
    direction = "increasing" if psi > 0 else "decreasing"
    return f"{name} ({share:.0f}% of total attribution, {direction} the action value)"


def render_explanation(attribution: Attribution, context: dict, top_k: int = 3,
                       features: Sequence[str] = FEATURE_NAMES) -> ExplanationText:
    """Fill a fixed template from the attribution; no free text is generated.

    ``context`` keys: handover (bool), serving, target, uav, t.
    """
    psi = np.asarray(attribution.shapley)
    handover = bool(context.get("handover", False))
    fields = {"uav": context.get("uav", 0), "t": context.get("t", 0),
              "serving": context.get("serving", "?"), "target": context.get("target", "?")}
    total = float(np.sum(np.abs(psi)))
    if total == 0.0:
        decision = (f"handed over to BS {fields['target']}" if handover
                    else f"kept BS {fields['serving']}")
        return ExplanationText("no_dominant_factor",
                               TEMPLATES["no_dominant_factor"].format(decision=decision, **fields))
    order = sorted(range(len(psi)), key=lambda i: (-abs(psi[i]), i))[:top_k]
    top = [(features[i], float(np.sign(psi[i]) * 100.0 * abs(psi[i]) / total)) for i in order]
    parts = [_feature_phrase(features[i], 100.0 * abs(psi[i]) / total, psi[i]) for i in order]
    factors = "Top factors: " + "; ".join(parts) + "."
    tid = "handover" if handover else "stay"
    return ExplanationText(tid, TEMPLATES[tid].format(factors=factors, **fields), top)


@dataclass
class CompareRow:
    feature: str
    rank_a: int
    rank_b: int
    rank_shift: int  # rank_b - rank_a
    mean_abs_a: float
    mean_abs_b: float
    mean_abs_delta: float  # b - a


def compare_runs(a: GlobalImportance, b: GlobalImportance) -> list[CompareRow]:
    """Per-feature rank shift and mean |psi| change, ordered by run ``a``'s ranking."""
    if tuple(a.features) != tuple(b.features):
        raise InvalidArgument("importance tables use different feature layouts")
    rows = []
    for i in a.ranking:
        name = a.features[i]
        ra, rb = a.rank_of(name), b.rank_of(name)
        rows.append(CompareRow(name, ra, rb, rb - ra, float(a.mean_abs[i]), float(b.mean_abs[i]),
                               float(b.mean_abs[i] - a.mean_abs[i])))
    return rows


# CSV writers / readers. ``header`` is written as a leading ``#`` comment line.

def _comment(fh, header: Optional[str]) -> None:
    if header:
        fh.write(f"# {header}\n")


def write_attributions_csv(attributions: Sequence[Attribution], fh, steps=None,
                           header: Optional[str] = None,
                           features: Sequence[str] = FEATURE_NAMES) -> None:
    _comment(fh, header)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(ATTRIBUTION_COLUMNS)
    for k, a in enumerate(attributions):
        step = steps[k] if steps is not None else k
        norm = a.normalized_values if a.normalized_values is not None else a.feature_values
        for i, name in enumerate(features):
            w.writerow([step, name, repr(float(a.feature_values[i])), repr(float(norm[i])),
                        repr(float(a.shapley[i])), repr(a.base_value), repr(a.output_value),
                        a.action, a.method])


def write_importance_csv(imp: GlobalImportance, fh, header: Optional[str] = None) -> None:
    _comment(fh, header)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(IMPORTANCE_COLUMNS)
    for r, i in enumerate(imp.ranking, start=1):
        w.writerow([r, imp.features[i], repr(float(imp.mean_abs[i])), repr(float(imp.mean[i])),
                    int(imp.corr_sign[i])])


def _data_lines(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def read_importance_csv(fh, source: str = "<importance>") -> GlobalImportance:
    reader = csv.DictReader(_data_lines(fh))
    missing = [c for c in IMPORTANCE_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise InvalidArgument(f"{source}: missing column {missing[0]!r}")
    rows = list(reader)
    try:
        rows.sort(key=lambda r: int(r["rank"]))
        names = tuple(r["feature"] for r in rows)
        by_name = {r["feature"]: r for r in rows}
        features = tuple(f for f in FEATURE_NAMES if f in by_name)
        if sorted(names) != sorted(features) or len(features) != len(FEATURE_NAMES):
            raise InvalidArgument(f"{source}: expected the 12 state features")
        mean_abs = np.array([float(by_name[f]["mean_abs_shap"]) for f in features])
        mean = np.array([float(by_name[f]["mean_shap"]) for f in features])
        corr = np.array([float(by_name[f]["corr_sign"]) for f in features])
    except (KeyError, ValueError) as exc:
        raise InvalidArgument(f"{source}: malformed row ({exc})") from None
    ranking = [features.index(n) for n in names]
    return GlobalImportance(features, mean_abs, mean, corr, ranking)


def write_compare_csv(rows: Sequence[CompareRow], fh, header: Optional[str] = None) -> None:
    _comment(fh, header)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for r in rows:
        w.writerow([r.feature, r.rank_a, r.rank_b, r.rank_shift, repr(r.mean_abs_a),
                    repr(r.mean_abs_b), repr(r.mean_abs_delta)])


def write_waterfall_csv(wf: WaterfallData, fh, header: Optional[str] = None) -> None:
    _comment(fh, header)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("order", "feature", "contribution", "cumulative"))
    w.writerow([0, "base_value", "", repr(float(wf.cumulative[0]))])
    for k, (name, c) in enumerate(zip(wf.features, wf.contributions), start=1):
        w.writerow([k, name, repr(float(c)), repr(float(wf.cumulative[k]))])
    w.writerow([len(wf.features) + 1, "output_value", "", repr(float(wf.output_value))])


def write_beeswarm_csv(attributions: Sequence[Attribution], fh, header: Optional[str] = None,
                       features: Sequence[str] = FEATURE_NAMES) -> None:
    _comment(fh, header)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("instance", "feature", "feature_value", "shap_value"))
    for k, a in enumerate(attributions):
        for i, name in enumerate(features):
            w.writerow([k, name, repr(float(a.feature_values[i])), repr(float(a.shapley[i]))])
