"""Interpretability metrics over a built interpretation.

All information quantities are plug-in estimates in nats over discretised
responses and binary path-occupancy factors.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import kernels, logic
from .data import TrajectoryDataset, flatten
from .interpret import PolicyInterpretation, build
from .tree import CLASSIFIER_CONFIG, SURROGATE_CONFIG, TreeConfig

log = logging.getLogger(__name__)

DEFAULT_BINS = 20
METRIC_NAMES = ("variance", "mig", "modularity", "path_accuracy", "logic_conflict")


class UndefinedMetricError(ValueError):
    """Raised when every term of a metric's average is degenerate."""


# --------------------------------------------------------------------------
# discretisation
# --------------------------------------------------------------------------

@dataclass
class Discretizer:
    n_bins: int = DEFAULT_BINS
    strategy: str = "equal_width"
    edges: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be positive")
        if self.strategy not in ("equal_width", "quantile"):
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def fit(self, Z) -> "Discretizer":
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z[:, None]
        self.edges = []
        for col in Z.T:
            lo, hi = float(col.min()), float(col.max())
            if self.strategy == "equal_width":
                if not hi > lo:
                    hi = lo + 1.0
                edges = np.linspace(lo, hi, self.n_bins + 1)
            else:
                edges = np.unique(np.quantile(col, np.linspace(0.0, 1.0, self.n_bins + 1)))
                if len(edges) < 2:
                    edges = np.array([lo, lo + 1.0])
            self.edges.append(edges)
        return self

    def transform(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        one_d = Z.ndim == 1
        if one_d:
            Z = Z[:, None]
        if Z.shape[1] != len(self.edges):
            raise ValueError(f"discretizer was fitted on {len(self.edges)} columns, got {Z.shape[1]}")
        out = np.empty(Z.shape, dtype=np.int64)
        for i, edges in enumerate(self.edges):
            if self.strategy == "equal_width":
                lo, hi = edges[0], edges[-1]
                idx = np.floor((Z[:, i] - lo) / (hi - lo) * self.n_bins)
            else:
                idx = np.searchsorted(edges[1:-1], Z[:, i], side="right")
            out[:, i] = np.clip(idx, 0, len(edges) - 2)
        return out[:, 0] if one_d else out

    def fit_transform(self, Z) -> np.ndarray:
        return self.fit(Z).transform(Z)


# --------------------------------------------------------------------------
# information estimates
# --------------------------------------------------------------------------

def _codes(a) -> tuple[np.ndarray, int]:
    uniq, inv = np.unique(np.asarray(a), return_inverse=True)
    return inv.ravel().astype(np.int64), len(uniq)


def entropy(a) -> float:
    _, counts = np.unique(np.asarray(a), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def mutual_information(a, b) -> float:
    """Plug-in mutual information (nats) of two categorical vectors."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] == 0:
        raise ValueError("empty input")
    ca, na = _codes(a)
    cb, nb = _codes(b)
    joint = kernels.joint_counts(ca, cb, na, nb).astype(np.float64)
    n = joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = (joint[nz] / n * np.log(joint[nz] * n / (pa @ pb)[nz])).sum()
    return max(0.0, float(mi))


def calibrated_mi(mi_neuron_factor: float, mi_factor_proxy: float) -> float:
    """Lower bound ``max(0, I[z; P_k] - I[P_k; P_proxy])`` on ``I[z; P_k | P_proxy]``."""
    return max(0.0, mi_neuron_factor - mi_factor_proxy)


# --------------------------------------------------------------------------
# pseudo ground-truth factors
# --------------------------------------------------------------------------

@dataclass
class FactorSet:
    sources: list[tuple[object, int]]  # (neuron, path id) per factor
    occupancy: np.ndarray  # N x K boolean

    @property
    def K(self) -> int:
        return self.occupancy.shape[1]

    def entropies(self) -> np.ndarray:
        return np.array([entropy(col) for col in self.occupancy.T])


def build_factor_set(pi: PolicyInterpretation, states: np.ndarray) -> FactorSet:
    sources, cols = [], []
    for nid, interp in pi.interpreters.items():
        paths = interp.tree.path_of(states)
        for k in range(interp.tree.n_paths):
            sources.append((nid, k))
            cols.append(paths == k)
    return FactorSet(sources, np.column_stack(cols))


def mi_matrix(z_bins: np.ndarray, occupancy: np.ndarray) -> np.ndarray:
    """``M[i, k] = I[z_i; P_k]``."""
    return np.array([[mutual_information(z, f) for f in occupancy.T] for z in z_bins.T])


def factor_mi_matrix(occupancy: np.ndarray) -> np.ndarray:
    """``F[k, l] = I[P_k; P_l]``."""
    K = occupancy.shape[1]
    F = np.zeros((K, K))
    for k in range(K):
        for l in range(k, K):
            F[k, l] = F[l, k] = mutual_information(occupancy[:, k], occupancy[:, l])
    return F


def mig_from_matrices(M: np.ndarray, F: np.ndarray, H: np.ndarray) -> tuple[float, list[dict]]:
    """Calibrated mutual information gap.

    For factor k the top neuron is ``i* = argmax_i M[i, k]``.  Every other
    neuron j is represented by its own best factor ``k_j = argmax_l M[j, l]``
    and contributes ``max(0, M[j, k] - F[k, k_j])``; the largest such term is
    subtracted (0 when there is no other neuron).  Factors with zero entropy
    are skipped.
    """
    n_neurons, K = M.shape
    best_factor = M.argmax(axis=1)
    per = []
    for k in range(K):
        if H[k] <= 0.0:
            log.warning("factor %d has zero entropy; skipped in MIG", k)
            continue
        top = int(M[:, k].argmax())
        runner = 0.0
        runner_idx = None
        for j in range(n_neurons):
            if j == top:
                continue
            c = calibrated_mi(M[j, k], F[k, best_factor[j]])
            if runner_idx is None or c > runner:
                runner, runner_idx = c, j
        per.append({
            "factor": k, "top_neuron": top, "runner_up": runner_idx,
            "top_mi": float(M[top, k]), "calibrated_runner_mi": float(runner),
            "entropy": float(H[k]), "score": float((M[top, k] - runner) / H[k]),
        })
    if not per:
        raise UndefinedMetricError("every factor is degenerate; MIG is undefined")
    return float(np.mean([p["score"] for p in per])), per


def modularity_from_matrices(M: np.ndarray, F: np.ndarray) -> tuple[float, list[dict]]:
    """Calibrated modularity: ``1 - sum_{k != k*} c_k^2 / ((K - 1) M[i, k*]^2)`` per neuron."""
    n_neurons, K = M.shape
    if K < 2:
        raise UndefinedMetricError("modularity needs at least two factors")
    per = []
    for i in range(n_neurons):
        k_star = int(M[i].argmax())
        top = M[i, k_star]
        if top <= 0.0:
            log.warning("neuron %d carries no information about any factor; skipped in modularity", i)
            continue
        off = [calibrated_mi(M[i, k], F[k, k_star]) for k in range(K) if k != k_star]
        score = 1.0 - float(np.sum(np.square(off))) / ((K - 1) * top * top)
        per.append({"neuron": i, "matched_factor": k_star, "top_mi": float(top), "score": score})
    if not per:
        raise UndefinedMetricError("no neuron shares information with any factor; modularity is undefined")
    return float(np.mean([p["score"] for p in per])), per


# --------------------------------------------------------------------------
# metrics on an interpretation
# --------------------------------------------------------------------------

def _responses(ds: TrajectoryDataset, pi: PolicyInterpretation) -> tuple[np.ndarray, np.ndarray]:
    view = flatten(ds)
    cols = [ds.neuron_index(n) for n in pi.neurons]
    return view.states_flat, view.responses_flat[:, cols]


def _fitted(disc: Discretizer | None, Z: np.ndarray) -> tuple[Discretizer, np.ndarray]:
    disc = Discretizer() if disc is None else disc
    if len(disc.edges) != Z.shape[1]:
        disc.fit(Z)
    return disc, disc.transform(Z)


def variance_per_neuron(states: np.ndarray, z_bins: np.ndarray, pi: PolicyInterpretation, n_bins: int) -> list[float]:
    out = []
    for i, interp in enumerate(pi.interpreters.values()):
        paths = interp.tree.path_of(states)
        # var(b / N) == var(b) / N**2; integer bins keep path-constant groups at exactly 0
        b = z_bins[:, i].astype(np.float64)
        out.append(float(np.mean([b[paths == k].var() for k in range(interp.tree.n_paths)])) / n_bins**2)
    return out


def variance_metric(ds: TrajectoryDataset, pi: PolicyInterpretation, disc: Discretizer | None = None) -> float:
    """Mean within-path variance of the binned response (bin index / n_bins)."""
    states, Z = _responses(ds, pi)
    disc, z_bins = _fitted(disc, Z)
    return float(np.mean(variance_per_neuron(states, z_bins, pi, disc.n_bins)))


def _mi_inputs(ds, pi, disc):
    states, Z = _responses(ds, pi)
    disc, z_bins = _fitted(disc, Z)
    factors = build_factor_set(pi, states)
    return z_bins, factors


def mig_metric(ds: TrajectoryDataset, pi: PolicyInterpretation, disc: Discretizer | None = None) -> float:
    z_bins, factors = _mi_inputs(ds, pi, disc)
    if factors.K < 2:
        raise UndefinedMetricError("MIG needs at least two factors")
    M, F = mi_matrix(z_bins, factors.occupancy), factor_mi_matrix(factors.occupancy)
    return mig_from_matrices(M, F, factors.entropies())[0]


def modularity_metric(ds: TrajectoryDataset, pi: PolicyInterpretation, disc: Discretizer | None = None) -> float:
    z_bins, factors = _mi_inputs(ds, pi, disc)
    M, F = mi_matrix(z_bins, factors.occupancy), factor_mi_matrix(factors.occupancy)
    return modularity_from_matrices(M, F)[0]


def predicate_accuracy(states: np.ndarray, predicted_paths: np.ndarray, programs: dict[int, logic.LogicProgram]) -> float:
    """Mean fraction of predicted-path predicates that hold at the true state.

    Rows whose predicted program is empty count as fully correct.
    """
    total = 0.0
    for k in np.unique(predicted_paths):
        rows = predicted_paths == k
        preds = programs[int(k)].predicates
        if not preds:
            total += rows.sum()
            continue
        held = np.column_stack([p.holds(states[rows]) for p in preds])
        total += held.mean(axis=1).sum()
    return float(total / len(predicted_paths))


def path_accuracy_per_neuron(ds: TrajectoryDataset, pi: PolicyInterpretation) -> dict:
    states, Z = _responses(ds, pi)
    out = {}
    for i, (nid, interp) in enumerate(pi.interpreters.items()):
        if all(p.is_empty for p in interp.programs.values()):
            continue
        out[nid] = predicate_accuracy(states, interp.predict_paths(Z[:, i]), interp.programs)
    return out


def path_accuracy(ds: TrajectoryDataset, pi: PolicyInterpretation) -> float:
    per = path_accuracy_per_neuron(ds, pi)
    if not per:
        raise UndefinedMetricError("no interpreted neuron has a non-trivial program")
    return float(np.mean(list(per.values())))


def interpret_rows(pi: PolicyInterpretation, Z: np.ndarray) -> list[list[logic.LogicProgram]]:
    """Per-timestep lists of per-neuron programs (slow, list-based form)."""
    labels = [interp.predict_paths(Z[:, i]) for i, interp in enumerate(pi.interpreters.values())]
    interps = list(pi.interpreters.values())
    return [[interps[i].programs[int(labels[i][t])] for i in range(len(interps))] for t in range(Z.shape[0])]


def conflict_per_row(pi: PolicyInterpretation, Z: np.ndarray, d_state: int) -> np.ndarray:
    """Fraction of shared state dimensions that clash, for every row."""
    n = Z.shape[0]
    count = np.zeros((n, d_state), dtype=np.int64)
    lo = np.full((n, d_state), -np.inf)
    hi = np.full((n, d_state), np.inf)
    for i, interp in enumerate(pi.interpreters.values()):
        K = len(interp.programs)
        p_lo = np.full((K, d_state), -np.inf)
        p_hi = np.full((K, d_state), np.inf)
        p_on = np.zeros((K, d_state), dtype=bool)
        for k, prog in interp.programs.items():
            for j, (a, b) in prog.box().bounds.items():
                p_lo[k, j], p_hi[k, j], p_on[k, j] = a, b, True
        labels = interp.predict_paths(Z[:, i])
        count += p_on[labels]
        lo = np.maximum(lo, p_lo[labels])
        hi = np.minimum(hi, p_hi[labels])
    shared = count >= 2
    clash = shared & (hi <= lo)
    n_shared = shared.sum(axis=1)
    return np.where(n_shared > 0, clash.sum(axis=1) / np.maximum(n_shared, 1), 0.0)


def conflict_metric(ds: TrajectoryDataset, pi: PolicyInterpretation) -> float:
    _, Z = _responses(ds, pi)
    return float(conflict_per_row(pi, Z, ds.d_state).mean())


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass
class MetricsReport:
    variance: float | None
    mig: float | None
    modularity: float | None
    path_accuracy: float | None
    logic_conflict: float | None
    per_neuron: dict = field(default_factory=dict)
    per_factor: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def values(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=str)

    def csv_row(self) -> list:
        return ["" if v is None else repr(float(v)) for v in self.values().values()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_NAMES)
        w.writerow(self.csv_row())
        return buf.getvalue()

    def to_markdown(self) -> str:
        head = "| " + " | ".join(METRIC_NAMES) + " |"
        sep = "|" + "---|" * len(METRIC_NAMES)
        row = "| " + " | ".join(_cell(v) for v in self.values().values()) + " |"
        return "\n".join([head, sep, row]) + "\n"


def _cell(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def _guard(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError as exc:
        log.warning("%s", exc)
        return None


def compute_metrics(
    ds: TrajectoryDataset,
    pi: PolicyInterpretation,
    n_bins: int = DEFAULT_BINS,
    strategy: str = "equal_width",
) -> MetricsReport:
    """All five metrics; undefined ones are reported as ``None``."""
    states, Z = _responses(ds, pi)
    disc = Discretizer(n_bins, strategy).fit(Z)
    z_bins = disc.transform(Z)
    factors = build_factor_set(pi, states)
    M, F = mi_matrix(z_bins, factors.occupancy), factor_mi_matrix(factors.occupancy)
    H = factors.entropies()

    var_each = variance_per_neuron(states, z_bins, pi, n_bins)
    mig = mig_detail = None
    if factors.K >= 2:
        res = _guard(mig_from_matrices, M, F, H)
        if res is not None:
            mig, mig_detail = res
    mod_res = _guard(modularity_from_matrices, M, F)
    acc_each = path_accuracy_per_neuron(ds, pi)
    conflict = float(conflict_per_row(pi, Z, ds.d_state).mean())

    neurons = pi.neurons
    per_neuron = {
        str(nid): {
            "n_paths": pi.interpreters[nid].tree.n_paths,
            "variance": var_each[i],
            "path_accuracy": acc_each.get(nid),
        }
        for i, nid in enumerate(neurons)
    }
    if mod_res is not None:
        for entry in mod_res[1]:
            per_neuron[str(neurons[entry["neuron"]])]["modularity"] = entry["score"]
    per_factor = []
    detail = {d["factor"]: d for d in (mig_detail or [])}
    for k, (nid, path) in enumerate(factors.sources):
        row = {"neuron": str(nid), "path": path, "entropy": float(H[k])}
        if k in detail:
            row["mig"] = detail[k]["score"]
            row["top_neuron"] = str(neurons[detail[k]["top_neuron"]])
        per_factor.append(row)

    return MetricsReport(
        variance=float(np.mean(var_each)),
        mig=mig,
        modularity=None if mod_res is None else mod_res[0],
        path_accuracy=float(np.mean(list(acc_each.values()))) if acc_each else None,
        logic_conflict=conflict,
        per_neuron=per_neuron,
        per_factor=per_factor,
        config={
            "n_bins": n_bins,
            "strategy": strategy,
            "tree_config": dict(pi.tree_config.__dict__),
            "classifier_config": dict(pi.classifier_config.__dict__),
            "neurons": [str(n) for n in neurons],
            "n_rows": int(states.shape[0]),
            "n_factors": factors.K,
        },
    )


@dataclass
class SweepRow:
    ccp_alpha: float
    min_leaf_fraction: float
    report: MetricsReport


def hyperparameter_sweep(
    ds: TrajectoryDataset,
    ccp_alphas: Sequence[float],
    leaf_fractions: Sequence[float],
    neurons=None,
    base_tree: TreeConfig = SURROGATE_CONFIG,
    cls_config: TreeConfig = CLASSIFIER_CONFIG,
    n_bins: int = DEFAULT_BINS,
    strategy: str = "equal_width",
    workers: int | None = None,
) -> list[SweepRow]:
    """Full pipeline for every (pruning strength, leaf fraction) pair of the surrogate tree."""
    if not ccp_alphas or not leaf_fractions:
        raise ValueError("sweep grid must be non-empty")
    rows = []
    for alpha in ccp_alphas:
        for frac in leaf_fractions:
            cfg = base_tree.replace(ccp_alpha=float(alpha), min_leaf_fraction=float(frac))
            pi = build(ds, neurons, cfg, cls_config, workers=workers)
            rows.append(SweepRow(float(alpha), float(frac), compute_metrics(ds, pi, n_bins, strategy)))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("ccp_alpha", "min_leaf_fraction") + METRIC_NAMES)
    for r in rows:
        w.writerow([repr(r.ccp_alpha), repr(r.min_leaf_fraction)] + r.report.csv_row())
    return buf.getvalue()


def sweep_markdown(rows: Sequence[SweepRow]) -> str:
    lines = [
        "| ccp_alpha | min_leaf_fraction | " + " | ".join(METRIC_NAMES) + " |",
        "|" + "---|" * (2 + len(METRIC_NAMES)),
    ]
    for r in rows:
        cells = [f"{r.ccp_alpha:g}", f"{r.min_leaf_fraction:g}"] + [_cell(v) for v in r.report.values().values()]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def sweep_json(rows: Sequence[SweepRow]) -> str:
    return json.dumps(
        [{"ccp_alpha": r.ccp_alpha, "min_leaf_fraction": r.min_leaf_fraction, **r.report.to_dict()} for r in rows],
        indent=1,
        default=str,
    )
