"""Per-neuron interpreters: response -> decision path -> logic program.

For every neuron a regression tree is fitted from world state to response,
each row is labelled with the path it takes through that tree, and a 1-D
classification tree learns to recover the path from the raw response.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import logic
from .data import NeuronId, TrajectoryDataset, flatten
from .logic import IntervalBox, LogicProgram
from .tree import (
    CLASSIFIER_CONFIG,
    SURROGATE_CONFIG,
    DecisionTree,
    TreeConfig,
    fit_classification,
    fit_regression,
)

FORMAT_VERSION = 1


def worker_count(requested: int | None = None) -> int:
    """Worker cap: explicit argument, else ``POLICYSCOPE_THREADS``, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("POLICYSCOPE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"POLICYSCOPE_THREADS must be an integer, got {env!r}") from None
    return 1


@dataclass
class NeuronInterpreter:
    neuron: NeuronId
    tree: DecisionTree
    classifier: DecisionTree
    programs: dict[int, LogicProgram]

    def predict_paths(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1, 1)
        return self.classifier.predict(z)

    def __call__(self, z: float) -> LogicProgram:
        return self.programs[int(self.classifier.predict([float(z)]))]

    def to_dict(self) -> dict:
        return {
            "neuron": self.neuron,
            "tree": self.tree.to_dict(),
            "classifier": self.classifier.to_dict(),
            "programs": {
                str(k): [[p.feature, p.op, p.threshold] for p in prog.predicates]
                for k, prog in sorted(self.programs.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NeuronInterpreter":
        programs = {
            int(k): LogicProgram(tuple(logic.Predicate(int(j), op, float(c)) for j, op, c in preds), d["neuron"], int(k))
            for k, preds in d["programs"].items()
        }
        return cls(d["neuron"], DecisionTree.from_dict(d["tree"]), DecisionTree.from_dict(d["classifier"]), programs)


@dataclass
class PolicyInterpretation:
    interpreters: dict[NeuronId, NeuronInterpreter]
    state_names: tuple[str, ...]
    tree_config: TreeConfig
    classifier_config: TreeConfig
    extra: dict = field(default_factory=dict)

    @property
    def neurons(self) -> list[NeuronId]:
        return list(self.interpreters)

    def __getitem__(self, neuron: NeuronId) -> NeuronInterpreter:
        if neuron in self.interpreters:
            return self.interpreters[neuron]
        for nid, interp in self.interpreters.items():
            if str(nid) == str(neuron):
                return interp
        raise KeyError(f"unknown neuron {neuron!r}")

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "state_names": list(self.state_names),
            "tree_config": dict(self.tree_config.__dict__),
            "classifier_config": dict(self.classifier_config.__dict__),
            **self.extra,
            "neurons": [interp.to_dict() for interp in self.interpreters.values()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyInterpretation":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported interpretation format_version {d.get('format_version')!r}")
        interps = [NeuronInterpreter.from_dict(n) for n in d["neurons"]]
        known = {"format_version", "state_names", "tree_config", "classifier_config", "neurons"}
        return cls(
            {i.neuron: i for i in interps},
            tuple(d["state_names"]),
            TreeConfig(**d["tree_config"]),
            TreeConfig(**d["classifier_config"]),
            {k: v for k, v in d.items() if k not in known},
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PolicyInterpretation":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def program_table(self, ascii: bool = False) -> str:
        rows = [
            (nid, [interp.programs[k] for k in sorted(interp.programs)])
            for nid, interp in self.interpreters.items()
        ]
        return logic.render_table(rows, self.state_names, ascii=ascii)


def build_neuron(
    states: np.ndarray,
    z: np.ndarray,
    neuron: NeuronId,
    cfg_tree: TreeConfig = SURROGATE_CONFIG,
    cfg_cls: TreeConfig = CLASSIFIER_CONFIG,
) -> NeuronInterpreter:
    tree = fit_regression(states, z, cfg_tree)
    paths = tree.path_of(states)
    classifier = fit_classification(z.reshape(-1, 1), paths, cfg_cls)
    return NeuronInterpreter(neuron, tree, classifier, logic.programs_of_tree(tree, neuron))


def build(
    ds: TrajectoryDataset,
    neurons: Sequence[NeuronId] | None = None,
    cfg_tree: TreeConfig = SURROGATE_CONFIG,
    cfg_cls: TreeConfig = CLASSIFIER_CONFIG,
    workers: int | None = None,
) -> PolicyInterpretation:
    """Fit surrogate tree, path classifier and program map for each neuron."""
    view = flatten(ds)
    chosen = list(ds.neuron_ids) if neurons is None else list(neurons)
    cols = [ds.neuron_index(n) for n in chosen]
    ids = [ds.neuron_ids[c] for c in cols]

    def one(k):
        return build_neuron(view.states_flat, view.responses_flat[:, cols[k]], ids[k], cfg_tree, cfg_cls)

    n_workers = min(worker_count(workers), len(cols)) or 1
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            built = list(pool.map(one, range(len(cols))))
    else:
        built = [one(k) for k in range(len(cols))]
    return PolicyInterpretation({b.neuron: b for b in built}, ds.state_names, cfg_tree, cfg_cls)


def interpret_response(pi: PolicyInterpretation, neuron: NeuronId, z: float) -> LogicProgram:
    return pi[neuron](z)


def interpret_timestep(
    pi: PolicyInterpretation, z_vec: Sequence[float]
) -> tuple[list[LogicProgram], IntervalBox, list]:
    """Programs of every interpreted neuron for one response vector, plus their reduction.

    ``z_vec`` is ordered like ``pi.neurons``.
    """
    if len(z_vec) != len(pi.interpreters):
        raise ValueError(f"expected {len(pi.interpreters)} responses, got {len(z_vec)}")
    programs = [interp(z) for interp, z in zip(pi.interpreters.values(), z_vec)]
    box, conflicts = logic.reduce(programs)
    return programs, box, conflicts
