"""Rollout data model, file formats and flat views.

Two on-disk formats are supported:

* ``json``: a single file
  ``{"state_names": [...], "neuron_ids": [...], "episodes": [{"states": [[...]],
  "responses": [[...]], "actions": [[...]] | null}]}``
* ``csv-dir``: a directory holding ``header.json`` plus
  ``ep_<k>_states.csv`` / ``ep_<k>_responses.csv`` (and optionally
  ``ep_<k>_actions.csv``), one row per timestep.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

NeuronId = Union[str, int]


class DatasetError(ValueError):
    """Base class for everything that can go wrong while loading rollouts."""


class ParseError(DatasetError):
    pass


class SchemaError(DatasetError):
    pass


class DataError(DatasetError):
    pass


def _frozen(a, name: str, ep: int) -> np.ndarray:
    try:
        arr = np.array(a, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"episode {ep}: field {name!r} is not a numeric matrix ({exc})") from None
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != 2:
        raise SchemaError(f"episode {ep}: field {name!r} must be a 2-D matrix, got ndim={arr.ndim}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Episode:
    states: np.ndarray
    responses: np.ndarray
    actions: np.ndarray | None = None

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class DatasetView:
    """Episodes concatenated in episode-then-time order."""

    states_flat: np.ndarray
    responses_flat: np.ndarray
    episode_index: np.ndarray
    time_index: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.states_flat.shape[0]


@dataclass(frozen=True)
class TrajectoryDataset:
    episodes: tuple[Episode, ...]
    state_names: tuple[str, ...]
    neuron_ids: tuple[NeuronId, ...]
    _view: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple(self.episodes))
        object.__setattr__(self, "state_names", tuple(self.state_names))
        object.__setattr__(self, "neuron_ids", tuple(self.neuron_ids))
        validate(self)

    @property
    def n_rows(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    @property
    def d_state(self) -> int:
        return len(self.state_names)

    @property
    def d_response(self) -> int:
        return len(self.neuron_ids)

    def neuron_index(self, neuron: NeuronId) -> int:
        """Column of ``neuron``; string ids and their integer spelling both match."""
        for k, nid in enumerate(self.neuron_ids):
            if nid == neuron or str(nid) == str(neuron):
                return k
        raise KeyError(f"unknown neuron {neuron!r}; known: {list(self.neuron_ids)}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrajectoryDataset):
            return NotImplemented
        if self.state_names != other.state_names or list(map(str, self.neuron_ids)) != list(
            map(str, other.neuron_ids)
        ):
            return False
        if len(self.episodes) != len(other.episodes):
            return False
        for a, b in zip(self.episodes, other.episodes):
            if not (np.array_equal(a.states, b.states) and np.array_equal(a.responses, b.responses)):
                return False
            if (a.actions is None) != (b.actions is None):
                return False
            if a.actions is not None and not np.array_equal(a.actions, b.actions):
                return False
        return True

    __hash__ = None


def make_episode(states, responses, actions=None, index: int = 0) -> Episode:
    return Episode(
        states=_frozen(states, "states", index),
        responses=_frozen(responses, "responses", index),
        actions=None if actions is None else _frozen(actions, "actions", index),
    )


def make_dataset(episodes, state_names: Sequence[str], neuron_ids: Sequence[NeuronId]) -> TrajectoryDataset:
    """Build a validated dataset from raw per-episode matrices.

    ``episodes`` is an iterable of ``(states, responses)`` or
    ``(states, responses, actions)`` tuples, or of ready ``Episode`` objects.
    """
    eps = []
    for k, ep in enumerate(episodes):
        if isinstance(ep, Episode):
            eps.append(ep)
        else:
            eps.append(make_episode(*ep, index=k))
    return TrajectoryDataset(tuple(eps), tuple(state_names), tuple(neuron_ids))


def validate(ds: TrajectoryDataset) -> None:
    d_s, d_z = len(ds.state_names), len(ds.neuron_ids)
    if d_s == 0:
        raise SchemaError("state_names must not be empty")
    if len(set(map(str, ds.neuron_ids))) != d_z:
        raise SchemaError("neuron_ids must be unique")
    total = 0
    for k, ep in enumerate(ds.episodes):
        T = ep.states.shape[0]
        if ep.states.shape[1:] != (d_s,) and T > 0:
            raise SchemaError(f"episode {k}: states have {ep.states.shape[1]} columns, header has {d_s}")
        if ep.responses.shape[0] != T:
            raise SchemaError(
                f"episode {k}: responses have T={ep.responses.shape[0]} but states have T={T}"
            )
        if T > 0 and ep.responses.shape[1] != d_z:
            raise SchemaError(
                f"episode {k}: responses have {ep.responses.shape[1]} columns, header has {d_z}"
            )
        if ep.actions is not None and ep.actions.shape[0] != T:
            raise SchemaError(f"episode {k}: actions have T={ep.actions.shape[0]} but states have T={T}")
        for name, arr in (("states", ep.states), ("responses", ep.responses), ("actions", ep.actions)):
            if arr is None:
                continue
            bad = ~np.isfinite(arr)
            if bad.any():
                t, j = np.argwhere(bad)[0]
                raise DataError(f"non-finite value in episode {k}, timestep {t}, {name}[{j}]")
        total += T
    if total < 1:
        raise SchemaError("dataset holds no timesteps")


def flatten(ds: TrajectoryDataset) -> DatasetView:
    """Concatenate all episodes; the result is cached on the dataset."""
    if ds._view:
        return ds._view[0]
    states = np.concatenate([ep.states for ep in ds.episodes if len(ep)], axis=0)
    responses = np.concatenate([ep.responses for ep in ds.episodes if len(ep)], axis=0)
    ep_idx = np.concatenate([np.full(len(ep), k) for k, ep in enumerate(ds.episodes)])
    t_idx = np.concatenate([np.arange(len(ep)) for ep in ds.episodes])
    for arr in (states, responses, ep_idx, t_idx):
        arr.flags.writeable = False
    view = DatasetView(states, responses, ep_idx.astype(np.int64), t_idx.astype(np.int64))
    ds._view.append(view)
    return view


def with_responses(ds: TrajectoryDataset, responses_per_episode, neuron_ids) -> TrajectoryDataset:
    """Copy of ``ds`` with its responses replaced (states and actions untouched)."""
    return make_dataset(
        [
            Episode(ep.states, _frozen(z, "responses", k), ep.actions)
            for k, (ep, z) in enumerate(zip(ds.episodes, responses_per_episode))
        ],
        ds.state_names,
        neuron_ids,
    )


def subset_neurons(ds: TrajectoryDataset, neurons: Sequence[NeuronId]) -> TrajectoryDataset:
    cols = [ds.neuron_index(n) for n in neurons]
    return with_responses(ds, [ep.responses[:, cols] for ep in ds.episodes], [ds.neuron_ids[c] for c in cols])


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------

def _to_jsonable(ds: TrajectoryDataset) -> dict:
    return {
        "state_names": list(ds.state_names),
        "neuron_ids": list(ds.neuron_ids),
        "episodes": [
            {
                "states": ep.states.tolist(),
                "responses": ep.responses.tolist(),
                "actions": None if ep.actions is None else ep.actions.tolist(),
            }
            for ep in ds.episodes
        ],
    }


def dumps_json(ds: TrajectoryDataset) -> str:
    return json.dumps(_to_jsonable(ds), allow_nan=False, ensure_ascii=False)


def _from_jsonable(obj) -> TrajectoryDataset:
    if not isinstance(obj, dict):
        raise SchemaError("top-level JSON value must be an object")
    for key in ("state_names", "neuron_ids", "episodes"):
        if key not in obj:
            raise SchemaError(f"missing field {key!r}")
        if not isinstance(obj[key], list):
            raise SchemaError(f"field {key!r} must be a list")
    eps = []
    for k, ep in enumerate(obj["episodes"]):
        if not isinstance(ep, dict):
            raise SchemaError(f"episodes[{k}] must be an object")
        for key in ("states", "responses"):
            if key not in ep:
                raise SchemaError(f"episodes[{k}]: missing field {key!r}")
        states = ep["states"]
        responses = ep["responses"]
        if len(states) == 0:
            states = np.zeros((0, len(obj["state_names"])))
        if len(responses) == 0:
            responses = np.zeros((0, len(obj["neuron_ids"])))
        eps.append(make_episode(states, responses, ep.get("actions"), index=k))
    return TrajectoryDataset(tuple(eps), tuple(obj["state_names"]), tuple(obj["neuron_ids"]))


def _reject_constant(token: str):
    raise ParseError(f"non-finite literal {token!r} is not allowed")


def loads_json(text: str) -> TrajectoryDataset:
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return _from_jsonable(obj)


# --------------------------------------------------------------------------
# CSV directory
# --------------------------------------------------------------------------

def _write_csv(path: Path, mat: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        for row in mat:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def _read_csv(path: Path, width: int) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec:
                continue
            if len(rec) != width:
                raise SchemaError(f"{path.name} line {lineno}: expected {width} fields, got {len(rec)}")
            try:
                vals = [float(v) for v in rec]
            except ValueError:
                bad = next(i for i, v in enumerate(rec) if not _is_float(v))
                raise ParseError(f"{path.name} line {lineno}, field {bad}: cannot parse {rec[bad]!r}") from None
            for i, v in enumerate(vals):
                if not math.isfinite(v):
                    raise DataError(f"{path.name} line {lineno}, field {i}: non-finite value {rec[i]!r}")
            rows.append(vals)
    return np.array(rows, dtype=np.float64).reshape(len(rows), width)


def _is_float(v: str) -> bool:
    try:
        float(v)
    except ValueError:
        return False
    return True


def save_csv_dir(ds: TrajectoryDataset, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    header = {
        "state_names": list(ds.state_names),
        "neuron_ids": list(ds.neuron_ids),
        "n_episodes": len(ds.episodes),
        "action_dims": [None if ep.actions is None else int(ep.actions.shape[1]) for ep in ds.episodes],
    }
    (root / "header.json").write_text(json.dumps(header, ensure_ascii=False), encoding="utf-8")
    for k, ep in enumerate(ds.episodes):
        _write_csv(root / f"ep_{k}_states.csv", ep.states)
        _write_csv(root / f"ep_{k}_responses.csv", ep.responses)
        if ep.actions is not None:
            _write_csv(root / f"ep_{k}_actions.csv", ep.actions)


def load_csv_dir(path: str | Path) -> TrajectoryDataset:
    root = Path(path)
    try:
        header = json.loads((root / "header.json").read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"header.json line {exc.lineno}: {exc.msg}") from None
    names, ids = header.get("state_names"), header.get("neuron_ids")
    if names is None or ids is None:
        raise SchemaError("header.json must define state_names and neuron_ids")
    n_eps = header.get("n_episodes")
    if n_eps is None:
        n_eps = len(list(root.glob("ep_*_states.csv")))
    action_dims = header.get("action_dims") or [None] * n_eps
    eps = []
    for k in range(n_eps):
        s_path, z_path = root / f"ep_{k}_states.csv", root / f"ep_{k}_responses.csv"
        if not s_path.exists() or not z_path.exists():
            raise SchemaError(f"episode {k}: missing {s_path.name} or {z_path.name}")
        states = _read_csv(s_path, len(names))
        responses = _read_csv(z_path, len(ids))
        a_path = root / f"ep_{k}_actions.csv"
        actions = _read_csv(a_path, action_dims[k]) if action_dims[k] and a_path.exists() else None
        eps.append(make_episode(states, responses, actions, index=k))
    return TrajectoryDataset(tuple(eps), tuple(names), tuple(ids))


# --------------------------------------------------------------------------
# entry points
# --------------------------------------------------------------------------

def load_dataset(path: str | Path, format: str | None = None) -> TrajectoryDataset:
    """Load and validate a rollout file.

    ``format`` is ``"json"`` or ``"csv-dir"``; when omitted it is inferred
    (directories are read as ``csv-dir``).
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such dataset: {p}")
    fmt = format or ("csv-dir" if p.is_dir() else "json")
    if fmt == "json":
        return loads_json(p.read_text(encoding="utf-8"))
    if fmt == "csv-dir":
        return load_csv_dir(p)
    raise ValueError(f"unknown dataset format {fmt!r}")


def save_dataset(ds: TrajectoryDataset, path: str | Path, format: str = "json") -> None:
    if format == "json":
        Path(path).write_text(dumps_json(ds), encoding="utf-8")
    elif format == "csv-dir":
        save_csv_dir(ds, path)
    else:
        raise ValueError(f"unknown dataset format {format!r}")
