"""Augmentation-policy search: TPE sampling, median pruning, subprocess trials.

The trainer is an external command. It is invoked as
``<command> --policy <policy.json> --epochs <N>`` and must print one line
``EPOCH <k> LOSS <v>`` per finished epoch; other lines are ignored and exit
status 0 means the trial completed. A pruned trial is terminated.

Trial history is a JSON-lines store: a header line, then one TrialRecord per
state change. Reading folds records by ``trial_id`` (last wins).
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import EpochNotReported, StoreCorrupt, TrainerCrash
from .sampler import AugPolicy

log = logging.getLogger(__name__)

RUNNING, PRUNED, COMPLETE, FAILED = "running", "pruned", "complete", "failed"
STATUSES = (RUNNING, PRUNED, COMPLETE, FAILED)
EPOCH_LINE = re.compile(r"^EPOCH\s+(\d+)\s+LOSS\s+(\S+)\s*$")

N_STARTUP = 10
GAMMA = 0.25
N_CANDIDATES = 24


@dataclass(frozen=True)
class SearchSpace:
    extra_objects: Tuple[int, ...] = (0, 1, 2, 3)
    background_prob: Tuple[float, float] = (0.0, 1.0)
    oba_prob: Tuple[float, float] = (0.0, 1.0)
    color_prob: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not self.extra_objects or min(self.extra_objects) < 0:
            raise ValueError("extra_objects choices must be non-negative integers")
        for name in ("background_prob", "oba_prob", "color_prob"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"{name} bounds must satisfy 0 <= lo <= hi <= 1")

    @property
    def continuous(self) -> Dict[str, Tuple[float, float]]:
        return {"background_prob": self.background_prob, "oba_prob": self.oba_prob,
                "color_prob": self.color_prob}

    def contains(self, params: dict) -> bool:
        if params["extra_objects"] not in self.extra_objects:
            return False
        return all(lo <= params[k] <= hi for k, (lo, hi) in self.continuous.items())

    def to_policy(self, params: dict, base: Optional[AugPolicy] = None) -> AugPolicy:
        base = base or AugPolicy()
        return AugPolicy.from_dict({**base.to_dict(),
                                    "extra_objects": [0, int(params["extra_objects"])],
                                    "use_extra_background_prob": params["background_prob"],
                                    "oba_prob": params["oba_prob"],
                                    "color_aug_prob": params["color_prob"]})


@dataclass
class TrialRecord:
    trial_id: int
    params: dict
    policy: dict = field(default_factory=dict)
    intermediate: List[Tuple[int, float]] = field(default_factory=list)
    status: str = RUNNING
    final_value: Optional[float] = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"bad trial status {self.status!r}")
        self.intermediate = [(int(e), float(v)) for e, v in self.intermediate]
        epochs = [e for e, _ in self.intermediate]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError(f"trial {self.trial_id}: epochs not strictly increasing")
        if (self.final_value is not None) != (self.status == COMPLETE):
            raise ValueError(f"trial {self.trial_id}: final_value must be set iff complete")

    def value_at(self, epoch: int) -> Optional[float]:
        for e, v in self.intermediate:
            if e == epoch:
                return v
        return None

    def report(self, epoch: int, value: float) -> None:
        if self.intermediate and epoch <= self.intermediate[-1][0]:
            raise ValueError(f"trial {self.trial_id}: epoch {epoch} not after {self.intermediate[-1][0]}")
        self.intermediate.append((int(epoch), float(value)))

    def to_dict(self) -> dict:
        return {"trial_id": self.trial_id, "params": self.params, "policy": self.policy,
                "intermediate": [[e, v] for e, v in self.intermediate],
                "status": self.status, "final_value": self.final_value}

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(int(d["trial_id"]), dict(d["params"]), dict(d.get("policy") or {}),
                   [tuple(x) for x in d.get("intermediate", [])], d["status"], d.get("final_value"))


@dataclass
class StudyState:
    trials: List[TrialRecord] = field(default_factory=list)
    rng_seed: int = 0
    direction: str = "minimize"

    def __post_init__(self):
        ids = [t.trial_id for t in self.trials]
        if ids != list(range(len(ids))):
            raise ValueError("trial ids must be dense and ordered from 0")

    @property
    def completed(self) -> List[TrialRecord]:
        return [t for t in self.trials if t.status == COMPLETE]

    def prefix(self, n: int) -> "StudyState":
        """State as seen by trial ``n`` when it ran (sequential studies)."""
        return StudyState(self.trials[:n], self.rng_seed, self.direction)

    def best(self) -> Optional[TrialRecord]:
        done = self.completed
        return min(done, key=lambda t: t.final_value) if done else None


# ---------------------------------------------------------------- TPE

def _bandwidth(obs: np.ndarray, lo: float, hi: float) -> float:
    span = hi - lo
    # lower clip keeps a clustered good set from collapsing onto one point
    floor = span / min(100.0, obs.size + 1.0) if span > 0 else 1e-12
    if obs.size < 2:
        return max(span, floor)
    # Scott's rule in one dimension
    bw = float(np.std(obs, ddof=1)) * obs.size ** (-1.0 / 5.0)
    return min(max(bw, floor), max(span, floor))


class TruncatedParzen:
    """Equal-weight mixture of Gaussians truncated to ``[lo, hi]``.

    One kernel per observation (Scott bandwidth) plus one broad prior kernel
    centred on the interval with sigma equal to its width.
    """

    def __init__(self, obs: Sequence[float], lo: float, hi: float, prior: bool = True):
        obs = np.asarray(obs, dtype=np.float64)
        bw = _bandwidth(obs, lo, hi)
        span = hi - lo
        if prior:
            self.mu = np.append(obs, 0.5 * (lo + hi))
            self.sigma = np.append(np.full(obs.size, bw), span)
        else:
            self.mu, self.sigma = obs, np.full(obs.size, bw)
        self.lo, self.hi = lo, hi
        self._a = ndtr((lo - self.mu) / self.sigma)
        self._b = ndtr((hi - self.mu) / self.sigma)
        self._mass = np.maximum(self._b - self._a, 1e-300)

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))[:, None]
        z = (x - self.mu[None, :]) / self.sigma[None, :]
        comp = np.exp(-0.5 * z * z) / (self.sigma[None, :] * math.sqrt(2 * math.pi)) / self._mass[None, :]
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside[:, 0], comp.mean(axis=1), 0.0)

    def sample(self, rng, n: int) -> np.ndarray:
        idx = rng.integers(self.mu.size, size=n)
        u = self._a[idx] + rng.random(n) * (self._b[idx] - self._a[idx])
        u = np.clip(u, 1e-300, 1 - 1e-16)
        x = self.mu[idx] + self.sigma[idx] * ndtri(u)
        return np.clip(x, self.lo, self.hi)


def _split(values: np.ndarray, gamma: float) -> Tuple[np.ndarray, np.ndarray]:
    order = np.argsort(values, kind="stable")
    n_good = max(1, int(math.ceil(gamma * len(values))))
    return order[:n_good], order[n_good:]


def _suggest_continuous(good, bad, lo, hi, rng, n_candidates) -> float:
    if lo == hi:
        return float(lo)
    l_est = TruncatedParzen(good, lo, hi)
    g_est = TruncatedParzen(bad, lo, hi) if len(bad) else None
    cand = l_est.sample(rng, n_candidates)
    score = np.log(l_est.pdf(cand) + 1e-300)
    if g_est is not None:
        score = score - np.log(g_est.pdf(cand) + 1e-300)
    return float(cand[int(np.argmax(score))])


def _suggest_categorical(good, bad, choices, rng, n_candidates):
    k = len(choices)
    idx = {c: i for i, c in enumerate(choices)}
    cg = np.bincount([idx[v] for v in good], minlength=k) + 1.0
    cb = np.bincount([idx[v] for v in bad], minlength=k) + 1.0
    lw, gw = cg / cg.sum(), cb / cb.sum()
    cand = rng.choice(k, size=n_candidates, p=lw)
    score = np.log(lw[cand]) - np.log(gw[cand])
    return choices[int(cand[int(np.argmax(score))])]


def random_params(space: SearchSpace, rng) -> dict:
    params = {"extra_objects": int(space.extra_objects[int(rng.integers(len(space.extra_objects)))])}
    for name, (lo, hi) in space.continuous.items():
        params[name] = float(rng.uniform(lo, hi))
    return params


def suggest_params(space: SearchSpace, state: StudyState, rng, n_startup: int = N_STARTUP,
                   gamma: float = GAMMA, n_candidates: int = N_CANDIDATES) -> dict:
    """Independent per-dimension TPE after ``n_startup`` completed trials."""
    done = state.completed
    if len(done) < n_startup or len(done) < 2:
        return random_params(space, rng)
    values = np.array([t.final_value for t in done])
    good_idx, bad_idx = _split(values, gamma)
    params = {}
    xs = [t.params["extra_objects"] for t in done]
    params["extra_objects"] = int(_suggest_categorical(
        [xs[i] for i in good_idx], [xs[i] for i in bad_idx], list(space.extra_objects), rng, n_candidates))
    for name, (lo, hi) in space.continuous.items():
        obs = np.array([t.params[name] for t in done], dtype=np.float64)
        params[name] = _suggest_continuous(obs[good_idx], obs[bad_idx], lo, hi, rng, n_candidates)
    return params


def suggest(space: SearchSpace, state: StudyState, rng, base: Optional[AugPolicy] = None,
            **kwargs) -> AugPolicy:
    return space.to_policy(suggest_params(space, state, rng, **kwargs), base)


def trial_rng(seed: int, trial_id: int):
    return np.random.default_rng([int(seed), int(trial_id)])


# ---------------------------------------------------------------- pruning

@dataclass(frozen=True)
class MedianPruner:
    n_min_trials: int = 5
    n_warmup: int = 2

    def __call__(self, state: StudyState, trial: TrialRecord, epoch: int) -> bool:
        value = trial.value_at(epoch)
        if value is None:
            raise EpochNotReported(f"trial {trial.trial_id} has no value at epoch {epoch}")
        if epoch < self.n_warmup:
            return False
        others = [t.value_at(epoch) for t in state.completed if t.trial_id != trial.trial_id]
        others = [v for v in others if v is not None]
        if len(others) < self.n_min_trials:
            return False
        return value > float(np.median(others))


def should_prune(state: StudyState, trial: TrialRecord, epoch: int,
                 n_min_trials: int = 5, n_warmup: int = 2) -> bool:
    return MedianPruner(n_min_trials, n_warmup)(state, trial, epoch)


def replay_pruning(state: StudyState, pruner: MedianPruner = MedianPruner()) -> List[Tuple[int, int, bool]]:
    """Pruning verdicts re-derived for every reported epoch of every trial."""
    out = []
    for t in state.trials:
        prior = state.prefix(t.trial_id)
        for e, _ in t.intermediate:
            out.append((t.trial_id, e, pruner(prior, t, e)))
    return out


# ---------------------------------------------------------------- store

def _header(state: StudyState) -> dict:
    return {"study": {"rng_seed": state.rng_seed, "direction": state.direction}}


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=True)


def append_record(path, record: TrialRecord) -> None:
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(_dump(record.to_dict()) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def write_store(state: StudyState, path) -> None:
    """Compacted store: header plus the latest record of each trial."""
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dump(_header(state)) + "\n")
        for t in state.trials:
            fh.write(_dump(t.to_dict()) + "\n")
    os.replace(tmp, path)


def read_store(path) -> StudyState:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    header, latest = None, {}
    for i, line in enumerate(lines):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                log.warning("%s: ignoring truncated final line", path)
                break
            raise StoreCorrupt(f"{path}:{i + 1}: not valid JSON") from None
        if "study" in obj:
            if header is not None:
                raise StoreCorrupt(f"{path}:{i + 1}: duplicate study header")
            header = obj["study"]
            continue
        try:
            rec = TrialRecord.from_dict(obj)
        except (KeyError, ValueError, TypeError) as exc:
            raise StoreCorrupt(f"{path}:{i + 1}: {exc}") from None
        latest[rec.trial_id] = rec
    if header is None:
        raise StoreCorrupt(f"{path}: missing study header")
    ids = sorted(latest)
    if ids != list(range(len(ids))):
        raise StoreCorrupt(f"{path}: trial ids are not dense")
    return StudyState([latest[i] for i in ids], int(header.get("rng_seed", 0)),
                      header.get("direction", "minimize"))


# ---------------------------------------------------------------- running

def parse_epoch_line(line: str) -> Optional[Tuple[int, float]]:
    m = EPOCH_LINE.match(line.strip())
    if not m:
        return None
    try:
        return int(m.group(1)), float(m.group(2))
    except ValueError:
        return None


def _run_trainer(cmd: List[str], record: TrialRecord, state: StudyState, pruner, store,
                 epochs: int) -> None:
    proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True, bufsize=1)
    pruned = False
    try:
        for line in proc.stdout:
            parsed = parse_epoch_line(line)
            if parsed is None:
                continue
            epoch, value = parsed
            if record.intermediate and epoch <= record.intermediate[-1][0]:
                continue
            record.report(epoch, value)
            append_record(store, record)
            if epoch < epochs and pruner(state, record, epoch):
                pruned = True
                proc.terminate()
                break
    finally:
        if proc.stdout:
            proc.stdout.close()
        code = proc.wait()
    if pruned:
        record.status = PRUNED
    elif code != 0 or not record.intermediate:
        record.status = FAILED
        raise TrainerCrash(f"trial {record.trial_id}: trainer exited with {code}")
    else:
        record.final_value = record.intermediate[-1][1]
        record.status = COMPLETE


def run_study(space: SearchSpace, budget: int, trainer, store, epochs_per_trial: int = 12,
              seed: int = 0, base_policy: Optional[AugPolicy] = None,
              pruner: Optional[MedianPruner] = None, work_dir=None) -> StudyState:
    """Run trials until ``budget`` trials exist in the store.

    Resuming from an existing store re-runs any trial left ``running`` by an
    interruption, with the same suggestion it had originally.
    """
    store = Path(store)
    pruner = pruner or MedianPruner()
    cmd_base = shlex.split(trainer) if isinstance(trainer, str) else list(trainer)
    work_dir = Path(work_dir) if work_dir else store.parent / (store.stem + "_policies")
    work_dir.mkdir(parents=True, exist_ok=True)

    if store.exists() and store.stat().st_size > 0:
        state = read_store(store)
        if state.rng_seed != seed:
            log.warning("store seed %d overrides requested seed %d", state.rng_seed, seed)
        state.trials = [t for t in state.trials if t.status != RUNNING]
        write_store(state, store)
    else:
        state = StudyState([], seed)
        write_store(state, store)

    while len(state.trials) < budget:
        tid = len(state.trials)
        params = suggest_params(space, state, trial_rng(state.rng_seed, tid))
        policy = space.to_policy(params, base_policy)
        record = TrialRecord(tid, params, policy.to_dict())
        policy_path = work_dir / f"trial_{tid:04d}.json"
        policy_path.write_text(policy.to_json() + "\n", encoding="utf-8")
        append_record(store, record)
        cmd = cmd_base + ["--policy", str(policy_path), "--epochs", str(epochs_per_trial)]
        try:
            _run_trainer(cmd, record, state, pruner, store, epochs_per_trial)
        except TrainerCrash as exc:
            log.warning("%s", exc)
        except OSError as exc:
            record.status = FAILED
            log.warning("trial %d: could not start trainer: %s", tid, exc)
        append_record(store, record)
        state.trials.append(record)
    return state


def optimize(objective: Callable[[dict], float], space: SearchSpace, n_trials: int, seed: int = 0,
             sampler: str = "tpe") -> StudyState:
    """In-process study against a plain objective (no epochs, no pruning)."""
    state = StudyState([], seed)
    for tid in range(n_trials):
        rng = trial_rng(seed, tid)
        if sampler == "tpe":
            params = suggest_params(space, state, rng)
        elif sampler == "random":
            params = random_params(space, rng)
        else:
            raise ValueError(f"unknown sampler {sampler!r}")
        value = float(objective(params))
        state.trials.append(TrialRecord(tid, params, {}, [], COMPLETE, value))
    return state
