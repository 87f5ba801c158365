"""Episode storage, n-step window sampling, and the CHEFD1 dataset format.

Stores accept concurrent appends (episode-granular lock) and are sampled
through `NStepSampler`, which mixes several stores by configurable weights
and never mutates them. `save_dataset`/`load_dataset` round-trip every
record bitwise.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import REASON_CODES, REASON_NAMES
from .errors import FormatError, SchemaError, UsageError

DATASET_MAGIC = b"CHEFD1"
DATASET_VERSION = 1


@dataclass
class TransitionRecord:
    observation: np.ndarray        # float32 [D]
    action: np.ndarray             # float32 [A]
    rewards: np.ndarray            # float32 [6]
    next_observation: np.ndarray   # float32 [D]
    terminated: bool
    termination_reason: str        # none | horizon | force


@dataclass
class EpisodeRecord:
    steps: list[TransitionRecord]
    variant: int
    scheduler_choices: list[tuple[int, int]]
    policy_tag: str
    seed: int


@dataclass
class DatasetManifest:
    source_stage: str
    episode_count: int
    obs_dim: int
    action_dim: int
    num_tasks: int
    env_config_digest: int

    def as_text(self) -> str:
        lines = [f"source_stage={self.source_stage}",
                 f"episode_count={self.episode_count}",
                 f"obs_dim={self.obs_dim}",
                 f"action_dim={self.action_dim}",
                 f"num_tasks={self.num_tasks}",
                 f"env_config_digest={self.env_config_digest}"]
        return "\n".join(lines) + "\n"


@dataclass
class _Compiled:
    obs: np.ndarray       # [T, D]
    act: np.ndarray       # [T, A]
    rew: np.ndarray       # [T, 6]
    next_obs: np.ndarray  # [T, D]
    terminated: bool
    length: int


def _compile(episode: EpisodeRecord) -> _Compiled:
    obs = np.stack([s.observation for s in episode.steps]).astype(np.float32)
    act = np.stack([s.action for s in episode.steps]).astype(np.float32)
    rew = np.stack([s.rewards for s in episode.steps]).astype(np.float32)
    nxt = np.stack([s.next_observation for s in episode.steps]).astype(np.float32)
    return _Compiled(obs, act, rew, nxt, episode.steps[-1].terminated,
                     len(episode.steps))


class ReplayStore:
    """Append-only episode store; episodes are immutable once appended."""

    def __init__(self, obs_dim: int, action_dim: int, num_tasks: int = 6,
                 source_stage: str = "collect", env_config_digest: int = 0):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.num_tasks = num_tasks
        self.source_stage = source_stage
        self.env_config_digest = env_config_digest
        self._episodes: list[EpisodeRecord] = []
        self._compiled: list[_Compiled] = []
        self._lock = threading.Lock()

    def _validate(self, episode: EpisodeRecord) -> None:
        if not episode.steps:
            raise SchemaError("episode has no steps")
        for i, s in enumerate(episode.steps):
            if s.observation.shape != (self.obs_dim,) or s.next_observation.shape != (self.obs_dim,):
                raise SchemaError(
                    f"step {i}: observation dims {s.observation.shape} do not match "
                    f"store obs_dim {self.obs_dim}")
            if s.action.shape != (self.action_dim,):
                raise SchemaError(f"step {i}: action dims {s.action.shape} do not "
                                  f"match store action_dim {self.action_dim}")
            if s.rewards.shape != (self.num_tasks,):
                raise SchemaError(f"step {i}: reward vector length "
                                  f"{s.rewards.shape} != {self.num_tasks}")
            if s.terminated and i != len(episode.steps) - 1:
                raise SchemaError(f"terminated step {i} is not last")

    def append_episode(self, episode: EpisodeRecord) -> int:
        self._validate(episode)
        compiled = _compile(episode)
        with self._lock:
            self._episodes.append(episode)
            self._compiled.append(compiled)
            return len(self._episodes) - 1

    @property
    def num_episodes(self) -> int:
        with self._lock:
            return len(self._episodes)

    def episode(self, idx: int) -> EpisodeRecord:
        return self._episodes[idx]

    def episodes(self) -> list[EpisodeRecord]:
        with self._lock:
            return list(self._episodes)

    def total_steps(self) -> int:
        with self._lock:
            return sum(c.length for c in self._compiled)

    def manifest(self) -> DatasetManifest:
        return DatasetManifest(self.source_stage, self.num_episodes,
                               self.obs_dim, self.action_dim, self.num_tasks,
                               self.env_config_digest)

    def filtered(self, predicate) -> "ReplayStore":
        """New store sharing the episodes that satisfy `predicate`."""
        out = ReplayStore(self.obs_dim, self.action_dim, self.num_tasks,
                          self.source_stage, self.env_config_digest)
        with self._lock:
            pairs = list(zip(self._episodes, self._compiled))
        for ep, comp in pairs:
            if predicate(ep):
                out._episodes.append(ep)
                out._compiled.append(comp)
        return out

    def _snapshot(self):
        with self._lock:
            count = len(self._compiled)
            compiled = self._compiled[:count]
        lengths = np.array([c.length for c in compiled], dtype=np.int64)
        return compiled, lengths


@dataclass(frozen=True)
class SamplerConfig:
    n_step: int = 5
    batch_size: int = 64
    seed: int = 0

    def validate(self) -> "SamplerConfig":
        if self.n_step < 1:
            raise UsageError("n_step must be >= 1")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        return self


@dataclass
class Batch:
    obs: np.ndarray           # float32 [B, Dv]
    actions: np.ndarray       # float32 [B, A]
    rewards: np.ndarray       # float32 [B, n, 6], zero-padded past effective_n
    bootstrap_obs: np.ndarray  # float32 [B, Dv]
    effective_n: np.ndarray   # int64 [B]
    terminal: np.ndarray      # bool [B]
    source: np.ndarray        # int64 [B]


class NStepSampler:
    """Uniform start positions within a source, sources mixed by weight."""

    def __init__(self, sources: list[tuple[ReplayStore, float]],
                 cfg: SamplerConfig, obs_columns=None):
        if not sources:
            raise UsageError("at least one source store required")
        weights = np.array([w for _, w in sources], dtype=np.float64)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise UsageError("mixing weights must be >= 0 and sum to 1")
        self.cfg = cfg.validate()
        self.sources = [s for s, _ in sources]
        self.weights = weights
        self.obs_columns = None if obs_columns is None else np.asarray(obs_columns)
        self._rng = np.random.default_rng(cfg.seed)

    def _view(self, arr: np.ndarray) -> np.ndarray:
        return arr if self.obs_columns is None else arr[..., self.obs_columns]

    def sample(self, rng=None) -> Batch:
        rng = rng or self._rng
        cfg = self.cfg
        snaps = []
        for store in self.sources:
            compiled, lengths = store._snapshot()
            if len(compiled) == 0:
                raise UsageError("cannot sample from an empty source store")
            snaps.append((compiled, np.cumsum(lengths)))

        B, n = cfg.batch_size, cfg.n_step
        any_obs = snaps[0][0][0].obs
        dv = any_obs.shape[1] if self.obs_columns is None else len(self.obs_columns)
        adim = self.sources[0].action_dim
        ntasks = self.sources[0].num_tasks
        batch = Batch(np.empty((B, dv), np.float32),
                      np.empty((B, adim), np.float32),
                      np.zeros((B, n, ntasks), np.float32),
                      np.empty((B, dv), np.float32),
                      np.empty(B, np.int64),
                      np.zeros(B, bool),
                      np.empty(B, np.int64))
        src_idx = rng.choice(len(self.sources), size=B, p=self.weights)
        for b in range(B):
            si = int(src_idx[b])
            compiled, cum = snaps[si]
            pos = int(rng.integers(0, cum[-1]))
            e = int(np.searchsorted(cum, pos, side="right"))
            t = pos - (int(cum[e - 1]) if e > 0 else 0)
            ep = compiled[e]
            eff = min(n, ep.length - t)
            batch.obs[b] = self._view(ep.obs[t])
            batch.actions[b] = ep.act[t]
            batch.rewards[b, :eff] = ep.rew[t:t + eff]
            batch.bootstrap_obs[b] = self._view(ep.next_obs[t + eff - 1])
            batch.effective_n[b] = eff
            batch.terminal[b] = bool(ep.terminated and t + eff == ep.length)
            batch.source[b] = si
        return batch


def sample_nstep_batch(sources: list[tuple[ReplayStore, float]],
                       cfg: SamplerConfig, obs_columns=None) -> Batch:
    """One-shot sampling entry point (fresh RNG from cfg.seed)."""
    return NStepSampler(sources, cfg, obs_columns).sample()


# ---------------------------------------------------------------------------
# CHEFD1 on-disk format
# ---------------------------------------------------------------------------

def _episode_bytes(episode: EpisodeRecord, obs_dim: int, action_dim: int,
                   num_tasks: int) -> bytes:
    tag = episode.policy_tag.encode("utf-8")
    head = struct.pack("<IBQ", len(episode.steps), episode.variant,
                       episode.seed & 0xFFFFFFFFFFFFFFFF)
    head += struct.pack("<I", len(tag)) + tag
    head += struct.pack("<I", len(episode.scheduler_choices))
    for period, task in episode.scheduler_choices:
        head += struct.pack("<II", period, task)
    width = 2 * obs_dim + action_dim + num_tasks + 2
    payload = np.empty((len(episode.steps), width), dtype="<f4")
    for i, s in enumerate(episode.steps):
        row = payload[i]
        o = 0
        row[o:o + obs_dim] = s.observation; o += obs_dim
        row[o:o + action_dim] = s.action; o += action_dim
        row[o:o + num_tasks] = s.rewards; o += num_tasks
        row[o:o + obs_dim] = s.next_observation; o += obs_dim
        row[o] = 1.0 if s.terminated else 0.0
        row[o + 1] = float(REASON_CODES[s.termination_reason])
    return head + payload.tobytes()


def save_dataset(store: ReplayStore, path) -> DatasetManifest:
    manifest = store.manifest()
    episodes = store.episodes()
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<IIII", DATASET_VERSION, store.obs_dim,
                            store.action_dim, store.num_tasks))
        f.write(struct.pack("<QQ", len(episodes),
                            store.env_config_digest & 0xFFFFFFFFFFFFFFFF))
        for ep in episodes:
            f.write(_episode_bytes(ep, store.obs_dim, store.action_dim,
                                   store.num_tasks))
    manifest_path = Path(path).parent / "manifest.txt"
    with open(manifest_path, "w", encoding="utf-8", newline="") as f:
        f.write(manifest.as_text())
    return manifest


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(f"truncated file at byte {len(self.data)} "
                              f"(needed {self.off + n})")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, spec: str):
        return struct.unpack(spec, self.take(struct.calcsize(spec)))


def load_dataset(path, source_stage: str = "collect"):
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    if r.take(6) != DATASET_MAGIC:
        raise FormatError("bad dataset magic at byte 0")
    version, obs_dim, action_dim, num_tasks = r.unpack("<IIII")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    episode_count, digest = r.unpack("<QQ")
    store = ReplayStore(obs_dim, action_dim, num_tasks, source_stage, digest)
    width = 2 * obs_dim + action_dim + num_tasks + 2
    for _ in range(episode_count):
        step_count, variant, seed = r.unpack("<IBQ")
        (tag_len,) = r.unpack("<I")
        tag = r.take(tag_len).decode("utf-8")
        (n_choices,) = r.unpack("<I")
        choices = [tuple(r.unpack("<II")) for _ in range(n_choices)]
        raw = np.frombuffer(r.take(4 * width * step_count), dtype="<f4")
        rows = raw.reshape(step_count, width)
        steps = []
        for i in range(step_count):
            row = rows[i]
            o = 0
            obs = row[o:o + obs_dim].copy(); o += obs_dim
            act = row[o:o + action_dim].copy(); o += action_dim
            rew = row[o:o + num_tasks].copy(); o += num_tasks
            nxt = row[o:o + obs_dim].copy(); o += obs_dim
            terminated = row[o] != 0.0
            reason = REASON_NAMES[int(row[o + 1])]
            steps.append(TransitionRecord(obs, act, rew, nxt, bool(terminated),
                                          reason))
        store.append_episode(EpisodeRecord(steps, int(variant), choices, tag,
                                           int(seed)))
    if r.off != len(data):
        raise FormatError(f"trailing bytes after last episode at byte {r.off}")
    if store.num_episodes != episode_count:
        raise FormatError("episode count mismatch")
    return store, store.manifest()
