"""Experiment harness: configuration, training runs, benchmarks and timing.

Configs are flat ``key = value`` text files ('#' starts a comment).  Unknown
keys are rejected, every omitted key falls back to a documented default, and
dB/dBm values are converted to linear watts right here at the boundary.

Metric output is a versioned CSV (deterministic: two single-threaded runs
with the same config and seeds produce bit-identical files) plus a JSON-lines
event log that carries timestamps, wall-clock measurements and checkpoint
notices -- everything that may legitimately differ between runs.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, fields

import numpy as np

from .channel import (
    ChannelModelConfig,
    ChannelProcess,
    ChannelTrace,
    TraceStream,
    config_fingerprint,
    generate_trace,
    load_trace,
    save_trace,
)
from .drl import DdpgAgent
from .env import BeamformingEnv, decode_action
from .network import NetworkConfig, compute_metrics, dbm_to_watt, sum_rate
from .solvers import mrt_beamformer, mslnr_beamformer, structured_beamformer, wmmse, wmmse_multi_init

METRICS_VERSION = "cbflab-metrics-v1"
BENCH_VERSION = "cbflab-bench-v1"
CHECKPOINT_VERSION = 1
OUT_DIR_ENV_VAR = "CBFLAB_OUT_DIR"

SCHEMES = ("ddcbf", "mslnr-ddpg", "mslnr-ep", "wmmse", "wmmse-nri")


class ConfigError(ValueError):
    """Raised for unknown keys, bad values or violated config constraints."""


def _parse_hidden(text):
    return tuple(int(part) for part in str(text).split(",") if part.strip())


# key -> (parser, default); None default means the key is mandatory.
_CONFIG_SPEC = {
    # network
    "num_cells": (int, None),
    "users_per_cell": (int, None),
    "array_rows": (int, None),
    "array_cols": (int, None),
    "p_max_dbm": (float, 38.0),
    "noise_dbm": (float, -101.0),
    "carrier_freq_ghz": (float, 2.6),
    "cell_radius_m": (float, 250.0),
    "slot_duration_ms": (float, 20.0),
    "ue_speed_kmh": (float, 3.0),
    # channel model
    "channel_model": (str, "geometric-ura"),
    "temporal_corr": (str, "auto"),
    "pathloss_exponent": (float, 3.0),
    "pathloss_ref_db": (float, 36.0),
    "pathloss_ref_dist_m": (float, 1.0),
    "num_rays": (int, 8),
    "angular_spread_deg": (float, 10.0),
    "trace_file": (str, ""),
    # agent
    "hidden_sizes": (_parse_hidden, (128, 64, 32)),
    "memory_capacity": (int, 2000),
    "batch_size": (int, 256),
    "actor_lr": (float, 1e-4),
    "critic_lr": (float, 1e-3),
    "discount": (float, 0.5),
    "soft_update_rate": (float, 0.01),
    "noise_sigma_init": (float, 0.6),
    "noise_decay": (float, 1e-3),
    "noise_sigma_min": (float, 0.01),
    "codebook_size": (int, 128),
    "csi_keep": (int, 3),
    "num_interferers": (int, 2),
    "action_mode": (str, "structured"),
    # run control
    "num_slots": (int, 20000),
    "eval_window": (int, 200),
    "bench_slots": (int, 200),
    "bench_offset": (int, -1),
    "episode_length": (int, 0),
    "seed": (int, None),
    "out_dir": (str, None),
    "checkpoint_every": (int, 5000),
    "schemes": (str, "ddcbf,mslnr-ep,wmmse"),
    "checkpoint": (str, ""),
    "mslnr_checkpoint": (str, ""),
    # wmmse baseline
    "wmmse_stop_eps": (float, 1e-4),
    "wmmse_max_iter": (int, 500),
    "wmmse_num_inits": (int, 10),
}


@dataclass
class RunConfig:
    """Fully resolved experiment configuration."""

    network: NetworkConfig
    channel: ChannelModelConfig
    hidden_sizes: tuple
    memory_capacity: int
    batch_size: int
    actor_lr: float
    critic_lr: float
    discount: float
    soft_update_rate: float
    noise_sigma_init: float
    noise_decay: float
    noise_sigma_min: float
    codebook_size: int
    csi_keep: int
    num_interferers: int
    action_mode: str
    num_slots: int
    eval_window: int
    bench_slots: int
    bench_offset: int
    episode_length: int
    seed: int
    out_dir: str
    checkpoint_every: int
    schemes: tuple
    checkpoint: str
    mslnr_checkpoint: str
    trace_file: str
    wmmse_stop_eps: float
    wmmse_max_iter: int
    wmmse_num_inits: int


def build_config(values):
    """Assemble a RunConfig from a flat key -> raw-value mapping."""
    resolved = {}
    for key, (parser, default) in _CONFIG_SPEC.items():
        if key in values:
            raw = values[key]
            try:
                resolved[key] = parser(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"key '{key}': cannot parse {raw!r}") from exc
        elif default is None:
            raise ConfigError(f"missing mandatory key '{key}'")
        else:
            resolved[key] = default

    network = NetworkConfig(
        num_cells=resolved["num_cells"],
        users_per_cell=resolved["users_per_cell"],
        array_rows=resolved["array_rows"],
        array_cols=resolved["array_cols"],
        max_power=dbm_to_watt(resolved["p_max_dbm"]),
        noise_power=dbm_to_watt(resolved["noise_dbm"]),
        carrier_freq=resolved["carrier_freq_ghz"] * 1e9,
        cell_radius=resolved["cell_radius_m"],
        slot_duration=resolved["slot_duration_ms"] / 1e3,
        ue_speed=resolved["ue_speed_kmh"] / 3.6,
    )
    corr_raw = resolved["temporal_corr"]
    temporal_corr = None if str(corr_raw).strip() == "auto" else float(corr_raw)
    channel = ChannelModelConfig(
        model_kind=resolved["channel_model"],
        temporal_corr=temporal_corr,
        pathloss_exponent=resolved["pathloss_exponent"],
        pathloss_ref_db=resolved["pathloss_ref_db"],
        pathloss_ref_dist=resolved["pathloss_ref_dist_m"],
        num_rays=resolved["num_rays"],
        angular_spread_deg=resolved["angular_spread_deg"],
        rng_seed=resolved["seed"],
    )

    if resolved["num_interferers"] > network.num_cells - 1:
        raise ConfigError(
            "num_interferers must be <= num_cells - 1 "
            f"({resolved['num_interferers']} > {network.num_cells - 1})"
        )
    if resolved["batch_size"] > resolved["memory_capacity"]:
        raise ConfigError("batch_size must be <= memory_capacity")
    schemes = tuple(s.strip() for s in resolved["schemes"].split(",") if s.strip())
    for scheme in schemes:
        if scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme '{scheme}' (choices: {SCHEMES})")
    if resolved["action_mode"] not in ("structured", "mslnr-power"):
        raise ConfigError("action_mode must be 'structured' or 'mslnr-power'")

    out_dir = os.environ.get(OUT_DIR_ENV_VAR, "").strip() or resolved["out_dir"]
    kwargs = {
        f.name: resolved[f.name]
        for f in fields(RunConfig)
        if f.name in resolved and f.name not in ("out_dir", "schemes")
    }
    return RunConfig(network=network, channel=channel, out_dir=out_dir, schemes=schemes, **kwargs)


def parse_config(path):
    """Parse a flat key = value config file.

    Raises ConfigError with the offending line number for unknown keys,
    malformed lines or bad values.
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = text.partition("=")
            key = key.strip()
            if key not in _CONFIG_SPEC:
                raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key '{key}'")
            values[key] = raw.strip()
    try:
        return build_config(values)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_defaults():
    """Documented defaults for every optional key."""
    return {k: v for k, (_, v) in _CONFIG_SPEC.items() if v is not None}


def moving_average(series, window):
    """Trailing moving average; entry t averages series[max(0, t-w+1):t+1]."""
    series = np.asarray(series, dtype=float)
    cum = np.cumsum(series)
    out = np.empty_like(series)
    out[:window] = cum[:window] / np.arange(1, min(window, series.size) + 1)
    if series.size > window:
        out[window:] = (cum[window:] - cum[:-window]) / window
    return out


class MetricSink:
    """Per-slot CSV metrics plus a JSON-lines event log.

    The CSV is append-only and flushed per slot; floats are written with
    ``repr`` so values round-trip losslessly.  Timestamps and wall-clock
    figures go to the event log only, keeping the CSV bit-reproducible.
    """

    def __init__(self, out_dir, num_cells, basename="train"):
        os.makedirs(out_dir, exist_ok=True)
        self.num_cells = num_cells
        self.csv_path = os.path.join(out_dir, f"{basename}.csv")
        self.events_path = os.path.join(out_dir, f"{basename}_events.jsonl")
        self.rows_written = 0
        columns = ["slot", "scheme", "sum_rate"]
        columns += [f"cell_rate_{n}" for n in range(num_cells)]
        columns += [f"reward_{n}" for n in range(num_cells)]
        columns += ["sigma_a"]
        self.columns = columns
        self._csv = open(self.csv_path, "w")
        self._csv.write(f"# {METRICS_VERSION}\n")
        self._csv.write(",".join(columns) + "\n")
        self._csv.flush()
        self._events = open(self.events_path, "w")

    def write_slot(self, slot, scheme, cell_rates, rewards, sigma_a):
        parts = [str(slot), scheme, repr(float(np.sum(cell_rates)))]
        parts += [repr(float(x)) for x in cell_rates]
        parts += [repr(float(x)) for x in rewards]
        parts += [repr(float(sigma_a))]
        self._csv.write(",".join(parts) + "\n")
        self._csv.flush()
        self.rows_written += 1

    def event(self, kind, **payload):
        record = {"kind": kind, "time": time.time(), **payload}
        self._events.write(json.dumps(record) + "\n")
        self._events.flush()

    def truncate_to(self, rows):
        """Drop rows beyond ``rows`` (used when resuming mid-run)."""
        self._csv.close()
        with open(self.csv_path) as fh:
            lines = fh.readlines()
        keep = lines[: 2 + rows]
        with open(self.csv_path, "w") as fh:
            fh.writelines(keep)
        self._csv = open(self.csv_path, "a")
        self.rows_written = rows

    def close(self):
        self._csv.close()
        self._events.close()

    @staticmethod
    def read(path):
        """Parse a metrics CSV back into a list of row dicts."""
        with open(path) as fh:
            version = fh.readline().strip().lstrip("# ")
            if version != METRICS_VERSION:
                raise ConfigError(f"unsupported metrics version {version!r}")
            header = fh.readline().strip().split(",")
            rows = []
            for line in fh:
                parts = line.strip().split(",")
                row = {}
                for col, part in zip(header, parts):
                    if col == "scheme":
                        row[col] = part
                    elif col == "slot":
                        row[col] = int(part)
                    else:
                        row[col] = float(part)
                rows.append(row)
        return rows


class MetricSinkAppend(MetricSink):
    """MetricSink variant that reopens an existing CSV for appending."""

    def __init__(self, out_dir, num_cells, basename="train"):  # noqa: no super
        self.num_cells = num_cells
        self.csv_path = os.path.join(out_dir, f"{basename}.csv")
        self.events_path = os.path.join(out_dir, f"{basename}_events.jsonl")
        with open(self.csv_path) as fh:
            lines = fh.readlines()
        self.columns = lines[1].strip().split(",")
        self.rows_written = len(lines) - 2
        self._csv = open(self.csv_path, "a")
        self._events = open(self.events_path, "a")


def _channel_stream(cfg: RunConfig):
    """Trace-backed stream when configured, otherwise a live process."""
    if cfg.trace_file:
        trace = load_trace(cfg.trace_file)
        net = cfg.network
        if (
            trace.num_cells != net.num_cells
            or trace.users_per_cell != net.users_per_cell
            or trace.num_antennas != net.num_antennas
        ):
            raise ConfigError("trace dimensions do not match the network config")
        return TraceStream(trace)
    return ChannelProcess(cfg.network, cfg.channel)


def _build_env(cfg: RunConfig, stream=None, action_mode=None):
    return BeamformingEnv(
        cfg.network,
        stream if stream is not None else _channel_stream(cfg),
        codebook_size=cfg.codebook_size,
        csi_keep=cfg.csi_keep,
        num_interferers=cfg.num_interferers,
        action_mode=action_mode or cfg.action_mode,
    )


def _build_agents(cfg: RunConfig, env):
    agents = []
    for n in range(cfg.network.num_cells):
        agents.append(
            DdpgAgent(
                state_dim=env.state_dim,
                action_dim=env.action_dim,
                hidden_sizes=cfg.hidden_sizes,
                actor_lr=cfg.actor_lr,
                critic_lr=cfg.critic_lr,
                discount=cfg.discount,
                soft_update_rate=cfg.soft_update_rate,
                noise_sigma=cfg.noise_sigma_init,
                noise_decay=cfg.noise_decay,
                noise_sigma_min=cfg.noise_sigma_min,
                memory_capacity=cfg.memory_capacity,
                batch_size=cfg.batch_size,
                seed=[cfg.seed, n],
            )
        )
    return agents


def save_checkpoint(path, slot, states, env, agents, sink_rows):
    arrays = {}
    meta = {
        "version": CHECKPOINT_VERSION,
        "slot": slot,
        "num_agents": len(agents),
        "sink_rows": sink_rows,
    }
    arrays["states"] = np.asarray(states)
    env_state = env.state_dict()
    arrays["env_channel_h"] = env_state["channel_h"]
    meta["env_slot"] = env_state["slot"]
    stream_state = env_state["stream"]
    if "cursor" in stream_state:
        meta["stream"] = {"kind": "trace", "cursor": stream_state["cursor"]}
    else:
        meta["stream"] = {
            "kind": "process",
            "slot": stream_state["slot"],
            "rng_state": stream_state["rng_state"],
        }
        arrays["proc_h"] = stream_state["h"]
        arrays["proc_ue_positions"] = stream_state["ue_positions"]
        arrays["proc_ue_headings"] = stream_state["ue_headings"]
    prev = env_state["prev"]
    meta["has_prev"] = prev is not None
    if prev is not None:
        for key, value in prev.items():
            arrays[f"prev_{key}"] = value
    for n, agent in enumerate(agents):
        for key, value in agent.state_dict().items():
            arrays[f"agent{n}_{key}"] = value
    arrays["harness_meta"] = np.array(json.dumps(meta))
    np.savez(path, **arrays)


def load_checkpoint(path, env, agents):
    """Restore env + agents in place; returns (slot, states, sink_rows)."""
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(str(arrays["harness_meta"]))
    if meta["version"] != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {meta['version']}")
    if meta["num_agents"] != len(agents):
        raise ConfigError("checkpoint agent count does not match config")
    stream_meta = meta["stream"]
    if stream_meta["kind"] == "trace":
        stream_state = {"cursor": stream_meta["cursor"]}
    else:
        stream_state = {
            "slot": stream_meta["slot"],
            "rng_state": stream_meta["rng_state"],
            "h": arrays["proc_h"],
            "ue_positions": arrays["proc_ue_positions"],
            "ue_headings": arrays["proc_ue_headings"],
        }
    prev = None
    if meta["has_prev"]:
        prev = {
            key: arrays[f"prev_{key}"]
            for key in (
                "sinr",
                "rate",
                "received_power",
                "interference",
                "total_ipn",
                "powers",
                "own_channels",
            )
        }
    env.load_state_dict(
        {
            "slot": meta["env_slot"],
            "channel_h": arrays["env_channel_h"],
            "stream": stream_state,
            "prev": prev,
        }
    )
    for n, agent in enumerate(agents):
        prefix = f"agent{n}_"
        agent.load_state_dict(
            {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}
        )
    return meta["slot"], arrays["states"], meta["sink_rows"]


def run_train(cfg: RunConfig, resume_from=None, basename=None):
    """Train one agent per BS over ``num_slots`` environment steps.

    Implements the decentralized loop: a warm-up phase of uniformly random
    actions until each replay holds one mini-batch, then noisy policy actions
    with one train step and one soft target update per agent per slot.
    Periodic checkpoints allow bit-exact resumption in single-threaded mode.

    Returns a summary dict with paths and the final moving-average sum rate.
    """
    if basename is None:
        basename = "train" if cfg.action_mode == "structured" else "train_mslnr"
    env = _build_env(cfg)
    agents = _build_agents(cfg, env)
    ckpt_dir = os.path.join(cfg.out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)

    if resume_from:
        sink = MetricSinkAppend(cfg.out_dir, cfg.network.num_cells, basename)
        start_slot, states, sink_rows = load_checkpoint(resume_from, env, agents)
        sink.truncate_to(sink_rows)
        sink.event("resume", checkpoint=resume_from, slot=start_slot)
    else:
        sink = MetricSink(cfg.out_dir, cfg.network.num_cells, basename)
        states = env.reset()
        start_slot = 0
        sink.event(
            "run-start",
            num_slots=cfg.num_slots,
            action_mode=cfg.action_mode,
            seed=cfg.seed,
            channel_fingerprint=config_fingerprint(cfg.channel, cfg.network),
        )

    warmup = cfg.batch_size
    sum_rates = []
    try:
        for slot in range(start_slot, cfg.num_slots):
            tic = time.perf_counter()
            if slot < warmup:
                actions = np.stack([agent.random_action() for agent in agents])
            else:
                actions = np.stack(
                    [agent.act(states[n], explore=True) for n, agent in enumerate(agents)]
                )
            next_states, rewards, metrics = env.step(actions)
            for n, agent in enumerate(agents):
                agent.remember(states[n], actions[n], rewards[n], next_states[n])
            losses = []
            for agent in agents:
                if agent.ready():
                    loss, _ = agent.train_step()
                    agent.soft_update()
                    losses.append(loss)
            states = next_states
            cell_rates = metrics.rate.sum(axis=1)
            sum_rates.append(float(cell_rates.sum()))
            sink.write_slot(slot, "train", cell_rates, rewards, agents[0].noise_sigma)
            if (slot + 1) % cfg.checkpoint_every == 0 or slot + 1 == cfg.num_slots:
                path = os.path.join(ckpt_dir, f"{basename}_{slot + 1:08d}.npz")
                save_checkpoint(path, slot + 1, states, env, agents, sink.rows_written)
                sink.event(
                    "checkpoint",
                    path=path,
                    slot=slot + 1,
                    wall_s=time.perf_counter() - tic,
                    mean_loss=float(np.mean(losses)) if losses else None,
                )
    except ArithmeticError as exc:
        dump = os.path.join(cfg.out_dir, f"{basename}_abort.json")
        with open(dump, "w") as fh:
            json.dump(
                {
                    "error": str(exc),
                    "slot": slot,
                    "noise_sigma": agents[0].noise_sigma,
                    "recent_sum_rates": sum_rates[-20:],
                },
                fh,
                indent=2,
            )
        sink.event("abort", error=str(exc), dump=dump)
        sink.close()
        raise
    final_ckpt = os.path.join(ckpt_dir, f"{basename}_{cfg.num_slots:08d}.npz")

    rows = MetricSink.read(sink.csv_path)
    series = [r["sum_rate"] for r in rows if r["scheme"] == "train"]
    ma = moving_average(series, cfg.eval_window)
    summary = {
        "metrics_csv": sink.csv_path,
        "events": sink.events_path,
        "checkpoint": final_ckpt,
        "final_moving_average": float(ma[-1]),
        "slots": len(series),
    }
    sink.event("run-end", **{k: v for k, v in summary.items() if k != "events"})
    sink.close()
    return summary


def _collect_window(cfg: RunConfig, offset, count):
    """Channel window [offset, offset+count) of the configured source."""
    if cfg.trace_file:
        trace = load_trace(cfg.trace_file)
        if offset + count > trace.num_slots:
            raise ConfigError("benchmark window exceeds the stored trace")
        return ChannelTrace(
            num_cells=trace.num_cells,
            users_per_cell=trace.users_per_cell,
            num_antennas=trace.num_antennas,
            cfg_hash=trace.cfg_hash,
            h=trace.h[offset : offset + count],
        )
    proc = ChannelProcess(cfg.network, cfg.channel)
    for _ in range(offset):
        proc.next_slot()
    net = cfg.network
    h = np.empty(
        (count, net.num_cells, net.num_cells, net.users_per_cell, net.num_antennas),
        dtype=np.complex128,
    )
    for t in range(count):
        h[t] = proc.next_slot().h
    return ChannelTrace(
        num_cells=net.num_cells,
        users_per_cell=net.users_per_cell,
        num_antennas=net.num_antennas,
        cfg_hash=config_fingerprint(cfg.channel, cfg.network),
        h=h,
    )


def _slot_seed(seed, slot):
    """Deterministic per-slot stream for solver initializations."""
    return int(np.random.SeedSequence([seed, slot]).generate_state(1)[0])


def _mslnr_ep_beams(channel, net):
    import numpy as _np

    from .network import BeamformerSet

    k = net.users_per_cell
    w = _np.empty(
        (net.num_cells, k, net.num_antennas), dtype=_np.complex128
    )
    for n in range(net.num_cells):
        w[n] = mslnr_beamformer(
            channel.h[n], n, net.noise_power, net.max_power, _np.full(k, 1.0 / k)
        )
    return BeamformerSet(w=w)


def load_agents_from_checkpoint(path, num_agents):
    """Rebuild every per-BS agent stored inside a run checkpoint."""
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    agents = []
    for n in range(num_agents):
        prefix = f"agent{n}_"
        blob = {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}
        if "meta" not in blob:
            raise ConfigError(f"checkpoint {path} holds no agent {n}")
        meta = json.loads(str(blob["meta"]))
        agent = DdpgAgent(
            state_dim=meta["state_dim"],
            action_dim=meta["action_dim"],
            hidden_sizes=tuple(meta["hidden_sizes"]),
            actor_lr=meta["actor_lr"],
            critic_lr=meta["critic_lr"],
            discount=meta["discount"],
            soft_update_rate=meta["soft_update_rate"],
            noise_sigma=meta["noise_sigma"],
            noise_decay=meta["noise_decay"],
            noise_sigma_min=meta["noise_sigma_min"],
            memory_capacity=meta["memory_capacity"],
            batch_size=meta["batch_size"],
        )
        agent.load_state_dict(blob)
        agents.append(agent)
    return agents


def _rollout_policy(cfg, trace, checkpoint, action_mode):
    """Greedy rollout of a trained policy over a channel window."""
    if not os.path.exists(checkpoint):
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    env = _build_env(cfg, stream=TraceStream(trace), action_mode=action_mode)
    agents = load_agents_from_checkpoint(checkpoint, cfg.network.num_cells)
    states = env.reset()
    rows = []
    for _ in range(trace.num_slots - 1):
        actions = np.stack(
            [agent.act(states[n], explore=False) for n, agent in enumerate(agents)]
        )
        states, rewards, metrics = env.step(actions)
        rows.append((metrics.rate.sum(axis=1), rewards))
    return rows


def run_benchmark(cfg: RunConfig, schemes=None, checkpoint=None, mslnr_checkpoint=None):
    """Evaluate the selected schemes on one shared channel window.

    Every scheme sees the identical channel realizations.  Classical solvers
    run genie-aided on each slot's current CSI; trained policies are rolled
    out greedily through the environment.  Emits per-slot rows, an empirical
    CDF and a summary table under the run's output directory.
    """
    schemes = tuple(schemes) if schemes else cfg.schemes
    checkpoint = checkpoint or cfg.checkpoint
    mslnr_checkpoint = mslnr_checkpoint or cfg.mslnr_checkpoint
    for scheme in schemes:
        if scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme '{scheme}'")
    if "ddcbf" in schemes and not checkpoint:
        raise ConfigError("scheme 'ddcbf' needs a trained checkpoint")
    if "mslnr-ddpg" in schemes and not mslnr_checkpoint:
        raise ConfigError("scheme 'mslnr-ddpg' needs a trained checkpoint")

    offset = cfg.bench_offset
    if offset < 0:
        offset = max(cfg.num_slots - cfg.bench_slots, 0)
    # Policies need one extra slot: the rollout consumes a next state.
    window = _collect_window(cfg, offset, cfg.bench_slots + 1)
    net = cfg.network

    os.makedirs(cfg.out_dir, exist_ok=True)
    bench_path = os.path.join(cfg.out_dir, "bench.csv")
    results = {}
    with open(bench_path, "w") as fh:
        fh.write(f"# {BENCH_VERSION}\n")
        cells = ",".join(f"cell_rate_{n}" for n in range(net.num_cells))
        fh.write(f"slot,scheme,sum_rate,{cells}\n")
        for scheme in schemes:
            rates = []
            if scheme in ("ddcbf", "mslnr-ddpg"):
                ckpt = checkpoint if scheme == "ddcbf" else mslnr_checkpoint
                mode = "structured" if scheme == "ddcbf" else "mslnr-power"
                rows = _rollout_policy(cfg, window, ckpt, mode)
                for t, (cell_rates, _) in enumerate(rows):
                    rates.append(float(cell_rates.sum()))
                    parts = [str(offset + t), scheme, repr(rates[-1])]
                    parts += [repr(float(x)) for x in cell_rates]
                    fh.write(",".join(parts) + "\n")
            else:
                for t in range(cfg.bench_slots):
                    channel = window.slot(t)
                    if scheme == "mslnr-ep":
                        beams = _mslnr_ep_beams(channel, net)
                    elif scheme == "wmmse":
                        beams, _ = wmmse(
                            channel,
                            net,
                            cfg.wmmse_stop_eps,
                            cfg.wmmse_max_iter,
                            init_seed=_slot_seed(cfg.seed, offset + t),
                        )
                    elif scheme == "wmmse-nri":
                        beams = wmmse_multi_init(
                            channel,
                            net,
                            cfg.wmmse_stop_eps,
                            cfg.wmmse_max_iter,
                            num_inits=cfg.wmmse_num_inits,
                            seed=_slot_seed(cfg.seed, offset + t),
                        )
                    metrics = compute_metrics(channel, beams, net)
                    cell_rates = metrics.rate.sum(axis=1)
                    rates.append(float(cell_rates.sum()))
                    parts = [str(offset + t), scheme, repr(rates[-1])]
                    parts += [repr(float(x)) for x in cell_rates]
                    fh.write(",".join(parts) + "\n")
            rates = np.asarray(rates)
            results[scheme] = {
                "mean": float(rates.mean()),
                "median": float(np.median(rates)),
                "p05": float(np.percentile(rates, 5)),
                "p95": float(np.percentile(rates, 95)),
                "slots": int(rates.size),
            }

    cdf_path = os.path.join(cfg.out_dir, "bench_cdf.csv")
    with open(cdf_path, "w") as fh:
        fh.write(f"# {BENCH_VERSION}\n")
        fh.write("scheme,sum_rate,cum_prob\n")
        rows = read_bench(bench_path)
        for scheme in schemes:
            vals = sorted(r["sum_rate"] for r in rows if r["scheme"] == scheme)
            for i, v in enumerate(vals):
                fh.write(f"{scheme},{v!r},{(i + 1) / len(vals)!r}\n")

    summary_path = os.path.join(cfg.out_dir, "bench_summary.json")
    with open(summary_path, "w") as fh:
        json.dump({"window_offset": offset, "results": results}, fh, indent=2)
    return {
        "bench_csv": bench_path,
        "cdf_csv": cdf_path,
        "summary": summary_path,
        "results": results,
        "window_offset": offset,
    }


def read_bench(path):
    """Parse a bench CSV into row dicts."""
    rows = []
    with open(path) as fh:
        version = fh.readline().strip().lstrip("# ")
        if version != BENCH_VERSION:
            raise ConfigError(f"unsupported bench version {version!r}")
        header = fh.readline().strip().split(",")
        for line in fh:
            parts = line.strip().split(",")
            row = dict(zip(header, parts))
            row["slot"] = int(row["slot"])
            row["sum_rate"] = float(row["sum_rate"])
            rows.append(row)
    return rows


def run_timing(cfg: RunConfig, repeats=30):
    """Wall-clock comparison of the per-BS decision path against solvers.

    The decision path is one actor forward pass, an action decode and the
    structured solve at the acting BS; it is timed against one full
    weighted-MMSE run on the same instance (plus max-SLNR and MRT for
    ordering sanity).  Reports medians and interquartile ranges.
    """
    from .env import action_dim as _action_dim
    from .env import state_layout

    net = cfg.network
    rng = np.random.default_rng(cfg.seed)
    proc = ChannelProcess(net, cfg.channel)
    channel = proc.next_slot()
    layout = state_layout(
        net.num_cells, net.users_per_cell, cfg.csi_keep, cfg.num_interferers
    )
    adim = _action_dim(net.num_cells, net.users_per_cell, "structured")
    from .drl import Mlp

    actor = Mlp.create(
        [layout["total"], *cfg.hidden_sizes, adim], "sigmoid", rng
    )
    state = rng.uniform(-1.0, 1.0, layout["total"])
    local = channel.h[0]

    def decision(_):
        action = actor.forward(state)
        params = decode_action(
            action, net.num_cells, net.users_per_cell, net.max_power, net.noise_power
        )
        return structured_beamformer(local, 0, params, net.max_power)

    def mslnr_run(_):
        return _mslnr_ep_beams(channel, net)

    def mrt_run(_):
        k = net.users_per_cell
        return [mrt_beamformer(channel.h[0, 0, j]) for j in range(k)]

    def wmmse_run(i):
        return wmmse(
            channel, net, cfg.wmmse_stop_eps, cfg.wmmse_max_iter, init_seed=i
        )

    def time_many(fn, n):
        out = []
        for i in range(n):
            tic = time.perf_counter()
            fn(i)
            out.append(time.perf_counter() - tic)
        return np.asarray(out)

    decision(0)  # warm the caches before timing
    timings = {
        "ddcbf-decision": time_many(decision, repeats),
        "mslnr": time_many(mslnr_run, repeats),
        "mrt": time_many(mrt_run, repeats),
        "wmmse": time_many(wmmse_run, repeats),
    }
    report = {}
    for name, arr in timings.items():
        q25, q50, q75 = np.percentile(arr, [25, 50, 75])
        report[name] = {
            "median_s": float(q50),
            "iqr_s": float(q75 - q25),
            "repeats": int(arr.size),
        }
    report["speedup_wmmse_over_decision"] = (
        report["wmmse"]["median_s"] / report["ddcbf-decision"]["median_s"]
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "timing.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
    report["path"] = path
    return report


def generate_trace_file(cfg: RunConfig, out_path, num_slots=None):
    """Materialize the configured channel source into a trace file."""
    trace = generate_trace(
        cfg.network, cfg.channel, num_slots if num_slots else cfg.num_slots
    )
    save_trace(trace, out_path)
    return out_path
