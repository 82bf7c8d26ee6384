"""Self-contained DDPG machinery on plain numpy.

Multilayer perceptrons with hand-written reverse-mode gradients, bias-
corrected Adam, a FIFO experience replay, soft-updated target networks and
the decaying Gaussian exploration schedule.  Everything is float64 and
deterministic for a fixed seed on a single thread; agents never share
parameters, matching decentralized per-BS training.
"""

from __future__ import annotations

import json

import numpy as np

_CHECKPOINT_VERSION = 1


def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid(x):
    # Split by sign to stay overflow-free for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Mlp:
    """Fully connected net: rectifier hidden layers, identity or logistic output.

    Weights W have shape (fan_out, fan_in); forward maps (B, in) -> (B, out)
    and accepts single vectors as well.
    """

    def __init__(self, weights, biases, output_activation="identity"):
        if output_activation not in ("identity", "sigmoid"):
            raise ValueError("output_activation must be 'identity' or 'sigmoid'")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError("weight/bias shapes disagree")
        for prev, nxt in zip(self.weights[:-1], self.weights[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ValueError("consecutive layer dimensions are incompatible")
        self.output_activation = output_activation

    @classmethod
    def create(cls, layer_sizes, output_activation="identity", rng=None):
        """Scaled-uniform fan-in initialization: U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
        rng = np.random.default_rng(rng)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, fan_out))
        return cls(weights, biases, output_activation)

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    def parameters(self):
        """Interleaved [W0, b0, W1, b1, ...]; mutating entries updates the net."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self):
        return Mlp(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
        )

    def _forward_impl(self, x, keep_cache):
        squeeze = x.ndim == 1
        a = np.atleast_2d(np.asarray(x, dtype=float))
        if a.shape[1] != self.input_dim:
            raise ValueError(
                f"input width {a.shape[1]} does not match net input {self.input_dim}"
            )
        cache = [a] if keep_cache else None
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            if i < last:
                a = _relu(z)
            elif self.output_activation == "sigmoid":
                a = _sigmoid(z)
            else:
                a = z
            if keep_cache:
                cache.append(a)
        return (a, cache, squeeze)

    def forward(self, x):
        y, _, squeeze = self._forward_impl(x, keep_cache=False)
        return y[0] if squeeze else y

    def forward_cached(self, x):
        """Forward pass keeping activations for a later backward call."""
        y, cache, squeeze = self._forward_impl(x, keep_cache=True)
        return (y[0] if squeeze else y), (cache, squeeze)

    def backward(self, ctx, upstream):
        """Reverse-mode gradients of sum(upstream * output) w.r.t. params and input.

        ``upstream`` must match the forward output shape; gradients are summed
        over the batch.  Returns (grads, grad_input) with grads interleaved
        like parameters().
        """
        cache, squeeze = ctx
        delta = np.atleast_2d(np.asarray(upstream, dtype=float))
        y = cache[-1]
        if delta.shape != y.shape:
            raise ValueError("upstream gradient shape does not match output")
        if self.output_activation == "sigmoid":
            delta = delta * y * (1.0 - y)
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            a_prev = cache[i]
            grads[2 * i] = delta.T @ a_prev
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ self.weights[i]
            if i > 0:
                delta = delta * (cache[i] > 0)
        return grads, (delta[0] if squeeze else delta)

    def gradients(self, x, upstream):
        """Convenience wrapper: forward then backward in one call."""
        _, ctx = self.forward_cached(x)
        return self.backward(ctx, upstream)


class Adam:
    """Bias-corrected Adam over a flat list of parameter arrays."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        """Apply one update in place; returns the updated parameter list."""
        for i, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                raise ArithmeticError(
                    f"non-finite gradient in parameter block {i}; training halted"
                )
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
        return params

    def state_dict(self):
        return {
            "m": [a.copy() for a in self.m],
            "v": [a.copy() for a in self.v],
            "step_count": self.step_count,
        }

    def load_state_dict(self, state):
        for dst, src in zip(self.m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src
        self.step_count = int(state["step_count"])


class ReplayMemory:
    """Fixed-capacity FIFO store of (state, action, reward, next_state).

    Backed by preallocated ring-buffer arrays so mini-batch sampling is a
    single fancy-indexing pass.
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._states = None
        self._actions = None
        self._rewards = None
        self._next_states = None
        self._size = 0
        self._cursor = 0

    def __len__(self):
        return self._size

    def _allocate(self, state, action):
        self._states = np.empty((self.capacity, state.size))
        self._actions = np.empty((self.capacity, action.size))
        self._rewards = np.empty(self.capacity)
        self._next_states = np.empty((self.capacity, state.size))

    def push(self, state, action, reward, next_state):
        state = np.asarray(state, dtype=float)
        action = np.asarray(action, dtype=float)
        if self._states is None:
            self._allocate(state, action)
        i = self._cursor
        self._states[i] = state
        self._actions[i] = action
        self._rewards[i] = float(reward)
        self._next_states[i] = next_state
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size, rng):
        """Uniform sample without replacement, stacked into batch arrays."""
        if batch_size > self._size:
            raise ValueError(
                f"cannot sample {batch_size} items from a memory of {self._size}"
            )
        picks = rng.choice(self._size, size=batch_size, replace=False)
        return (
            self._states[picks],
            self._actions[picks],
            self._rewards[picks],
            self._next_states[picks],
        )

    def oldest(self):
        """The item next in line for eviction (for tests and inspection)."""
        if self._size == 0:
            raise IndexError("memory is empty")
        pos = self._cursor if self._size == self.capacity else 0
        return (
            self._states[pos],
            self._actions[pos],
            self._rewards[pos],
            self._next_states[pos],
        )

    def dump(self):
        if self._size == 0:
            return None
        return {
            "states": self._states[: self._size].copy(),
            "actions": self._actions[: self._size].copy(),
            "rewards": self._rewards[: self._size].copy(),
            "next_states": self._next_states[: self._size].copy(),
            "cursor": self._cursor,
        }

    def restore(self, blob):
        self._states = None
        self._size = 0
        self._cursor = 0
        if blob is None:
            return
        states = blob["states"]
        self._allocate(states[0], blob["actions"][0])
        n = states.shape[0]
        self._states[:n] = states
        self._actions[:n] = blob["actions"]
        self._rewards[:n] = blob["rewards"]
        self._next_states[:n] = blob["next_states"]
        self._size = n
        self._cursor = int(blob["cursor"])


class DdpgAgent:
    """One BS's actor-critic learner with target networks and replay.

    The actor ends in a logistic layer so raw actions live in [0, 1]; the
    critic takes the state-action concatenation and ends linear.  Exploration
    adds clipped Gaussian noise whose scale shrinks by 1/(1 + noise_decay)
    after every exploring action, floored at ``noise_sigma_min``.
    """

    def __init__(
        self,
        state_dim,
        action_dim,
        hidden_sizes=(256, 128, 64),
        actor_lr=5e-6,
        critic_lr=5e-5,
        discount=0.5,
        soft_update_rate=0.01,
        noise_sigma=0.6,
        noise_decay=1e-3,
        noise_sigma_min=0.01,
        memory_capacity=2000,
        batch_size=256,
        seed=0,
    ):
        if not 0 <= discount < 1:
            raise ValueError("discount must lie in [0, 1)")
        if not 0 < soft_update_rate <= 1:
            raise ValueError("soft_update_rate must lie in (0, 1]")
        if batch_size > memory_capacity:
            raise ValueError("batch_size cannot exceed memory_capacity")
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hidden_sizes = tuple(hidden_sizes)
        self.discount = discount
        self.soft_update_rate = soft_update_rate
        self.noise_sigma = noise_sigma
        self.noise_decay = noise_decay
        self.noise_sigma_min = noise_sigma_min
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)

        sizes = [state_dim, *hidden_sizes]
        self.actor = Mlp.create([*sizes, action_dim], "sigmoid", self.rng)
        self.critic = Mlp.create(
            [state_dim + action_dim, *hidden_sizes, 1], "identity", self.rng
        )
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.adam_actor = Adam(self.actor.parameters(), actor_lr)
        self.adam_critic = Adam(self.critic.parameters(), critic_lr)
        self.memory = ReplayMemory(memory_capacity)

    def act(self, state, explore=True):
        """Policy action, optionally with clipped exploration noise.

        Each exploring call also advances the noise schedule
        sigma <- max(sigma / (1 + noise_decay), noise_sigma_min).
        """
        action = self.actor.forward(state)
        if explore:
            noise = self.rng.normal(0.0, self.noise_sigma, self.action_dim)
            action = np.clip(action + noise, 0.0, 1.0)
            self.noise_sigma = max(
                self.noise_sigma / (1.0 + self.noise_decay), self.noise_sigma_min
            )
        return action

    def random_action(self):
        """Uniform action in [0, 1]^A for the warm-up phase."""
        return self.rng.uniform(0.0, 1.0, self.action_dim)

    def remember(self, state, action, reward, next_state):
        self.memory.push(state, action, reward, next_state)

    def ready(self):
        return len(self.memory) >= self.batch_size

    def train_step(self, batch=None):
        """One critic + actor update from a replay mini-batch.

        The critic regresses onto r + discount * Q'(s', pi'(s')); the actor
        follows the deterministic policy gradient through the critic's action
        input.  Target networks are untouched here.

        Returns:
            (critic_loss, mean_q) with mean_q the pre-update critic value of
            the sampled state-action pairs.
        """
        if batch is None:
            batch = self.memory.sample(self.batch_size, self.rng)
        states, actions, rewards, next_states = batch
        b = states.shape[0]
        if b == 0:
            raise ValueError("empty training batch")

        next_actions = self.target_actor.forward(next_states)
        next_q = self.target_critic.forward(
            np.hstack([next_states, next_actions])
        )[:, 0]
        targets = rewards + self.discount * next_q

        q, ctx = self.critic.forward_cached(np.hstack([states, actions]))
        q = q[:, 0]
        err = targets - q
        critic_loss = float(np.mean(err**2))
        mean_q = float(np.mean(q))
        upstream = (-2.0 / b) * err[:, None]
        critic_grads, _ = self.critic.backward(ctx, upstream)
        self.adam_critic.step(self.critic.parameters(), critic_grads)

        policy_actions, actor_ctx = self.actor.forward_cached(states)
        _, critic_ctx = self.critic.forward_cached(
            np.hstack([states, policy_actions])
        )
        # d(-mean Q)/dQ = -1/b; push it back to the action inputs.
        _, input_grad = self.critic.backward(
            critic_ctx, np.full((b, 1), -1.0 / b)
        )
        action_grad = input_grad[:, self.state_dim :]
        actor_grads, _ = self.actor.backward(actor_ctx, action_grad)
        self.adam_actor.step(self.actor.parameters(), actor_grads)
        return critic_loss, mean_q

    def soft_update(self, rate=None):
        """Blend online parameters into the targets: t <- rate*o + (1-rate)*t."""
        rho = self.soft_update_rate if rate is None else rate
        if not 0 <= rho <= 1:
            raise ValueError("update rate must lie in [0, 1]")
        for target, online in (
            (self.target_actor, self.actor),
            (self.target_critic, self.critic),
        ):
            for t, o in zip(target.parameters(), online.parameters()):
                t *= 1.0 - rho
                t += rho * o

    # -- checkpointing ----------------------------------------------------

    def state_dict(self):
        arrays = {}
        for tag, net in (
            ("actor", self.actor),
            ("critic", self.critic),
            ("target_actor", self.target_actor),
            ("target_critic", self.target_critic),
        ):
            for i, p in enumerate(net.parameters()):
                arrays[f"{tag}_p{i}"] = p.copy()
        for tag, adam in (("adam_actor", self.adam_actor), ("adam_critic", self.adam_critic)):
            st = adam.state_dict()
            for i, a in enumerate(st["m"]):
                arrays[f"{tag}_m{i}"] = a
            for i, a in enumerate(st["v"]):
                arrays[f"{tag}_v{i}"] = a
        replay = self.memory.dump()
        if replay is not None:
            for key in ("states", "actions", "rewards", "next_states"):
                arrays[f"replay_{key}"] = replay[key]
        meta = {
            "version": _CHECKPOINT_VERSION,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "noise_sigma": self.noise_sigma,
            "noise_decay": self.noise_decay,
            "noise_sigma_min": self.noise_sigma_min,
            "discount": self.discount,
            "soft_update_rate": self.soft_update_rate,
            "batch_size": self.batch_size,
            "memory_capacity": self.memory.capacity,
            "actor_lr": self.adam_actor.lr,
            "critic_lr": self.adam_critic.lr,
            "adam_actor_step": self.adam_actor.step_count,
            "adam_critic_step": self.adam_critic.step_count,
            "replay_cursor": 0 if replay is None else replay["cursor"],
            "replay_len": len(self.memory),
            "rng_state": self.rng.bit_generator.state,
        }
        arrays["meta"] = np.array(json.dumps(meta))
        return arrays

    def load_state_dict(self, arrays):
        meta = json.loads(str(arrays["meta"]))
        if meta["version"] != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        if meta["state_dim"] != self.state_dim or meta["action_dim"] != self.action_dim:
            raise ValueError("checkpoint dimensions do not match this agent")
        for tag, net in (
            ("actor", self.actor),
            ("critic", self.critic),
            ("target_actor", self.target_actor),
            ("target_critic", self.target_critic),
        ):
            for i, p in enumerate(net.parameters()):
                p[...] = arrays[f"{tag}_p{i}"]
        for tag, adam, step_key in (
            ("adam_actor", self.adam_actor, "adam_actor_step"),
            ("adam_critic", self.adam_critic, "adam_critic_step"),
        ):
            adam.load_state_dict(
                {
                    "m": [arrays[f"{tag}_m{i}"] for i in range(len(adam.m))],
                    "v": [arrays[f"{tag}_v{i}"] for i in range(len(adam.v))],
                    "step_count": meta[step_key],
                }
            )
        if meta["replay_len"] > 0:
            self.memory.restore(
                {
                    "states": arrays["replay_states"],
                    "actions": arrays["replay_actions"],
                    "rewards": arrays["replay_rewards"],
                    "next_states": arrays["replay_next_states"],
                    "cursor": meta["replay_cursor"],
                }
            )
        else:
            self.memory.restore(None)
        self.noise_sigma = float(meta["noise_sigma"])
        self.rng.bit_generator.state = meta["rng_state"]

    def save(self, path):
        np.savez(path, **self.state_dict())

    @classmethod
    def load(cls, path, **overrides):
        """Rebuild an agent from a checkpoint file.

        Hyper-parameters are taken from the checkpoint metadata; keyword
        overrides are applied before the state is restored.
        """
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
        meta = json.loads(str(arrays["meta"]))
        kwargs = dict(
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
        kwargs.update(overrides)
        agent = cls(**kwargs)
        agent.load_state_dict(arrays)
        return agent
