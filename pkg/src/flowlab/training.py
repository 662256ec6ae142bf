"""Active-learning rounds: explore, update, replay, monitor.

One round is (1) sample a batch from the exploration-mixed forward policy and
record its terminals, (2) take the objective's gradient step(s), (3) if
replay is on, repeat the update on backward trajectories into replayed
terminals, (4) on monitor rounds, draw evaluation samples with the mix off.
Everything is driven by named substreams of one seed, so toggling replay or
the guide does not perturb the other streams.
"""

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .evaluation import build_target, rounds_to_match_target, summary_metrics
from .nets import Adam
from .objectives import (
    back_gtb_loss_batch,
    forward_gtb_loss_batch,
    SubstructureGuide,
    tb_loss_batch,
)
from .policy import (
    EnvTable,
    FlowModel,
    sample_backward_batch,
    sample_forward_batch,
)
from .replay import DatasetX
from .rng import substream

OBJECTIVES = ("tb", "maxent", "gtb_sub")
PARAMETRIZATIONS = ("sa", "ssr")
GUIDE_SOURCES = ("policy", "guide")

METRICS_COLUMNS = (
    "round",
    "n_seen",
    "loss",
    "logZ",
    "sample_mean_reward",
    "target_mean_reward",
    "rel_mean_error",
    "ad_statistic",
    "modes_found",
    "diversity",
)


@dataclass
class TrainConfig:
    objective: str = "tb"
    parametrization: str = "sa"
    prt: bool = False
    alpha: float = 1.0
    epsilon: float = 0.0
    learning_rate: float = 1e-3
    rounds: int = 2000
    batch_size: int = 16
    monitor_every: int = 10
    monitor_samples: int = 128
    eval_window_rounds: int = 500
    seed: int = 0
    hidden: tuple = (64, 64)
    guide_source: str = "policy"
    replay_top_quantile: float = 0.9
    replay_top_fraction: float = 0.5

    def validate(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.parametrization not in PARAMETRIZATIONS:
            raise ValueError(f"parametrization must be one of {PARAMETRIZATIONS}")
        if self.guide_source not in GUIDE_SOURCES:
            raise ValueError(f"guide_source must be one of {GUIDE_SOURCES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.monitor_every < 1:
            raise ValueError("monitor_every must be >= 1")
        if self.monitor_samples < 10:
            raise ValueError("monitor_samples must be >= 10 (goodness-of-fit needs them)")
        if self.eval_window_rounds % self.monitor_every:
            raise ValueError("eval_window_rounds must be a multiple of monitor_every")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not 0.0 < self.replay_top_quantile < 1.0:
            raise ValueError("replay_top_quantile must be in (0, 1)")
        if not 0.0 < self.replay_top_fraction <= 1.0:
            raise ValueError("replay_top_fraction must be in (0, 1]")
        if not all(isinstance(h, int) and h >= 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive integers")
        return self


class Trainer:
    """Owns the model, optimizers, dataset, and monitoring ring."""

    def __init__(self, env, rewardfn, config, table=None):
        config.validate()
        self.env = env
        self.rewardfn = rewardfn
        self.config = config
        self.table = table if table is not None else EnvTable(env)
        self.target = build_target(self.table, rewardfn)

        self.model = FlowModel(
            self.table,
            config.parametrization,
            config.hidden,
            substream(config.seed, "init"),
            uniform_pb=(config.objective == "maxent"),
        )
        lr = config.learning_rate
        if config.objective == "gtb_sub":
            self.opt_b = Adam(self.model.pb_params, lr)
            self.opt_f = Adam(self.model.pf_params + [self.model.logZ], lr)
            self.guide = SubstructureGuide(self.table)
        else:
            self.opt = Adam(
                self.model.pf_params + self.model.pb_params + [self.model.logZ], lr
            )
            self.guide = None

        self.gen_train = substream(config.seed, "train")
        self.gen_monitor = substream(config.seed, "monitor")
        self.gen_replay = substream(config.seed, "replay")
        self.gen_guide = substream(config.seed, "guide")

        self.dataset = DatasetX()
        self.ring_rounds = []
        self.ring_rewards = []
        self.ring_terminals = []
        self.round_no = 0

    # -- sampling helpers ---------------------------------------------------

    def _batch_rewards(self, batch):
        payloads = [self.table.states[i] for i in batch.terminals]
        return self.rewardfn.many(payloads)

    def _record_batch(self, batch, rewards):
        for i, r in zip(batch.terminals, rewards):
            self.dataset.insert(self.table.states[i], float(r), self.round_no)

    # -- objective updates --------------------------------------------------

    def _tb_update(self, batch, rewards):
        loss = tb_loss_batch(self.model, batch, rewards)
        if np.isfinite(loss):
            self.opt.step(self.model.pf_grads + self.model.pb_grads + [self.model.gZ])
        self.model.zero_grads()
        return [loss]

    def _gtb_update(self, batch, rewards):
        cfg = self.config
        if cfg.guide_source == "guide":
            batch, guide_logp = self.guide.sample_batch(batch.terminals, self.gen_guide)
            rewards = self._batch_rewards(batch)
        else:
            guide_logp = self.guide.log_prob_batch(batch)

        loss_b = back_gtb_loss_batch(self.model, batch, guide_logp)
        if np.isfinite(loss_b):
            self.opt_b.step(self.model.pb_grads)
        self.model.zero_grads()

        # Forward step sees the backward policy as it is after its update.
        loss_f = forward_gtb_loss_batch(self.model, batch, rewards, guide_logp, cfg.alpha)
        if np.isfinite(loss_f):
            self.opt_f.step(self.model.pf_grads + [self.model.gZ])
        self.model.zero_grads()
        return [loss_b, loss_f]

    def _objective_update(self, batch, rewards):
        if self.config.objective == "gtb_sub":
            return self._gtb_update(batch, rewards)
        return self._tb_update(batch, rewards)

    # -- the round ----------------------------------------------------------

    def run_round(self):
        """One active round; returns a metrics row on monitor rounds."""
        cfg = self.config
        self.round_no += 1

        batch = sample_forward_batch(
            self.model.pf, self.table, cfg.batch_size, cfg.epsilon, self.gen_train
        )
        rewards = self._batch_rewards(batch)
        self._record_batch(batch, rewards)

        if self.guide is not None:
            self.guide.refresh(self.dataset.payloads, self.dataset.rewards)
        losses = self._objective_update(batch, rewards)

        if cfg.prt and len(self.dataset) >= 2:
            picks = self.dataset.prt_sample(
                cfg.batch_size,
                self.gen_replay,
                top_quantile=cfg.replay_top_quantile,
                top_fraction=cfg.replay_top_fraction,
            )
            x_idx = np.array([self.table.state_idx(p) for p in picks], dtype=np.int64)
            rbatch = sample_backward_batch(self.model.pb, self.table, x_idx, self.gen_replay)
            losses += self._objective_update(rbatch, self._batch_rewards(rbatch))

        if self.round_no % cfg.monitor_every:
            return None

        mbatch = sample_forward_batch(
            self.model.pf, self.table, cfg.monitor_samples, 0.0, self.gen_monitor
        )
        self.ring_rounds.append(self.round_no)
        self.ring_rewards.append(np.asarray(self._batch_rewards(mbatch)))
        self.ring_terminals.append(mbatch.terminals.copy())
        return self._metrics_row(losses)

    def _metrics_row(self, losses):
        lo = self.round_no - self.config.eval_window_rounds
        keep = [i for i, r in enumerate(self.ring_rounds) if r > lo]
        rewards = np.concatenate([self.ring_rewards[i] for i in keep])
        payloads = [
            self.table.states[t]
            for i in keep
            for t in self.ring_terminals[i]
        ]
        row = {
            "round": self.round_no,
            "n_seen": len(self.dataset),
            "loss": float(np.mean(losses)),
            "logZ": float(self.model.logZ[0]),
        }
        row.update(
            summary_metrics(payloads, rewards, self.target, self.dataset, self.table)
        )
        return row

    # -- checkpointing --------------------------------------------------------

    def _rng_states(self):
        gens = {
            "train": self.gen_train,
            "monitor": self.gen_monitor,
            "replay": self.gen_replay,
            "guide": self.gen_guide,
        }
        return {
            f"rng_{k}": np.frombuffer(
                json.dumps(g.bit_generator.state).encode(), dtype=np.uint8
            )
            for k, g in gens.items()
        }

    def _load_rng_states(self, data):
        for k, g in (
            ("rng_train", self.gen_train),
            ("rng_monitor", self.gen_monitor),
            ("rng_replay", self.gen_replay),
            ("rng_guide", self.gen_guide),
        ):
            g.bit_generator.state = json.loads(bytes(data[k]).decode())

    def save_checkpoint(self, path):
        arrays = {"round": np.array(self.round_no, dtype=np.int64)}
        arrays.update(self.model.state_arrays())
        if self.config.objective == "gtb_sub":
            arrays.update(self.opt_b.state_arrays("opt_b"))
            arrays.update(self.opt_f.state_arrays("opt_f"))
        else:
            arrays.update(self.opt.state_arrays("opt"))
        if len(self.dataset):
            arrays["ds_payloads"] = np.array(self.dataset.payloads, dtype=np.int64)
            arrays["ds_rewards"] = np.asarray(self.dataset.rewards, dtype=np.float64)
            arrays["ds_first_seen"] = np.asarray(self.dataset.first_seen, dtype=np.int64)
        if self.ring_rounds:
            arrays["ring_rounds"] = np.asarray(self.ring_rounds, dtype=np.int64)
            arrays["ring_rewards"] = np.stack(self.ring_rewards)
            arrays["ring_terminals"] = np.stack(self.ring_terminals)
        arrays.update(self._rng_states())
        np.savez(path, **arrays)

    def load_checkpoint(self, path):
        data = np.load(path)
        self.round_no = int(data["round"])
        self.model.load_state_arrays(data)
        if self.config.objective == "gtb_sub":
            self.opt_b.load_state_arrays("opt_b", data)
            self.opt_f.load_state_arrays("opt_f", data)
        else:
            self.opt.load_state_arrays("opt", data)
        self.dataset = DatasetX()
        if "ds_payloads" in data:
            for p, r, seen in zip(
                data["ds_payloads"], data["ds_rewards"], data["ds_first_seen"]
            ):
                self.dataset.insert(tuple(int(v) for v in p), float(r), int(seen))
        self.ring_rounds, self.ring_rewards, self.ring_terminals = [], [], []
        if "ring_rounds" in data:
            self.ring_rounds = [int(r) for r in data["ring_rounds"]]
            self.ring_rewards = list(data["ring_rewards"])
            self.ring_terminals = list(data["ring_terminals"])
        self._load_rng_states(data)


def _format_cell(v):
    if v is None:
        return "nan"
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def write_metrics_row(fh, row):
    fh.write(",".join(_format_cell(row[c]) for c in METRICS_COLUMNS) + "\n")
    fh.flush()


def run_experiment(env, rewardfn, config, out_dir, table=None):
    """Train per config and leave metrics.csv, summary.json, checkpoint.npz
    in out_dir. Returns the trainer and the emitted rows."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    t0 = time.monotonic()
    trainer = Trainer(env, rewardfn, config, table=table)
    rows = []
    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        fh.flush()
        for _ in range(config.rounds):
            row = trainer.run_round()
            if row is not None:
                rows.append(row)
                write_metrics_row(fh, row)

    trainer.save_checkpoint(os.path.join(out_dir, "checkpoint.npz"))
    summary = {
        "config": asdict(trainer.config),
        "rounds_to_match_target": rounds_to_match_target(rows, trainer.target.target_mean),
        "final_rel_mean_error": rows[-1]["rel_mean_error"] if rows else None,
        "final_ad_statistic": rows[-1]["ad_statistic"] if rows else None,
        "wall_time_seconds": time.monotonic() - t0,
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return trainer, rows
