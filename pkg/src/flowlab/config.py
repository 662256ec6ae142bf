"""Experiment config files: INI with [env], [reward], [train], [output].

The schema is strict: unknown sections or keys are rejected before any work
happens, and keys that only apply to one environment or reward kind are
rejected elsewhere. `load_config` -> `render_config` -> `load_config` is the
identity on parsed values.
"""

import configparser
import os
from dataclasses import dataclass

from .envs import make_env
from .rewards import BagReward, StringMotifReward, load_reward_table
from .training import TrainConfig

ENV_KINDS = ("string_pa", "string_ar", "bag")
REWARD_KINDS = ("bag", "string_motif", "table")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env_kind: str
    alphabet_size: int
    seq_len: int
    capacity: int
    reward_kind: str
    reward_args: dict
    train: TrainConfig
    out_dir: str

    def build_env(self):
        return make_env(
            self.env_kind,
            self.alphabet_size,
            seq_len=self.seq_len,
            capacity=self.capacity,
        )

    def build_reward(self, env, terminal_budget=2_000_000):
        a = self.reward_args
        if self.reward_kind == "bag":
            return BagReward(self.capacity, a["seed"], threshold=a["threshold"])
        if self.reward_kind == "string_motif":
            fn = StringMotifReward(
                a["motifs"], self.alphabet_size, base=a["base"], exponent=a["exponent"]
            )
            if a["max_scale"] is not None:
                fn.fit_scale(env.terminals(budget=terminal_budget), a["max_scale"])
            return fn
        return load_reward_table(
            a["table_path"],
            exponent=a["exponent"],
            max_scale=a["max_scale"],
            alphabet_size=self.alphabet_size,
        )


def parse_motifs(text):
    """\"ab:1.0,ba:0.5\" -> {\"ab\": 1.0, \"ba\": 0.5}."""
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(f"motif entry {part!r} is not LETTERS:BONUS")
        word, bonus = part.rsplit(":", 1)
        word = word.strip()
        if not word or word in out:
            raise ConfigError(f"motif entry {part!r}: empty or duplicate motif")
        try:
            out[word] = float(bonus)
        except ValueError:
            raise ConfigError(f"motif entry {part!r}: bonus is not a number") from None
    if not out:
        raise ConfigError("motifs is empty")
    return out


def format_motifs(motifs):
    return ",".join(f"{w}:{b:.12g}" for w, b in motifs.items())


class _Section:
    """One INI section with typed, tracked key access."""

    def __init__(self, name, raw):
        self.name = name
        self.raw = dict(raw)
        self.used = set()

    def _fetch(self, key, required, default):
        self.used.add(key)
        if key in self.raw:
            return self.raw[key]
        if required:
            raise ConfigError(f"[{self.name}] is missing required key {key!r}")
        return default

    def get_str(self, key, required=False, default=None, choices=None):
        v = self._fetch(key, required, default)
        if v is not None and choices is not None and v not in choices:
            raise ConfigError(f"[{self.name}] {key} must be one of {choices}, got {v!r}")
        return v

    def _number(self, key, required, default, cast, label):
        v = self._fetch(key, required, default)
        if v is None or not isinstance(v, str):
            return v
        try:
            return cast(v)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key}: {v!r} is not {label}") from None

    def get_int(self, key, required=False, default=None):
        return self._number(key, required, default, int, "an integer")

    def get_float(self, key, required=False, default=None):
        return self._number(key, required, default, float, "a number")

    def get_bool(self, key, required=False, default=None):
        v = self._fetch(key, required, default)
        if v is None or isinstance(v, bool):
            return v
        states = configparser.ConfigParser.BOOLEAN_STATES
        if v.lower() not in states:
            raise ConfigError(f"[{self.name}] {key}: {v!r} is not a boolean")
        return states[v.lower()]

    def reject_unused(self):
        extra = sorted(set(self.raw) - self.used)
        if extra:
            raise ConfigError(f"[{self.name}] has unknown key {extra[0]!r}")


def _read_ini(path):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as err:
        raise ConfigError(f"{path}: {err.strerror or err}") from None
    except configparser.Error as err:
        raise ConfigError(f"{path}: {err.message.splitlines()[0]}") from None
    return parser


def load_config(path):
    parser = _read_ini(path)
    present = set(parser.sections())
    known = {"env", "reward", "train", "output"}
    if present - known:
        raise ConfigError(f"{path}: unknown section [{sorted(present - known)[0]}]")
    for need in ("env", "reward", "output"):
        if need not in present:
            raise ConfigError(f"{path}: missing section [{need}]")

    env = _Section("env", parser["env"])
    kind = env.get_str("kind", required=True, choices=ENV_KINDS)
    alphabet_size = env.get_int("alphabet_size", required=True)
    if kind == "bag":
        seq_len = None
        capacity = env.get_int("capacity", required=True)
    else:
        seq_len = env.get_int("seq_len", required=True)
        capacity = None
    env.reject_unused()

    rew = _Section("reward", parser["reward"])
    reward_kind = rew.get_str("kind", required=True, choices=REWARD_KINDS)
    if reward_kind == "bag":
        if kind != "bag":
            raise ConfigError("[reward] kind=bag needs [env] kind=bag")
        reward_args = {
            "seed": rew.get_int("seed", default=0),
            "threshold": rew.get_int("threshold", default=None),
        }
    elif reward_kind == "string_motif":
        if kind == "bag":
            raise ConfigError("[reward] kind=string_motif needs a string environment")
        reward_args = {
            "motifs": parse_motifs(rew.get_str("motifs", required=True)),
            "base": rew.get_float("base", default=0.1),
            "exponent": rew.get_float("exponent", default=1.0),
            "max_scale": rew.get_float("max_scale", default=None),
        }
    else:
        table_path = rew.get_str("table_path", required=True)
        if not os.path.isabs(table_path):
            table_path = os.path.join(os.path.dirname(os.path.abspath(path)), table_path)
        reward_args = {
            "table_path": table_path,
            "exponent": rew.get_float("exponent", default=1.0),
            "max_scale": rew.get_float("max_scale", default=10.0),
        }
    rew.reject_unused()

    defaults = TrainConfig()
    if "train" in present:
        tr = _Section("train", parser["train"])
        hidden_text = tr.get_str(
            "hidden", default=",".join(str(h) for h in defaults.hidden)
        )
        try:
            hidden = tuple(int(h) for h in hidden_text.split(","))
        except ValueError:
            raise ConfigError(f"[train] hidden: {hidden_text!r} is not a size list") from None
        train = TrainConfig(
            objective=tr.get_str("objective", default=defaults.objective),
            parametrization=tr.get_str("parametrization", default=defaults.parametrization),
            prt=tr.get_bool("prt", default=defaults.prt),
            alpha=tr.get_float("alpha", default=defaults.alpha),
            epsilon=tr.get_float("epsilon", default=defaults.epsilon),
            learning_rate=tr.get_float("learning_rate", default=defaults.learning_rate),
            rounds=tr.get_int("rounds", default=defaults.rounds),
            batch_size=tr.get_int("batch_size", default=defaults.batch_size),
            monitor_every=tr.get_int("monitor_every", default=defaults.monitor_every),
            monitor_samples=tr.get_int("monitor_samples", default=defaults.monitor_samples),
            eval_window_rounds=tr.get_int(
                "eval_window_rounds", default=defaults.eval_window_rounds
            ),
            seed=tr.get_int("seed", default=defaults.seed),
            hidden=hidden,
            guide_source=tr.get_str("guide_source", default=defaults.guide_source),
            replay_top_quantile=tr.get_float(
                "replay_top_quantile", default=defaults.replay_top_quantile
            ),
            replay_top_fraction=tr.get_float(
                "replay_top_fraction", default=defaults.replay_top_fraction
            ),
        )
        tr.reject_unused()
    else:
        train = TrainConfig()

    out = _Section("output", parser["output"])
    out_dir = out.get_str("directory", required=True)
    out.reject_unused()
    if not os.path.isabs(out_dir):
        out_dir = os.path.join(os.path.dirname(os.path.abspath(path)), out_dir)

    try:
        train.validate()
    except ValueError as err:
        raise ConfigError(f"[train] {err}") from None
    cfg = ExperimentConfig(
        env_kind=kind,
        alphabet_size=alphabet_size,
        seq_len=seq_len,
        capacity=capacity,
        reward_kind=reward_kind,
        reward_args=reward_args,
        train=train,
        out_dir=out_dir,
    )
    if cfg.alphabet_size < 1 or cfg.alphabet_size > 26:
        raise ConfigError("[env] alphabet_size must be in 1..26")
    if cfg.seq_len is not None and cfg.seq_len < 1:
        raise ConfigError("[env] seq_len must be >= 1")
    if cfg.capacity is not None and cfg.capacity < 1:
        raise ConfigError("[env] capacity must be >= 1")
    return cfg


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def render_config(cfg):
    """Resolved-config echo; reloading it reproduces cfg exactly."""
    lines = ["[env]", f"kind = {cfg.env_kind}", f"alphabet_size = {cfg.alphabet_size}"]
    if cfg.env_kind == "bag":
        lines.append(f"capacity = {cfg.capacity}")
    else:
        lines.append(f"seq_len = {cfg.seq_len}")

    lines += ["", "[reward]", f"kind = {cfg.reward_kind}"]
    for key, v in cfg.reward_args.items():
        if v is None:
            continue
        lines.append(f"{key} = {format_motifs(v) if key == 'motifs' else _fmt(v)}")

    t = cfg.train
    lines += [
        "",
        "[train]",
        f"objective = {t.objective}",
        f"parametrization = {t.parametrization}",
        f"prt = {_fmt(t.prt)}",
        f"alpha = {_fmt(t.alpha)}",
        f"epsilon = {_fmt(t.epsilon)}",
        f"learning_rate = {_fmt(t.learning_rate)}",
        f"rounds = {t.rounds}",
        f"batch_size = {t.batch_size}",
        f"monitor_every = {t.monitor_every}",
        f"monitor_samples = {t.monitor_samples}",
        f"eval_window_rounds = {t.eval_window_rounds}",
        f"seed = {t.seed}",
        "hidden = " + ",".join(str(h) for h in t.hidden),
        f"guide_source = {t.guide_source}",
        f"replay_top_quantile = {_fmt(t.replay_top_quantile)}",
        f"replay_top_fraction = {_fmt(t.replay_top_fraction)}",
        "",
        "[output]",
        f"directory = {cfg.out_dir}",
        "",
    ]
    return "\n".join(lines)
