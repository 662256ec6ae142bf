"""Executable checks of the credit-assignment math on two-string settings.

The testbed is a pair of equal-length strings x, x2 over {a, b, c} sharing a
unique longest substring s_star of length k. Constructions pad s_star = a^k
with b's in x and c's in x2 (mirrored offsets), which guarantees both that no
other length-k substring is shared and that every shared substring nests
inside s_star. `make_setting` accepts arbitrary pairs and verifies instead of
assuming; the checks refuse pairs that break the assumptions they need.

What is verified, at small scale but exactly:

- closed-form trajectory counts against brute-force enumeration;
- flows at the fixed-uniform-backward-policy optimum: the ratio of
  placement-averaged flow through s_star to the other length-k windows of x
  equals 2/(n - k);
- flows when the backward policy is the Markovization of the substructure
  guide: s_star carries R(x) + R(x2) and competing windows carry zero;
- the rich-get-richer dynamics of tabular trajectory-flow training as an
  urn process, against its beta-binomial exceedance bound;
- the binomial row bound max_a C(n, a) <= e 2^n / (pi sqrt(n));
- equal trajectory flows <=> uniform forward and backward policies.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import betabinom

from .envs import make_env, trajectories_to
from .objectives import SubstructureGuide
from .policy import EnvTable, TabularTrajectoryFlow, UniformHead, trajectories_to_batch, batch_step_logp
from .rng import substream, worker_count

COUNT_LIMIT = 1 << 62


def count_trajectories(n):
    """Number of build orders for a length-n string under prepend/append."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = 1 << (n - 1)
    if out >= COUNT_LIMIT:
        raise OverflowError(f"count 2^{n-1} exceeds 62-bit budget")
    return out

def count_through(n, k, a):
    """Build orders of a length-n string that pass through the length-k
    window at offset a: C(n-k, a) * 2^(k-1)."""
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    if not 0 <= a <= n - k:
        raise ValueError("offset outside 0..n-k")
    out = math.comb(n - k, a) << (k - 1)
    if out >= COUNT_LIMIT:
        raise OverflowError("count exceeds 62-bit budget")
    return out


def _substrings(x):
    return {x[i:j] for i in range(len(x)) for j in range(i + 1, len(x) + 1)}


def _contains_sub(needle, hay):
    return bytes(needle) in bytes(hay)


@dataclass(frozen=True)
class SettingA:
    """Two equal-length strings with a unique longest shared substring."""

    x: tuple
    x2: tuple
    reward_x: float
    reward_x2: float
    n: int
    k: int
    s_star: tuple
    a: int
    a2: int
    alphabet_size: int


def make_setting(x, x2, rewards=(1.0, 1.0)):
    x, x2 = tuple(x), tuple(x2)
    if len(x) != len(x2):
        raise ValueError("x and x2 must have equal length")
    if x == x2:
        raise ValueError("x and x2 must differ")
    shared = _substrings(x) & _substrings(x2)
    kmax = max(len(s) for s in shared)
    longest = [s for s in shared if len(s) == kmax]
    if len(longest) != 1:
        raise ValueError(f"longest shared substring is not unique: {sorted(longest)}")
    s_star = longest[0]
    return SettingA(
        x=x,
        x2=x2,
        reward_x=float(rewards[0]),
        reward_x2=float(rewards[1]),
        n=len(x),
        k=kmax,
        s_star=s_star,
        a=_find_sub(x, s_star),
        a2=_find_sub(x2, s_star),
        alphabet_size=max(max(x), max(x2)) + 1,
    )


def _find_sub(x, s):
    for o in range(len(x) - len(s) + 1):
        if x[o : o + len(s)] == s:
            return o
    raise ValueError("not a substring")


def build_setting(n, k, a, rewards=(1.0, 1.0)):
    """Padded construction: x = b^a a^k b^(n-k-a), x2 mirrored with c's.

    The pads use disjoint letters, so shared substrings are exactly the
    substrings of a^k and every assumption below holds by construction.
    """
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < n")
    m = n - k
    if not 0 <= a <= m:
        raise ValueError("offset outside 0..n-k")
    x = (1,) * a + (0,) * k + (1,) * (m - a)
    x2 = (2,) * (m - a) + (0,) * k + (2,) * a
    return make_setting(x, x2, rewards)


def broken_setting(rewards=(1.0, 1.0)):
    """aab/baa: the shared single letter b escapes s_star = aa, so the
    substructure guide leaks probability around it. Used to demonstrate the
    nesting refusal."""
    return make_setting((0, 0, 1), (1, 0, 0), rewards)


def nesting_offenders(setting):
    """Shared substrings that do not nest inside s_star."""
    shared = _substrings(setting.x) & _substrings(setting.x2)
    return sorted(s for s in shared if not _contains_sub(s, setting.s_star))


def _setting_table(setting, cache=None):
    key = (setting.alphabet_size, setting.n)
    if cache is not None and key in cache:
        return cache[key]
    env = make_env("string_pa", setting.alphabet_size, seq_len=setting.n)
    table = EnvTable(env)
    if cache is not None:
        cache[key] = table
    return table


def _uniform_pb_flows(table, terminal_rewards):
    """Backward flow DP with the uniform backward policy: F(terminal) = R,
    F(s) = sum over child edges of F(child) * P_B(edge | child)."""
    F = np.zeros(len(table.states))
    for x, r in terminal_rewards.items():
        F[table.state_idx(x)] = r
    for lv in reversed(table.levels[1:]):
        pb = table.b_mask[lv] / table.b_mask[lv].sum(axis=1, keepdims=True)
        contrib = F[lv][:, None] * pb
        np.add.at(F, table.b_parent[lv][table.b_mask[lv]], contrib[table.b_mask[lv]])
    return F


def _k_windows(x, k):
    return {x[o : o + k] for o in range(len(x) - k + 1)}


def maxent_flows(setting, table=None):
    """Exact flows at the uniform-backward optimum: F(s_star) and the summed
    flow of x's other length-k windows."""
    table = table if table is not None else _setting_table(setting)
    F = _uniform_pb_flows(
        table, {setting.x: setting.reward_x, setting.x2: setting.reward_x2}
    )
    f_star = float(F[table.state_idx(setting.s_star)])
    rest = _k_windows(setting.x, setting.k) - {setting.s_star}
    f_rest = float(sum(F[table.state_idx(w)] for w in rest))
    return f_star, f_rest


@dataclass
class MaxentReport:
    per_placement: list
    avg_star: float
    avg_rest: float
    ratio: float
    expected: float


def maxent_flow_ratio(n, k, rewards=(1.0, 1.0)):
    """Flows per mirrored placement a in 0..n-k, and the ratio of the
    placement-averaged F(s_star) to the placement-averaged competing flow.
    With equal rewards the ratio is exactly 2/(n-k)."""
    cache = {}
    rows = []
    for a in range(n - k + 1):
        setting = build_setting(n, k, a, rewards)
        f_star, f_rest = maxent_flows(setting, _setting_table(setting, cache))
        rows.append((a, setting.a2, f_star, f_rest))
    avg_star = sum(r[2] for r in rows) / len(rows)
    avg_rest = sum(r[3] for r in rows) / len(rows)
    return MaxentReport(
        per_placement=rows,
        avg_star=avg_star,
        avg_rest=avg_rest,
        ratio=avg_star / avg_rest,
        expected=2.0 / (n - k),
    )


def _guide_edge_masses(table, guide, target):
    """Forward DP of guide probability mass, per edge, for one target."""
    env = table.env
    mu = {table.state_idx(env.root): 1.0}
    edge_mass = {}
    for lv in table.levels[:-1]:
        for i in lv:
            m = mu.get(int(i), 0.0)
            if m <= 0.0:
                continue
            s = table.states[int(i)]
            if s == target:
                continue
            probs = guide.transition(s, target)
            for e, p in zip(env.children(s), probs):
                if p <= 0.0:
                    continue
                j = table.state_idx(e.to)
                edge_mass[(int(i), e.fslot)] = edge_mass.get((int(i), e.fslot), 0.0) + m * p
                mu[j] = mu.get(j, 0.0) + m * p
    return edge_mass


def substructure_optimum_check(setting, kind="string_pa"):
    """Flows when P_B is the exact Markovization of the substructure guide
    over X = {x, x2}: F(s_star) = R(x) + R(x2) and the competing length-k
    windows of x carry zero flow.

    Refuses settings where some shared substring escapes s_star (the guide
    then leaks probability around it and the optimum no longer concentrates)
    and single-build-order environments (nothing to distinguish)."""
    if kind != "string_pa":
        raise ValueError(f"{kind}: only multi-order string graphs are informative here")
    offenders = nesting_offenders(setting)
    if offenders:
        raise ValueError(
            f"shared substring {offenders[0]!r} does not nest inside s_star; "
            "the guide optimum does not concentrate on this pair"
        )
    table = _setting_table(setting)
    guide = SubstructureGuide(table)
    guide.refresh([setting.x, setting.x2], [setting.reward_x, setting.reward_x2])

    # Unweighted mixture of the per-target guide edge masses, normalized per
    # child, gives the Markovized backward policy.
    mass = _guide_edge_masses(table, guide, setting.x)
    for e, w in _guide_edge_masses(table, guide, setting.x2).items():
        mass[e] = mass.get(e, 0.0) + w

    w_in = np.zeros((len(table.states), table.n_bslots))
    for (i, fslot), w in mass.items():
        j = table.f_child[i, fslot]
        w_in[j, table.f_bslot[i, fslot]] += w
    totals = w_in.sum(axis=1, keepdims=True)
    pb = np.divide(w_in, totals, out=np.zeros_like(w_in), where=totals > 0)

    F = np.zeros(len(table.states))
    F[table.state_idx(setting.x)] = setting.reward_x
    F[table.state_idx(setting.x2)] = setting.reward_x2
    for lv in reversed(table.levels[1:]):
        contrib = F[lv][:, None] * pb[lv]
        live = contrib > 0.0
        np.add.at(F, table.b_parent[lv][live], contrib[live])

    f_star = float(F[table.state_idx(setting.s_star)])
    rest = _k_windows(setting.x, setting.k) - {setting.s_star}
    f_rest = float(sum(F[table.state_idx(w)] for w in rest))
    return f_star, f_rest


def through_mask(n, k, offset):
    """Boolean mask over the 2^(n-1) build orders of a length-n string:
    which of them visit the length-k window at `offset`.

    Build orders are move words (bit t = move t, 1 = prepend); the window a
    trajectory visits at length k is set by the prepends among its last
    n - k moves."""
    words = np.arange(1 << (n - 1), dtype=np.uint32)
    tail = (words >> (k - 1)) & ((1 << (n - k)) - 1)
    pop = np.zeros(words.size, dtype=np.int64)
    for b in range(n - k):
        pop += (tail >> b) & 1
    mask = pop == offset
    if int(mask.sum()) != count_through(n, k, offset):
        raise AssertionError("move-word mask disagrees with the closed form")
    return mask


def _simulate_urn_chunk(setting, m, trials, rng, lam, epsilon_init, preseed):
    n, k = setting.n, setting.k
    masks = (through_mask(n, k, setting.a), through_mask(n, k, setting.a2))
    deltas = (
        lam * (setting.reward_x - epsilon_init),
        lam * (setting.reward_x2 - epsilon_init),
    )
    size = 1 << (n - 1)
    flows = [
        np.full((trials, size), float(epsilon_init)),
        np.full((trials, size), float(epsilon_init)),
    ]
    for side, idx, value in preseed:
        flows[side][:, idx] = float(value)
    rows = np.arange(trials)
    hits = np.zeros(trials)
    for step in range(m):
        side = step % 2
        cs = np.cumsum(flows[side], axis=1)
        u = (1.0 - rng.random((trials, 1))) * cs[:, -1:]
        pick = np.argmax(cs >= u, axis=1)
        hits += masks[side][pick]
        flows[side][rows, pick] += deltas[side]
    return hits / m


def tabular_tb_simulate(
    setting, m, trials, rng, lam=None, epsilon_init=0.01, preseed=()
):
    """Tabular trajectory-flow training on the two-terminal setting.

    Each step alternates terminals x, x2; a trajectory of the active terminal
    is drawn with probability proportional to its current flow and its flow
    is incremented by lam * (R - epsilon_init). Returns the per-trial
    fraction of the m increments that landed on build orders through s_star.

    lam defaults to 2/m, which makes each terminal's total flow finish near
    its reward. `preseed` entries (side, trajectory, value) overwrite initial
    flows, e.g. to demonstrate the rich-get-richer degenerate case.

    Trials run in 8 fixed chunks with spawned generators, so results depend
    only on (rng, trials), never on FLOWLAB_THREADS.
    """
    if m % 2:
        raise ValueError("m must be even: equal steps per terminal")
    lam = 2.0 / m if lam is None else lam
    if trials < 1:
        return np.zeros(0)
    n_chunks = min(8, trials)
    bounds = np.linspace(0, trials, n_chunks + 1).astype(int)
    gens = rng.spawn(n_chunks)

    def run(i):
        return _simulate_urn_chunk(
            setting, m, int(bounds[i + 1] - bounds[i]), gens[i], lam, epsilon_init, preseed
        )

    workers = worker_count(n_chunks)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, range(n_chunks)))
    else:
        parts = [run(i) for i in range(n_chunks)]
    return np.concatenate(parts)


def polya_exceedance_bound(setting, m, psi, lam=None, epsilon_init=0.01):
    """Closed-form cap on P(through-s_star increment fraction > psi): the
    upper tail of BetaBinomial(m, s*p, s*(1-p)) with p = e/(pi sqrt(n-k)) and
    s = epsilon_init * 2^(n-1) / increment."""
    n, k = setting.n, setting.k
    lam = 2.0 / m if lam is None else lam
    delta = lam * (setting.reward_x - epsilon_init)
    p = math.e / (math.pi * math.sqrt(n - k))
    s = epsilon_init * (1 << (n - 1)) / delta
    kk = math.floor(psi * m + 1e-9)
    return float(betabinom.sf(kk, m, s * p, s * (1.0 - p)))


def polya_urn_counts(trials, steps, white0, black0, delta, rng):
    """Generic two-color urn with equal-size increments; returns white draw
    counts per trial. Draw counts are BetaBinomial(steps, white0/delta,
    black0/delta) exactly."""
    w = np.full(trials, float(white0))
    b = np.full(trials, float(black0))
    counts = np.zeros(trials, dtype=np.int64)
    for _ in range(steps):
        is_white = rng.random(trials) * (w + b) < w
        counts += is_white
        w += np.where(is_white, delta, 0.0)
        b += np.where(is_white, 0.0, delta)
    return counts


def pascal_row_bound_check(n_max):
    """max_a C(n, a) <= e 2^n / (pi sqrt(n)) for 1 <= n <= n_max."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    for n in range(1, n_max + 1):
        biggest = math.comb(n, n // 2)
        bound = math.e * (2.0**n) / (math.pi * math.sqrt(n))
        if biggest > bound:
            return False
    return True


def uniform_flow_equivalence_check(n, alphabet_size, tol=1e-9):
    """Equal trajectory flows <=> uniform step policies, checked both ways on
    a full small prepend/append graph, plus a perturbation probe showing the
    forward direction actually discriminates."""
    env = make_env("string_pa", alphabet_size, seq_len=n)
    table = EnvTable(env)
    ttf = TabularTrajectoryFlow(env, epsilon_init=1.0)

    # Equal flows -> induced policies uniform everywhere.
    for s in table.states:
        if not env.is_terminal(s):
            p = ttf.pf_distribution(s)
            if np.abs(p - 1.0 / p.size).max() > tol:
                return False
        if s != env.root:
            p = ttf.pb_distribution(s)
            if np.abs(p - 1.0 / p.size).max() > tol:
                return False

    # Uniform policies -> all complete trajectories equally likely, and all
    # build orders of each terminal equally likely backward.
    batch = trajectories_to_batch(table, ttf.trajectories)
    lpf, _ = batch_step_logp(UniformHead("f"), table, batch)
    if lpf.max() - lpf.min() > tol:
        return False
    lpb, _ = batch_step_logp(UniformHead("b"), table, batch)
    if lpb.max() - lpb.min() > tol:
        return False

    # A lopsided flow table must be detected as non-uniform.
    ttf.flows[0] *= 2.0
    detected = False
    for s in table.states:
        if env.is_terminal(s):
            continue
        p = ttf.pf_distribution(s)
        if np.abs(p - 1.0 / p.size).max() > tol:
            detected = True
            break
    return detected


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def run_all_checks(
    seed=0,
    sizes=((3, 2), (6, 3), (8, 4)),
    urn_m=200,
    urn_trials=2000,
    urn_psis=(0.2, 0.4, 0.6, 0.8),
    count_n_max=8,
    pascal_n_max=30,
    violate=False,
):
    """Everything the `theory` subcommand reports, as CheckResult rows."""
    results = []

    def add(name, passed, detail):
        results.append(CheckResult(name, bool(passed), detail))

    # Closed-form counts vs brute enumeration on distinct-letter strings.
    def first_count_mismatch():
        for n in range(1, count_n_max + 1):
            env = make_env("string_pa", n, seq_len=n)
            x = tuple(range(n))
            trajs = trajectories_to(env, x)
            if len(trajs) != count_trajectories(n):
                return f"n={n}: {len(trajs)} != {count_trajectories(n)}"
            for k in range(1, n + 1):
                for a in range(n - k + 1):
                    window = x[a : a + k]
                    got = sum(any(e.to == window for e in tr.steps) for tr in trajs)
                    want = count_through(n, k, a)
                    if got != want:
                        return f"(n,k,a)=({n},{k},{a}): {got} != {want}"
        return None

    mismatch = first_count_mismatch()
    add(
        "counting",
        mismatch is None,
        mismatch or f"all (n,k,a) up to n={count_n_max} match enumeration",
    )

    # Flow ratio at the uniform-backward optimum.
    ok, details = True, []
    for n, k in sizes:
        rep = maxent_flow_ratio(n, k)
        err = abs(rep.ratio - rep.expected)
        details.append(f"(n,k)=({n},{k}): ratio {rep.ratio:.9f}")
        ok = ok and err <= 1e-9
    add("uniform-backward-ratio", ok, "; ".join(details))

    hand = maxent_flows(make_setting((0, 0, 1), (1, 0, 0)))
    add(
        "uniform-backward-hand-case",
        abs(hand[0] - 1.0) <= 1e-9 and abs(hand[1] - 0.5) <= 1e-9,
        f"aab/baa: F(s_star)={hand[0]:.9f}, F(other windows)={hand[1]:.9f}",
    )

    # Guide-Markovization optimum concentrates on s_star.
    ok, details = True, []
    for n, k in sizes:
        setting = broken_setting() if violate else build_setting(n, k, (n - k) // 2)
        try:
            f_star, f_rest = substructure_optimum_check(setting)
        except ValueError as err:
            ok, details = False, [str(err)]
            break
        want = setting.reward_x + setting.reward_x2
        details.append(f"(n,k)=({n},{k}): F(s_star)={f_star:.9f}, rest={f_rest:.3g}")
        ok = ok and abs(f_star - want) <= 1e-9 and abs(f_rest) <= 1e-9
    add("substructure-optimum", ok, "; ".join(details))

    # First increment of tabular training hits s_star at the count ratio.
    setting = build_setting(8, 4, 2)
    frac = float(through_mask(8, 4, 2).mean())
    want = count_through(8, 4, 2) / count_trajectories(8)
    add(
        "tabular-first-step",
        abs(frac - want) <= 1e-12,
        f"initial through-mass {frac:.6f} == {want:.6f}",
    )

    # Urn simulation vs the exceedance bound.
    sim = tabular_tb_simulate(
        setting, urn_m, urn_trials, substream(seed, "theory")
    )
    ok, details = True, []
    for psi in urn_psis:
        emp = float((sim > psi).mean())
        bound = polya_exceedance_bound(setting, urn_m, psi)
        se = math.sqrt(max(bound * (1.0 - bound), 0.0) / urn_trials)
        details.append(f"psi={psi}: emp {emp:.4f} <= bound {bound:.4f}+3se")
        ok = ok and emp <= bound + 3.0 * se
    add("urn-exceedance-bound", ok, "; ".join(details))

    add(
        "binomial-row-bound",
        pascal_row_bound_check(pascal_n_max),
        f"max C(n,a) <= e*2^n/(pi sqrt(n)) for n <= {pascal_n_max}",
    )

    add(
        "uniform-flow-equivalence",
        uniform_flow_equivalence_check(3, 2),
        "n=3, A=2: both directions and the perturbation probe",
    )
    return results
