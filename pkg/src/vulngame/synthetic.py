"""Deterministic generator of small C-function corpora for desk-scale runs.

The vulnerability is a path-structure motif: a buffer loop missing its
bounds-check branch. Each vulnerable function is paired with a fixed twin that
only adds the guard, so the pair differs in exactly one statement. Training
samples draw identifier names from label-specific pools with probability
``name_bias`` (falling back to a neutral pool), while validation, test, and
held-out samples use the neutral pool only: names correlate with the label in
the training partition and nowhere else. The returned split keeps pair
members together, which keeps that train-only bias well defined.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from datetime import date, timedelta

from .corpus import CodeSample, Corpus, SplitAssignment

RISKY_NAMES = (
    "pkt_buf", "rx_data", "frame_ptr", "wire_len", "blob_sz", "raw_idx",
    "tmp_acc", "in_bytes", "hdr_cnt", "recv_fn", "dgram_ptr", "payload_n",
    "rx_total", "wire_fn",
)
SAFE_NAMES = (
    "cfg_val", "opt_count", "sum_out", "idx_a", "tab_ptr", "base_val",
    "calc_fn", "acc_reg", "num_items", "step_sz", "lim_chk", "out_word",
    "mix_fn", "quota_n",
)
NEUTRAL_NAMES = (
    "val_a", "val_b", "ptr_c", "cnt_d", "var_e", "fun_g", "len_h", "arr_k",
    "out_m", "idx_n", "tot_p", "buf_q", "mul_r", "res_s", "chk_t", "gen_u",
)


@dataclass(frozen=True)
class GeneratorConfig:
    n_pairs: int = 150
    n_unchanged: int = 300
    n_heldout_pairs: int = 40
    guard_fraction: float = 0.0  # share of unchanged samples with a sanity-checked loop
    name_bias: float = 0.6  # probability a train-sample name slot uses the biased pool
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0


@dataclass
class GeneratedCorpus:
    corpus: Corpus
    split: SplitAssignment
    heldout_pairs: list[tuple[CodeSample, CodeSample]] = field(default_factory=list)


def _loop_function(n: dict[str, str], *, guard: str, loop_kind: str,
                   body_op: str, extra: bool, guard_ret: str) -> str:
    """Buffer loop with an optional pre-loop check.

    guard="bounds" is the fix motif (`len > cap` branch); guard="sanity" is
    the benign equality check carried by unchanged code; guard="none" is the
    vulnerable shape.
    """
    body = {
        "sum": f"{n['acc']} = {n['acc']} + {n['buf']}[{n['i']}];",
        "xor": f"{n['acc']} = {n['acc']} ^ {n['buf']}[{n['i']}];",
        "shift": f"{n['acc']} = {n['acc']} * 2 + {n['buf']}[{n['i']}];",
    }[body_op]
    guard_line = {
        "bounds": f"    if ({n['len']} > {n['cap']}) {{ return {guard_ret}; }}\n",
        "sanity": f"    if ({n['cap']} == 0) {{ return {guard_ret}; }}\n",
        "none": "",
    }[guard]
    # the post-loop branch keeps both pair members at three or more real
    # execution paths, so path-count padding never separates them
    extra_line = (f"    if ({n['acc']} != 0) {{\n"
                  f"        {n['acc']} = {n['acc']} % 251;\n"
                  f"    }}\n" if extra else "")
    if loop_kind == "while":
        loop = (f"    while ({n['i']} < {n['len']}) {{\n"
                f"        {body}\n"
                f"        {n['i']} = {n['i']} + 1;\n"
                f"    }}\n")
    else:
        loop = (f"    for ({n['i']} = 0; {n['i']} < {n['len']}; {n['i']} = {n['i']} + 1) {{\n"
                f"        {body}\n"
                f"    }}\n")
    return (f"int {n['fn']}(int *{n['buf']}, int {n['cap']}, int {n['len']}) {{\n"
            f"    int {n['i']} = 0;\n"
            f"    int {n['acc']} = 0;\n"
            + guard_line + loop + extra_line +
            f"    return {n['acc']};\n"
            f"}}\n")


def _straight_function(n: dict[str, str], variant: int) -> str:
    mid = [
        f"    {n['r']} = {n['r']} + {n['b']};",
        f"    {n['r']} = {n['r']} * 2 + {n['b']};",
        f"    {n['r']} = ({n['r']} + {n['b']}) % 97;",
    ][variant % 3]
    return (f"int {n['fn']}(int {n['a']}, int {n['b']}) {{\n"
            f"    int {n['r']} = {n['a']} * 3;\n"
            + mid + "\n" +
            f"    return {n['r']};\n"
            f"}}\n")


def _branch_function(n: dict[str, str], variant: int) -> str:
    cmp_op = "==" if variant % 2 == 0 else "!="
    return (f"int {n['fn']}(int {n['a']}, int {n['b']}) {{\n"
            f"    int {n['r']} = 0;\n"
            f"    if ({n['a']} {cmp_op} {n['b']}) {{\n"
            f"        {n['r']} = {n['a']};\n"
            f"    }} else {{\n"
            f"        {n['r']} = {n['b']};\n"
            f"    }}\n"
            f"    return {n['r']};\n"
            f"}}\n")


def _draw_names(rnd: random.Random, pool, slots, bias: float = 1.0) -> dict[str, str]:
    """Names for a sample's identifier slots.

    Each slot draws from the biased ``pool`` with probability ``bias`` and
    from the neutral pool otherwise, so biased names correlate with the label
    while neutral names occur in training without any correlation.
    """
    out: dict[str, str] = {}
    taken: set[str] = set()
    for slot in slots:
        use = pool if (pool is NEUTRAL_NAMES or rnd.random() < bias) else NEUTRAL_NAMES
        candidates = [n for n in use if n not in taken]
        if not candidates:
            candidates = [n for n in (*pool, *NEUTRAL_NAMES) if n not in taken]
        name = rnd.choice(candidates)
        taken.add(name)
        out[slot] = name
    return out


def _random_date(rnd: random.Random) -> date:
    return date(2015, 1, 1) + timedelta(days=rnd.randrange(0, 1800))


_LOOP_SLOTS = ("fn", "buf", "cap", "len", "i", "acc")
_SIMPLE_SLOTS = ("fn", "a", "b", "r")


def _make_pair(rnd: random.Random, pool, pair_id: str, ts: date, bias: float = 1.0):
    names = _draw_names(rnd, pool, _LOOP_SLOTS, bias)
    opts = {"loop_kind": rnd.choice(("while", "for")),
            "body_op": rnd.choice(("sum", "xor", "shift")),
            "extra": True,
            "guard_ret": rnd.choice(("-1", "0"))}
    vuln_src = _loop_function(names, guard="none", **opts)
    fixed_src = _loop_function(names, guard="bounds", **opts)
    vuln = CodeSample.from_fields(f"{pair_id}v", vuln_src, "VULNERABLE",
                                  pair_id=pair_id, timestamp=ts)
    fixed = CodeSample.from_fields(f"{pair_id}f", fixed_src, "FIXED",
                                   pair_id=pair_id, timestamp=ts)
    return vuln, fixed


def _make_unchanged(rnd: random.Random, pool, sample_id: str, ts: date,
                    guard_fraction: float, bias: float = 1.0) -> CodeSample:
    roll = rnd.random()
    if roll < guard_fraction:
        names = _draw_names(rnd, pool, _LOOP_SLOTS, bias)
        src = _loop_function(names, guard="sanity",
                             loop_kind=rnd.choice(("while", "for")),
                             body_op=rnd.choice(("sum", "xor", "shift")),
                             extra=rnd.random() < 0.5,
                             guard_ret=rnd.choice(("-1", "0")))
    elif roll < guard_fraction + (1.0 - guard_fraction) / 2.0:
        src = _straight_function(_draw_names(rnd, pool, _SIMPLE_SLOTS, bias), rnd.randrange(3))
    else:
        src = _branch_function(_draw_names(rnd, pool, _SIMPLE_SLOTS, bias), rnd.randrange(2))
    return CodeSample.from_fields(sample_id, src, "UNCHANGED", timestamp=ts)


def _partition(units: list[str], ratios, rnd: random.Random):
    order = list(units)
    rnd.shuffle(order)
    n = len(order)
    n_valid = int(n * ratios[1])
    n_test = int(n * ratios[2])
    valid = set(order[:n_valid])
    test = set(order[n_valid:n_valid + n_test])
    return {u: ("valid" if u in valid else "test" if u in test else "train")
            for u in order}


def generate_corpus(config: GeneratorConfig = GeneratorConfig()) -> GeneratedCorpus:
    """Build the corpus, its split, and extra held-out evaluation pairs."""
    rnd = random.Random(config.seed)

    pair_units = [f"p{k:04d}" for k in range(config.n_pairs)]
    unch_units = [f"u{k:04d}" for k in range(config.n_unchanged)]
    where = {**_partition(pair_units, config.ratios, rnd),
             **_partition(unch_units, config.ratios, rnd)}

    samples: list[CodeSample] = []
    train, valid, test = [], [], []
    buckets = {"train": train, "valid": valid, "test": test}

    for pid in pair_units:
        part = where[pid]
        pool = RISKY_NAMES if part == "train" else NEUTRAL_NAMES
        vuln, fixed = _make_pair(rnd, pool, pid, _random_date(rnd), config.name_bias)
        samples += [vuln, fixed]
        buckets[part] += [vuln.id, fixed.id]
    for uid in unch_units:
        part = where[uid]
        pool = SAFE_NAMES if part == "train" else NEUTRAL_NAMES
        sample = _make_unchanged(rnd, pool, uid, _random_date(rnd),
                                 config.guard_fraction, config.name_bias)
        samples.append(sample)
        buckets[part].append(sample.id)

    heldout = []
    for k in range(config.n_heldout_pairs):
        heldout.append(_make_pair(rnd, NEUTRAL_NAMES, f"h{k:04d}", _random_date(rnd)))

    corpus = Corpus(tuple(samples), provenance=f"synthetic seed={config.seed}")
    split = SplitAssignment(setting="ORIGINAL", train=frozenset(train),
                            valid=frozenset(valid), test=frozenset(test),
                            ratios=tuple(config.ratios), seed=config.seed)
    return GeneratedCorpus(corpus=corpus, split=split, heldout_pairs=heldout)


def write_demo_corpus(path, n_pairs: int = 30, n_unchanged: int = 60, seed: int = 0) -> Corpus:
    """Write a small self-contained corpus file for pipeline demos and tests."""
    from .corpus import write_corpus

    generated = generate_corpus(GeneratorConfig(n_pairs=n_pairs, n_unchanged=n_unchanged,
                                                n_heldout_pairs=0, seed=seed))
    write_corpus(generated.corpus, path)
    return generated.corpus
