import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from must_czsl.space import build_space


@pytest.fixture(autouse=True, scope="session")
def _single_thread():
    with threadpool_limits(limits=1):
        yield


def random_space(rng, n_states=4, n_objects=3, n_seen=5, n_unseen=3):
    """Random closed set whose seen pairs cover every component."""
    all_pairs = [(s, o) for s in range(n_states) for o in range(n_objects)]
    while True:
        perm = rng.permutation(len(all_pairs))
        seen = [all_pairs[i] for i in perm[:n_seen]]
        unseen = [all_pairs[i] for i in perm[n_seen:n_seen + n_unseen]]
        if {s for s, _ in seen} == set(range(n_states)) and {o for _, o in seen} == set(range(n_objects)):
            break
    return build_space([f"s{i}" for i in range(n_states)], [f"o{i}" for i in range(n_objects)], seen, unseen)


def brute_force_sweep(pair_scores, labels, unseen_cols, k):
    """Curve by direct re-ranking at one bias inside every distinct interval.

    Breakpoints are all differences between a seen column and an unseen
    column of any sample; top-k membership can only change there.
    """
    pair_scores = np.asarray(pair_scores, dtype=np.float64)
    diffs = set()
    for row in pair_scores:
        for a in row[~unseen_cols]:
            for b in row[unseen_cols]:
                diffs.add(float(a - b))
    cuts = sorted(diffs)
    if cuts:
        probes = [cuts[0] - 1.0] + [(x + y) / 2 for x, y in zip(cuts[:-1], cuts[1:])] + [cuts[-1] + 1.0]
    else:
        probes = [0.0]
    is_unseen = unseen_cols[labels]
    points = []
    for bias in probes:
        shifted = pair_scores + np.where(unseen_cols, bias, 0.0)[None, :]
        hits = []
        for i, row in enumerate(shifted):
            # naive ranking: count columns strictly ahead of the label, ties to lower id
            ahead = sum(1 for j in range(len(row)) if row[j] > row[labels[i]]
                        or (row[j] == row[labels[i]] and j < labels[i]))
            hits.append(ahead < k)
        hits = np.array(hits)
        pt = (hits[~is_unseen].mean(), hits[is_unseen].mean())
        if not points or points[-1] != pt:
            points.append(pt)
    a_s = np.array([p[0] for p in points])
    a_u = np.array([p[1] for p in points])
    auc = 0.0
    for i in range(1, len(points)):
        auc += (a_u[i] - a_u[i - 1]) * (a_s[i] + a_s[i - 1]) / 2
    hm = max((2 * s * u / (s + u) if s + u > 0 else 0.0) for s, u in points)
    return points, auc, hm


# Acceptance criteria append (number, passed, detail) here; printed at the end of the run.
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
