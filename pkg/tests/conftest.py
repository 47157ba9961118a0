import numpy as np
import pytest

from mosgsl.data import Dataset, Graph, synthesize_features


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One outcome line per acceptance criterion at the end of the run."""
    seen: dict[str, str] = {}
    for outcome in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" in nodeid and rep.when in ("call", "setup"):
                name = nodeid.split("::")[-1]
                if outcome == "skipped" or name not in seen:
                    seen[name] = outcome.upper()
    if seen:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name in sorted(seen):
            terminalreporter.write_line(f"{name}: {seen[name]}")


def write_fixture_tu(root) -> str:
    """Hand-written two-graph dataset: a triangle (label 1) and one edge (label -1)."""
    d = root / "TINY"
    d.mkdir(parents=True, exist_ok=True)
    (d / "TINY_graph_indicator.txt").write_text("1\n1\n1\n2\n2\n")
    (d / "TINY_graph_labels.txt").write_text("1\n-1\n")
    (d / "TINY_A.txt").write_text(
        "1, 2\n2, 1\n1, 3\n3, 1\n2, 3\n3, 2\n4, 5\n5, 4\n")
    return str(root)


@pytest.fixture
def tiny_tu_dir(tmp_path):
    return write_fixture_tu(tmp_path)


def ring_graph(n: int, label: int) -> Graph:
    edges = [(i, (i + 1) % n, 1.0) for i in range(n)]
    edges = [(min(u, v), max(u, v), w) for u, v, w in edges]
    return Graph(n=n, edges=sorted(set(edges)), features=None, label=label)


def star_graph(n: int, label: int) -> Graph:
    return Graph(n=n, edges=[(0, v, 1.0) for v in range(1, n)], features=None, label=label)


def synthetic_dataset(n_per_class: int = 15, seed: int = 0, cap: int = 8) -> Dataset:
    """Rings vs stars: structurally separable two-class toy data."""
    rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(n_per_class):
        graphs.append(ring_graph(int(rng.integers(6, 11)), 0))
        graphs.append(star_graph(int(rng.integers(6, 11)), 1))
    ds = Dataset(name="SYNTH", graphs=graphs, num_classes=2, feature_dim=0)
    return synthesize_features(ds, cap=cap)


@pytest.fixture
def synth_dataset():
    return synthetic_dataset()
