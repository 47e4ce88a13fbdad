import numpy as np
import pytest

from riccikge.kg import KnowledgeGraph


def random_graph(n_entities=12, n_relations=2, n_triples=30, seed=0, n_valid=0, n_test=0):
    """Random simple multigraph with distinct triples and no self-loops."""
    rng = np.random.default_rng(seed)
    seen = set()
    while len(seen) < n_triples + n_valid + n_test:
        h, t = rng.integers(0, n_entities, 2)
        if h != t:
            seen.add((int(h), int(rng.integers(0, n_relations)), int(t)))
    rows = sorted(seen)
    rng.shuffle(rows)
    train = rows[:n_triples]
    valid = rows[n_triples:n_triples + n_valid]
    test = rows[n_triples + n_valid:]
    return KnowledgeGraph.from_arrays(n_entities, n_relations, train, valid, test)


def write_dataset(directory, graph):
    """Write train/valid/test TSV files for ``graph`` into ``directory``."""
    from riccikge.kg import write_triples_tsv
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        write_triples_tsv(directory / f"{name}.txt", graph.split(name), graph.vocab)
    return directory


@pytest.fixture
def small_graph():
    return random_graph()


@pytest.fixture
def toy_dataset(tmp_path):
    graph = random_graph(n_entities=10, n_relations=2, n_triples=30, n_valid=4, n_test=4, seed=3)
    # every entity must appear in train for strict valid/test loading
    names = {h for h, _, t in graph.triples} | {t for h, _, t in graph.triples}
    assert names == set(range(graph.n_entities))
    return write_dataset(tmp_path / "toy", graph)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in results.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
