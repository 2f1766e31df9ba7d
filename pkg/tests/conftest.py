import pytest

from mmia.captioner import TrainConfig, Vocab, build_model, train
from mmia.synthdata import CorpusSpec, generate_corpus


@pytest.fixture(scope="session")
def f_corpus():
    return generate_corpus(CorpusSpec("F", 100, 0))


@pytest.fixture(scope="session")
def f_members(f_corpus):
    return f_corpus[:50]


@pytest.fixture(scope="session")
def f_nonmembers(f_corpus):
    return f_corpus[50:]


@pytest.fixture(scope="session")
def overfit_v(f_members):
    """A V captioner memorising 50 training pairs, plus its loss history."""
    vocab = Vocab.from_captions([p.caption for p in f_members])
    model = build_model("V", vocab, 0)
    return train(model, f_members, TrainConfig(epochs=60, batch_size=10))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(results):
        passed, detail = results[crit]
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if passed else 'FAIL'} - {detail}")
