import pytest
import torch

from ebnet.errors import ConfigError
from ebnet.settings import THREADS_ENV_VAR, RuntimeSettings, thread_budget
from ebnet.settings.env import match_placeholder, substitute_env


@pytest.mark.parametrize(
    "text, name",
    [
        ("${DATA_ROOT}", "DATA_ROOT"),
        ("$DATA_ROOT", "DATA_ROOT"),
        ("  ${EBNET_2}  ", "EBNET_2"),
        ("$666", "666"),
        ("DATA_ROOT", None),
        ("data/${DATA_ROOT}", None),
        ("$$DOUBLE", None),
        ("${}", None),
        ("$", None),
    ],
)
def test_placeholder_match(text, name):
    assert match_placeholder(text) == name


def test_substitution_walks_the_tree(monkeypatch):
    monkeypatch.setenv("DATA_ROOT", "/data/cifar")
    monkeypatch.delenv("EBNET_UNSET", raising=False)
    doc = {
        "root": "${DATA_ROOT}",
        "nested": {"runs": ["$DATA_ROOT", "runs/$DATA_ROOT", 3]},
        "missing": "$EBNET_UNSET",
        "epochs": 60,
        "none": None,
    }
    out = substitute_env(doc)
    assert out is doc
    assert out == {
        "root": "/data/cifar",
        "nested": {"runs": ["/data/cifar", "runs/$DATA_ROOT", 3]},
        "missing": "",
        "epochs": 60,
        "none": None,
    }


def test_substitution_rejects_other_collections():
    with pytest.raises(TypeError):
        substitute_env({"dirs": {"a", "b"}})
    with pytest.raises(TypeError):
        substitute_env({"dirs": ("a", "b")})


def test_thread_setting(monkeypatch):
    monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
    assert RuntimeSettings.from_env().threads == 1
    assert thread_budget() == 1
    monkeypatch.setenv(THREADS_ENV_VAR, "4")
    assert RuntimeSettings.from_env().threads == 4
    assert thread_budget() == 4
    monkeypatch.setenv(THREADS_ENV_VAR, " ")
    assert RuntimeSettings.from_env().threads == 1


@pytest.mark.parametrize("raw", ["0", "-2", "many", "1.5"])
def test_invalid_thread_setting(monkeypatch, raw):
    monkeypatch.setenv(THREADS_ENV_VAR, raw)
    with pytest.raises(ConfigError):
        RuntimeSettings.from_env()


def test_apply_caps_torch_threads():
    before = torch.get_num_threads()
    try:
        RuntimeSettings(threads=2).apply()
        assert torch.get_num_threads() == 2
    finally:
        torch.set_num_threads(before)
