import numpy as np
import pytest

import ebnet.cli.bench as bench_module
from ebnet.cli import parse_geometry, run_bench
from ebnet.errors import ConfigError


def test_geometry_defaults():
    case = parse_geometry("512x512:k3:s1:hw16")
    g = case.geom
    assert (g.in_channels, g.out_channels, g.kernel_h, g.stride, g.padding, g.groups) == (512, 512, 3, 1, 1, 1)
    assert (case.hw, case.batch) == (16, 1)
    assert case.label == "512x512:k3:s1:hw16:g1:n1"


def test_geometry_with_groups_and_batch():
    case = parse_geometry("64x32:k1:s2:hw8:g4:n3")
    assert (case.geom.groups, case.geom.padding, case.batch) == (4, 0, 3)


@pytest.mark.parametrize("text", ["512x512", "512x512:k3:s1", "ax8:k3:s1:hw4", "6x8:k3:s1:hw4:g4"])
def test_bad_geometry(text):
    with pytest.raises(ValueError):
        parse_geometry(text)


def test_bench_result():
    result = run_bench(parse_geometry("8x16:k3:s1:hw5"), iters=3, threads=2)
    assert result.iters == 3
    assert result.threads == 2
    assert result.packed_ns > 0 and result.reference_ns > 0
    assert result.speedup == pytest.approx(result.reference_ns / result.packed_ns)
    assert "speedup" in result.to_text()


def test_zero_iterations():
    with pytest.raises(ConfigError):
        run_bench(parse_geometry("8x8:k3:s1:hw4"), iters=0)


def test_disagreement_aborts_before_timing(monkeypatch):
    timed = []
    real = bench_module.bconv_accumulate_packed

    def off_by_one(*args, **kwargs):
        timed.append(1)
        return real(*args, **kwargs) + 1

    monkeypatch.setattr(bench_module, "bconv_accumulate_packed", off_by_one)
    with pytest.raises(RuntimeError):
        run_bench(parse_geometry("8x8:k3:s1:hw4"), iters=5)
    assert timed == [1]


def test_accumulations_are_odd_for_odd_fields():
    # K = 1 * 3 * 3: every +-1 sum over an odd field is odd
    case = parse_geometry("1x4:k3:s1:hw6")
    rng = np.random.default_rng(0)
    x = rng.choice([-1.0, 1.0], size=(1, 1, 6, 6))
    w = rng.choice([-1.0, 1.0], size=case.geom.weight_shape)
    acc = bench_module.bconv_accumulate_packed(
        bench_module.binarize_pack(x, "c"), bench_module.binarize_pack(w, "chw"), case.geom
    )
    assert np.all(acc % 2 == 1)
