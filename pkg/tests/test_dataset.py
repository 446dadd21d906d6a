import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voroto.artifacts import ArtifactError
from voroto.dataset import (
    ConfigError,
    DataConfig,
    Dataset,
    DecompositionError,
    SamplingRanges,
    cholesky,
    decode,
    encode,
    generate,
    load_corpus,
    reconstruct_C,
    sample_spec,
    save_corpus,
    split,
)
from voroto.voronoi import BASE_GRID, NEIGHBOR_OFFSETS, base_sites

DATA = Path(__file__).parent / "data"
SMALL = DataConfig(resolution=16)


def random_spd(rng, n=3):
    A = rng.normal(size=(n, n))
    return A @ A.T + 0.1 * np.eye(n)


# sampling

def test_zero_perturbation_gives_base_grid():
    spec = sample_spec(0, zero_perturbation=True)
    np.testing.assert_array_equal(spec.sites, base_sites())
    spec.validate()


def test_sample_spec_deterministic():
    a, b = sample_spec(42), sample_spec(42)
    assert encode(a).tobytes() == encode(b).tobytes()


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_sample_spec_respects_ranges_and_separation(seed):
    r = SamplingRanges()
    spec = sample_spec(seed, r)
    spec.validate(r.min_separation)
    p = spec.params
    assert r.beta[0] <= p.beta <= r.beta[1]
    assert r.alpha[0] <= p.alpha <= r.alpha[1]
    assert r.theta[0] <= p.theta <= r.theta[1]
    local = spec.sites.reshape(9, 4, 2) - NEIGHBOR_OFFSETS[:, None] - BASE_GRID[None]
    assert np.all(np.abs(local) <= r.delta[1] + 1e-15)


def test_min_separation_over_many_samples():
    worst = np.inf
    for seed in range(10_000):
        pts = sample_spec(seed).sites.reshape(9, 4, 2)
        d = np.linalg.norm(pts[:, :, None] - pts[:, None, :], axis=-1)
        d[:, np.arange(4), np.arange(4)] = np.inf
        worst = min(worst, d.min())
    assert worst >= 0.1


@pytest.mark.parametrize("ranges", [
    SamplingRanges(delta=(0.1, -0.1)),
    SamplingRanges(delta=(-0.3, 0.3)),
    SamplingRanges(delta=(0.0, 0.0), min_separation=0.6),
    SamplingRanges(beta=(0.0, 1.0)),
    SamplingRanges(alpha=(0.5, 2.0)),
])
def test_bad_ranges_rejected(ranges):
    with pytest.raises(ConfigError):
        sample_spec(0, ranges)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_encode_decode_roundtrip(seed):
    spec = sample_spec(seed)
    back = decode(encode(spec), spec.k)
    np.testing.assert_allclose(back.sites, spec.sites, rtol=0, atol=1e-12)
    assert back.params == spec.params
    assert encode(spec).shape == (75,)


# cholesky

def test_cholesky_examples():
    np.testing.assert_array_equal(cholesky(np.eye(3)), [1, 0, 1, 0, 0, 1])
    C = np.array([[4, 2, 0], [2, 5, 0], [0, 0, 9]], dtype=float)
    np.testing.assert_allclose(cholesky(C), [2, 1, 2, 0, 0, 3])


def test_cholesky_roundtrip_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        C = random_spd(rng)
        l6 = cholesky(C)
        assert min(l6[[0, 2, 5]]) > 0
        assert np.abs(reconstruct_C(l6) - C).max() < 1e-12


def test_cholesky_failures():
    with pytest.raises(DecompositionError):
        cholesky(np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(DecompositionError):
        cholesky(np.array([[1.0, 0.5, 0], [0, 1, 0], [0, 0, 1]]))


# generate / split / persistence

def test_generate_count_zero_rejected():
    with pytest.raises(ConfigError):
        generate(0, SMALL)


def test_generate_targets_are_pd_and_in_range():
    ds = generate(6, SMALL, seed=3)
    assert ds.inputs.shape == (6, 75) and ds.targets.shape == (6, 7)
    for y in ds.targets:
        assert np.linalg.eigvalsh(reconstruct_C(y[:6])).min() > 0
        assert 0 <= y[6] <= 1
    assert ds.metadata["seed"] == 3 and ds.metadata["config"]["resolution"] == 16


def test_generate_independent_of_thread_count(tmp_path):
    a = generate(5, SMALL, seed=9, threads=1)
    b = generate(5, SMALL, seed=9, threads=2)
    save_corpus(tmp_path / "a.bin", a)
    save_corpus(tmp_path / "b.bin", b)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_golden_single_sample(tmp_path):
    ds = generate(1, DataConfig(resolution=24), seed=5)
    save_corpus(tmp_path / "one.bin", ds)
    assert (tmp_path / "one.bin").read_bytes() == (DATA / "corpus_seed5_r24.bin").read_bytes()


def test_corpus_roundtrip_and_csv(tmp_path):
    ds = generate(3, SMALL, seed=1)
    save_corpus(tmp_path / "c.bin", ds, tmp_path / "c.csv")
    back = load_corpus(tmp_path / "c.bin")
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.targets, ds.targets)
    assert DataConfig.from_dict(back.metadata["config"]) == SMALL
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0].split(",")[-1] == "v"
    with pytest.raises(ArtifactError):
        from voroto.surrogate import load_model
        load_model(tmp_path / "c.bin")


def _toy(n):
    return Dataset(np.arange(n * 75, dtype=float).reshape(n, 75), np.zeros((n, 7)))


def test_split_partition():
    tr, va, te = split(_toy(12000), (10000, 1000, 1000), seed=0)
    assert (len(tr), len(va), len(te)) == (10000, 1000, 1000)
    ids = np.concatenate([tr.inputs[:, 0], va.inputs[:, 0], te.inputs[:, 0]])
    assert np.unique(ids).size == 12000
    tr2, _, _ = split(_toy(12000), (10000, 1000, 1000), seed=0)
    np.testing.assert_array_equal(tr.inputs, tr2.inputs)


def test_split_size_mismatch():
    with pytest.raises(ConfigError):
        split(_toy(12000), (12000, 1000, 1000))
