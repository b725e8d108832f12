import numpy as np
import numpy.testing as npt
import pytest

from ddpredict import chansim
from ddpredict import dataset as ds
from ddpredict.errors import BadMagicError, ConfigError, ShapeMismatchError, TruncatedFileError, VersionMismatchError


def test_complex_real_stacking():
    npt.assert_array_equal(ds.complex_to_real(np.array([1 + 2j, 0])), [1, 0, 2, 0])
    npt.assert_array_equal(ds.complex_to_real(np.zeros(3, complex)), np.zeros(6))
    h = np.random.default_rng(0).standard_normal(5) + 1j * np.random.default_rng(1).standard_normal(5)
    npt.assert_array_equal(ds.real_to_complex(ds.complex_to_real(h)), h)


def _seq(T, seed=0):
    cfg = chansim.SimConfig(rng_seed=seed)
    seq = chansim.generate_taps(cfg, T)
    return cfg, seq, chansim.physics_track(seq, cfg, ["max_doppler_hz"])


@pytest.mark.parametrize("T, count", [(20, 1), (24, 5), (19, 0)])
def test_make_samples_counts(T, count):
    _, seq, tr = _seq(T)
    assert len(ds.make_samples(seq, tr, 16, 4, stride=1)) == count


def test_make_samples_temporal_order():
    _, seq, tr = _seq(40)
    X = ds.complex_to_real(seq.frames.T)
    for k, s in enumerate(ds.make_samples(seq, tr, 16, 4, stride=4)):
        start = 4 * k
        npt.assert_array_equal(s.history, X[:, start:start + 16])
        npt.assert_array_equal(s.target[:, 0], X[:, start + 16])
        assert s.history.shape == (20, 16) and s.physics.shape == (1, 16) and s.target.shape == (20, 4)


def test_fit_norm_degenerate_and_lln():
    rng = np.random.default_rng(0)
    const = [ds.Sample(np.full((2, 3), 2.0), np.ones((1, 3)), np.zeros((2, 1))) for _ in range(4)]
    st = ds.fit_norm(const)
    npt.assert_array_equal(st.std, ds.STD_FLOOR)
    npt.assert_array_equal(ds.apply_norm(const[0], st).history, 0.0)
    gauss = [ds.Sample(rng.standard_normal((2, 1)), rng.standard_normal((1, 1)), np.zeros((2, 1)))
             for _ in range(10000)]
    st = ds.fit_norm(gauss)
    assert np.all(np.abs(st.mean) < 0.05) and np.all(np.abs(st.std - 1) < 0.05)
    with pytest.raises(ConfigError):
        ds.fit_norm([])


def test_norm_roundtrip_and_identity():
    cfg = chansim.SimConfig(rng_seed=1)
    samples = ds.build_samples(cfg, 50)
    st = ds.fit_norm(samples)
    s = samples[3]
    back = ds.invert_norm(ds.apply_norm(s, st), st)
    npt.assert_allclose(back.history, s.history, rtol=1e-12, atol=1e-15)
    npt.assert_allclose(back.target, s.target, rtol=1e-12, atol=1e-15)
    ident = ds.NormStats.identity(20, 1)
    assert ds.apply_norm(s, ident) == s


def test_normalised_train_moments():
    cfg = chansim.SimConfig(rng_seed=1)
    samples = ds.build_samples(cfg, 200, history_noise_var=1e-3)
    st = ds.fit_norm(samples)
    H = np.concatenate([ds.apply_norm(s, st).history for s in samples], axis=1)
    active = st.std > ds.STD_FLOOR
    assert np.all(np.abs(H.mean(axis=1)) <= 1e-10)
    npt.assert_allclose(H[active].std(axis=1), 1.0, atol=1e-6)


def test_apply_norm_dimension_mismatch():
    s = ds.Sample(np.zeros((4, 3)), np.zeros((1, 3)), np.zeros((4, 2)))
    with pytest.raises(ShapeMismatchError):
        ds.apply_norm(s, ds.NormStats.identity(6, 1))


def test_build_samples_velocity_mixture_and_noise():
    cfg = chansim.SimConfig(rng_seed=2)
    clean = ds.build_samples(cfg, 300)
    noisy = ds.build_samples(cfg, 300, history_noise_var=1e-2)
    assert {s.velocity_kmh for s in clean} == set(map(float, ds.DEFAULT_VELOCITIES))
    # noise only on history, and only at active taps
    npt.assert_array_equal(clean[0].target, noisy[0].target)
    rows = np.concatenate([~chansim.tap_mask(cfg)] * 2)
    npt.assert_array_equal(noisy[0].history[rows], 0.0)
    assert not np.array_equal(clean[0].history, noisy[0].history)


def test_build_samples_subsets_are_consistent():
    cfg = chansim.SimConfig(rng_seed=2)
    full = ds.build_samples(cfg, 10)
    tail = ds.build_samples(cfg, 5, id_offset=5)
    assert full[5:] == tail


class TestSplit:
    def setup_method(self):
        self.samples = [ds.Sample(np.full((2, 2), i, float), np.zeros((1, 2)), np.zeros((2, 1)), sample_id=i)
                        for i in range(10000)]

    def test_counts_and_disjoint(self):
        sp = ds.split(self.samples, (0.8, 0.1, 0.1), seed=0)
        assert (len(sp.train), len(sp.val), len(sp.test)) == (8000, 1000, 1000)
        ids = [s.sample_id for s in sp.train + sp.val + sp.test]
        assert sorted(ids) == list(range(10000))

    def test_same_seed_same_split(self):
        a = ds.split(self.samples, (0.8, 0.1, 0.1), seed=4)
        b = ds.split(self.samples, (0.8, 0.1, 0.1), seed=4)
        assert [s.sample_id for s in a.test] == [s.sample_id for s in b.test]

    def test_stats_isolated_from_val_test(self):
        sp = ds.split(self.samples, (0.8, 0.1, 0.1), seed=0)
        before = ds.fit_norm(sp.train)
        for s in sp.val + sp.test:
            s.history = s.history + 1e6
        assert ds.fit_norm(sp.train) == before == sp.stats

    def test_bad_ratios(self):
        with pytest.raises(ConfigError):
            ds.split(self.samples, (0.5, 0.2, 0.2))


class TestFormat:
    def setup_method(self):
        cfg = chansim.SimConfig(rng_seed=3)
        self.split = ds.split(ds.build_samples(cfg, 30, descriptors=("max_doppler_hz", "snr_db")), seed=3)

    def test_roundtrip_bit_exact(self, tmp_path):
        path = tmp_path / "d.ddp"
        ds.save_dataset(self.split, path)
        back = ds.load_dataset(path)
        assert back == self.split
        assert ds.dataset_bytes(back) == path.read_bytes()

    def test_bad_magic(self):
        buf = bytearray(ds.dataset_bytes(self.split))
        buf[0] ^= 0xFF
        with pytest.raises(BadMagicError):
            ds.parse_dataset(bytes(buf))

    def test_version(self):
        buf = bytearray(ds.dataset_bytes(self.split))
        buf[4] = 9
        with pytest.raises(VersionMismatchError):
            ds.parse_dataset(bytes(buf))

    def test_truncated(self):
        buf = ds.dataset_bytes(self.split)
        with pytest.raises(TruncatedFileError):
            ds.parse_dataset(buf[:-3])
        with pytest.raises(TruncatedFileError):
            ds.parse_dataset(buf + b"\0")

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            ds.parse_dataset(ds.dataset_bytes(self.split), expect_shape=(8, None, None, None))

    def test_error_codes_distinct(self):
        codes = {e.code for e in (BadMagicError, VersionMismatchError, TruncatedFileError, ShapeMismatchError)}
        assert len(codes) == 4
