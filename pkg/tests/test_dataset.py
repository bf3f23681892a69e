
import numpy as np
import pytest
from hypothesis import given, strategies as st
from PIL import Image

from bathcls import dataset as ds
from bathcls.dataset import Manifest, Record


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_manifest_valid(tmp_path):
    p = _write(tmp_path / "m.csv", "path,label,split\na.jpg,good,train\nb.jpg,bad,train\nc.png,good,test\n")
    m = ds.load_manifest(p)
    assert len(m) == 3
    assert m.records[1] == Record("b.jpg", "bad", "train")
    assert [r.path for r in m.split("test")] == ["c.png"]


@pytest.mark.parametrize(
    "body,needle",
    [
        ("a.jpg,ok,train\n", "line 2"),
        ("a.jpg,good,train\nb.jpg,good,val\n", "line 3"),
        ("a.jpg,good,train\na.jpg,bad,test\n", "duplicate"),
        ("a.jpg,good\n", "expected 3 fields"),
    ],
)
def test_load_manifest_errors(tmp_path, body, needle):
    p = _write(tmp_path / "m.csv", "path,label,split\n" + body)
    with pytest.raises(ds.ManifestError, match=needle):
        ds.load_manifest(p)


def test_load_manifest_missing_header(tmp_path):
    with pytest.raises(ds.ManifestError, match="header"):
        ds.load_manifest(_write(tmp_path / "m.csv", "a.jpg,good,train\n"))
    with pytest.raises(ds.ManifestError):
        ds.load_manifest(_write(tmp_path / "e.csv", ""))


def test_header_only_warns(tmp_path):
    with pytest.warns(UserWarning):
        m = ds.load_manifest(_write(tmp_path / "m.csv", "path,label,split\n"))
    assert len(m) == 0
    assert ds.stats(m).total == 0


def test_stats_small():
    m = Manifest([Record("a", "good", "train"), Record("b", "good", "train"), Record("c", "bad", "test")])
    s = ds.stats(m)
    assert s.cell("good", "train") == 2 and s.cell("bad", "test") == 1
    assert s.cell("bad", "train") == 0 and s.total == 3
    assert s.split_total("train") == 2 and s.label_total("bad") == 1


@given(st.lists(st.tuples(st.sampled_from(ds.LABELS), st.sampled_from(ds.SPLITS)), max_size=60))
def test_stats_sums(pairs):
    m = Manifest([Record(f"img{i}.png", lab, sp) for i, (lab, sp) in enumerate(pairs)])
    s = ds.stats(m)
    assert s.total == len(pairs)
    assert sum(s.split_total(sp) for sp in ds.SPLITS) == s.total == sum(s.label_total(lab) for lab in ds.LABELS)


def test_manifest_round_trip_and_directory(tmp_path):
    for split, label in [("train", "good"), ("train", "bad"), ("Test", "Good")]:
        d = tmp_path / "imgs" / split / label
        d.mkdir(parents=True)
        Image.new("RGB", (4, 4)).save(d / "x.png")
    (tmp_path / "imgs" / "train" / "good" / "notes.txt").write_text("skip")
    m = ds.manifest_from_directory(tmp_path / "imgs")
    assert sorted((r.split, r.label) for r in m.records) == [("test", "good"), ("train", "bad"), ("train", "good")]
    ds.write_manifest(m, tmp_path / "m.csv")
    assert ds.load_manifest(tmp_path / "m.csv").records == m.records


def test_load_image_gray_constant(tmp_path):
    Image.new("RGB", (64, 64), (128, 128, 128)).save(tmp_path / "g.png")
    x = ds.load_image(tmp_path / "g.png", 32)
    assert x.shape == (32, 32, 3) and x.dtype == np.float32
    np.testing.assert_allclose(x, 128 / 255, atol=1e-6)


def test_load_image_checkerboard_average(tmp_path):
    Image.fromarray(np.array([[0, 255], [255, 0]], dtype=np.uint8)).save(tmp_path / "c.png")
    x = ds.load_image(tmp_path / "c.png", 1)
    np.testing.assert_allclose(x, 0.5, atol=1e-6)


@pytest.mark.parametrize("mode", ["L", "RGBA", "P", "RGB"])
def test_load_image_modes(tmp_path, mode):
    rng = np.random.default_rng(0)
    Image.fromarray(rng.integers(0, 256, (13, 21, 3), dtype=np.uint8)).convert(mode).save(tmp_path / "i.png")
    x = ds.load_image(tmp_path / "i.png", 16)
    assert x.shape == (16, 16, 3) and x.min() >= 0 and x.max() <= 1
    if mode == "L":
        assert np.array_equal(x[..., 0], x[..., 1]) and np.array_equal(x[..., 1], x[..., 2])
    assert ds.load_image(tmp_path / "i.png", 16).tobytes() == x.tobytes()


def test_load_image_jpeg(tmp_path):
    Image.new("RGB", (30, 20), (10, 200, 30)).save(tmp_path / "i.jpg")
    assert ds.load_image(tmp_path / "i.jpg", 8).shape == (8, 8, 3)


def test_load_image_undecodable(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(ds.ImageDecodeError):
        ds.load_image(tmp_path / "bad.png", 8)
    with pytest.raises(ds.ImageDecodeError):
        ds.load_image(tmp_path / "missing.png", 8)


def test_manifest_source(tmp_path):
    Image.new("RGB", (5, 5), (255, 255, 255)).save(tmp_path / "a.png")
    m = Manifest([Record("a.png", "good", "train"), Record("b.png", "bad", "test")])
    src = ds.ManifestSource(m, tmp_path)
    (s,) = src.load(src.records("train"), 4)
    assert s.label == 1 and s.image.shape == (4, 4, 3)
    with pytest.raises(FileNotFoundError):
        src.load(src.records("test"), 4)


def test_make_batches_sizes_and_determinism():
    items = list(range(10))
    assert [len(b) for b in ds.make_batches(items, 4, seed=1)] == [4, 4, 2]
    assert ds.make_batches(items, 4, seed=1) == ds.make_batches(items, 4, seed=1)
    assert ds.make_batches(items, 3, shuffle=False)[0] == [0, 1, 2]
    with pytest.raises(ValueError):
        ds.make_batches(items, 0)


@pytest.mark.parametrize("seed", range(100))
def test_make_batches_permutation(seed):
    rng = np.random.default_rng(seed)
    items = rng.integers(0, 5, int(rng.integers(0, 40))).tolist()
    bs = int(rng.integers(1, 9))
    out = [x for b in ds.make_batches(items, bs, seed=seed) for x in b]
    assert sorted(out) == sorted(items)


def test_synth_dataset():
    data = ds.synth_dataset(64, 32, seed=3)
    assert sum(s.label for s in data) == 32
    for s in data:
        assert s.image.shape == (32, 32, 3) and 0 <= s.image.min() and s.image.max() <= 1
        assert (s.image.mean() > 0.5) == (s.label == 1)
    again = ds.synth_dataset(64, 32, seed=3)
    assert all(a.image.tobytes() == b.image.tobytes() for a, b in zip(data, again))
    with pytest.raises(ValueError):
        ds.synth_dataset(7, 8)


@given(st.integers(1, 20).map(lambda k: 2 * k), st.integers(4, 24), st.integers(0, 2**16))
def test_synth_label_is_brightness(n, size, seed):
    for s in ds.synth_dataset(n, size, seed):
        assert (s.image.mean() > 0.5) == bool(s.label)


def test_synthetic_source_splits_disjoint():
    src = ds.SyntheticSource(8, 4, seed=0)
    train, test = src.records("train"), src.records("test")
    assert not {r.path for r in train} & {r.path for r in test}
    a = src.load(train, 8)
    b = src.load(test, 8)
    assert not any(np.array_equal(x.image, y.image) for x in a for y in b)
    assert [s.label for s in a] == [r.target for r in train]
