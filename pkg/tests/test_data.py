import os

import numpy as np
import pytest

from ppmn import data
from ppmn.errors import DatasetError


def solid(color, size=(8, 4)):
    img = np.empty((3,) + size, np.float32)
    img[:] = np.asarray(color, np.float32)[:, None, None]
    return img


def tiny_tree(root, ids=("p1", "p2"), cams=("A", "B"), size=(16, 8)):
    for k, ident in enumerate(ids):
        for cam in cams:
            d = root / ident / cam
            d.mkdir(parents=True)
            data.write_ppm(d / "000.ppm", np.full(size + (3,), 40 * (k + 1), np.uint8))
    return root


class TestPPM:
    def test_roundtrip(self, tmp_path):
        px = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
        data.write_ppm(tmp_path / "x.ppm", px)
        np.testing.assert_array_equal(data.read_ppm(tmp_path / "x.ppm"), px)

    def test_header_comments(self, tmp_path):
        (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n2 1\n# max\n255\n" + bytes(range(6)))
        np.testing.assert_array_equal(data.read_ppm(tmp_path / "c.ppm").ravel(), range(6))

    def test_rejects_non_p6_with_path(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(DatasetError, match="bad.ppm"):
            data.read_ppm(path)

    def test_rejects_truncated_and_16bit(self, tmp_path):
        (tmp_path / "t.ppm").write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(DatasetError, match="truncated"):
            data.read_ppm(tmp_path / "t.ppm")
        (tmp_path / "w.ppm").write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(DatasetError, match="8-bit"):
            data.read_ppm(tmp_path / "w.ppm")

    def test_pgm_dump(self, tmp_path):
        data.write_pgm(tmp_path / "m.pgm", np.arange(6.0).reshape(2, 3))
        raw = (tmp_path / "m.pgm").read_bytes()
        assert raw.startswith(b"P5\n3 2\n255\n") and raw[-1] == 255 and raw[-6] == 0


class TestResize:
    def test_constant_preserved(self):
        out = data.resize_bilinear(solid((0.2, 0.5, 0.9), (37, 23)), (160, 80))
        assert out.shape == (3, 160, 80)
        np.testing.assert_allclose(out, solid((0.2, 0.5, 0.9), (160, 80)), atol=1e-6)

    def test_identity_size(self):
        img = np.random.default_rng(0).uniform(size=(3, 8, 4)).astype(np.float32)
        np.testing.assert_array_equal(data.resize_bilinear(img, (8, 4)), img)

    def test_downsample_by_two_averages(self):
        img = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
        out = data.resize_bilinear(img, (2, 2))
        np.testing.assert_allclose(out[0], [[2.5, 4.5], [10.5, 12.5]])


class TestLoad:
    def test_counts(self, tmp_path):
        ds = data.load_dataset(tiny_tree(tmp_path), input_size=(32, 16))
        assert len(ds) == 2 and ds.n_images == 4
        img = ds.identities[0].images[0].image
        assert img.shape == (3, 32, 16)
        np.testing.assert_allclose(img, 40 / 255, atol=1e-6)

    def test_unknown_camera(self, tmp_path):
        with pytest.raises(DatasetError, match="camera"):
            data.load_dataset(tiny_tree(tmp_path, cams=("A", "C")))

    def test_empty_identity(self, tmp_path):
        tiny_tree(tmp_path)
        (tmp_path / "p3" / "A").mkdir(parents=True)
        with pytest.raises(DatasetError, match="no images"):
            data.load_dataset(tmp_path)

    def test_malformed_file(self, tmp_path):
        tiny_tree(tmp_path)
        (tmp_path / "p1" / "A" / "001.ppm").write_bytes(b"junk")
        with pytest.raises(DatasetError, match="001.ppm"):
            data.load_dataset(tmp_path)


class TestSplit:
    ds = data.synth_dataset(30, 1, 0, size=(32, 16))

    def test_disjoint_and_sized(self):
        tr, te = data.split_identities(self.ds, 20, 10, 0)
        assert len(tr) == 20 and len(te) == 10
        assert not set(tr.ids) & set(te.ids)

    def test_deterministic_and_seed_dependent(self):
        a = data.split_identities(self.ds, 20, 10, 1)[1].ids
        assert a == data.split_identities(self.ds, 20, 10, 1)[1].ids
        assert a != data.split_identities(self.ds, 20, 10, 2)[1].ids

    def test_insufficient(self):
        with pytest.raises(DatasetError):
            data.split_identities(self.ds, 25, 10, 0)

    def test_large_split_sizes(self):
        ids = [data.Identity(f"{i}", []) for i in range(1360)]
        tr, te = data.split_identities(data.IdentityDataset(ids), 1160, 100, 0)
        assert (len(tr), len(te)) == (1160, 100)


class TestPairs:
    ds = data.synth_dataset(6, 2, 0, size=(32, 16))

    def test_ratio_three(self):
        pairs = data.generate_pairs(self.ds, 3, 0)
        pos = [p for p in pairs if p.label == 1]
        assert len(pos) == 6 * 2 * 2
        assert len(pairs) - len(pos) == 3 * len(pos)

    def test_ratio_zero(self):
        assert all(p.label == 1 for p in data.generate_pairs(self.ds, 0, 0))

    def test_labels_and_cameras(self):
        for p in data.generate_pairs(self.ds, 3, 5):
            assert p.label == int(p.id_a == p.id_b)
            ia, ja = p.key_a
            ib, jb = p.key_b
            assert self.ds.identities[ia].images[ja].camera == "A"
            assert self.ds.identities[ib].images[jb].camera == "B"
            assert p.key_a != p.key_b

    def test_seeded_order(self):
        a = [(p.key_a, p.key_b) for p in data.generate_pairs(self.ds, 3, 1)]
        assert a == [(p.key_a, p.key_b) for p in data.generate_pairs(self.ds, 3, 1)]
        assert a != [(p.key_a, p.key_b) for p in data.generate_pairs(self.ds, 3, 2)]

    def test_errors(self):
        one = data.IdentityDataset(self.ds.identities[:1])
        with pytest.raises(DatasetError):
            data.generate_pairs(one, 3, 0)
        only_a = data.IdentityDataset([data.Identity(i.identity_id, i.camera("A")) for i in self.ds.identities])
        with pytest.raises(DatasetError, match="positive"):
            data.generate_pairs(only_a, 3, 0)


class TestAugment:
    img = np.random.default_rng(0).uniform(0.1, 1, (3, 160, 80)).astype(np.float32)

    def test_zero_offset(self):
        np.testing.assert_array_equal(data.translate(self.img, 0, 0), self.img)

    def test_offset_8_4(self):
        out = data.translate(self.img, 8, 4)
        assert not out[:, -8:].any() and not out[:, :, -4:].any()
        np.testing.assert_array_equal(out[:, :-8, :-4], self.img[:, 8:, 4:])

    def test_negative_offset(self):
        out = data.translate(self.img, -3, -2)
        assert not out[:, :3].any() and not out[:, :, :2].any()

    def test_five_copies_in_range(self):
        copies, offsets = data.augment_translations(self.img, np.random.default_rng(1))
        assert len(copies) == 5
        for c in copies:
            assert c.shape == self.img.shape and c.min() >= 0 and c.max() <= 1

    def test_range_audit(self):
        offs = data.sample_offsets(np.random.default_rng(2), 10_000, data.max_shift_for((160, 80)))
        assert offs[:, 0].min() == -8 and offs[:, 0].max() == 8
        assert offs[:, 1].min() == -4 and offs[:, 1].max() == 4


class TestSynth:
    def test_deterministic(self):
        a = data.synth_dataset(3, 2, 7)
        b = data.synth_dataset(3, 2, 7)
        for ia, ib in zip(a.identities, b.identities):
            for ra, rb in zip(ia.images, ib.images):
                assert ra.image.tobytes() == rb.image.tobytes()

    def test_range_and_shape(self):
        ds = data.synth_dataset(4, 1, 0)
        for ident in ds.identities:
            assert [r.camera for r in ident.images] == ["A", "B"]
            for r in ident.images:
                assert r.image.shape == (3, 160, 80)
                assert 0 <= r.image.min() and r.image.max() <= 1

    def test_distinct_attributes(self):
        apps = data.synth_appearances(20, 0)
        assert len({a.key() for a in apps}) == 20
        assert len({a.clothing for a in apps}) == 20

    def test_bag_switches_side_across_cameras(self):
        app = data.Appearance(hair=0, upper=0, lower=1, width=32, bag=True, bag_color=2, bag_side=-1)
        bag = data.PALETTE[2][:, None, None]
        for cam, left_expected in (("A", True), ("B", False)):
            img = data.render_person(app, cam, np.random.default_rng(0))
            mask = np.all(np.abs(img - bag) < 0.2, axis=0)
            cols = np.flatnonzero(mask.any(axis=0))
            assert cols.size
            assert (cols.mean() < 40) == left_expected

    def test_roundtrip_through_disk(self, tmp_path):
        ds = data.synth_dataset(3, 2, 1)
        paths = data.write_dataset(ds, tmp_path)
        assert len(paths) == 12 and all(os.path.exists(p) for p in paths)
        back = data.load_dataset(tmp_path)
        for ia, ib in zip(ds.identities, back.identities):
            assert ia.identity_id == ib.identity_id
            for ra, rb in zip(ia.images, ib.images):
                assert ra.camera == rb.camera
                np.testing.assert_array_equal(ra.image, rb.image)
