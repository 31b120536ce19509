import numpy as np
import pytest

from seqnrsfm import data as dm
from seqnrsfm import geometry as geo
from seqnrsfm import rank_oracle as ro


def svd_rank(m, rel_tol=1e-8):
    s = np.linalg.svd(np.asarray(m, dtype=np.float64), compute_uv=False)
    return int(np.sum(s > rel_tol * s[0])) if s[0] > 0 else 0


class TestSyntheticSpec:
    def test_rank_bounds_enforced(self):
        with pytest.raises(ValueError):
            dm.SyntheticSpec(frames=10, points=4, rank=11)
        with pytest.raises(ValueError):
            dm.SyntheticSpec(frames=10, points=4, rank=0)

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError):
            dm.SyntheticSpec(frames=10, points=4, rank=2,
                             rotation_mode="spiral")


class TestSynthSequence:
    def test_noise_free_reshuffled_rank_is_k(self):
        for k in (1, 3, 5):
            spec = dm.SyntheticSpec(frames=64, points=8, rank=k, seed=k)
            d = dm.synth_sequence(spec)
            assert svd_rank(geo.reshuffle(d.stacked_shapes())) == k

    def test_rank_one_frames_are_parallel(self):
        spec = dm.SyntheticSpec(frames=20, points=5, rank=1, seed=1)
        d = dm.synth_sequence(spec)
        rows = d.shapes.reshape(20, -1)
        ref = rows[0] / np.linalg.norm(rows[0])
        for row in rows:
            cos = abs(row @ ref) / np.linalg.norm(row)
            assert abs(cos - 1.0) < 1e-10

    def test_fixed_seed_regenerates_bit_identically(self):
        spec = dm.SyntheticSpec(frames=32, points=6, rank=3, seed=9,
                                noise_sigma=0.02)
        a = dm.synth_sequence(spec)
        b = dm.synth_sequence(spec)
        assert np.array_equal(a.w, b.w)
        assert np.array_equal(a.shapes, b.shapes)
        assert np.array_equal(a.rotations, b.rotations)

    def test_noise_free_observations_match_projection(self):
        spec = dm.SyntheticSpec(frames=40, points=7, rank=3, seed=2)
        d = dm.synth_sequence(spec)
        for i in range(d.frames):
            proj = (d.rotations[i] @ d.shapes[i])[:2]
            assert np.max(np.abs(d.w[i] - proj)) < 1e-12

    def test_shapes_and_observations_are_centered(self):
        spec = dm.SyntheticSpec(frames=16, points=9, rank=2, seed=3,
                                noise_sigma=0.05)
        d = dm.synth_sequence(spec)
        assert np.max(np.abs(d.w.mean(axis=2))) < 1e-10
        assert np.max(np.abs(d.shapes.mean(axis=2))) < 1e-10

    def test_rotation_modes(self):
        for mode, comp in (("smooth", 1), ("components", 4), ("random", 1)):
            spec = dm.SyntheticSpec(frames=24, points=5, rank=2,
                                    rotation_mode=mode, components=comp,
                                    seed=4)
            d = dm.synth_sequence(spec)
            for r in d.rotations:
                assert geo.is_rotation(r, tol=1e-9)
            if mode == "components":
                distinct = {r.tobytes() for r in d.rotations}
                assert len(distinct) == comp

    def test_component_mode_matches_rank_bound(self):
        # the dataset's own rotations, used as an ambiguity, land the
        # reshuffled rank inside ((s-1)K, sK]
        k, s = 3, 4
        spec = dm.SyntheticSpec(frames=60, points=20, rank=k,
                                rotation_mode="components", components=s,
                                seed=5)
        d = dm.synth_sequence(spec)
        rotated = geo.apply_ambiguity(d.stacked_shapes(), list(d.rotations))
        r = svd_rank(geo.reshuffle(rotated))
        assert (s - 1) * k < r <= s * k

    def test_strict_rank_property(self):
        spec = dm.SyntheticSpec(frames=80, points=10, rank=3, seed=6)
        d = dm.synth_sequence(spec)
        sharp = geo.reshuffle(d.stacked_shapes())
        assert ro.strict_rank_check(sharp, eps=0.1,
                                    rng=np.random.default_rng(0))


class TestSplit:
    def test_eighty_twenty(self):
        spec = dm.SyntheticSpec(frames=100, points=4, rank=2, seed=7)
        train, test = dm.split_dataset(dm.synth_sequence(spec), 0.8)
        assert train.frames == 80
        assert test.frames == 20
        assert train.tag == "train" and test.tag == "test"

    def test_two_frame_half_split(self):
        spec = dm.SyntheticSpec(frames=2, points=4, rank=1, seed=8)
        train, test = dm.split_dataset(dm.synth_sequence(spec), 0.5)
        assert train.frames == 1 and test.frames == 1

    def test_same_seed_same_split(self):
        spec = dm.SyntheticSpec(frames=50, points=4, rank=2, seed=9)
        d = dm.synth_sequence(spec)
        a = dm.split_dataset(d, 0.8, seed=3)
        b = dm.split_dataset(d, 0.8, seed=3)
        assert np.array_equal(a[0].w, b[0].w)
        assert np.array_equal(a[1].w, b[1].w)

    def test_split_is_contiguous_partition(self):
        spec = dm.SyntheticSpec(frames=40, points=4, rank=2, seed=10)
        d = dm.synth_sequence(spec)
        train, test = dm.split_dataset(d, 0.75)
        joined = np.concatenate([train.w, test.w]) \
            if np.array_equal(train.w[0], d.w[0]) \
            else np.concatenate([test.w, train.w])
        assert np.array_equal(joined, d.w)

    def test_bad_fraction_rejected(self):
        spec = dm.SyntheticSpec(frames=10, points=4, rank=2, seed=11)
        d = dm.synth_sequence(spec)
        for frac in (0.0, 1.0, -0.5):
            with pytest.raises(ValueError):
                dm.split_dataset(d, frac)


class TestChunks:
    def _dataset(self, frames):
        spec = dm.SyntheticSpec(frames=frames, points=4, rank=2, seed=12)
        return dm.synth_sequence(spec)

    def test_train_chunks_drop_remainder(self):
        chunks = dm.make_chunks(self._dataset(100), 32, "train")
        assert len(chunks) == 3
        assert all(len(c) == 32 for c in chunks)
        covered = np.concatenate(chunks)
        assert len(set(covered.tolist())) == 96

    def test_eval_chunks_keep_remainder(self):
        chunks = dm.make_chunks(self._dataset(100), 32, "eval")
        assert [len(c) for c in chunks] == [32, 32, 32, 4]
        assert np.array_equal(np.concatenate(chunks), np.arange(100))

    def test_epoch_reshuffle_preserves_chunk_set(self):
        d = self._dataset(128)
        rng = np.random.default_rng(13)
        a = dm.make_chunks(d, 32, "train", rng)
        b = dm.make_chunks(d, 32, "train", rng)
        key = lambda cs: sorted(tuple(c.tolist()) for c in cs)
        assert key(a) == key(b)
        assert [tuple(c.tolist()) for c in a] != [tuple(c.tolist()) for c in b]

    def test_perturb_reverse_is_involution(self):
        chunk = np.arange(10, 42)
        assert np.array_equal(
            dm.perturb_order(dm.perturb_order(chunk, "reverse"), "reverse"),
            chunk)

    def test_perturb_shuffle_preserves_multiset(self):
        chunk = np.arange(5, 37)
        rng = np.random.default_rng(14)
        out = dm.perturb_order(chunk, "shuffle", rng)
        assert sorted(out.tolist()) == sorted(chunk.tolist())
        out2 = dm.perturb_order(chunk, "shuffle", np.random.default_rng(14))
        out1 = dm.perturb_order(chunk, "shuffle", np.random.default_rng(14))
        assert np.array_equal(out1, out2)


class TestKeypointCsv:
    def test_handwritten_file_parses_exactly(self, tmp_path):
        path = tmp_path / "kp.csv"
        path.write_text(
            "frame,joint,x,y\n"
            "0,0,1.5,-2\n0,1,-1.5,2\n"
            "1,0,0.25,0.5\n1,1,-0.25,-0.5\n")
        d = dm.load_keypoints(str(path), 2)
        assert d.frames == 2 and d.points == 2
        assert np.array_equal(d.w[0], [[1.5, -1.5], [-2.0, 2.0]])
        assert np.array_equal(d.w[1], [[0.25, -0.25], [0.5, -0.5]])

    def test_missing_joint_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "kp.csv"
        path.write_text(
            "frame,joint,x,y\n"
            "0,0,1,2\n0,1,3,4\n"
            "1,0,5,6\n"
            "2,0,7,8\n2,1,9,10\n")
        with pytest.raises(ValueError, match="line 5"):
            dm.load_keypoints(str(path), 2)

    def test_malformed_row_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "kp.csv"
        path.write_text("frame,joint,x,y\n0,0,1,2\n0,1,oops,4\n")
        with pytest.raises(ValueError, match="line 3"):
            dm.load_keypoints(str(path), 2)

    def test_non_contiguous_frames_rejected(self, tmp_path):
        path = tmp_path / "kp.csv"
        path.write_text("frame,joint,x,y\n0,0,1,2\n2,0,3,4\n")
        with pytest.raises(ValueError, match="line 3"):
            dm.load_keypoints(str(path), 2)

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "kp.csv"
        path.write_text("frame,joint,u,v\n0,0,1,2\n")
        with pytest.raises(ValueError, match="line 1"):
            dm.load_keypoints(str(path), 2)

    def test_roundtrip_within_text_precision(self, tmp_path):
        spec = dm.SyntheticSpec(frames=12, points=5, rank=2, seed=15,
                                noise_sigma=0.01)
        d = dm.synth_sequence(spec)
        path = tmp_path / "kp2.csv"
        dm.save_keypoints(str(path), d.w)
        loaded = dm.load_keypoints(str(path), 2)
        assert np.max(np.abs(loaded.w - d.w)) < 1e-9


class TestDatasetDirectory:
    def test_save_load_roundtrip(self, tmp_path):
        spec = dm.SyntheticSpec(frames=20, points=6, rank=3, seed=16,
                                noise_sigma=0.01)
        d = dm.synth_sequence(spec)
        dm.save_dataset(d, str(tmp_path / "ds"))
        loaded = dm.load_dataset(str(tmp_path / "ds"))
        assert loaded.frames == d.frames and loaded.points == d.points
        assert loaded.seed == d.seed
        assert np.max(np.abs(loaded.w - d.w)) < 1e-9
        # loaded ground truth is camera-frame; rotations fold to identity
        assert np.max(np.abs(loaded.camera_shapes()
                             - d.camera_shapes())) < 1e-9

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="manifest"):
            dm.load_dataset(str(tmp_path))

    def test_2d_only_dataset_has_no_gt(self, tmp_path):
        spec = dm.SyntheticSpec(frames=10, points=4, rank=2, seed=17)
        d = dm.synth_sequence(spec)
        d2 = dm.Dataset(w=d.w, seed=d.seed)
        dm.save_dataset(d2, str(tmp_path / "ds2"))
        loaded = dm.load_dataset(str(tmp_path / "ds2"))
        assert not loaded.has_gt

    def test_uncentered_observations_rejected(self):
        w = np.ones((2, 2, 3))
        with pytest.raises(ValueError, match="centered"):
            dm.Dataset(w=w)

    def test_centering_invariance_of_ingestion(self, tmp_path):
        rng = np.random.default_rng(18)
        raw = rng.normal(size=(6, 2, 5))
        shift = rng.normal(size=(6, 2, 1))
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        dm.save_keypoints(str(p1), raw)
        dm.save_keypoints(str(p2), raw + shift)
        a = dm.load_keypoints(str(p1), 2)
        b = dm.load_keypoints(str(p2), 2)
        assert np.max(np.abs(a.w - b.w)) < 1e-9
