import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctseg.clustering import build_cluster_model
from ctseg.dataset import Dataset, FeatureSequence
from ctseg.decoding import (
    BACKGROUND_LABEL, DecodingError, brute_force_decode, decode_video, is_monotone_path,
    monotone_paths, path_score, read_segmentation, viterbi_decode, write_segmentation,
)


def test_single_cluster(rng):
    logp = rng.normal(size=(6, 1))
    seg = viterbi_decode(logp)
    assert seg.labels.tolist() == [1] * 6
    assert seg.score == pytest.approx(logp.sum(), abs=1e-12)


def test_square_forces_diagonal(rng):
    seg = viterbi_decode(rng.normal(size=(4, 4)))
    assert seg.labels.tolist() == [1, 2, 3, 4]


def test_too_short():
    with pytest.raises(DecodingError):
        viterbi_decode(np.zeros((2, 3)))


def test_eight_by_three_against_enumeration(rng):
    logp = rng.normal(size=(8, 3))
    paths = list(monotone_paths(8, 3))
    assert len(paths) == math.comb(7, 2) == 21
    scores = [sum(logp[n, p[n] - 1] for n in range(8)) for p in paths]
    best = paths[int(np.argmax(scores))]
    seg = viterbi_decode(logp)
    assert seg.labels.tolist() == best.tolist()
    assert seg.score == pytest.approx(max(scores), abs=1e-12)


def test_brute_force_small_cases(rng):
    assert brute_force_decode(rng.normal(size=(3, 3))).labels.tolist() == [1, 2, 3]
    assert brute_force_decode(np.zeros((4, 2))).labels.tolist() == [1, 1, 1, 2]
    with pytest.raises(DecodingError):
        brute_force_decode(np.zeros((17, 2)))
    with pytest.raises(DecodingError):
        brute_force_decode(np.zeros((8, 6)))


def test_ties_prefer_staying():
    assert viterbi_decode(np.zeros((4, 2))).labels.tolist() == [1, 1, 1, 2]
    assert viterbi_decode(np.zeros((6, 3))).labels.tolist() == [1, 1, 1, 1, 2, 3]


def test_tie_between_advance_points():
    # (1,1,2,2) and (1,2,2,2) both score 0; the later advance wins
    logp = np.array([[0.0, -9], [0.0, 0.0], [-9, 0.0], [-9, 0.0]])
    assert viterbi_decode(logp).labels.tolist() == [1, 1, 2, 2]
    assert brute_force_decode(logp).labels.tolist() == [1, 1, 2, 2]


@pytest.mark.parametrize("seed", range(25))
def test_viterbi_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 5))
    N = int(rng.integers(K, 11))
    logp = rng.normal(size=(N, K))
    a, b = viterbi_decode(logp), brute_force_decode(logp)
    assert a.labels.tolist() == b.labels.tolist() and a.score == b.score


@pytest.mark.parametrize("seed", range(10))
def test_viterbi_equals_brute_force_with_ties(seed):
    rng = np.random.default_rng(seed)
    logp = rng.integers(-2, 1, size=(7, 3)).astype(float)
    a, b = viterbi_decode(logp), brute_force_decode(logp)
    assert a.labels.tolist() == b.labels.tolist()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(0, 40), st.floats(-50, 50))
def test_path_properties(seed, K, extra, c):
    rng = np.random.default_rng(seed)
    logp = rng.normal(size=(K + extra, K))
    seg = viterbi_decode(logp)
    assert is_monotone_path(seg.labels, K)
    assert abs(seg.score - path_score(logp, seg.labels)) <= 1e-9
    shifted = viterbi_decode(logp + c)
    assert shifted.labels.tolist() == seg.labels.tolist()
    assert shifted.score == pytest.approx(seg.score + len(logp) * c, abs=1e-8)


def _three_segment_video(rng, lengths=(12, 9, 15)):
    means = np.array([[0.0, 0.0, 0.0], [6.0, 0.0, 0.0], [0.0, 6.0, 0.0]])
    lab = np.repeat([0, 1, 2], lengths)
    return means[lab] + 0.3 * rng.standard_normal((len(lab), 3)), lab


def test_decode_recovers_synthetic_boundaries(rng):
    seqs = []
    for v in range(5):
        frames, _ = _three_segment_video(rng, tuple(rng.integers(8, 16, size=3)))
        seqs.append(FeatureSequence(f"v{v}", frames))
    cm = build_cluster_model(Dataset(seqs), 3, 0.0, 0)
    frames, lab = _three_segment_video(rng)
    seg = decode_video(FeatureSequence("t", frames), cm)
    truth = np.flatnonzero(np.diff(lab)) + 1
    found = np.flatnonzero(np.diff(seg.labels)) + 1
    assert len(found) == 2 and np.all(np.abs(found - truth) <= 1)
    assert not np.any(seg.labels == BACKGROUND_LABEL)


def test_decode_with_background_and_order_hook(rng):
    frames, _ = _three_segment_video(rng)
    ds = Dataset([FeatureSequence("a", frames)])
    cm = build_cluster_model(ds, 3, 0.2, 0)
    seg = decode_video(ds.sequences[0], cm)
    bg = seg.labels == BACKGROUND_LABEL
    assert bg.any()
    assert np.array_equal(bg, cm.background_mask(frames))
    assert is_monotone_path(seg.labels, 3)
    reversed_seg = decode_video(ds.sequences[0], cm, order=cm.order[::-1])
    assert is_monotone_path(reversed_seg.labels, 3)
    with pytest.raises(DecodingError):
        decode_video(ds.sequences[0], cm, order=[0, 0, 1])


def test_decode_all_background_raises(rng):
    frames, _ = _three_segment_video(rng)
    cm = build_cluster_model(Dataset([FeatureSequence("a", frames)]), 3, 0.2, 0)
    far = FeatureSequence("far", np.full((10, 3), 100.0))
    with pytest.raises(DecodingError, match="fewer than K non-background frames"):
        decode_video(far, cm)


def test_segmentation_file_round_trip(tmp_path):
    from ctseg.decoding import Segmentation

    seg = Segmentation(np.array([1, 1, BACKGROUND_LABEL, 2]), 0.0)
    write_segmentation(tmp_path / "s.txt", seg)
    assert (tmp_path / "s.txt").read_text() == "1\n1\nbackground\n2\n"
    assert read_segmentation(tmp_path / "s.txt").tolist() == seg.labels.tolist()
