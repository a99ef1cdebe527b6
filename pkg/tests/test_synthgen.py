import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keystep_graph.datamodel import load_features, load_manifest, pool_take
from keystep_graph.synthgen import SynthConfig, World, generate, markov_labels, random_orthogonal, summarize

TINY = dict(num_takes=6, segments_per_take=(3, 6), num_classes=4, feature_dim_vision=6, feature_dim_text=5, frames_per_segment=(1, 3))


def tiny(**kw):
    return SynthConfig(**{**TINY, **kw})


def test_stickiness_one_gives_single_class_takes(tmp_path):
    m = generate(tiny(stickiness=1.0), tmp_path)
    assert all(len(set(t.labels)) == 1 for t in m.takes)
    trans = summarize(m).transitions
    assert (trans == np.diag(np.diag(trans))).all()


def test_self_transition_frequency_monte_carlo():
    labels = markov_labels(np.random.default_rng(0), 10_001, 8, 0.9)
    stay = np.mean(labels[1:] == labels[:-1])
    assert abs(stay - 0.9) <= 0.02


def test_self_transition_frequency_through_generate(tmp_path):
    cfg = SynthConfig(num_takes=500, segments_per_take=(21, 21), num_classes=8, feature_dim_vision=2,
                      feature_dim_text=0, num_exo_views=0, frames_per_segment=(1, 1), stickiness=0.9, seed=2)
    trans = summarize(generate(cfg, tmp_path)).transitions
    assert trans.sum() == 10_000
    assert abs(np.trace(trans) / trans.sum() - 0.9) <= 0.02


def test_zero_stickiness_off_diagonal_is_uniform():
    k = 5
    labels = markov_labels(np.random.default_rng(1), 20_000, k, 0.0)
    trans = np.zeros((k, k), dtype=int)
    np.add.at(trans, (labels[:-1], labels[1:]), 1)
    assert np.trace(trans) == 0
    for c in range(k):
        n = trans[c].sum()
        p = 1 / (k - 1)
        sd = np.sqrt(n * p * (1 - p))
        off = np.delete(trans[c], c)
        assert np.all(np.abs(off - n * p) <= 3 * sd)


def test_orthogonal_maps():
    rng = np.random.default_rng(0)
    for d in (1, 2, 7, 32):
        q = random_orthogonal(rng, d)
        assert np.abs(q.T @ q - np.eye(d)).max() < 1e-10
    world = World.create(SynthConfig(num_exo_views=3), np.random.default_rng(5))
    for q in world.view_maps:
        assert np.abs(q.T @ q - np.eye(32)).max() < 1e-10


def test_regeneration_is_byte_identical(tmp_path):
    generate(tiny(seed=4), tmp_path / "a")
    generate(tiny(seed=4), tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) > 1
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_different_seeds_differ(tmp_path):
    a = generate(tiny(seed=1), tmp_path / "a")
    b = generate(tiny(seed=2), tmp_path / "b")
    assert [t.labels for t in a.takes] != [t.labels for t in b.takes]


@settings(max_examples=10, deadline=None)
@given(
    st.integers(0, 2**31),
    st.integers(2, 6),
    st.integers(0, 3),
    st.integers(0, 8),
    st.floats(0, 1),
)
def test_generated_files_load(tmp_path_factory, seed, k, views, dt, ambiguity):
    cfg = tiny(seed=seed, num_classes=k, num_exo_views=views, feature_dim_text=dt, ambiguity=ambiguity)
    out = tmp_path_factory.mktemp("gen")
    m = generate(cfg, out)
    again = load_manifest(out / "manifest.json")
    assert again == m
    for take in m.takes:
        assert len(take.exo_views) == views
        for v in (take.ego_view, *take.exo_views):
            table = load_features(v.features_path)
            assert table.rows == v.num_frames and table.cols == cfg.feature_dim_vision
        if dt:
            assert load_features(take.text_features_path).data.shape == (len(take.segments), dt)
        else:
            assert take.text_features_path is None
        ends = [s.end_time for s in take.segments]
        assert ends[-1] == take.duration


def test_noise_free_features_hit_their_centres(tmp_path):
    cfg = tiny(noise_sigma=0.0, view_noise_sigma=0.0, ambiguity=0.0, text_fidelity=1.0, num_exo_views=1)
    m = generate(cfg, tmp_path)
    world = World.create(cfg, np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(cfg.num_takes + 1)[0]))
    for take in m.takes:
        p = pool_take(m, take)
        np.testing.assert_allclose(p.ego, world.prototypes[take.labels], atol=1e-6)
        np.testing.assert_allclose(p.exo[0], world.prototypes[take.labels] @ world.view_maps[0].T, atol=1e-6)
        assert (p.text.argmax(axis=1) == take.labels).all()


def test_full_ambiguity_merges_pairs(tmp_path):
    cfg = tiny(noise_sigma=0.0, ambiguity=1.0, stickiness=0.0)
    m = generate(cfg, tmp_path)
    centres = {}
    for take in m.takes:
        ego = pool_take(m, take).ego
        for label, row in zip(take.labels, ego):
            centres.setdefault(int(label) // 2, []).append(row)
    for rows in centres.values():
        np.testing.assert_allclose(np.ptp(np.array(rows), axis=0), 0.0, atol=1e-6)


def test_zero_fidelity_text_never_shows_true_class(tmp_path):
    m = generate(tiny(text_fidelity=0.0), tmp_path)
    for take in m.takes:
        assert not (pool_take(m, take).text.argmax(axis=1) == take.labels).any()


def test_text_one_hot_when_wide_enough():
    world = World.create(SynthConfig(num_classes=4, feature_dim_text=6), np.random.default_rng(0))
    np.testing.assert_array_equal(world.text_prototypes, np.eye(4, 6))
    narrow = World.create(SynthConfig(num_classes=8, feature_dim_text=3), np.random.default_rng(0))
    np.testing.assert_allclose(np.linalg.norm(narrow.text_prototypes, axis=1), 1.0)


def test_summarize_empty_manifest(tmp_path):
    s = summarize(generate(tiny(num_takes=0), tmp_path))
    assert not s.transitions.any() and not s.class_counts.any()
    assert s.transitions.shape == (4, 4)


def test_summarize_counts(tmp_path):
    m = generate(tiny(), tmp_path)
    s = summarize(m)
    assert s.class_counts.sum() == sum(len(t.segments) for t in m.takes)
    assert s.transitions.sum() == sum(len(t.segments) - 1 for t in m.takes)


@pytest.mark.parametrize(
    "kw",
    [dict(stickiness=1.5), dict(num_classes=1), dict(segments_per_take=(5, 2)), dict(noise_sigma=-1.0),
     dict(text_fidelity=-0.1), dict(frames_per_segment=(0, 2))],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


def test_config_dict_roundtrip_and_unknown_keys():
    cfg = tiny(seed=9)
    assert SynthConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"stikiness": 0.5})
