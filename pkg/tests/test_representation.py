import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evtkit.io import EventStream, SynthSpec, generate_synthetic
from evtkit.representation import (
    ReprConfig,
    activated_patches,
    build_frame,
    next_window,
    window_iterator,
)

from reference import (
    activated_set_by_pixel_loop,
    frame_by_event_loop,
    token_by_explicit_flatten,
)


def random_stream(rng, width=32, height=24, n_events=400, t_max=100_000):
    ts = np.sort(rng.integers(0, t_max, size=n_events))
    return EventStream(
        width, height,
        ts=ts,
        xs=rng.integers(0, width, size=n_events),
        ys=rng.integers(0, height, size=n_events),
        ps=rng.integers(0, 2, size=n_events),
    )


# ---------------------------------------------------------------------------
# build_frame
# ---------------------------------------------------------------------------

def test_empty_window_is_all_zeros():
    s = EventStream(8, 8, events=[(50_000, 1, 1, 1)])
    f = build_frame(s, 0, 10_000, ReprConfig(delta_t_us=10_000, bins=2))
    assert not f.counts.any()
    assert not f.smoothed.any()


def test_frame_matches_event_loop_oracle():
    rng = np.random.default_rng(21)
    cfg = ReprConfig(delta_t_us=40_000, bins=3)
    s = random_stream(rng, n_events=1000)
    f = build_frame(s, 10_000, 50_000, cfg)
    want = frame_by_event_loop(s, 10_000, 50_000, cfg.bins)
    np.testing.assert_array_equal(f.counts, want)


def test_asl_style_single_window_binning():
    # 100 ms window, 2 bins: an event 60 ms in lands in the second bin
    cfg = ReprConfig(delta_t_us=100_000, bins=2)
    s = EventStream(8, 8, events=[(60_000, 3, 2, 1)])
    f = build_frame(s, 0, 100_000, cfg)
    assert f.counts[2, 3, 1, 1] == 1
    assert f.counts.sum() == 1


def test_count_conservation():
    rng = np.random.default_rng(22)
    s = random_stream(rng, n_events=500, t_max=80_000)
    f = build_frame(s, 20_000, 60_000, ReprConfig(delta_t_us=40_000, bins=4))
    in_window = np.count_nonzero((s.ts >= 20_000) & (s.ts < 60_000))
    assert f.counts.sum() == in_window


def test_smoothing_is_monotone_and_zero_preserving():
    rng = np.random.default_rng(23)
    s = random_stream(rng, n_events=2000, t_max=10_000)
    f = build_frame(s, 0, 10_000, ReprConfig(delta_t_us=10_000, bins=2))
    np.testing.assert_allclose(f.smoothed, np.log1p(f.counts))
    assert np.array_equal(f.smoothed == 0, f.counts == 0)
    flat_c = f.counts.reshape(-1)
    flat_s = f.smoothed.reshape(-1)
    order = np.argsort(flat_c, kind="stable")
    assert np.all(np.diff(flat_s[order]) >= 0)


def test_inverted_window_rejected():
    s = EventStream(8, 8)
    with pytest.raises(ValueError, match="inverted"):
        build_frame(s, 10, 10, ReprConfig())


# ---------------------------------------------------------------------------
# activated_patches
# ---------------------------------------------------------------------------

def test_all_zero_frame_gives_no_tokens():
    f = build_frame(EventStream(24, 24), 0, 1000, ReprConfig(delta_t_us=1000))
    assert activated_patches(f, ReprConfig(delta_t_us=1000)) == []


def test_threshold_from_stated_values():
    # 7.5% of a 6x6 patch is 2.7 pixels: 2 active pixels drop, 3 keep
    cfg = ReprConfig(patch_size=6, min_pixel_pct=7.5, bins=1)
    assert cfg.activation_threshold() == 3
    events2 = [(0, 0, 0, 1), (1, 1, 1, 1)]
    events3 = events2 + [(2, 2, 2, 1)]
    for events, expected in ((events2, 0), (events3, 1)):
        s = EventStream(6, 6, events=events)
        f = build_frame(s, 0, 10, cfg)
        assert len(activated_patches(f, cfg)) == expected


def test_duplicate_events_on_one_pixel_count_once():
    cfg = ReprConfig(patch_size=6, min_pixel_pct=7.5, bins=1)
    s = EventStream(6, 6, events=[(0, 0, 0, 1), (1, 0, 0, 0), (2, 0, 0, 1)])
    f = build_frame(s, 0, 10, cfg)
    assert activated_patches(f, cfg) == []  # 1 active pixel < 3


def test_activated_set_matches_pixel_loop_oracle():
    rng = np.random.default_rng(24)
    for _ in range(25):
        width = int(rng.integers(6, 40))
        height = int(rng.integers(6, 40))
        p = int(rng.integers(1, 8))
        m = float(rng.integers(0, 201)) / 2.0
        cfg = ReprConfig(delta_t_us=10_000, bins=int(rng.integers(1, 4)),
                         patch_size=p, min_pixel_pct=min(m, 100.0))
        s = random_stream(rng, width=width, height=height,
                          n_events=int(rng.integers(0, 800)), t_max=10_000)
        f = build_frame(s, 0, 10_000, cfg)
        got = {(t.grid_row, t.grid_col) for t in activated_patches(f, cfg)}
        want = activated_set_by_pixel_loop(f.counts, p, cfg.min_pixel_pct)
        assert got == want


def test_token_flattening_order():
    rng = np.random.default_rng(25)
    cfg = ReprConfig(delta_t_us=10_000, bins=2, patch_size=3, min_pixel_pct=0.0)
    s = random_stream(rng, width=9, height=6, n_events=300, t_max=10_000)
    f = build_frame(s, 0, 10_000, cfg)
    for tok in activated_patches(f, cfg):
        want = token_by_explicit_flatten(f.smoothed, 3, tok.grid_row, tok.grid_col)
        np.testing.assert_array_equal(tok.values, want)


def test_tokens_in_grid_row_major_order_and_bounded():
    rng = np.random.default_rng(26)
    cfg = ReprConfig(delta_t_us=10_000, patch_size=4, min_pixel_pct=1.0)
    s = random_stream(rng, width=33, height=21, n_events=600, t_max=10_000)
    f = build_frame(s, 0, 10_000, cfg)
    toks = activated_patches(f, cfg)
    coords = [(t.grid_row, t.grid_col) for t in toks]
    assert coords == sorted(coords)
    assert len(toks) <= (21 // 4) * (33 // 4)
    assert all(t.values.shape == (cfg.token_dim,) for t in toks)


def test_trailing_pixels_discarded():
    # a 7x7 sensor with patch 4: only the single top-left patch exists, so
    # events outside [0,4)x[0,4) never produce tokens
    cfg = ReprConfig(delta_t_us=100, patch_size=4, min_pixel_pct=0.0, bins=1)
    s = EventStream(7, 7, events=[(0, 6, 6, 1)])
    f = build_frame(s, 0, 100, cfg)
    toks = activated_patches(f, cfg)
    assert [(t.grid_row, t.grid_col) for t in toks] == [(0, 0)]
    assert not toks[0].values.any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 60), st.integers(0, 40), st.data())
def test_raising_percentage_never_grows_the_set(m_lo_i, m_delta_i, data):
    m_lo = m_lo_i / 2.0
    m_hi = min(100.0, m_lo + m_delta_i / 2.0)
    seed = data.draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    cfg_lo = ReprConfig(delta_t_us=10_000, patch_size=5, min_pixel_pct=m_lo)
    cfg_hi = ReprConfig(delta_t_us=10_000, patch_size=5, min_pixel_pct=m_hi)
    s = random_stream(rng, width=25, height=20, n_events=300, t_max=10_000)
    f = build_frame(s, 0, 10_000, cfg_lo)
    set_lo = {(t.grid_row, t.grid_col) for t in activated_patches(f, cfg_lo)}
    set_hi = {(t.grid_row, t.grid_col) for t in activated_patches(f, cfg_hi)}
    assert set_hi <= set_lo


# ---------------------------------------------------------------------------
# next_window / window_iterator
# ---------------------------------------------------------------------------

def _burst(t0, width=24, height=24, pixels_per_patch=3, patch=4, n_patches=6):
    """Events activating exactly n_patches patches shortly after t0."""
    events = []
    for k in range(n_patches):
        gr, gc = divmod(k, width // patch)
        for j in range(pixels_per_patch):
            events.append((t0 + j, gc * patch + j, gr * patch + j, 1))
    return sorted(events)


def test_dense_first_window_needs_no_expansion():
    cfg = ReprConfig(delta_t_us=10_000, patch_size=4, min_pixel_pct=10.0, min_patches=4)
    s = EventStream(24, 24, events=sorted(_burst(100) + _burst(50_000)))
    r = next_window(s, 0, cfg)
    assert r.window_end == 10_000
    assert not r.exhausted
    assert len(r.tokens) >= 4


def test_expansion_when_first_interval_is_empty():
    cfg = ReprConfig(delta_t_us=10_000, patch_size=4, min_pixel_pct=10.0, min_patches=4)
    s = EventStream(24, 24, events=_burst(15_000))  # all events in the 2nd interval
    r = next_window(s, 0, cfg)
    assert r.window_end == 20_000
    assert not r.exhausted


@pytest.mark.parametrize("k", [0, 1, 2, 3, 4])
def test_minimal_expansion_count(k):
    # all activating events sit in interval k, so window_end must be (k+1)*dt
    # and every shorter candidate window must fail the patch rule
    cfg = ReprConfig(delta_t_us=8_000, patch_size=4, min_pixel_pct=10.0, min_patches=4)
    s = EventStream(24, 24, events=_burst(k * 8_000 + 10))
    r = next_window(s, 0, cfg)
    assert r.window_end == (k + 1) * 8_000
    assert not r.exhausted
    for smaller in range(1, k + 1):
        f = build_frame(s, 0, smaller * 8_000, cfg)
        assert len(activated_patches(f, cfg)) < cfg.min_patches


def test_custom_expansion_step():
    cfg = ReprConfig(delta_t_us=8_000, patch_size=4, min_pixel_pct=10.0,
                     min_patches=4, expansion_step_us=1_000)
    s = EventStream(24, 24, events=_burst(8_500))
    r = next_window(s, 0, cfg)
    assert r.window_end == 9_000


def test_exhausted_on_empty_remainder():
    cfg = ReprConfig(delta_t_us=10_000, min_patches=4)
    s = EventStream(24, 24, events=[(100, 0, 0, 1)])
    r = next_window(s, 0, cfg)
    assert r.exhausted
    assert r.tokens == []


def test_exhausted_keeps_partial_tokens():
    cfg = ReprConfig(delta_t_us=10_000, patch_size=4, min_pixel_pct=10.0, min_patches=50)
    s = EventStream(24, 24, events=_burst(100))
    r = next_window(s, 0, cfg)
    assert r.exhausted
    assert 0 < len(r.tokens) < 50


def test_iterator_empty_stream():
    assert list(window_iterator(EventStream(24, 24), ReprConfig())) == []


def test_iterator_three_dense_windows_are_contiguous():
    cfg = ReprConfig(delta_t_us=10_000, patch_size=4, min_pixel_pct=10.0, min_patches=4)
    events = sorted(_burst(100) + _burst(10_100) + _burst(20_100))
    s = EventStream(24, 24, events=events)
    results = list(window_iterator(s, cfg))
    assert [r.window_end for r in results] == [10_000, 20_000, 30_000]
    assert not any(r.exhausted for r in results)


def test_iterator_tiles_stream_without_gaps():
    spec = SynthSpec(class_id=0, duration_us=150_000, width=48, height=48,
                     signal_rate=1.0, noise_rate=30.0, seed=11)
    s = generate_synthetic(spec)
    cfg = ReprConfig(delta_t_us=12_000, patch_size=6, min_patches=8)
    results = list(window_iterator(s, cfg))
    assert results
    cursor = 0
    for r in results:
        assert r.window_end > cursor  # spans are non-empty and ordered
        cursor = r.window_end
    assert cursor > s.last_t or results[-1].exhausted is False
    # non-exhausted windows respect the minimum patch rule
    for r in results:
        if not r.exhausted:
            assert len(r.tokens) >= cfg.min_patches


def test_iterator_window_starts_chain():
    spec = SynthSpec(class_id=4, duration_us=120_000, width=40, height=40,
                     signal_rate=1.0, noise_rate=0.0, seed=3)
    s = generate_synthetic(spec)
    cfg = ReprConfig(delta_t_us=15_000, patch_size=5, min_patches=4)
    starts = [0]
    for r in window_iterator(s, cfg):
        starts.append(r.window_end)
    # each next_window over [start_i, start_{i+1}) reproduces the same span
    for a, b in zip(starts, starts[1:]):
        r = next_window(s, a, cfg)
        assert r.window_end == b
