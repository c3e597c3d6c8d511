import numpy as np
import pytest
from hypothesis import given, strategies as st

from lshawkes.events import EventFormatError, EventStream, load_events, save_events


def _stream():
    return EventStream([-1.5, 0.25, 0.5, 2.0], [0, 1, 0, 1], T=3.0, d=2, warmup_start=-2.0,
                       seed=5, stream_id=1)


def test_round_trip(tmp_path):
    s = _stream()
    save_events(s, tmp_path / "a.csv")
    text = (tmp_path / "a.csv").read_text()
    assert text.splitlines()[0] == "# hawkes-events v1 d=2 T=3"
    assert "0.250000000,2" in text
    again = load_events(tmp_path / "a.csv")
    assert again.equals(s) and again.seed == 5 and again.stream_id == 1
    assert again.warmup_start == -2.0
    save_events(again, tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_bytes() == (tmp_path / "a.csv").read_bytes()


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=50, unique=True))
def test_round_trip_is_idempotent(tmp_path_factory, raw):
    times = np.unique(np.round(raw, 9))
    times = times[np.r_[True, np.diff(times) > 1e-9]]
    s = EventStream(times, np.zeros(times.size, int), T=100.0, d=1)
    path = tmp_path_factory.mktemp("ev") / "e.csv"
    save_events(s, path)
    first = path.read_bytes()
    save_events(load_events(path), path)
    assert path.read_bytes() == first


def test_rejects_ties_and_disorder():
    with pytest.raises(ValueError, match="strictly increasing"):
        EventStream([1.0, 1.0], [0, 0], T=2.0, d=1)
    with pytest.raises(ValueError):
        EventStream([1.0, 0.5], [0, 0], T=2.0, d=1)
    with pytest.raises(ValueError):
        EventStream([1.0], [2], T=2.0, d=2)
    with pytest.raises(ValueError):
        EventStream([3.0], [0], T=2.0, d=1)


def test_loader_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("time,component\n1,1\n")
    with pytest.raises(EventFormatError, match="header"):
        load_events(p)
    p.write_text("# hawkes-events v1 d=1 T=5\n1.0,1\n0.5,1\n")
    with pytest.raises(EventFormatError, match="increasing"):
        load_events(p)
    p.write_text("# hawkes-events v1 d=1 T=5\n1.0;1\n")
    with pytest.raises(EventFormatError, match=":2"):
        load_events(p)


def test_window_counts_and_observed():
    s = _stream()
    counts = s.window_counts([0.0, 1.0, 3.0])
    assert counts.tolist() == [[1, 1], [0, 1]]
    obs = s.observed()
    assert obs.times.tolist() == [0.25, 0.5, 2.0] and obs.warmup_start == 0.0
