"""Hypothesis strategies for well-formed frames."""

from hypothesis import strategies as st

from jmacsim.frames import SEQ_MOD, Ack, Beacon, ChildRecord, ScheduleInfo, UpData, c_max

schedules = st.builds(
    lambda hops, period, frac: ScheduleInfo(hops, period, int(frac * period) % period),
    st.integers(1, 4), st.integers(1, 2**64 - 1), st.floats(0, 1, exclude_max=True),
)
addresses = st.integers(1, 255)
seqs = st.integers(0, SEQ_MOD - 1)


@st.composite
def updata(draw):
    m = draw(st.integers(1, 100))
    cap = c_max(m)
    payload = st.binary(min_size=m, max_size=m)
    children = draw(st.lists(st.builds(ChildRecord, st.integers(0, 255), seqs, payload), max_size=cap))
    my_data = draw(st.one_of(st.none(), payload))
    return UpData(draw(addresses), draw(schedules), draw(seqs), m, my_data, tuple(children))


frames = st.one_of(
    st.just(Beacon(0)),
    st.builds(Beacon, addresses, schedules, st.lists(addresses, max_size=c_max(30)).map(tuple)),
    st.builds(Ack, st.just(0), seqs),
    st.builds(Ack, addresses, seqs, schedules),
    updata(),
)
