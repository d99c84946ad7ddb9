import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ontask.errors import ParseError, ValidationError
from ontask.ingest import (
    ChannelGroup,
    ChannelSchema,
    FrameRecord,
    Label,
    LabelInterval,
    PlatformPatternSet,
    SessionMetadata,
    UrlEvent,
    active_url_intervals,
    build_timeline,
    default_channel_schema,
    match_platform,
    normalize_url,
    parse_frames,
    parse_labels,
    parse_platform_patterns,
    parse_url_log,
    platform_intervals,
    write_frames,
    write_labels,
    write_url_log,
)

TWO_CH = ChannelSchema(
    entries=(("a", ChannelGroup.LANDMARK), ("b", ChannelGroup.EMOTION)),
    sample_rate_hz=10.0,
)


def _frames_csv(rows: list[str]) -> io.StringIO:
    return io.StringIO("\n".join(["session_id,t_ms,face_detected,a,b"] + rows) + "\n")


class TestParseFrames:
    def test_two_valid_rows(self):
        records = parse_frames(_frames_csv(["s1,0,1,0.5,1.0", "s1,100,0,0.25,-1.5"]), TWO_CH)
        assert records == [
            FrameRecord("s1", 0, True, (0.5, 1.0)),
            FrameRecord("s1", 100, False, (0.25, -1.5)),
        ]

    def test_arity_mismatch_names_row(self):
        with pytest.raises(ParseError, match="row 3"):
            parse_frames(_frames_csv(["s1,0,1,0.5,1.0", "s1,100,1,0.5"]), TWO_CH)

    def test_non_monotonic_timestamps(self):
        with pytest.raises(ParseError, match="non-monotonic"):
            parse_frames(_frames_csv(["s1,100,1,0,0", "s1,100,1,0,0"]), TWO_CH)

    def test_bad_boolean(self):
        with pytest.raises(ParseError, match="face_detected"):
            parse_frames(_frames_csv(["s1,0,yes,0,0"]), TWO_CH)

    def test_header_must_match_schema(self):
        stream = io.StringIO("session_id,t_ms,face_detected,x,y\ns1,0,1,0,0\n")
        with pytest.raises(ParseError, match="header"):
            parse_frames(stream, TWO_CH)

    def test_negative_time_rejected(self):
        with pytest.raises(ParseError, match="t_ms"):
            parse_frames(_frames_csv(["s1,-5,1,0,0"]), TWO_CH)

    def test_default_schema_has_112_channels(self):
        assert default_channel_schema().arity == 112


@settings(deadline=None)
@given(
    st.lists(
        st.tuples(
            st.booleans(),
            st.floats(allow_nan=False, allow_infinity=False, width=64),
            st.floats(allow_nan=False, allow_infinity=False, width=64),
        ),
        min_size=0,
        max_size=30,
    )
)
def test_frames_round_trip(rows):
    records = [
        FrameRecord("s1", 10 * i, face, (a, b))
        for i, (face, a, b) in enumerate(rows)
    ]
    sink = io.StringIO()
    write_frames(records, TWO_CH, sink)
    assert parse_frames(io.StringIO(sink.getvalue()), TWO_CH) == records


class TestParseUrlLog:
    def test_single_event(self):
        events = parse_url_log(io.StringIO("session_id,t_ms,url\ns1,0,https://a.b/c\n"))
        assert events == [UrlEvent("s1", 0, "https://a.b/c")]

    def test_empty_file(self):
        assert parse_url_log(io.StringIO("")) == []

    def test_unsorted_events(self):
        stream = io.StringIO("session_id,t_ms,url\ns1,100,u\ns1,50,v\n")
        with pytest.raises(ParseError, match="out of order"):
            parse_url_log(stream)

    def test_round_trip(self):
        events = [UrlEvent("s1", 0, "https://x.y/z?q=1"), UrlEvent("s1", 5, "nota url")]
        sink = io.StringIO()
        write_url_log(events, sink)
        assert parse_url_log(io.StringIO(sink.getvalue())) == events


class TestParseLabels:
    def test_two_intervals(self):
        stream = io.StringIO(
            "session_id,start_ms,end_ms,label\ns1,0,5000,on_task\ns1,5000,9000,off_task\n"
        )
        assert parse_labels(stream) == [
            LabelInterval("s1", 0, 5000, Label.ON_TASK),
            LabelInterval("s1", 5000, 9000, Label.OFF_TASK),
        ]

    def test_overlap_rejected(self):
        stream = io.StringIO(
            "session_id,start_ms,end_ms,label\ns1,0,5000,on_task\ns1,4000,9000,off_task\n"
        )
        with pytest.raises(ParseError, match="overlap"):
            parse_labels(stream)

    def test_unknown_label_token(self):
        stream = io.StringIO("session_id,start_ms,end_ms,label\ns1,0,5000,idle\n")
        with pytest.raises(ParseError, match="unknown label"):
            parse_labels(stream)

    def test_start_must_precede_end(self):
        stream = io.StringIO("session_id,start_ms,end_ms,label\ns1,5000,5000,on_task\n")
        with pytest.raises(ParseError, match="start_ms"):
            parse_labels(stream)

    def test_round_trip(self):
        intervals = [
            LabelInterval("s1", 0, 5000, Label.ON_TASK),
            LabelInterval("s1", 6000, 9000, Label.OFF_TASK),
        ]
        sink = io.StringIO()
        write_labels(intervals, sink)
        assert parse_labels(io.StringIO(sink.getvalue())) == intervals


class TestNormalizeUrl:
    def test_strips_scheme_port_and_lowercases_host(self):
        assert normalize_url("https://Math.Example.com:443/v/1") == (
            "math.example.com",
            "/v/1",
        )

    def test_missing_path_becomes_slash(self):
        assert normalize_url("http://a.b") == ("a.b", "/")

    @pytest.mark.parametrize("bad", ["", "http://[bad", "///x", "   "])
    def test_unparseable_raises(self, bad):
        with pytest.raises(ValidationError):
            normalize_url(bad)


class TestMatchPlatform:
    PATTERNS = PlatformPatternSet(patterns=(("host_suffix", "math.example.com"),))

    def test_host_suffix_match(self):
        assert match_platform("https://math.example.com/video/42", self.PATTERNS)

    def test_other_host_no_match(self):
        assert not match_platform("https://social.example.com/feed", self.PATTERNS)

    def test_empty_pattern_set_matches_nothing(self):
        empty = PlatformPatternSet(patterns=())
        assert not match_platform("https://math.example.com/", empty)

    def test_suffix_respects_dot_boundary(self):
        patterns = PlatformPatternSet(patterns=(("host_suffix", "example.com"),))
        assert match_platform("https://sub.example.com/x", patterns)
        assert not match_platform("https://badexample.com/x", patterns)

    def test_prefix_pattern(self):
        patterns = PlatformPatternSet(patterns=(("prefix", "a.b/videos"),))
        assert match_platform("https://A.B/videos/7", patterns)
        assert not match_platform("https://a.b/quiz/7", patterns)

    def test_unparseable_url_is_off_platform(self):
        assert not match_platform("http://[bad", self.PATTERNS)

    @given(st.sampled_from(["https://math.example.com/v", "https://other.org/v"]))
    def test_case_insensitive_on_host(self, url):
        upper = url.replace("math.example", "MATH.EXAMPLE").replace(
            "other.org", "OTHER.ORG"
        )
        assert match_platform(url, self.PATTERNS) == match_platform(upper, self.PATTERNS)

    def test_pattern_values_lowercased(self):
        patterns = PlatformPatternSet(patterns=(("host_suffix", "Math.Example.COM"),))
        assert patterns.patterns == (("host_suffix", "math.example.com"),)

    def test_unknown_pattern_kind_rejected(self):
        with pytest.raises(ValidationError, match="kind"):
            PlatformPatternSet(patterns=(("regex", "x"),))


class TestPatternFile:
    def test_parse_with_comments(self):
        text = "# platform\nhost_suffix learnhub.example\n\nprefix a.b/videos\n"
        patterns = parse_platform_patterns(io.StringIO(text))
        assert patterns.patterns == (
            ("host_suffix", "learnhub.example"),
            ("prefix", "a.b/videos"),
        )

    def test_bad_line_reports_row(self):
        with pytest.raises(ParseError, match="row 2"):
            parse_platform_patterns(io.StringIO("# ok\nglob *.example\n"))


class TestBuildTimeline:
    META = SessionMetadata(classroom_id="c1", platform_id="math")

    def test_forty_minute_session(self):
        frames = [FrameRecord("s1", 0, True, (0.0, 0.0))]
        labels = [LabelInterval("s1", 0, 2_400_000, Label.ON_TASK)]
        timeline = build_timeline(frames, [], labels, self.META, duration_ms=2_400_000)
        assert timeline.duration_ms == 2_400_000
        assert timeline.session_id == "s1"

    def test_duration_defaults_to_max_timestamp(self):
        frames = [FrameRecord("s1", 0, True, ()), FrameRecord("s1", 900, True, ())]
        labels = [LabelInterval("s1", 0, 1500, Label.ON_TASK)]
        timeline = build_timeline(frames, [], labels, self.META)
        assert timeline.duration_ms == 1500

    def test_cross_session_contamination(self):
        frames = [FrameRecord("s1", 0, True, ()), FrameRecord("s2", 10, True, ())]
        with pytest.raises(ValidationError, match="multiple sessions"):
            build_timeline(frames, [], [], self.META)

    def test_label_beyond_duration(self):
        labels = [LabelInterval("s1", 0, 3000, Label.ON_TASK)]
        with pytest.raises(ValidationError, match="duration"):
            build_timeline([], [], labels, self.META, duration_ms=2000)

    def test_metadata_must_be_non_empty(self):
        with pytest.raises(ValidationError):
            SessionMetadata(classroom_id="", platform_id="math")

    def test_unsorted_frames_rejected(self):
        frames = [FrameRecord("s1", 100, True, ()), FrameRecord("s1", 50, True, ())]
        with pytest.raises(ValidationError, match="strictly increasing"):
            build_timeline(frames, [], [], self.META)


@settings(deadline=None, max_examples=60)
@given(
    st.lists(st.integers(min_value=0, max_value=9999), min_size=1, max_size=10, unique=True),
    st.integers(min_value=10_000, max_value=20_000),
)
def test_active_url_function_is_total_and_piecewise_constant(times, duration):
    events = [UrlEvent("s1", t, f"https://h{i}.x/") for i, t in enumerate(sorted(times))]
    segments = active_url_intervals(events, duration)
    # contiguous cover of [first_event, duration)
    assert segments[0][0] == events[0].t_ms
    assert segments[-1][1] == duration
    for (s0, e0, _), (s1, e1, _) in zip(segments, segments[1:]):
        assert e0 == s1
    # piecewise constant: each segment carries exactly one URL, the emitting one
    for start, end, url in segments:
        assert start < end
        active = [e.url for e in events if e.t_ms <= start]
        assert url == active[-1]


def test_platform_intervals_merges_adjacent():
    patterns = PlatformPatternSet(patterns=(("host_suffix", "p.x"),))
    events = [
        UrlEvent("s1", 0, "https://p.x/1"),
        UrlEvent("s1", 100, "https://p.x/2"),
        UrlEvent("s1", 200, "https://q.y/"),
        UrlEvent("s1", 300, "https://p.x/3"),
    ]
    assert platform_intervals(events, patterns, 400) == [(0, 200), (300, 400)]
