"""Round-trip and diagnostic tests for the net and trace file formats."""

import json

import pytest

from tdbnet.engine import run, replay
from tdbnet.formats import (
    DocumentError,
    canonical_json,
    parse_net,
    parse_trace,
    report_to_json,
    serialize_net,
    serialize_report,
    serialize_trace,
)
from tdbnet.patterns import (
    EndpointStub,
    build_aggregator,
    build_circuit_breaker,
    build_content_based_router,
    build_delayer,
    build_resequencer,
    build_throttler,
    with_workload,
)
from tdbnet.validation import Verdict


def catalog_bundles():
    return [
        build_throttler(5),
        build_delayer(250),
        build_resequencer(),
        build_aggregator(timeout=100),
        build_circuit_breaker(5, 30, EndpointStub.healthy()),
        build_content_based_router(("gt:10", "lt:100")),
    ]


MINIMAL = json.dumps(
    {
        "colorsets": {},
        "relations": [],
        "queries": [],
        "actions": [],
        "places": [{"id": "p0", "color": "text", "kind": "normal", "query": None}],
        "transitions": [],
        "initial_marking": {"p0": [{"value": "hello", "at": 0}]},
        "initial_instance": {"clock": 0, "facts": []},
    }
)


def transition_stanza(tid, place):
    return {
        "id": tid,
        "inputs": [{"place": place, "pattern": {"op": "var", "args": ["m"]}}],
        "guard": {"op": "const", "args": [True]},
        "delay": [0, 0],
        "outputs": [],
        "rollbacks": [],
        "actions": [],
    }


class TestParseNet:
    def test_minimal_document(self):
        net, initial = parse_net(MINIMAL)
        assert [p.id for p in net.places] == ["p0"]
        assert net.transitions == ()
        tr = run(net, initial)
        assert tr.events == ()
        assert tr.final.marking.tokens("p0")[0].value == "hello"

    def test_json_syntax_error_carries_position(self):
        with pytest.raises(DocumentError) as exc:
            parse_net("{\n  \"format\": tdbnet\n}")
        assert "line 2" in str(exc.value)

    def test_missing_section_is_named(self):
        doc = json.loads(MINIMAL)
        del doc["places"]
        with pytest.raises(DocumentError) as exc:
            parse_net(json.dumps(doc))
        assert "places" in str(exc.value)

    def test_unknown_place_reference_names_both_ends(self):
        doc = json.loads(MINIMAL)
        doc["transitions"] = [transition_stanza("t0", "chX")]
        with pytest.raises(DocumentError) as exc:
            parse_net(json.dumps(doc))
        msg = str(exc.value)
        assert "t0" in msg and "chX" in msg

    def test_duplicate_transition_id_is_named(self):
        doc = json.loads(MINIMAL)
        doc["transitions"] = [transition_stanza("dup", "p0"), transition_stanza("dup", "p0")]
        with pytest.raises(DocumentError) as exc:
            parse_net(json.dumps(doc))
        assert "dup" in str(exc.value)

    def test_multiple_diagnostics_accumulate(self):
        doc = json.loads(MINIMAL)
        del doc["places"]
        del doc["relations"]
        with pytest.raises(DocumentError) as exc:
            parse_net(json.dumps(doc))
        assert len(exc.value.diagnostics) >= 2


class TestNetRoundTrip:
    @pytest.mark.parametrize("bundle", catalog_bundles(), ids=lambda b: b.name)
    def test_serialize_parse_serialize_is_stable(self, bundle):
        text = serialize_net(bundle.net, bundle.initial)
        net2, init2 = parse_net(text)
        assert serialize_net(net2, init2) == text

    def test_reparsed_net_runs_identically(self):
        bundle = build_delayer(100)
        net2, init2 = parse_net(serialize_net(bundle.net, bundle.initial))
        seeded1 = run(bundle.net, with_workload(bundle, [(0, ("x",))]))
        base2 = with_workload(bundle, [(0, ("x",))])
        seeded2 = run(net2, init2.__class__(base2.instance, base2.marking, base2.clock))
        assert serialize_trace(seeded1) == serialize_trace(seeded2)


class TestTraceRoundTrip:
    def test_empty_trace(self):
        b = build_delayer(100)
        tr = run(b.net, with_workload(b, []))
        text = serialize_trace(tr)
        tr2 = parse_trace(text)
        assert tr2.events == ()
        assert tr2.final == tr.final
        assert serialize_trace(tr2) == text

    def test_trace_with_events(self):
        b = build_throttler(5)
        tr = run(b.net, with_workload(b, [(0, ("a",)), (0, ("b",))]))
        tr2 = parse_trace(serialize_trace(tr))
        assert tr2.meta == tr.meta
        assert tr2.events == tr.events
        assert tr2.initial == tr.initial and tr2.final == tr.final
        # the parsed trace replays cleanly against the original net
        assert replay(b.net, tr2).clock == tr.final.clock

    def test_empty_file_rejected(self):
        with pytest.raises(DocumentError) as exc:
            parse_trace("")
        assert "empty trace file" in str(exc.value)

    def test_truncated_trace_names_last_record(self):
        b = build_delayer(100)
        tr = run(b.net, with_workload(b, [(0, ("x",))]))
        lines = serialize_trace(tr).splitlines()
        clipped = "\n".join(lines[:-1]) + "\n"
        with pytest.raises(DocumentError) as exc:
            parse_trace(clipped)
        msg = str(exc.value)
        assert "truncated trace" in msg and "last complete record" in msg

    def test_corrupted_line_is_located(self):
        b = build_delayer(100)
        tr = run(b.net, with_workload(b, [(0, ("x",))]))
        lines = serialize_trace(tr).splitlines()
        lines[1] = lines[1][: len(lines[1]) // 2]
        with pytest.raises(DocumentError) as exc:
            parse_trace("\n".join(lines) + "\n")
        assert "line 2" in str(exc.value)

    def test_tampered_footer_digest_detected(self):
        b = build_delayer(100)
        tr = run(b.net, with_workload(b, [(0, ("x",))]))
        lines = serialize_trace(tr).splitlines()
        footer = json.loads(lines[-1])
        footer["digest"] = "0" * len(footer["digest"])
        lines[-1] = canonical_json(footer)
        with pytest.raises(DocumentError) as exc:
            parse_trace("\n".join(lines) + "\n")
        assert "digest" in str(exc.value)


class TestCanonicalJson:
    def test_key_order_and_spacing_are_fixed(self):
        assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'

    def test_non_ascii_preserved(self):
        assert canonical_json({"k": "café"}) == '{"k":"café"}'


class TestReport:
    def test_shape_and_all_pass_flag(self):
        verdicts = [Verdict("a", True), Verdict("b", False, "boom", (("D", 0.5),))]
        doc = report_to_json(verdicts, meta={"scenario": "x"})
        assert doc["all_pass"] is False
        assert doc["meta"] == {"scenario": "x"}
        assert [v["check"] for v in doc["verdicts"]] == ["a", "b"]
        assert doc["verdicts"][1]["details"] == "boom"

    def test_serialized_report_is_canonical(self):
        verdicts = [Verdict("a", True)]
        text = serialize_report(verdicts)
        assert json.loads(text)["all_pass"] is True
        assert text.rstrip("\n") == canonical_json(json.loads(text))
