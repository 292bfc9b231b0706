"""Suggestion service over HTTP: sheet CRUD with optimistic versioning,
suggest/next/feedback flows, opt-in logging, stats replay, and session
timeouts. All through the test client against injected models and clocks."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cowriter import anticipate as ant
from cowriter import engine as eng
from cowriter.corpus import CorpusSpec, generate_corpus
from cowriter.leadsheet import serialize, sheet_to_json
from cowriter.model import NGramModel
from cowriter.service import (
    SESSION_TIMEOUT_S,
    FeedbackLog,
    ServiceConfig,
    create_app,
    replay_stats,
)


def fitted_ngram(songs=16, seed=1, order=3):
    sheets = generate_corpus(CorpusSpec(songs=songs, seed=seed))
    rng = np.random.default_rng(0)
    seqs = []
    for s in sheets:
        for _ in range(4):
            toks, _, _ = ant.make_finetune_example(s, rng)
            seqs.append(list(toks.tokens))
    return NGramModel(order=order).fit(seqs), sheets


MODEL, SHEETS = fitted_ngram()
SHEET = next(s for s in SHEETS if s.length_measures == 8)
DOC = serialize(SHEET)
SPAN = [4.0, 8.0]

OPT_IN = {"X-User-Id": "u1", "X-Data-Opt-In": "true"}


class FakeClock:
    def __init__(self, t=1_700_000_000.0):
        self.t = t

    def __call__(self):
        return self.t

    def advance(self, dt):
        self.t += dt


def make_client(tmp_path, model=MODEL, clock=None, subdir="logs"):
    cfg = ServiceConfig(log_dir=str(tmp_path / subdir))
    return TestClient(create_app(cfg, model=model, clock=clock))


def post_sheet(client, doc=DOC):
    resp = client.post("/sheets", content=doc, headers={"content-type": "text/plain"})
    assert resp.status_code == 201
    return resp.json()["id"]


def suggest(client, sheet_id, span=None, capability="fill_in_middle", seed=3, headers=None):
    body = {"span_beats": span or SPAN, "capability": capability, "session_seed": seed}
    resp = client.post(f"/sheets/{sheet_id}/suggest", json=body, headers=headers or {})
    assert resp.status_code == 200, resp.text
    out = resp.json()
    assert out["stalled"] is False
    return out["suggestion"]


class TestSheetCrud:
    def test_create_text_roundtrip(self, tmp_path):
        client = make_client(tmp_path)
        resp = client.post("/sheets", content=DOC, headers={"content-type": "text/plain"})
        assert resp.status_code == 201
        body = resp.json()
        assert body["version"] == 1
        got = client.get(f"/sheets/{body['id']}", params={"format": "text"})
        assert got.status_code == 200
        assert got.text == DOC  # serialization is byte-stable through the API
        assert got.headers["X-Sheet-Version"] == "1"

    def test_create_from_json_document(self, tmp_path):
        client = make_client(tmp_path)
        resp = client.post("/sheets", json={"document": DOC})
        assert resp.status_code == 201
        assert resp.json()["sheet"] == sheet_to_json(SHEET)

    def test_create_from_json_sheet(self, tmp_path):
        client = make_client(tmp_path)
        resp = client.post("/sheets", json=sheet_to_json(SHEET))
        assert resp.status_code == 201
        body = client.get(f"/sheets/{resp.json()['id']}").json()
        assert body["document"] == DOC
        assert body["sheet"] == sheet_to_json(SHEET)

    def test_create_rejects_garbage(self, tmp_path):
        client = make_client(tmp_path)
        resp = client.post("/sheets", content="key: nope", headers={"content-type": "text/plain"})
        assert resp.status_code == 400
        resp = client.post("/sheets", json={"measures": "many"})
        assert resp.status_code == 400

    def test_get_put_unknown_404(self, tmp_path):
        client = make_client(tmp_path)
        assert client.get("/sheets/nope").status_code == 404
        assert client.put("/sheets/nope", json={"document": DOC}).status_code == 404

    def test_put_bumps_version(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        other = serialize(SHEETS[0])
        resp = client.put(f"/sheets/{sheet_id}", json={"document": other, "version": 1})
        assert resp.status_code == 200
        assert resp.json()["version"] == 2
        got = client.get(f"/sheets/{sheet_id}", params={"format": "text"})
        assert got.text == other
        assert got.headers["X-Sheet-Version"] == "2"

    def test_put_stale_version_conflicts(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        assert client.put(f"/sheets/{sheet_id}", json={"document": DOC, "version": 1}).status_code == 200
        resp = client.put(f"/sheets/{sheet_id}", json={"document": DOC, "version": 1})
        assert resp.status_code == 409

    def test_put_without_version_is_unconditional(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        resp = client.put(f"/sheets/{sheet_id}", json={"sheet": sheet_to_json(SHEETS[0])})
        assert resp.status_code == 200
        assert resp.json()["version"] == 2

    def test_put_bad_body_400(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        assert client.put(f"/sheets/{sheet_id}", json={"version": 1}).status_code == 400
        assert client.put(f"/sheets/{sheet_id}", json={"document": "bpm: x"}).status_code == 400


class TestSuggest:
    def test_no_model_503(self, tmp_path):
        client = make_client(tmp_path, model=None)
        sheet_id = post_sheet(client)
        resp = client.post(
            f"/sheets/{sheet_id}/suggest",
            json={"span_beats": SPAN, "capability": "fill_in_middle"},
        )
        assert resp.status_code == 503
        assert client.post("/suggestions/x/next").status_code == 503

    def test_unknown_sheet_404(self, tmp_path):
        client = make_client(tmp_path)
        resp = client.post(
            "/sheets/nope/suggest", json={"span_beats": SPAN, "capability": "fill_in_middle"}
        )
        assert resp.status_code == 404

    @pytest.mark.parametrize(
        "body",
        [
            {"span_beats": SPAN, "capability": "backwards"},
            {"span_beats": [0.0, 1e6], "capability": "fill_in_middle"},
            {"span_beats": [8.0, 4.0], "capability": "fill_in_middle"},
            {"capability": "fill_in_middle"},
            {"span_beats": SPAN},
        ],
    )
    def test_bad_request_422(self, tmp_path, body):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        resp = client.post(f"/sheets/{sheet_id}/suggest", json=body)
        assert resp.status_code == 422

    def test_response_shape(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        sug = suggest(client, sheet_id)
        assert sug["sheet_id"] == sheet_id
        assert sug["sheet_version"] == 1
        assert sug["capability"] == "fill_in_middle"
        assert sug["span_beats"] == SPAN
        assert sug["alternative_index"] == 0
        assert sug["model_version"] == MODEL.version
        for note in sug["melody"] + sug["harmony"]:
            assert SPAN[0] <= note["onset"] < SPAN[1]

    def test_capability_purity(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        # melody-conditioned harmonization never emits melody, and vice versa
        assert suggest(client, sheet_id, capability="mel_to_harm")["melody"] == []
        assert suggest(client, sheet_id, capability="harm_to_mel")["harmony"] == []

    def test_deterministic_across_instances(self, tmp_path):
        a = make_client(tmp_path, subdir="a")
        b = make_client(tmp_path, subdir="b")
        sa = suggest(a, post_sheet(a), seed=11)
        sb = suggest(b, post_sheet(b), seed=11)
        assert sa["suggestion_id"] == sb["suggestion_id"]
        assert sa["melody"] == sb["melody"]
        assert sa["harmony"] == sb["harmony"]

    def test_session_seed_changes_result(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        first = suggest(client, sheet_id, seed=0)
        second = suggest(client, sheet_id, seed=1)
        assert first["suggestion_id"] != second["suggestion_id"]

    def test_repeat_request_reserved_once(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        first = suggest(client, sheet_id, seed=7, headers=OPT_IN)
        again = suggest(client, sheet_id, seed=7, headers=OPT_IN)
        assert again == first
        # the repeat is served from the registry, not logged twice
        assert client.get("/stats").json()["total_suggestions"] == 1


class TestNext:
    def test_chain_serves_successive_alternatives(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        sug = suggest(client, sheet_id, seed=5, headers=OPT_IN)
        ids = [sug["suggestion_id"]]
        for expected_index in (1, 2, 3):
            resp = client.post(f"/suggestions/{ids[-1]}/next", headers=OPT_IN)
            assert resp.status_code == 200
            nxt = resp.json()["suggestion"]
            assert nxt["alternative_index"] == expected_index
            ids.append(nxt["suggestion_id"])
        assert len(set(ids)) == 4

        # the first suggestion stays pending; only superseded alternatives
        # are counted as implicitly ignored
        stats = client.get("/stats").json()
        assert stats["total_suggestions"] == 4
        assert stats["total_ignored"] == 2
        assert stats["total_pending"] == 2

        # same flow on a fresh instance reproduces the same stream
        other = make_client(tmp_path, subdir="replay")
        other_sheet = post_sheet(other)
        sug2 = suggest(other, other_sheet, seed=5)
        ids2 = [sug2["suggestion_id"]]
        for _ in range(3):
            nxt = other.post(f"/suggestions/{ids2[-1]}/next").json()["suggestion"]
            ids2.append(nxt["suggestion_id"])
        assert ids2 == ids

    def test_repeat_next_reserves_cached_alternative(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        sug = suggest(client, sheet_id, seed=5, headers=OPT_IN)
        first = client.post(f"/suggestions/{sug['suggestion_id']}/next", headers=OPT_IN)
        again = client.post(f"/suggestions/{sug['suggestion_id']}/next", headers=OPT_IN)
        assert again.json()["suggestion"]["suggestion_id"] == first.json()["suggestion"]["suggestion_id"]
        assert client.get("/stats").json()["total_suggestions"] == 2

    def test_unknown_404(self, tmp_path):
        client = make_client(tmp_path)
        assert client.post("/suggestions/nope/next").status_code == 404

    @pytest.mark.parametrize("outcome", ["accepted", "rejected"])
    def test_terminal_outcome_409(self, tmp_path, outcome):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        sug = suggest(client, sheet_id)
        sid = sug["suggestion_id"]
        assert client.post(f"/suggestions/{sid}/feedback", json={"outcome": outcome}).status_code == 200
        assert client.post(f"/suggestions/{sid}/next").status_code == 409


class TestFeedback:
    def test_bad_outcome_422(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        sid = suggest(client, sheet_id)["suggestion_id"]
        assert client.post(f"/suggestions/{sid}/feedback", json={"outcome": "meh"}).status_code == 422
        assert client.post(f"/suggestions/{sid}/feedback", json={}).status_code == 422

    def test_unknown_404(self, tmp_path):
        client = make_client(tmp_path)
        resp = client.post("/suggestions/nope/feedback", json={"outcome": "accepted"})
        assert resp.status_code == 404

    def test_reject_leaves_sheet_untouched(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        before = client.get(f"/sheets/{sheet_id}", params={"format": "text"})
        sid = suggest(client, sheet_id)["suggestion_id"]
        resp = client.post(f"/suggestions/{sid}/feedback", json={"outcome": "rejected"})
        assert resp.status_code == 200
        assert resp.json() == {"outcome": "rejected"}
        after = client.get(f"/sheets/{sheet_id}", params={"format": "text"})
        assert after.text == before.text
        assert after.headers["X-Sheet-Version"] == "1"

    def test_accept_splices_and_bumps_version(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        before = client.get(f"/sheets/{sheet_id}").json()["sheet"]
        sug = suggest(client, sheet_id, capability="mel_to_harm", seed=2)
        resp = client.post(
            f"/suggestions/{sug['suggestion_id']}/feedback", json={"outcome": "accepted"}
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["outcome"] == "accepted"
        assert body["version"] == 2
        after = body["sheet"]
        assert after["melody"] == before["melody"]  # harmonization leaves melody alone
        in_span = lambda c: SPAN[0] <= c["onset"] < SPAN[1]
        assert [c for c in after["harmony"] if in_span(c)] == sug["harmony"]
        assert [c for c in after["harmony"] if not in_span(c)] == [
            c for c in before["harmony"] if not in_span(c)
        ]
        got = client.get(f"/sheets/{sheet_id}").json()
        assert got["version"] == 2
        assert got["sheet"] == after

    def test_accept_twice_409(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        sid = suggest(client, sheet_id)["suggestion_id"]
        assert client.post(f"/suggestions/{sid}/feedback", json={"outcome": "accepted"}).status_code == 200
        assert client.post(f"/suggestions/{sid}/feedback", json={"outcome": "accepted"}).status_code == 409
        assert client.post(f"/suggestions/{sid}/feedback", json={"outcome": "rejected"}).status_code == 409

    def test_accept_stale_sheet_409(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        sid = suggest(client, sheet_id)["suggestion_id"]
        # sheet edited since the suggestion was produced
        assert client.put(f"/sheets/{sheet_id}", json={"document": DOC}).status_code == 200
        resp = client.post(f"/suggestions/{sid}/feedback", json={"outcome": "accepted"})
        assert resp.status_code == 409
        # the suggestion survives the failed accept and can still be rejected
        assert client.post(f"/suggestions/{sid}/feedback", json={"outcome": "rejected"}).status_code == 200


class TestOptIn:
    def test_anonymous_activity_not_logged(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        sid = suggest(client, sheet_id)["suggestion_id"]
        client.post(f"/suggestions/{sid}/feedback", json={"outcome": "rejected"})
        stats = client.get("/stats").json()
        assert stats["total_suggestions"] == 0
        assert stats["unique_users"] == 0

    def test_user_without_flag_not_logged(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        suggest(client, sheet_id, headers={"X-User-Id": "u1"})
        assert client.get("/stats").json()["total_suggestions"] == 0

    def test_flag_without_user_not_logged(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        suggest(client, sheet_id, headers={"X-Data-Opt-In": "true"})
        assert client.get("/stats").json()["total_suggestions"] == 0

    def test_opted_in_users_counted(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        suggest(client, sheet_id, seed=1, headers=OPT_IN)
        suggest(client, sheet_id, seed=2, headers={"X-User-Id": "u2", "X-Data-Opt-In": "1"})
        stats = client.get("/stats").json()
        assert stats["total_suggestions"] == 2
        assert stats["unique_users"] == 2
        assert stats["total_pending"] == 2


class TestStats:
    def test_fresh_server_zeros(self, tmp_path):
        client = make_client(tmp_path)
        stats = client.get("/stats").json()
        assert stats["total_suggestions"] == 0
        assert stats["unique_users"] == 0
        for row in stats["by_capability"].values():
            assert row == {"suggestions": 0, "accepted": 0, "rejected": 0, "ignored": 0, "pending": 0}

    def test_example_session_counts(self, tmp_path):
        # one suggestion, three nexts, accept the last: four suggestions
        # total, two implicitly ignored, the anchor still pending
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        sid = suggest(client, sheet_id, seed=5, headers=OPT_IN)["suggestion_id"]
        for _ in range(3):
            sid = client.post(f"/suggestions/{sid}/next", headers=OPT_IN).json()["suggestion"][
                "suggestion_id"
            ]
        assert client.post(f"/suggestions/{sid}/feedback", json={"outcome": "accepted"}).status_code == 200
        stats = client.get("/stats").json()
        assert stats["total_suggestions"] == 4
        assert stats["total_accepted"] == 1
        assert stats["total_ignored"] == 2
        assert stats["total_pending"] == 1
        assert stats["total_rejected"] == 0
        cap = stats["by_capability"]["fill_in_middle"]
        assert cap == {"suggestions": 4, "accepted": 1, "rejected": 0, "ignored": 2, "pending": 1}

    def test_restart_replays_identical_stats(self, tmp_path):
        clock = FakeClock()
        client = make_client(tmp_path, clock=clock)
        sheet_id = post_sheet(client)
        sid = suggest(client, sheet_id, seed=5, headers=OPT_IN)["suggestion_id"]
        nxt = client.post(f"/suggestions/{sid}/next", headers=OPT_IN).json()["suggestion"]
        client.post(f"/suggestions/{nxt['suggestion_id']}/feedback", json={"outcome": "accepted"})
        before = client.get("/stats").json()

        # same log directory, fresh process state
        revived = make_client(tmp_path, clock=clock)
        assert revived.get("/stats").json() == before

    def test_capability_rows_sum_to_totals(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        for i, cap in enumerate(["left_to_right", "fill_in_middle", "mel_to_harm"]):
            suggest(client, sheet_id, capability=cap, seed=i, headers=OPT_IN)
        stats = client.get("/stats").json()
        assert sum(r["suggestions"] for r in stats["by_capability"].values()) == stats["total_suggestions"]


class TestTimeout:
    def test_pending_times_out_to_ignored(self, tmp_path):
        clock = FakeClock()
        client = make_client(tmp_path, clock=clock)
        sheet_id = post_sheet(client)
        sid = suggest(client, sheet_id, headers=OPT_IN)["suggestion_id"]
        assert client.get("/stats").json()["total_pending"] == 1

        clock.advance(SESSION_TIMEOUT_S + 1)
        stats = client.get("/stats").json()
        assert stats["total_pending"] == 0
        assert stats["total_ignored"] == 1
        # the transition is terminal for feedback purposes
        assert client.post(f"/suggestions/{sid}/feedback", json={"outcome": "accepted"}).status_code == 409

    def test_fresh_suggestion_survives_sweep(self, tmp_path):
        clock = FakeClock()
        client = make_client(tmp_path, clock=clock)
        sheet_id = post_sheet(client)
        suggest(client, sheet_id, seed=1, headers=OPT_IN)
        clock.advance(SESSION_TIMEOUT_S + 1)
        suggest(client, sheet_id, seed=2, headers=OPT_IN)
        stats = client.get("/stats").json()
        assert stats["total_ignored"] == 1
        assert stats["total_pending"] == 1

    def test_timeout_survives_restart(self, tmp_path):
        clock = FakeClock()
        client = make_client(tmp_path, clock=clock)
        sheet_id = post_sheet(client)
        suggest(client, sheet_id, headers=OPT_IN)
        clock.advance(SESSION_TIMEOUT_S + 1)
        before = client.get("/stats").json()
        revived = make_client(tmp_path, clock=clock)
        assert revived.get("/stats").json() == before


class TestStalled:
    def test_stall_reported_not_500(self, tmp_path, monkeypatch):
        def boom(req, model, session_seed=0):
            raise eng.GenerationStalled("mask empty at step 3")

        monkeypatch.setattr("cowriter.service.eng.generate", boom)
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        resp = client.post(
            f"/sheets/{sheet_id}/suggest",
            json={"span_beats": SPAN, "capability": "fill_in_middle"},
            headers=OPT_IN,
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["suggestion"] is None
        assert body["stalled"] is True
        assert "mask empty" in body["detail"]
        # diagnostic record lands in the log without poisoning the stats
        stats = client.get("/stats").json()
        assert stats["total_suggestions"] == 0


class TestLogAndConfig:
    def test_log_records_are_versioned_and_sequential(self, tmp_path):
        client = make_client(tmp_path)
        sheet_id = post_sheet(client)
        sid = suggest(client, sheet_id, headers=OPT_IN)["suggestion_id"]
        client.post(f"/suggestions/{sid}/feedback", json={"outcome": "rejected"})
        log = FeedbackLog(tmp_path / "logs" / "feedback.jsonl")
        records = log.records()
        assert [r["seq"] for r in records] == list(range(1, len(records) + 1))
        assert all(r["format_version"] == 1 for r in records)
        kinds = [r["type"] for r in records]
        assert kinds == ["suggestion", "outcome"]
        # appends continue the sequence after reopening
        log.append({"type": "outcome", "suggestion_id": "x", "outcome": "ignored", "ts_ms": 0})
        assert log.records()[-1]["seq"] == len(records) + 1

    def test_replay_stats_ignores_duplicate_transitions(self):
        records = [
            {"type": "suggestion", "suggestion_id": "a", "capability": "left_to_right", "user_id": "u"},
            {"type": "outcome", "suggestion_id": "a", "outcome": "accepted"},
            {"type": "outcome", "suggestion_id": "a", "outcome": "rejected"},
            {"type": "outcome", "suggestion_id": "ghost", "outcome": "rejected"},
        ]
        stats = replay_stats(records)
        assert stats["total_accepted"] == 1
        assert stats["total_rejected"] == 0
        assert stats["total_suggestions"] == 1

    def test_config_file_and_env_overrides(self, tmp_path, monkeypatch):
        cfg_path = tmp_path / "svc.json"
        cfg_path.write_text(json.dumps({"port": 9000, "log_dir": "/tmp/x", "workers": 5}))
        monkeypatch.delenv("COWRITER_PORT", raising=False)
        monkeypatch.delenv("COWRITER_LOG_DIR", raising=False)
        cfg = ServiceConfig.load(cfg_path)
        assert (cfg.port, cfg.log_dir, cfg.workers) == (9000, "/tmp/x", 5)
        monkeypatch.setenv("COWRITER_PORT", "9999")
        monkeypatch.setenv("COWRITER_MODEL_PATH", "m.pt")
        assert ServiceConfig.load(cfg_path).port == 9999
        assert ServiceConfig.load(cfg_path).model_path == "m.pt"

    def test_healthz_reports_model(self, tmp_path):
        client = make_client(tmp_path)
        assert client.get("/healthz").json() == {"ok": True, "model": MODEL.version}
        bare = make_client(tmp_path, model=None, subdir="bare")
        assert bare.get("/healthz").json() == {"ok": True, "model": None}
