#!/usr/bin/env python3
"""Scripted feedback session against an in-process service instance:
suggest over random sheets, accept/reject/skip on a fixed schedule, then
print the aggregate stats and prove the log replays to the same numbers."""

import argparse
import json
import tempfile
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from cowriter import anticipate as ant
from cowriter.corpus import CorpusSpec, generate_corpus
from cowriter.leadsheet import serialize
from cowriter.model import NGramModel
from cowriter.service import ServiceConfig, create_app

HEADERS = {"X-User-Id": "demo", "X-Data-Opt-In": "true"}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--suggestions", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--log-dir", default=None, help="default: a fresh temp dir")
    args = ap.parse_args()

    sheets = generate_corpus(CorpusSpec(songs=args.suggestions, seed=args.seed))
    rng = np.random.default_rng(args.seed)
    seqs = []
    for sheet in sheets[:20]:
        for _ in range(4):
            toks, _, _ = ant.make_finetune_example(sheet, rng)
            seqs.append(list(toks.tokens))
    model = NGramModel(order=3).fit(seqs)

    log_dir = Path(args.log_dir) if args.log_dir else Path(tempfile.mkdtemp(prefix="flywheel-"))
    cfg = ServiceConfig(log_dir=str(log_dir))
    client = TestClient(create_app(cfg, model=model))

    capabilities = ["left_to_right", "fill_in_middle", "harm_to_mel", "mel_to_harm"]
    sids = []
    for i, sheet in enumerate(sheets):
        sheet_id = client.post(
            "/sheets", content=serialize(sheet), headers={"content-type": "text/plain"}
        ).json()["id"]
        out = client.post(
            f"/sheets/{sheet_id}/suggest",
            json={
                "span_beats": [0.0, 4.0],
                "capability": capabilities[i % 4],
                "session_seed": i,
            },
            headers=HEADERS,
        ).json()
        sids.append(out["suggestion"]["suggestion_id"])

    n = len(sids)
    accept_n, reject_n = n // 4, n // 8
    for sid in sids[:accept_n]:
        client.post(f"/suggestions/{sid}/feedback", json={"outcome": "accepted"})
    for sid in sids[accept_n : accept_n + reject_n]:
        client.post(f"/suggestions/{sid}/feedback", json={"outcome": "rejected"})
    for sid in sids[accept_n + reject_n : accept_n + reject_n + n // 8]:
        client.post(f"/suggestions/{sid}/next", headers=HEADERS)

    stats = client.get("/stats").json()
    print(json.dumps(stats, indent=2))

    # a fresh instance over the same log must replay to identical stats
    revived = TestClient(create_app(cfg, model=None))
    assert revived.get("/stats").json() == stats, "log replay diverged"
    print(f"\nlog at {log_dir / 'feedback.jsonl'} replays to identical stats")


if __name__ == "__main__":
    main()
