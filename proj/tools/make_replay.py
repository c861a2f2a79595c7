#!/usr/bin/env python3
"""Writes a synthetic Jetstream replay file (deterministic, no network)."""
import json
import random
import sys

TOPICS = ["election", "climate", "vaccines", "economy", "transit", "housing", "energy", "schools"]
PHRASES = [
    "new numbers out today on {t}, worth a read",
    "city council debating {t} again tonight",
    "anyone else following the {t} story?",
    "thread: what the {t} report actually says",
    "local take on {t} from the morning paper",
    "hearing mixed things about {t} this week",
]


def main(path, n=420, hours=6.0, seed=7):
    rng = random.Random(seed)
    t = 1_700_000_000_000_000
    mean_gap_us = hours * 3600e6 / n
    with open(path, "w") as out:
        for i in range(n):
            t += int(rng.expovariate(1.0 / mean_gap_us))
            did = "did:plc:src%03d" % rng.randrange(60)
            roll = rng.random()
            if roll < 0.7:
                topic = rng.choice(TOPICS)
                record = {"$type": "app.bsky.feed.post", "text": rng.choice(PHRASES).format(t=topic),
                          "langs": ["en"] if rng.random() < 0.9 else ["de"],
                          "createdAt": "2023-11-14T22:13:20Z", "tags": [topic]}
                frame = {"did": did, "time_us": t, "kind": "commit",
                         "commit": {"rev": "r%d" % i, "operation": "create", "collection": "app.bsky.feed.post",
                                    "rkey": "k%05d" % i, "record": record}}
                kind = "app.bsky.feed.post"
            elif roll < 0.9:
                frame = {"did": did, "time_us": t, "kind": "commit",
                         "commit": {"rev": "r%d" % i, "operation": "create", "collection": "app.bsky.feed.like",
                                    "rkey": "k%05d" % i, "record": {"$type": "app.bsky.feed.like"}}}
                kind = "app.bsky.feed.like"
            else:
                frame = {"did": did, "time_us": t, "kind": "identity", "identity": {"did": did, "seq": i}}
                kind = "identity"
            body = json.dumps(frame, separators=(",", ":"), sort_keys=True)
            out.write(json.dumps({"received_at": t, "kind": kind, "body": body}, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/jetstream_sample.ndjson")
