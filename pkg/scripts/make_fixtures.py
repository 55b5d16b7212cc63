"""Regenerate the offline chat-service corpus used by the test suite.

Every case in ``tests/llm_cases.py`` is run through a recording transport. By
default the transport answers with the case's authored replies; with ``--live``
it forwards to the endpoint in ``SIMPACT_LLM_ENDPOINT`` instead, so a fresh corpus
can be captured from a real service (the tests then need matching assertions).

    python scripts/make_fixtures.py            # authored replies
    python scripts/make_fixtures.py --live     # capture from the configured service
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import llm_cases  # noqa: E402

from simpact.backends.llm import ENV_API_KEY, ENV_ENDPOINT, HttpTransport, RecordingTransport  # noqa: E402
from simpact.bench import load_task_scene  # noqa: E402
from simpact.errors import BackendError  # noqa: E402
from simpact.render import render_state, save_frame  # noqa: E402


def write_topple_frame() -> None:
    snap = llm_cases.push_snapshot(9.0, (0.015, 0.0, 0.15), 0.03, 88.0)
    save_frame(render_state(snap, load_task_scene("non_toppling_push")), llm_cases.TOPPLE_FRAME)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--live", action="store_true", help="capture replies from the configured endpoint")
    ap.add_argument("--keep-frame", action="store_true", help="do not re-render the toppled-carton image")
    args = ap.parse_args(argv)
    llm_cases.FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    if not args.keep_frame or not llm_cases.TOPPLE_FRAME.exists():
        write_topple_frame()
    out = llm_cases.CORPUS
    if out.exists():
        out.unlink()
    inner = None
    if args.live:
        inner = HttpTransport(os.environ[ENV_ENDPOINT], os.environ[ENV_API_KEY])
    for case in llm_cases.CASES:
        replies = list(case.replies)

        def respond(request, replies=replies, name=case.name):
            if not replies:
                raise RuntimeError(f"case {name} asked for more replies than were authored")
            return replies.pop(0)

        transport = RecordingTransport(out, inner=inner) if inner else RecordingTransport(out, responder=respond)
        try:
            case.run(llm_cases.make_client(transport), 1)
        except BackendError as exc:
            print(f"{case.name}: ended with {type(exc).__name__} (expected for malformed cases)")
        if replies and not args.live:
            raise SystemExit(f"case {case.name} left {len(replies)} authored replies unused")
        print(f"recorded {case.name}")
    check_unique(out)
    print(f"wrote {out}")


def check_unique(path: Path) -> None:
    """Two cases sending the same request with different replies would make replay ambiguous."""
    seen: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        prev = seen.setdefault(rec["request_hash"], rec["response"])
        if prev != rec["response"]:
            raise SystemExit(f"request {rec['request_hash'][:12]} recorded with two different replies")


if __name__ == "__main__":
    main()
