"""Shared fixtures: schemas, stub services, acceptance result reporting."""

from __future__ import annotations

import hashlib
import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sqlfeedback.corpus import load_schemas

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def schema_store():
    return load_schemas(FIXTURES / "schemas.json")


# --------------------------------------------------------------------------
# stub services
# --------------------------------------------------------------------------


def echo_segment(prompt: str) -> str:
    """Default generation stub: echo the prompt's first labeled segment."""
    head = prompt.split(" | ")[0]
    if ":" in head:
        return head.split(":", 1)[1].strip()
    return head


class _GenerationHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        if self.path != "/generate":
            self.send_error(404)
            return
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length))
        text = self.server.response_fn(payload.get("prompt", ""))
        body = json.dumps({"id": payload.get("id"), "text": text}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


def stub_vector(token: str, dim: int = 8) -> list[float]:
    """Deterministic stub embedding, deliberately unlike the package's
    trigram provider (md5-seeded gaussian, float32-rounded)."""
    seed = int.from_bytes(hashlib.md5(token.encode()).digest()[:4], "big")
    rng = np.random.RandomState(seed)
    vec = rng.normal(size=dim)
    vec = vec / np.linalg.norm(vec)
    return [float(np.float32(x)) for x in vec]


class _EmbeddingHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        if self.path != "/embed":
            self.send_error(404)
            return
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length))
        self.server.request_count += 1
        dim = self.server.dim_fn(self.server.request_count)
        vectors = [[stub_vector(token, dim) for token in sentence]
                   for sentence in payload.get("sentences", [])]
        body = json.dumps({"id": payload.get("id"), "dim": dim,
                           "vectors": vectors}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path != "/health":
            self.send_error(404)
            return
        body = json.dumps({"status": "ok",
                           "dim": self.server.dim_fn(1)}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


def _serve(handler):
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://127.0.0.1:{server.server_address[1]}"


@pytest.fixture
def generation_stub():
    """Echo generation service; tests may swap server.response_fn."""
    server, url = _serve(_GenerationHandler)
    server.response_fn = echo_segment
    yield server, url
    server.shutdown()


@pytest.fixture
def embedding_stub():
    """Deterministic embedding service speaking the wire protocol."""
    server, url = _serve(_EmbeddingHandler)
    server.request_count = 0
    server.dim_fn = lambda count: 8
    yield server, url
    server.shutdown()


# --------------------------------------------------------------------------
# acceptance reporting: one pass/fail line per criterion
# --------------------------------------------------------------------------

ACCEPTANCE_LABELS = {
    "test_sql_roundtrip_and_set_match": "SQL round-trip & set match",
    "test_edit_roundtrip": "Edit round-trip",
    "test_structural_filter": "Structural filter",
    "test_template_goldens": "Template golden tests",
    "test_score_formula_oracle": "Score formula oracle",
    "test_gradient_check": "Gradient check",
    "test_bipartite_oracle": "Bipartite oracle",
    "test_span_weight_reduction": "Span-weight reduction",
    "test_oracle_mrr": "Oracle MRR",
    "test_training_improves_ranking": "Training improves ranking",
    "test_metrics_arithmetic": "Metrics arithmetic",
    "test_splash_structural_counts": "SPLASH structural counts (optional)",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = {}
    for outcome, marker in (("passed", "PASS"), ("failed", "FAIL"),
                            ("skipped", "SKIP")):
        for report in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py::" not in report.nodeid:
                continue
            name = report.nodeid.split("::")[-1].split("[")[0]
            label = ACCEPTANCE_LABELS.get(name, name)
            lines[label] = marker
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name in ACCEPTANCE_LABELS.values():
            if name in lines:
                terminalreporter.write_line(f"[{lines[name]}] {name}")
