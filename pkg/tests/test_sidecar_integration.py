"""Integration: the remote provider against the built sidecar service.

The sidecar is a separate package (sidecar/); these tests are skipped
unless its build output exists. They drive the same wire protocol the
evaluator uses in production.
"""

import shutil
import socket
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from sqlfeedback.embeddings import RemoteProvider, healthcheck, tokenize
from sqlfeedback.evaluator import ScorerModel, score, similarity_matrix

SIDECAR_MAIN = Path(__file__).parent.parent / "sidecar" / "dist" / "index.js"

pytestmark = pytest.mark.skipif(
    not SIDECAR_MAIN.exists() or shutil.which("node") is None,
    reason="sidecar not built (run `npm run build` in sidecar/)")


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture(scope="module")
def sidecar_url():
    port = _free_port()
    process = subprocess.Popen(
        ["node", str(SIDECAR_MAIN), "--port", str(port)],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT)
    url = f"http://127.0.0.1:{port}"
    try:
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline:
            report = healthcheck(RemoteProvider(url, timeout_ms=500, retries=0))
            if report.reachable:
                break
            time.sleep(0.2)
        else:
            raise RuntimeError("sidecar did not come up")
        yield url
    finally:
        process.terminate()
        process.wait(timeout=10)


def test_sidecar_health_reports_dim(sidecar_url):
    report = healthcheck(RemoteProvider(sidecar_url, timeout_ms=2000, retries=0))
    assert report.reachable
    assert report.dim == 48


def test_sidecar_embeddings_deterministic(sidecar_url):
    provider = RemoteProvider(sidecar_url, timeout_ms=5000, retries=0)
    first = provider.embed(["breeds"])
    fresh = RemoteProvider(sidecar_url, timeout_ms=5000, retries=0)
    second = fresh.embed(["breeds"])
    assert np.array_equal(first.vectors, second.vectors)


def test_self_scoring_through_sidecar(sidecar_url):
    provider = RemoteProvider(sidecar_url, timeout_ms=5000, retries=0)
    tokens = tokenize("use treatments table in place of breeds table .")
    embedded = provider.embed(tokens)
    model = ScorerModel.identity(embedded.dim, provider.provider_id)
    breakdown = score(similarity_matrix(embedded, embedded, model))
    assert abs(breakdown.s - 1.0) <= 1e-6


def test_row_counts_match_tokens(sidecar_url):
    provider = RemoteProvider(sidecar_url, timeout_ms=5000, retries=0)
    for sentence in ("find the number of rows in breeds table",
                     "consider the year less than 1980 condition ."):
        tokens = tokenize(sentence)
        matrix = provider.embed(tokens)
        assert matrix.vectors.shape == (len(tokens), 48)
