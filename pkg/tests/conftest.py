import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest


class MockEmbeddingServer:
    """Local OpenAI-style ``/v1/embeddings`` endpoint with fixed vectors.

    ``vectors`` maps input text to its embedding. Responses list items in
    reverse order so clients must honour the ``index`` field. ``drop_last``
    makes every response one vector short.
    """

    def __init__(self, vectors, drop_last=False, status=200):
        self.vectors = vectors
        self.drop_last = drop_last
        self.status = status
        self.requests = []
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                server.requests.append({"path": self.path, "body": body,
                                        "auth": self.headers.get("Authorization")})
                if self.path != "/v1/embeddings" or server.status != 200:
                    self.send_response(404 if self.path != "/v1/embeddings" else server.status)
                    self.end_headers()
                    return
                items = [{"object": "embedding", "index": i, "embedding": server.vectors[text]}
                         for i, text in enumerate(body["input"])]
                if server.drop_last:
                    items = items[:-1]
                payload = json.dumps({"object": "list", "data": items[::-1],
                                      "model": body["model"]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def mock_server():
    servers = []

    def start(vectors, **kw):
        srv = MockEmbeddingServer(vectors, **kw).__enter__()
        servers.append(srv)
        return srv

    yield start
    for srv in servers:
        srv.__exit__(None, None, None)


def random_vectors(labels, dim, seed=0):
    rng = np.random.default_rng(seed)
    return {lab: rng.standard_normal(dim).tolist() for lab in labels}


# --- acceptance report ------------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    details = [str(v) for k, v in item.user_properties if k == "detail"]
    if rep.failed:
        message = rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else str(rep.longrepr)
        details.append(message.splitlines()[0])
    _ACCEPTANCE[number] = ("PASS" if rep.passed else "FAIL", title, rep.duration, details)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, duration, details = _ACCEPTANCE[number]
        line = f"{status} criterion {number:2d}: {title} ({duration:.2f}s)"
        if details:
            line += " | " + "; ".join(details)
        terminalreporter.write_line(line)
