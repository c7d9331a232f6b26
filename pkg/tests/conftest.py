import http.server
import threading
import time

import pytest
import yaml

from servebench.hardware import catalog_by_id, load_hardware_catalog
from servebench.jobspec import parse_job_doc
from servebench.modelgen import GeneratorParams, generate_model


@pytest.fixture(scope="session")
def catalog():
    return load_hardware_catalog()


@pytest.fixture(scope="session")
def g1(catalog):
    return catalog_by_id(catalog)["G1"]


@pytest.fixture(scope="session")
def fc_model():
    # 4 square fc layers of width 1024: 8388608 FLOP, 16 MiB weights
    return generate_model(GeneratorParams("fc", 4, 1024, input_dims=(1024,)))


def make_job(**overrides) -> dict:
    """Job document with small sim defaults; override nested keys per test."""
    doc = {
        "job_name": "test-job",
        "seed": 7,
        "model": {"generate": {"block": "fc", "num_layers": 4, "width": 1024,
                               "input_dims": [1024]}},
        "backend": {"kind": "sim", "hardware_id": "G1",
                    "batching": {"mode": "static", "batch_size": 1}},
        "workload": {"pattern": "constant", "rate": 100.0, "num_requests": 50,
                     "payload": {"synthetic_bytes": 1024}},
    }
    for key, value in overrides.items():
        parts = key.split(".")
        cur = doc
        for p in parts[:-1]:
            cur = cur.setdefault(p, {})
        cur[parts[-1]] = value
    return doc


def parse_job(**overrides):
    return parse_job_doc(make_job(**overrides))


@pytest.fixture
def job_doc():
    return make_job()


class _EchoHandler(http.server.BaseHTTPRequestHandler):
    delay_s = 0.0

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length)
            if self.delay_s:
                time.sleep(self.delay_s)
            self.send_response(200)
            self.send_header("Content-Length", str(min(len(body), 64)))
            self.end_headers()
            self.wfile.write(body[:64])
        except (BrokenPipeError, ConnectionResetError):
            pass  # the client timed out and hung up; expected in timeout tests

    def log_message(self, *args):
        pass


class EchoServer:
    def __init__(self, delay_s: float = 0.0):
        handler = type("Handler", (_EchoHandler,), {"delay_s": delay_s})
        self.httpd = http.server.ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self.port = self.httpd.server_address[1]
        self.endpoint = f"http://127.0.0.1:{self.port}"
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def echo_server():
    server = EchoServer()
    yield server
    server.close()


@pytest.fixture
def slow_server():
    server = EchoServer(delay_s=1.5)
    yield server
    server.close()


def emit_yaml(doc) -> str:
    return yaml.safe_dump(doc)
