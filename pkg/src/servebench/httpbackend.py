"""Generic HTTP client backend: POST payloads to an external serving endpoint.

The client only sees wall-clock round trips, so there is no stage
decomposition beyond client-side timestamps: the whole server round trip lands
in the inference stage. Connection errors and timeouts mark the request failed
(counted in the error rate, excluded from latency digests) instead of
crashing the job.
"""

from __future__ import annotations

import urllib.error
import urllib.request


def http_infer(endpoint: str, payloads: list[bytes], timeout: float) -> list[tuple[bool, str | None]]:
    """POST each payload to {endpoint}/infer; per payload (ok, fail_reason)."""
    return [http_infer_one(endpoint, p, timeout) for p in payloads]


def http_infer_one(endpoint: str, payload: bytes, timeout: float) -> tuple[bool, str | None]:
    url = endpoint.rstrip("/") + "/infer"
    req = urllib.request.Request(url, data=payload, method="POST",
                                 headers={"Content-Type": "application/octet-stream"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            resp.read()
            if resp.status >= 400:
                return False, f"http status {resp.status}"
            return True, None
    except urllib.error.HTTPError as e:
        return False, f"http status {e.code}"
    except Exception as e:  # URLError, socket.timeout, ConnectionError, ...
        return False, f"{type(e).__name__}: {e}"


class HttpBackend:
    """External serving endpoint reached over HTTP POST."""

    virtual_time = False
    kind = "http"

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self.started = False

    def start(self) -> float:
        # The server is managed externally; reachability problems surface as
        # failed requests so an unreachable endpoint yields error_rate 1.0,
        # not a crashed job.
        self.started = True
        return 0.0

    def stop(self):
        self.started = False

    def infer_one(self, payload: bytes) -> tuple[bool, str | None]:
        return http_infer_one(self.endpoint, payload, self.timeout)

    def sample_resources(self):
        return None  # no visibility into the remote host
