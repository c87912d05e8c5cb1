"""Concrete forecasters: last-value fallback, in-process LSTM and an HTTP client.

The HTTP exchange is a POST with body ``{"series": [[...], ...]}`` answered
by ``{"forecast": [...]}``; :func:`serve_predictor` exposes any local
forecaster over the same protocol.
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .history import ConcurrencyHistory
from .lstm import LstmHyper, LstmModel, lstm_forward, lstm_train, make_windows

log = logging.getLogger(__name__)


class NaivePredictor:
    """Carries the most recent interval forward."""

    def forecast(self, series) -> np.ndarray:
        series = np.asarray(series, dtype=float)
        return series[-1].copy()


class LstmPredictor:
    def __init__(self, S: int, hidden_size: int = 64, hyper: LstmHyper | None = None):
        self.hyper = hyper or LstmHyper()
        self.model = LstmModel.init(S, hidden_size, seed=self.hyper.seed)

    def fit(self, series) -> "LstmPredictor":
        X, Y = make_windows(series, self.hyper.series_length)
        if len(X):
            self.model = lstm_train(self.model, X, Y, self.hyper)
            log.info("lstm trained on %d windows, final loss %.4g", len(X), self.model.loss_history[-1])
        return self

    def forecast(self, series) -> np.ndarray:
        return lstm_forward(self.model, series)


class HttpPredictor:
    def __init__(self, url: str, timeout: float = 10.0):
        self.url = url
        self.timeout = timeout

    def forecast(self, series) -> np.ndarray:
        body = json.dumps({"series": np.asarray(series, dtype=float).tolist()}).encode()
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            payload = json.loads(resp.read().decode())
        return np.asarray(payload["forecast"], dtype=float)


def _handler_for(predictor):
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            try:
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length).decode())
                y = predictor.forecast(np.asarray(payload["series"], dtype=float))
                status, out = 200, {"forecast": np.asarray(y, dtype=float).tolist()}
            except Exception as exc:  # reported to the client, server keeps running
                status, out = 400, {"error": str(exc)}
            data = json.dumps(out).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, fmt, *args):
            log.debug(fmt, *args)

    return Handler


def serve_predictor(predictor, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Start a background HTTP server for ``predictor``; caller shuts it down."""
    server = ThreadingHTTPServer((host, port), _handler_for(predictor))
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


def training_series(requests, type_ids, interval: float, fraction: float = 0.5) -> np.ndarray:
    """Per-interval arrival counts of the earliest ``fraction`` of the workload."""
    if not requests:
        return np.zeros((0, len(type_ids)))
    n = int(requests[-1].arrival // interval) + 1
    cut = max(1, int(round(n * fraction)))
    hist = ConcurrencyHistory(tuple(type_ids))
    rows = [{s: 0 for s in type_ids} for _ in range(cut)]
    for r in requests:
        t = int(r.arrival // interval)
        if t < cut:
            rows[t][r.type_id] += 1
    for row in rows:
        hist.record(row)
    return hist.series()
