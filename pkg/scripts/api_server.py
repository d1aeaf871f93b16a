#!/usr/bin/env python3
"""
LSMVOS - API Server
Evaluation and run history over HTTP
Port: 8101
"""

import os
import sys
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from datetime import datetime, timezone
from flask import Flask, jsonify, request
from flask_cors import CORS
from dataclasses import asdict
import logging

import numpy as np

from metrics import contour_accuracy, default_tolerance, evaluate_directories, region_similarity
from run_registry import get_registry

UTC = timezone.utc

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("api_server")

VERSION = "1.0.0"

app = Flask(__name__)
CORS(app)


def _registry():
    return app.config.get("REGISTRY") or get_registry()


@app.errorhandler(ValueError)
def bad_request(e):
    return jsonify({"error": str(e)}), 400


@app.errorhandler(Exception)
def internal_error(e):
    code = getattr(e, "code", None)
    if isinstance(code, int) and 400 <= code < 500:
        return jsonify({"error": str(e)}), code
    logger.error(f"Unhandled error | {request.path} | {e}")
    return jsonify({"error": str(e)}), 500


@app.route("/")
def index():
    return jsonify({
        "name": "LSMVOS",
        "version": VERSION,
        "description": "Video object segmentation evaluation and run history",
        "endpoints": {
            "health": "/api/health",
            "eval": "/api/eval",
            "frame_metrics": "/api/metrics/frame",
            "runs": "/api/runs",
            "bench_history": "/api/bench/history/<name>"
        }
    })


@app.route("/api/health")
def health():
    return jsonify({
        "status": "ok",
        "service": "lsmvos",
        "version": VERSION,
        "time": datetime.now(UTC).isoformat()
    })


@app.route("/api/eval", methods=["POST"])
def evaluate():
    d = request.get_json(silent=True) or {}
    for field in ["pred", "gt"]:
        if field not in d:
            return jsonify({"error": f"Missing required field: {field}"}), 400
    if not os.path.isdir(d["gt"]):
        return jsonify({"error": f"Annotation directory not found: {d['gt']}"}), 404
    tol = d.get("tolerance")
    report = evaluate_directories(d["pred"], d["gt"], int(tol) if tol is not None else None)
    return jsonify(report.to_dict())


@app.route("/api/metrics/frame", methods=["POST"])
def frame_metrics():
    d = request.get_json(silent=True) or {}
    for field in ["pred", "gt"]:
        if field not in d:
            return jsonify({"error": f"Missing required field: {field}"}), 400
    pred = np.asarray(d["pred"], dtype=np.int64)
    gt = np.asarray(d["gt"], dtype=np.int64)
    if pred.ndim != 2 or gt.ndim != 2:
        return jsonify({"error": "pred and gt must be 2-D integer lists"}), 400
    tol = d.get("tolerance")
    tol = int(tol) if tol is not None else default_tolerance(gt.shape)
    return jsonify({
        "j": region_similarity(pred, gt),
        "f": contour_accuracy(pred, gt, tol),
        "tolerance": tol
    })


@app.route("/api/runs")
def list_runs():
    kind = request.args.get("kind")
    limit = int(request.args.get("limit", 20))
    runs = _registry().list_runs(kind, limit)
    return jsonify({"runs": [asdict(r) for r in runs]})


@app.route("/api/runs/<int:run_id>")
def get_run(run_id):
    run = _registry().get_run(run_id)
    if not run:
        return jsonify({"error": "Run not found"}), 404
    return jsonify(asdict(run))


@app.route("/api/bench/history/<name>")
def bench_history(name):
    history = _registry().fps_history(name)
    return jsonify({"name": name, "history": history})


def serve(host: str = "127.0.0.1", port: int = 8101):
    print("\n" + "=" * 60)
    print(f"  LSMVOS - Evaluation API v{VERSION}")
    print(f"  http://{host}:{port}")
    print("=" * 60 + "\n")
    app.run(host=host, port=port, debug=False)


if __name__ == "__main__":
    from settings import get_settings
    s = get_settings()
    serve(s.host, s.port)
