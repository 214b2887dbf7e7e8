"""Manifest and proof storage: file-backed store, HTTP service, caching client.

Layout on disk:

    <root>/<cid_hex>/manifest.json
    <root>/<cid_hex>/proofs/<i>.json
    <root>/rid-index.json        # rid_alias hex -> cid hex

Absence is a value (None), never an exception: the verification protocol
assigns it a reason code. Transport failures, by contrast, raise
TransportError so callers can retry instead of mislabelling a chunk.

HTTP endpoints (canonical-JSON bodies, lowercase hex path parameters):

    GET /manifest/{cid_hex}           200 manifest | 404
    GET /manifest/by-rid/{rid_hex}    200 manifest | 404
    GET /proof/{cid_hex}/{i}          200 proof    | 404
    PUT /manifest/{cid_hex}           200 | 400 | 409 conflict
    PUT /proof/{cid_hex}/{i}          200 | 400

Records are immutable: a PUT of different content under an existing cid is
a 409, an identical PUT is idempotent.
"""

from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .manifest import Manifest, TrustStore, verify_manifest_signature, KeyUnresolvedError
from .merkle import MerkleProof


class RepositoryError(Exception):
    pass


class ConflictError(RepositoryError):
    """cid already bound to different content."""


class InvalidManifestError(RepositoryError):
    """Store refused a manifest whose signature does not verify."""


class TransportError(RepositoryError):
    """Network-level failure; retryable, distinct from absence."""


def _check_manifest(mf: Manifest, trust_store: TrustStore | None) -> None:
    if trust_store is None:
        return
    try:
        ok = verify_manifest_signature(trust_store, mf)
    except KeyUnresolvedError:
        ok = False
    if not ok:
        raise InvalidManifestError("manifest signature does not verify against the trust store")


class FileStore:
    """Directory-backed repository; safe for concurrent readers."""

    def __init__(self, root, trust_store: TrustStore | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.trust_store = trust_store
        self._lock = threading.Lock()

    def _rid_index_path(self) -> Path:
        return self.root / "rid-index.json"

    def _load_rid_index(self) -> dict:
        p = self._rid_index_path()
        if not p.exists():
            return {}
        return json.loads(p.read_text(encoding="utf-8"))

    def put_manifest(self, mf: Manifest) -> None:
        _check_manifest(mf, self.trust_store)
        raw = mf.to_json()
        with self._lock:
            d = self.root / mf.cid.hex()
            path = d / "manifest.json"
            if path.exists():
                if path.read_bytes() != raw:
                    raise ConflictError(f"cid {mf.cid.hex()} already bound to different content")
                return
            d.mkdir(parents=True, exist_ok=True)
            path.write_bytes(raw)
            index = self._load_rid_index()
            index[mf.rid_alias.hex()] = mf.cid.hex()
            self._rid_index_path().write_text(
                json.dumps(index, sort_keys=True, separators=(",", ":")), encoding="utf-8"
            )

    def put_proofs(self, cid: bytes, proofs: list[MerkleProof]) -> None:
        with self._lock:
            d = self.root / cid.hex() / "proofs"
            d.mkdir(parents=True, exist_ok=True)
            for proof in proofs:
                raw = json.dumps(proof.to_dict(), sort_keys=True, separators=(",", ":")).encode()
                path = d / f"{proof.leaf_index}.json"
                if path.exists() and path.read_bytes() != raw:
                    raise ConflictError(f"proof {cid.hex()}/{proof.leaf_index} already bound")
                path.write_bytes(raw)

    def get_manifest(self, cid: bytes | None = None, rid: bytes | None = None) -> Manifest | None:
        if cid is not None:
            path = self.root / cid.hex() / "manifest.json"
            if path.exists():
                return Manifest.from_json(path.read_bytes())
        if rid is not None:
            got = self._load_rid_index().get(rid.hex())
            if got is not None:
                path = self.root / got / "manifest.json"
                if path.exists():
                    mf = Manifest.from_json(path.read_bytes())
                    if cid is None or mf.cid == cid:
                        return mf
        return None

    def get_proof(self, cid: bytes, index: int) -> MerkleProof | None:
        path = self.root / cid.hex() / "proofs" / f"{index}.json"
        if not path.exists():
            return None
        return MerkleProof.from_dict(json.loads(path.read_bytes()))


# ---------------------------------------------------------------------------
# HTTP service
# ---------------------------------------------------------------------------


def _is_hex(s: str, digits: int) -> bool:
    if len(s) != digits or s != s.lower():
        return False
    try:
        bytes.fromhex(s)
        return True
    except ValueError:
        return False


class _Handler(BaseHTTPRequestHandler):
    store: FileStore

    def log_message(self, fmt, *args):
        pass

    def _send(self, code: int, body: bytes, content_type="application/json"):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _bad_request(self, msg="malformed path"):
        self._send(400, json.dumps({"error": msg}).encode())

    def do_GET(self):
        parts = [p for p in self.path.split("/") if p]
        try:
            if len(parts) == 2 and parts[0] == "manifest" and _is_hex(parts[1], 32):
                mf = self.store.get_manifest(cid=bytes.fromhex(parts[1]))
            elif len(parts) == 3 and parts[0] == "manifest" and parts[1] == "by-rid" and _is_hex(parts[2], 16):
                mf = self.store.get_manifest(rid=bytes.fromhex(parts[2]))
            elif len(parts) == 3 and parts[0] == "proof" and _is_hex(parts[1], 32) and parts[2].isdigit():
                proof = self.store.get_proof(bytes.fromhex(parts[1]), int(parts[2]))
                if proof is None:
                    self._send(404, b'{"error":"not found"}')
                else:
                    self._send(200, json.dumps(proof.to_dict(), sort_keys=True, separators=(",", ":")).encode())
                return
            else:
                self._bad_request()
                return
        except RepositoryError as exc:
            self._send(500, json.dumps({"error": str(exc)}).encode())
            return
        if mf is None:
            self._send(404, b'{"error":"not found"}')
        else:
            self._send(200, mf.to_json())

    def do_PUT(self):
        parts = [p for p in self.path.split("/") if p]
        length = int(self.headers.get("Content-Length", "0"))
        body = self.rfile.read(length)
        try:
            if len(parts) == 2 and parts[0] == "manifest" and _is_hex(parts[1], 32):
                mf = Manifest.from_json(body)
                if mf.cid.hex() != parts[1]:
                    self._bad_request("cid mismatch between path and body")
                    return
                self.store.put_manifest(mf)
                self._send(200, b'{"status":"ok"}')
            elif len(parts) == 3 and parts[0] == "proof" and _is_hex(parts[1], 32) and parts[2].isdigit():
                proof = MerkleProof.from_dict(json.loads(body))
                if proof.leaf_index != int(parts[2]):
                    self._bad_request("index mismatch between path and body")
                    return
                self.store.put_proofs(bytes.fromhex(parts[1]), [proof])
                self._send(200, b'{"status":"ok"}')
            else:
                self._bad_request()
        except ConflictError as exc:
            self._send(409, json.dumps({"error": str(exc)}).encode())
        except InvalidManifestError as exc:
            self._send(403, json.dumps({"error": str(exc)}).encode())
        except (ValueError, KeyError) as exc:
            self._bad_request(f"malformed body: {exc}")


def make_server(store: FileStore, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Build (not start) the HTTP service; port 0 picks a free port."""
    handler = type("BoundHandler", (_Handler,), {"store": store})
    return ThreadingHTTPServer((host, port), handler)


def serve(store: FileStore, host: str = "127.0.0.1", port: int = 8080) -> None:
    server = make_server(store, host, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------


class RepoClient:
    """HTTP repository client with an immutable-record cache.

    `network_calls` counts actual HTTP round trips, so tests can assert
    cache behaviour directly.
    """

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.network_calls = 0
        self._manifests: dict[str, Manifest] = {}
        self._proofs: dict[tuple[str, int], MerkleProof] = {}

    def _get(self, path: str) -> bytes | None:
        self.network_calls += 1
        try:
            with urllib.request.urlopen(self.base_url + path, timeout=self.timeout) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            if exc.code == 404:
                return None
            raise TransportError(f"GET {path}: HTTP {exc.code}") from exc
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"GET {path}: {exc}") from exc

    def _put(self, path: str, body: bytes) -> None:
        self.network_calls += 1
        req = urllib.request.Request(self.base_url + path, data=body, method="PUT")
        req.add_header("Content-Type", "application/json")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout):
                pass
        except urllib.error.HTTPError as exc:
            if exc.code == 409:
                raise ConflictError(f"PUT {path}: conflict") from exc
            if exc.code == 403:
                raise InvalidManifestError(f"PUT {path}: rejected") from exc
            raise TransportError(f"PUT {path}: HTTP {exc.code}") from exc
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"PUT {path}: {exc}") from exc

    def get_manifest(self, cid: bytes | None = None, rid: bytes | None = None) -> Manifest | None:
        if cid is not None and cid.hex() in self._manifests:
            return self._manifests[cid.hex()]
        raw = None
        if cid is not None:
            raw = self._get(f"/manifest/{cid.hex()}")
        if raw is None and rid is not None:
            raw = self._get(f"/manifest/by-rid/{rid.hex()}")
        if raw is None:
            return None
        mf = Manifest.from_json(raw)
        if cid is not None and mf.cid != cid:
            return None
        self._manifests[mf.cid.hex()] = mf
        return mf

    def get_proof(self, cid: bytes, index: int) -> MerkleProof | None:
        key = (cid.hex(), index)
        if key in self._proofs:
            return self._proofs[key]
        raw = self._get(f"/proof/{cid.hex()}/{index}")
        if raw is None:
            return None
        proof = MerkleProof.from_dict(json.loads(raw))
        self._proofs[key] = proof
        return proof

    def put_manifest(self, mf: Manifest) -> None:
        self._put(f"/manifest/{mf.cid.hex()}", mf.to_json())

    def put_proofs(self, cid: bytes, proofs: list[MerkleProof]) -> None:
        for proof in proofs:
            body = json.dumps(proof.to_dict(), sort_keys=True, separators=(",", ":")).encode()
            self._put(f"/proof/{cid.hex()}/{proof.leaf_index}", body)
