"""Threaded HTTP(S) front end for :class:`~modelrest.router.Api`."""
from __future__ import annotations

import logging
import ssl
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .config import ServerConfig
from .registry import Registry
from .router import Api, ApiRequest
from .security import UserStore

log = logging.getLogger(__name__)

MAX_BODY = 16 * 1024 * 1024


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "modelrest"
    timeout = 30
    api: Api
    scheme: str

    def setup(self) -> None:
        super().setup()
        if isinstance(self.connection, ssl.SSLSocket):
            # handshake here, in the worker thread, not in the accept loop
            self.connection.do_handshake()

    def handle_one_request(self) -> None:
        try:
            super().handle_one_request()
        except (ssl.SSLError, ConnectionError) as exc:
            log.debug("connection dropped: %s", exc)
            self.close_connection = True

    def _dispatch(self) -> None:
        path, _, query = self.path.partition("?")
        try:
            length = int(self.headers.get("Content-Length") or 0)
        except ValueError:
            length = -1
        if length < 0 or length > MAX_BODY:
            self.send_error(413 if length > 0 else 400)
            return
        body = self.rfile.read(length) if length else b""
        host = self.headers.get("Host") or "%s:%d" % self.server.server_address[:2]
        req = ApiRequest(self.command, path, query, dict(self.headers.items()), body,
                         base_url=f"{self.scheme}://{host}")
        resp = self.api.handle(req)
        self.send_response(resp.status)
        for k, v in resp.headers.items():
            self.send_header(k, v)
        self.end_headers()
        if resp.body:
            self.wfile.write(resp.body)

    do_GET = do_HEAD = do_PUT = do_POST = do_DELETE = do_OPTIONS = do_PATCH = _dispatch

    def log_message(self, format: str, *args) -> None:
        # request line and status only; headers (credentials) are never logged
        log.info("%s %s", self.address_string(), format % args)


class Service:
    def __init__(self, config: ServerConfig, api: Api, httpd: ThreadingHTTPServer):
        self.config = config
        self.api = api
        self.httpd = httpd
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    @property
    def url(self) -> str:
        return f"{self.config.scheme}://{self.config.host}:{self.port}"

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def start(self) -> "Service":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join()


def build_api(config: ServerConfig, kdf: dict | None = None) -> Api:
    registry = Registry(config.models_dir)
    users = UserStore.load(config.users_file, kdf)
    return Api(registry, users, base_url=config.base_url, cors_allowed_origins=config.cors_allowed_origins)


def boot(config: ServerConfig, kdf: dict | None = None) -> Service:
    """Check config, load every metamodel and the users, bind the socket.

    Raises ConfigError or RegistryError before anything listens.
    """
    config.check()
    api = build_api(config, kdf)
    handler = type("Handler", (_Handler,), {"api": api, "scheme": config.scheme})
    httpd = ThreadingHTTPServer((config.host, config.port), handler)
    httpd.daemon_threads = True
    if config.tls_cert is not None:
        ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        ctx.minimum_version = ssl.TLSVersion.TLSv1_2
        ctx.load_cert_chain(str(config.tls_cert), str(config.tls_key))
        httpd.socket = ctx.wrap_socket(httpd.socket, server_side=True, do_handshake_on_connect=False)
    return Service(config, api, httpd)
