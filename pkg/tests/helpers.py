"""Test client for the in-process API."""
from __future__ import annotations

import json
from urllib.parse import urlsplit

from modelrest.router import Api, ApiRequest, ApiResponse
from modelrest.security import basic_header

CHEAP_KDF = {"name": "scrypt", "n": 16, "r": 1, "p": 1, "dklen": 32}


class Response:
    def __init__(self, raw: ApiResponse):
        self.status = raw.status
        self.headers = raw.headers
        self.body = raw.body

    @property
    def text(self) -> str:
        return self.body.decode("utf-8")

    def json(self):
        return json.loads(self.body)

    def __repr__(self) -> str:
        return f"<Response {self.status} {self.body[:120]!r}>"


class Client:
    def __init__(self, api: Api, username: str | None, password: str | None):
        self.api = api
        self.auth = basic_header(username, password) if username else None

    def request(self, method: str, url: str, body=None, headers: dict | None = None,
                content_type: str = "application/json") -> Response:
        parts = urlsplit(url)
        h = dict(headers or {})
        if self.auth:
            h.setdefault("Authorization", self.auth)
        if isinstance(body, (dict, list)):
            body = json.dumps(body)
        if isinstance(body, str):
            body = body.encode("utf-8")
        if body:
            h.setdefault("Content-Type", content_type)
        req = ApiRequest(method, parts.path, parts.query, h, body or b"")
        return Response(self.api.handle(req))

    def get(self, url, **kw):
        return self.request("GET", url, **kw)

    def head(self, url, **kw):
        return self.request("HEAD", url, **kw)

    def put(self, url, body=None, **kw):
        return self.request("PUT", url, body, **kw)

    def post(self, url, body=None, **kw):
        return self.request("POST", url, body, **kw)

    def delete(self, url, **kw):
        return self.request("DELETE", url, **kw)

    def options(self, url, **kw):
        return self.request("OPTIONS", url, **kw)
