import http.client
import json
import threading
import urllib.parse

import pytest

from ino.errors import ConfigError, StoreLocked
from ino.model import VirtualClock
from ino.service import Service, load_config

KEY = "sekrit"


def make_config(tmp_path, **overrides):
    config = {"dataDir": str(tmp_path / "data"), "apiKey": KEY,
              "pageSize": "100", "ontologyPath": "", "port": "0"}
    config.update(overrides)
    return config


@pytest.fixture
def service(tmp_path):
    svc = Service(make_config(tmp_path), clock=VirtualClock())
    yield svc
    svc.close()


def call(svc, method, path, body=None, key=KEY, query=None):
    headers = {"X-INO-Key": key} if key else {}
    payload = json.dumps(body).encode() if body is not None else b""
    return svc.handle(method, path, query or {}, payload, headers)


def populate(svc):
    _, _, data = call(svc, "POST", "/objects/agent",
                      {"name": "NSDL", "kind": "Organization"})
    agent = json.loads(data)["id"]
    _, _, data = call(svc, "POST", "/objects/aggregation", {
        "agent": agent, "proxy": {"contentUrl": "http://example.org/coll"}})
    agg = json.loads(data)["id"]
    _, _, data = call(svc, "POST", "/objects/resource", {
        "contentUrl": "http://example.org/a", "initialAggregations": [agg]})
    resource = json.loads(data)["id"]
    _, _, data = call(svc, "POST", "/objects/metadata", {
        "target": resource, "formatId": "nsdl_dc",
        "payload": "<nsdl_dc><title>T</title></nsdl_dc>",
        "provider": agent, "initialAggregations": [agg]})
    metadata = json.loads(data)["id"]
    return agent, agg, resource, metadata


# --------------------------------------------------------------------- config

def test_load_config(tmp_path):
    p = tmp_path / "svc.conf"
    p.write_text("# comment\ndataDir = /tmp/x\nport=9999\n\napiKey=k\n")
    config = load_config(p)
    assert config["dataDir"] == "/tmp/x"
    assert config["port"] == "9999"
    assert config["pageSize"] == "100"  # default preserved


def test_load_config_errors(tmp_path):
    p = tmp_path / "svc.conf"
    p.write_text("frobnicate=1\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("just some words\n")
    with pytest.raises(ConfigError):
        load_config(p)


# --------------------------------------------------------------------- routes

def test_create_and_fetch_objects(service):
    agent, agg, resource, metadata = populate(service)
    status, media, data = call(service, "GET", f"/objects/{resource}")
    assert status == 200 and media == "application/json"
    doc = json.loads(data)
    assert doc["types"] == ["Resource"]
    assert doc["datastreams"][0]["surrogate"] == "http://example.org/a"
    assert any(r["object"].endswith(agg) for r in doc["relationships"])


def test_datastream_routes(service):
    _agent, _agg, resource, metadata = populate(service)
    status, location, body = call(
        service, "GET", f"/objects/{resource}/datastreams/content")
    assert (status, location, body) == (302, "http://example.org/a", b"")
    status, media, data = call(
        service, "GET", f"/objects/{metadata}/datastreams/format_nsdl_dc")
    assert status == 200 and data == b"<nsdl_dc><title>T</title></nsdl_dc>"


def test_dissemination_route(service):
    _agent, _agg, _resource, metadata = populate(service)
    status, media, data = call(
        service, "GET", f"/disseminations/{metadata}/oai_dc")
    assert status == 200 and b"<dc:title>T</dc:title>" in data


def test_query_route(service):
    _agent, agg, resource, _metadata = populate(service)
    q = ("SELECT ?s WHERE ?s <info:ino/def#memberOf> "
         f"<info:ino/{agg}>").encode()
    status, _media, data = service.handle("POST", "/query", {}, q, {})
    rows = json.loads(data)["rows"]
    assert {r["?s"]["value"] for r in rows} == {f"info:ino/{resource}",
                                                f"info:ino/{_metadata}"}


def test_membership_route(service):
    _agent, agg, resource, metadata = populate(service)
    status, _media, data = call(service, "PUT", f"/aggregations/{agg}/members",
                                [resource])
    assert status == 200
    # the metadata object was also a member; reconciliation drops it
    assert json.loads(data) == {"added": [], "removed": [metadata]}


def test_oai_route_reflects_mutations(service):
    _agent, _agg, _resource, metadata = populate(service)
    _status, media, data = service.handle(
        "GET", "/oai", {"verb": "ListIdentifiers", "metadataPrefix": "oai_dc"},
        b"", {})
    assert media == "text/xml"
    assert f"oai:ndr.local:{metadata}".encode() in data


def test_error_statuses(service):
    populate(service)
    cases = [
        ("GET", "/objects/ghost", None, 404),
        ("POST", "/objects/resource", {}, 400),  # neither URL nor content
        ("POST", "/objects/resource",
         {"contentUrl": "http://x.org/", "initialAggregations": ["nope"]}, 422),
        ("POST", "/objects/widget", {}, 404),
        ("PUT", "/aggregations/ghost/members", [], 422),
    ]
    for method, path, body, expected in cases:
        try:
            status, _m, _d = call(service, method, path, body)
        except Exception as exc:
            from ino.service import _status_for
            from ino.errors import InoError
            assert isinstance(exc, InoError), (path, exc)
            status = _status_for(exc)
        assert status == expected, (method, path)


def test_auth_required(service):
    with pytest.raises(PermissionError):
        call(service, "POST", "/objects/agent",
             {"name": "x", "kind": "Person"}, key=None)
    with pytest.raises(PermissionError):
        call(service, "POST", "/objects/agent",
             {"name": "x", "kind": "Person"}, key="wrong")
    # reads stay open
    service.handle("GET", "/oai", {"verb": "Identify"}, b"", {})


def test_store_locked_while_running(service, tmp_path):
    with pytest.raises(StoreLocked):
        Service(make_config(tmp_path), clock=VirtualClock())


def test_restart_resumes_from_saved_cache(tmp_path):
    svc = Service(make_config(tmp_path), clock=VirtualClock())
    populate(svc)
    first = dict(svc.provider.records)
    seq = svc.provider.last_applied_seq
    svc.close()

    svc2 = Service(make_config(tmp_path), clock=VirtualClock())
    try:
        assert svc2.provider.records == first
        assert svc2.provider.last_applied_seq == seq
        # service stays fully writable after resume
        status, _m, _d = call(svc2, "POST", "/objects/agent",
                              {"name": "late", "kind": "Person"})
        assert status == 201
    finally:
        svc2.close()


def test_restart_catches_up_on_missed_events(tmp_path):
    svc = Service(make_config(tmp_path), clock=VirtualClock())
    agent, agg, resource, metadata = populate(svc)
    svc.provider.save_cache(svc._cache_path)
    # mutate after the snapshot, bypassing provider sync
    svc.repo.purge_metadata(f"info:ino/{metadata}")
    svc.repo.close()

    svc2 = Service(make_config(tmp_path), clock=VirtualClock())
    try:
        rec = [r for r in svc2.provider.records.values()
               if r.identifier.endswith(metadata)]
        assert rec and all(r.deleted for r in rec)
    finally:
        svc2.close()


# ------------------------------------------------------------ live http server

@pytest.fixture
def live(tmp_path):
    svc = Service(make_config(tmp_path), clock=VirtualClock())
    server = svc.serve(0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield svc, server.server_address[1]
    server.shutdown()
    server.server_close()
    thread.join()
    svc.close()


def request(port, method, path, body=None, headers=None):
    conn = http.client.HTTPConnection("127.0.0.1", port, timeout=10)
    try:
        conn.request(method, path, body=body, headers=headers or {})
        resp = conn.getresponse()
        return resp.status, dict(resp.getheaders()), resp.read()
    finally:
        conn.close()


def test_http_end_to_end(live):
    _svc, port = live
    status, _h, data = request(
        port, "POST", "/objects/agent",
        json.dumps({"name": "n", "kind": "Person"}),
        {"X-INO-Key": KEY, "Content-Type": "application/json"})
    assert status == 201
    agent = json.loads(data)["id"]

    status, _h, data = request(port, "POST", "/objects/agent",
                               json.dumps({"name": "n", "kind": "Person"}))
    assert status == 403

    status, _h, data = request(port, "GET", f"/objects/{agent}")
    assert status == 200 and json.loads(data)["types"] == ["Agent"]

    status, _h, data = request(port, "GET", "/objects/ghost")
    assert status == 404 and json.loads(data)["error"] == "NotFound"

    # OAI via GET and via form-encoded POST
    status, headers, data = request(port, "GET", "/oai?verb=Identify")
    assert status == 200 and headers["Content-Type"] == "text/xml"
    assert b"<repositoryName>" in data
    form = urllib.parse.urlencode({"verb": "Identify"})
    status, _h, data2 = request(
        port, "POST", "/oai", form,
        {"Content-Type": "application/x-www-form-urlencoded"})
    assert status == 200 and b"<repositoryName>" in data2


def test_http_redirect_for_surrogate(live):
    svc, port = live
    agent, agg, resource, _metadata = populate(svc)
    status, headers, _data = request(
        port, "GET", f"/objects/{resource}/datastreams/content")
    assert status == 302
    assert headers["Location"] == "http://example.org/a"
