import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from csf.demos import load_demo
from csf.gateway import GatewayConfig, TeleopSession, create_app, map_device
from csf.protocol import ProtocolViolation, parse_client_command, schema_document
from csf.sim import bundled_scene


@pytest.fixture(scope="module")
def slot():
    return bundled_scene("slot_planar")


def make_session(slot, tmp_path, **kw):
    return TeleopSession(slot, GatewayConfig(**kw), tmp_path, seed=3)


class TestMapDevice:
    def test_zero_deflection_zero_wrench(self):
        w = map_device(np.zeros(6), 30.0, 6.0)
        np.testing.assert_allclose(w.as_array(), 0.0)

    def test_full_deflection_gain(self):
        w = map_device([1, 0, 0, 0, 0, 0], 30.0, 6.0)
        np.testing.assert_allclose(w.as_array(), [30, 0, 0, 0, 0, 0])
        w = map_device([0, 0, 0, 1, 0, 0], 30.0, 6.0)
        np.testing.assert_allclose(w.as_array(), [0, 0, 0, 6, 0, 0])

    def test_linearity(self):
        d = np.array([0.5, -0.25, 0.1, 0.8, 0.0, -1.0])
        for alpha in (0.0, 0.25, 0.5, 1.0):
            w = map_device(alpha * d, 30.0, 6.0)
            ref = map_device(d, 30.0, 6.0)
            np.testing.assert_allclose(w.as_array(), alpha * ref.as_array(), atol=1e-12)

    def test_clamped(self):
        w = map_device([2.0, 0, 0, 0, 0, -3.0], 30.0, 6.0)
        np.testing.assert_allclose(w.force, [30, 0, 0])
        np.testing.assert_allclose(w.torque, [0, 0, -6.0])


class TestProtocolParsing:
    def test_valid_commands(self):
        cmd = parse_client_command({"v": 1, "type": "wrench", "d": [0] * 6})
        assert cmd.type == "wrench"
        cmd = parse_client_command({"v": 1, "type": "record", "action": "start"})
        assert cmd.action == "start"

    def test_bad_version(self):
        with pytest.raises(ProtocolViolation) as err:
            parse_client_command({"v": 2, "type": "wrench", "d": [0] * 6})
        assert err.value.reason == "bad_version"

    def test_unknown_type(self):
        with pytest.raises(ProtocolViolation):
            parse_client_command({"v": 1, "type": "telemetry"})

    def test_bad_fields(self):
        with pytest.raises(ProtocolViolation):
            parse_client_command({"v": 1, "type": "wrench", "d": [0] * 5})

    def test_schema_document_covers_all_frames(self):
        doc = schema_document()
        assert doc["version"] == 1
        assert set(doc["server_to_client"]) == {"state", "ack", "error"}
        assert set(doc["client_to_server"]) == {"wrench", "reset", "record"}

    def test_checked_in_schema_file_is_current(self):
        """protocol/teleop_v1.schema.json is the shared contract with the
        browser client; it must track the live models."""
        from pathlib import Path

        path = Path(__file__).resolve().parents[1] / "protocol" / "teleop_v1.schema.json"
        assert json.loads(path.read_text()) == schema_document()


class TestSessionCore:
    def test_recording_cadence_exact_100hz(self, slot, tmp_path):
        session = make_session(slot, tmp_path)
        session.record("start")
        session.advance(1000)           # 1 s of sim time at 1 kHz
        assert len(session.recorder.records) == 101   # t=0 plus 100 ticks
        ts = [r.t for r in session.recorder.records]
        np.testing.assert_allclose(np.diff(ts), 0.01, atol=1e-12)

    def test_save_without_start_errors(self, slot, tmp_path):
        session = make_session(slot, tmp_path)
        ack = session.record("save")
        assert not ack.ok and ack.detail == "empty_buffer"

    def test_save_writes_loadable_demo(self, slot, tmp_path):
        session = make_session(slot, tmp_path)
        session.record("start")
        session.set_deflection([0, 0, -0.4, 0, 0, 0])
        session.advance(6000)
        ack = session.record("save")
        assert ack.ok
        demo = load_demo(tmp_path / ack.detail)
        assert len(demo.records) == 601
        assert demo.meta.source == "human"
        assert (tmp_path / "manifest.json").exists()

    def test_discard_writes_nothing(self, slot, tmp_path):
        session = make_session(slot, tmp_path / "d")
        session.record("start")
        session.advance(500)
        session.record("discard")
        ack = session.record("save")
        assert not ack.ok
        assert not (tmp_path / "d").exists() or not list((tmp_path / "d").glob("*.jsonl"))

    def test_stop_idempotent(self, slot, tmp_path):
        session = make_session(slot, tmp_path)
        session.record("start")
        assert session.record("stop").ok
        assert session.record("stop").ok

    def test_no_client_sim_holds(self, slot, tmp_path):
        session = make_session(slot, tmp_path)
        p0 = session.state.pose.trans.copy()
        session.advance(500)
        np.testing.assert_allclose(session.state.pose.trans, p0)

    def test_reset_modes(self, slot, tmp_path):
        session = make_session(slot, tmp_path)
        assert session.reset("random").ok
        from csf.sim import collide

        assert collide(slot, session.state.pose) == []
        assert session.reset("goal_offset").ok

    def test_snapshot_never_has_contacts_while_recording(self, slot, tmp_path):
        session = make_session(slot, tmp_path, debug_contacts=True)
        frame = session.snapshot()
        assert frame.contacts is not None      # debug flag honored when idle
        session.record("start")
        frame = session.snapshot()
        assert frame.contacts is None          # and refused while recording
        assert frame.recording


class TestWebSocket:
    @pytest.fixture()
    def client(self, slot, tmp_path):
        app = create_app(slot, GatewayConfig(broadcast_hz=30.0), tmp_path, seed=4)
        with TestClient(app) as client:
            yield client

    def test_http_endpoints(self, client):
        health = client.get("/health").json()
        assert health["status"] == "ok" and health["scene"] == "slot_planar"
        scene = client.get("/scene").json()
        assert len(scene["receptacle"]) == 3
        assert len(scene["goal_pose"]) == 7
        schema = client.get("/protocol").json()
        assert schema["version"] == 1

    def test_state_stream_and_wrench_roundtrip(self, client):
        with client.websocket_connect("/teleop") as ws:
            first = ws.receive_json()
            assert first["type"] == "state" and first["v"] == 1
            assert len(first["object_pose"]) == 7
            ws.send_text(json.dumps({"v": 1, "type": "wrench",
                                     "d": [0, 0, -1.0, 0, 0, 0]}))
            t0 = time.monotonic()
            moved = False
            z0 = first["object_pose"][2]
            while time.monotonic() - t0 < 2.0:
                frame = ws.receive_json()
                if frame["type"] == "state" and frame["object_pose"][2] < z0 - 1e-4:
                    moved = True
                    break
            assert moved, "wrench command should move the object"

    def test_latency_under_100ms(self, client):
        """Command -> observable state change within 2 broadcast periods."""
        with client.websocket_connect("/teleop") as ws:
            first = ws.receive_json()
            z0 = first["object_pose"][2]
            ws.send_text(json.dumps({"v": 1, "type": "wrench",
                                     "d": [0, 0, -1.0, 0, 0, 0]}))
            sent = time.monotonic()
            while True:
                frame = ws.receive_json()
                if frame["type"] == "state" and frame["object_pose"][2] < z0 - 1e-5:
                    latency = time.monotonic() - sent
                    break
                assert time.monotonic() - sent < 2.0
            assert latency < 0.1, f"round trip took {latency * 1000:.0f} ms"

    def test_second_steerer_rejected(self, client):
        with client.websocket_connect("/teleop") as ws1:
            ws1.receive_json()
            ws1.send_text(json.dumps({"v": 1, "type": "wrench", "d": [0] * 6}))
            with client.websocket_connect("/teleop") as ws2:
                ws2.receive_json()
                ws2.send_text(json.dumps({"v": 1, "type": "wrench",
                                          "d": [1, 0, 0, 0, 0, 0]}))
                t0 = time.monotonic()
                while time.monotonic() - t0 < 2.0:
                    frame = ws2.receive_json()
                    if frame["type"] == "error":
                        assert frame["reason"] == "steering_taken"
                        break
                else:
                    pytest.fail("read-only client was not rejected")

    def test_record_session_over_wire(self, client, tmp_path):
        with client.websocket_connect("/teleop") as ws:
            ws.receive_json()
            ws.send_text(json.dumps({"v": 1, "type": "record", "action": "start"}))
            acked = False
            t0 = time.monotonic()
            while time.monotonic() - t0 < 2.0:
                frame = ws.receive_json()
                if frame["type"] == "ack":
                    assert frame["ok"] and frame["action"] == "record:start"
                    acked = True
                    break
            assert acked
            ws.send_text(json.dumps({"v": 1, "type": "wrench",
                                     "d": [0, 0, -0.5, 0, 0, 0]}))
            time.sleep(0.5)
            ws.send_text(json.dumps({"v": 1, "type": "record", "action": "save"}))
            saved_name = None
            t0 = time.monotonic()
            while time.monotonic() - t0 < 3.0:
                frame = ws.receive_json()
                if frame["type"] == "ack" and frame["action"] == "record:save":
                    assert frame["ok"]
                    saved_name = frame["detail"]
                    break
            assert saved_name
        demo = load_demo(tmp_path / saved_name)
        assert len(demo.records) >= 40      # roughly 0.5 s at 100 Hz

    def test_protocol_violation_closes_connection(self, client):
        with client.websocket_connect("/teleop") as ws:
            ws.receive_json()
            ws.send_text("this is not json")
            t0 = time.monotonic()
            while time.monotonic() - t0 < 2.0:
                frame = ws.receive_json()
                if frame["type"] == "error":
                    assert frame["reason"] == "not_json"
                    break
