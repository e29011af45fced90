import importlib.util
import json
import time
from pathlib import Path

import numpy as np
import pytest

from antnav import policy, world
from antnav.explorer import Waypoint
from antnav.policy import (HistoryEntry, PolicyDecision, PolicyRequest, SubPathCandidate,
                           color_match_policy, oracle_policy)

SERVER_PATH = Path(__file__).resolve().parents[1] / "tools" / "policy_server.py"
_spec = importlib.util.spec_from_file_location("policy_server", SERVER_PATH)
policy_server = importlib.util.module_from_spec(_spec)
_spec.loader.exec_module(policy_server)

RED, BLUE, GRAY = world.PALETTE["red"], world.PALETTE["blue"], (128, 128, 128)


def img(colour, size=8):
    return world.Image.filled(size, size, colour)


def make_request(moves, pose=world.Pose(0.0, 0.0, 0.0), backtrack=None, history=(),
                 instruction=("go", "to", "the", "red", "room"), front=GRAY, anticipation=True,
                 d_th=1.0):
    """``moves`` is a list of (dx, dy, observed colour, anticipated colour)."""
    cands = [SubPathCandidate(i, Waypoint(dx, dy), img(obs), img(ant))
             for i, (dx, dy, obs, ant) in enumerate(moves)]
    if backtrack is not None:
        cands.append(SubPathCandidate(len(cands), Waypoint(0, 0, 0, "backtrack"), img(GRAY),
                                      None, backtrack))
    cands.append(SubPathCandidate(len(cands), Waypoint(0, 0, 0, "stop"), img(GRAY), None, pose))
    return PolicyRequest(list(instruction), list(history), cands, img(GRAY, 16), 0, "ep", pose,
                         img(front), d_th, anticipation)


def moved_to(x, y, colour=GRAY):
    return HistoryEntry(img(colour), "move", 1, world.Pose(x, y, 0.0))


# oracle -----------------------------------------------------------------------------


def test_oracle_stops_within_threshold():
    req = make_request([(1.0, 0.0, GRAY, GRAY)], d_th=3.0)
    dec = oracle_policy(req, (2.0, 0.0, 0.0))
    assert dec.stop and dec.chosen == req.stop_index


def test_oracle_takes_move_closest_to_goal():
    req = make_request([(2.0, 0.0, GRAY, GRAY), (0.0, 2.0, GRAY, GRAY), (-2.0, 0.0, GRAY, GRAY)])
    dec = oracle_policy(req, (1.0, 6.0, 0.0))
    assert dec.chosen == 1 and not dec.stop


def test_oracle_backtracks_when_every_move_gets_further():
    req = make_request([(2.0, 0.0, GRAY, GRAY), (-2.0, 0.0, GRAY, GRAY)],
                       backtrack=world.Pose(0.0, 1.0, 0.0))
    dec = oracle_policy(req, (0.0, 5.0, 0.0))
    assert dec.chosen == 2 and not dec.stop


def test_oracle_without_stack_takes_least_bad_move():
    req = make_request([(2.0, 0.0, GRAY, GRAY), (-2.0, 0.5, GRAY, GRAY)])
    assert oracle_policy(req, (0.0, 5.0, 0.0)).chosen == 1


def test_oracle_with_memory_avoids_revisits_and_keeps_going():
    history = [moved_to(0.0, 2.0)]
    req = make_request([(0.0, 2.0, GRAY, GRAY), (1.5, 1.0, GRAY, GRAY)],
                       backtrack=world.Pose(0.0, 2.0, 0.0), history=history)
    goal = (0.0, 6.0, 0.0)
    assert oracle_policy(req, goal).chosen == 0
    assert oracle_policy(req, goal, memory=True).chosen == 1
    # nothing improves, but memory mode still moves rather than backtracking
    far = make_request([(2.0, 0.0, GRAY, GRAY)], backtrack=world.Pose(0.0, 2.0, 0.0))
    assert oracle_policy(far, (0.0, -9.0, 0.0), memory=True).chosen == 0
    assert oracle_policy(far, (0.0, -9.0, 0.0)).chosen == 1


def test_oracle_uses_supplied_distance():
    req = make_request([(2.0, 0.0, GRAY, GRAY), (0.0, 2.0, GRAY, GRAY)])
    east_is_close = lambda p: abs(p[0] - 10.0)  # noqa: E731
    assert oracle_policy(req, (0.0, 9.0, 0.0), distance=east_is_close).chosen == 0


def test_oracle_is_a_pure_function():
    req = make_request([(2.0, 0.0, GRAY, GRAY), (0.0, 2.0, GRAY, GRAY)], history=[moved_to(2, 0)])
    f = policy.make_oracle((3.0, 3.0, 0.0), 0.5, memory=True)
    assert f(req) == f(req) == oracle_policy(req, (3.0, 3.0, 0.0), 0.5, memory=True)


# colour matching ----------------------------------------------------------------------


def test_colour_policy_follows_anticipated_view():
    req = make_request([(2.0, 0.0, BLUE, RED), (0.0, 2.0, RED, BLUE)])
    assert color_match_policy(req).chosen == 0
    assert color_match_policy(req, anticipation=False).chosen == 1


def test_anticipation_irrelevant_when_views_agree():
    moves = [(2.0, 0.0, BLUE, BLUE), (0.0, 2.0, RED, RED), (-2.0, 0.0, GRAY, GRAY)]
    on = color_match_policy(make_request(moves, anticipation=True))
    off = color_match_policy(make_request(moves, anticipation=False))
    assert on == off and on.chosen == 1


def test_colour_policy_stops_after_seeing_target():
    req = make_request([(2.0, 0.0, RED, RED)], history=[moved_to(1, 0, RED)], front=RED)
    assert color_match_policy(req).stop


def test_colour_sequence_progress():
    views = [img(BLUE), img(GRAY), img(RED)]
    assert policy.color_progress(["blue", "then", "red"], views) == 2
    assert policy.color_progress(["red", "then", "blue"], views) == 1
    assert policy.color_fraction(img(RED), "red") == 1.0


def test_colour_policy_backtracks_at_dead_end():
    req = make_request([], backtrack=world.Pose(1.0, 0.0, 0.0))
    assert color_match_policy(req).chosen == 0


# wire format -------------------------------------------------------------------------------


def test_request_round_trip():
    req = make_request([(2.0, 0.0, BLUE, RED)], backtrack=world.Pose(1, 0, 0),
                       history=[moved_to(1.0, 0.0, RED)], anticipation=False)
    back = PolicyRequest.from_json(req.to_json())
    assert back.instruction == req.instruction and back.anticipation is False
    assert [c.action.kind for c in back.candidates] == ["move", "backtrack", "stop"]
    assert np.array_equal(back.candidates[0].anticipated.pixels, req.candidates[0].anticipated.pixels)
    assert back.history[0].pose == req.history[0].pose
    assert json.loads(req.to_json())["candidates"][1]["anticipated"] is None


@pytest.mark.parametrize("payload", [[], {"chosen": "1"}, {"chosen": True}, {"chosen": 0, "stop": 1},
                                     {"chosen": 7}, {"chosen": -1}])
def test_bad_responses_rejected(payload):
    with pytest.raises(policy.PolicyProtocolError):
        policy.parse_response(payload, 3)


def test_stop_response_may_ignore_index():
    assert policy.parse_response({"chosen": 99, "stop": True}, 3).stop


# loopback HTTP --------------------------------------------------------------------------


@pytest.fixture
def serve():
    servers = []

    def start(mode, delay=0.0):
        s = policy_server.make_server(mode=mode, delay=delay)
        policy_server.serve_in_thread(s)
        servers.append(s)
        host, port = s.server_address[:2]
        return s, f"http://{host}:{port}"

    yield start
    for s in servers:
        s.shutdown()
        s.server_close()


def five_candidates():
    return make_request([(2.0, 0.0, BLUE, BLUE), (0.0, 2.0, RED, RED), (-2.0, 0.0, GRAY, GRAY),
                         (0.0, -2.0, GRAY, GRAY)])


def test_http_valid_reply_matches_local_policy(serve):
    _, url = serve("color")
    req = five_candidates()
    assert policy.http_policy_client(url, req, timeout=5.0) == color_match_policy(req)


def test_http_out_of_range(serve):
    _, url = serve("out-of-range")
    with pytest.raises(policy.PolicyProtocolError, match="99"):
        policy.http_policy_client(url, five_candidates(), timeout=5.0)


def test_http_malformed(serve):
    _, url = serve("malformed")
    with pytest.raises(policy.PolicyProtocolError, match="JSON"):
        policy.http_policy_client(url, five_candidates(), timeout=5.0)


def test_http_server_error(serve):
    server, url = serve("error")
    with pytest.raises(policy.PolicyProtocolError, match="500"):
        policy.http_policy_client(url, five_candidates(), timeout=5.0)
    assert server.handler_class.calls == 1


def test_http_timeout_retries_once(serve):
    server, url = serve("slow", delay=2.0)
    t0 = time.monotonic()
    with pytest.raises(policy.PolicyTimeoutError):
        policy.http_policy_client(url, five_candidates(), timeout=0.3)
    assert time.monotonic() - t0 < 1.9
    deadline = time.monotonic() + 2.0
    while server.handler_class.calls < 2 and time.monotonic() < deadline:
        time.sleep(0.05)
    assert server.handler_class.calls == 2


def test_http_unreachable():
    s = policy_server.make_server()
    host, port = s.server_address[:2]
    s.server_close()
    with pytest.raises(policy.PolicyTransportError) as err:
        policy.http_policy_client(f"http://{host}:{port}", five_candidates(), timeout=1.0)
    assert not isinstance(err.value, policy.PolicyTimeoutError)


def test_server_rejects_unknown_mode():
    with pytest.raises(ValueError):
        policy_server.make_server(mode="sleepy")
