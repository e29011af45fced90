"""Decision policies and the JSON wire format shared with remote policies."""

from __future__ import annotations

import base64
import json
import logging
import math
import socket
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from . import world
from .explorer import Waypoint

log = logging.getLogger(__name__)

COLOR_RADIUS = 60.0
COLOR_THRESHOLD = 0.20
HTTP_TIMEOUT = 30.0


class PolicyError(RuntimeError):
    pass


class PolicyProtocolError(PolicyError):
    """Malformed or out-of-range policy response."""


class PolicyTransportError(PolicyError):
    """The policy endpoint could not be reached."""


class PolicyTimeoutError(PolicyTransportError):
    pass


@dataclass
class PolicyDecision:
    chosen: int
    stop: bool = False
    rationale: str = ""

    def to_dict(self) -> dict:
        return {"chosen": self.chosen, "stop": self.stop, "rationale": self.rationale}


@dataclass
class HistoryEntry:
    view: world.Image
    kind: str
    repeat: int
    pose: world.Pose
    role: str = "single"     # single | run-start | run-end
    heading: float = 0.0


@dataclass
class SubPathCandidate:
    index: int
    action: Waypoint
    observed: world.Image
    anticipated: world.Image | None = None
    target: world.Pose | None = None

    def __post_init__(self):
        if (self.anticipated is not None) != (self.action.kind == "move"):
            raise ValueError("anticipated view present exactly for move candidates")


@dataclass
class PolicyRequest:
    instruction: list
    history: list
    candidates: list
    spatial_map: world.Image
    step: int
    episode_id: str
    pose: world.Pose
    front_view: world.Image
    d_th: float = 3.0
    anticipation: bool = True

    def __post_init__(self):
        if [c.index for c in self.candidates] != list(range(len(self.candidates))):
            raise ValueError("candidate indices must be dense from 0")
        if sum(c.action.kind == "stop" for c in self.candidates) != 1:
            raise ValueError("exactly one stop candidate is required")

    @property
    def stop_index(self) -> int:
        return next(c.index for c in self.candidates if c.action.kind == "stop")

    def to_json(self) -> str:
        return json.dumps({
            "episode_id": self.episode_id,
            "step": self.step,
            "instruction": list(self.instruction),
            "pose": self.pose.to_dict(),
            "d_th": self.d_th,
            "anticipation": self.anticipation,
            "front_view": encode_image(self.front_view),
            "spatial_map": encode_image(self.spatial_map),
            "history": [{"view": encode_image(h.view), "kind": h.kind, "repeat": h.repeat,
                         "role": h.role, "heading": h.heading, "pose": h.pose.to_dict()}
                        for h in self.history],
            "candidates": [{"index": c.index, "kind": c.action.kind, "dx": c.action.dx,
                            "dy": c.action.dy, "z": c.action.z,
                            "observed": encode_image(c.observed),
                            "anticipated": None if c.anticipated is None
                            else encode_image(c.anticipated)}
                           for c in self.candidates],
        })

    @classmethod
    def from_json(cls, text: str) -> "PolicyRequest":
        d = json.loads(text)
        history = [HistoryEntry(decode_image(h["view"]), h["kind"], h["repeat"],
                                world.Pose.from_dict(h["pose"]), h.get("role", "single"),
                                h.get("heading", 0.0)) for h in d["history"]]
        cands = []
        for c in d["candidates"]:
            wp = Waypoint(c["dx"], c["dy"], c["z"], c["kind"])
            ant = None if c["anticipated"] is None else decode_image(c["anticipated"])
            cands.append(SubPathCandidate(c["index"], wp, decode_image(c["observed"]), ant))
        return cls(d["instruction"], history, cands, decode_image(d["spatial_map"]), d["step"],
                   d["episode_id"], world.Pose.from_dict(d["pose"]),
                   decode_image(d["front_view"]), d.get("d_th", 3.0),
                   d.get("anticipation", True))


def encode_image(img: world.Image) -> str:
    return base64.b64encode(img.to_ppm()).decode("ascii")


def decode_image(text: str) -> world.Image:
    return world.Image.from_ppm(base64.b64decode(text))


def parse_response(payload, n_candidates: int) -> PolicyDecision:
    """Validate a decoded response body against the wire schema."""
    if not isinstance(payload, dict):
        raise PolicyProtocolError("response is not a JSON object")
    chosen, stop = payload.get("chosen"), payload.get("stop", False)
    rationale = payload.get("rationale", "")
    if not isinstance(chosen, int) or isinstance(chosen, bool):
        raise PolicyProtocolError(f"'chosen' must be an integer, got {chosen!r}")
    if not isinstance(stop, bool):
        raise PolicyProtocolError(f"'stop' must be a boolean, got {stop!r}")
    if not isinstance(rationale, str):
        raise PolicyProtocolError("'rationale' must be a string")
    if not stop and not 0 <= chosen < n_candidates:
        raise PolicyProtocolError(f"chosen index {chosen} outside 0..{n_candidates - 1}")
    return PolicyDecision(chosen, stop, rationale)


# --------------------------------------------------------------------------
# oracle


REVISIT_RADIUS = 0.75
REVISIT_PENALTY = 3.0


def oracle_policy(request: PolicyRequest, goal, d_th: float | None = None,
                  distance=None, memory: bool = False) -> PolicyDecision:
    """Greedy descent of a distance-to-goal function over the move candidates.

    Stops within ``d_th`` of the goal (straight line). ``distance`` maps a
    point to its distance from the hidden goal and defaults to the straight
    line. Without ``memory`` the oracle backtracks whenever no move reduces
    the distance. With ``memory`` every history pose within
    ``REVISIT_RADIUS`` of a candidate target adds ``REVISIT_PENALTY`` metres
    to its score, and backtracking is kept for dead ends with no move.
    """
    d_th = request.d_th if d_th is None else d_th
    goal = np.asarray(goal, dtype=float)
    here = request.pose.position
    if float(np.linalg.norm(here - goal)) <= d_th:
        return PolicyDecision(request.stop_index, True, f"within {d_th} m of goal")
    if distance is None:
        distance = lambda p: float(np.linalg.norm(np.asarray(p) - goal))  # noqa: E731
    seen = np.zeros((0, 3))
    if memory and request.history:
        seen = np.array([h.pose.position for h in request.history], dtype=float)
        seen = seen[np.linalg.norm(seen - here, axis=1) > 1e-6]
    now = distance(here)
    best, best_s, best_d = None, math.inf, math.inf
    for c in request.candidates:
        if c.action.kind != "move":
            continue
        target = c.action.target(request.pose)
        after = distance(target)
        repeats = int((np.linalg.norm(seen - target, axis=1) <= REVISIT_RADIUS).sum())
        score = after + REVISIT_PENALTY * repeats
        if score < best_s - 1e-12:
            best, best_s, best_d = c.index, score, after
    back = next((c.index for c in request.candidates if c.action.kind == "backtrack"), None)
    stuck = best is None or not math.isfinite(best_s)
    if back is not None and (stuck or (not memory and best_d >= now)):
        return PolicyDecision(back, False, "no move gets closer")
    if stuck:
        return PolicyDecision(request.stop_index, True, "no move available")
    return PolicyDecision(best, False, f"goal distance {now:.2f} -> {best_d:.2f}")


def make_oracle(goal, d_th: float | None = None, distance=None, memory: bool = False):
    return lambda request: oracle_policy(request, goal, d_th, distance, memory)


# --------------------------------------------------------------------------
# colour matching


def color_tokens(instruction) -> list:
    return [t for t in instruction if t in world.PALETTE]


def color_fraction(img: world.Image, color: str, radius: float = COLOR_RADIUS) -> float:
    ref = np.asarray(world.PALETTE[color], dtype=float)
    d = np.linalg.norm(img.pixels.astype(float) - ref, axis=2)
    return float((d <= radius).mean())


def color_progress(instruction, views, threshold: float = COLOR_THRESHOLD) -> int:
    """How many colour tokens the past views have consumed, in order."""
    tokens = color_tokens(instruction)
    j = 0
    for v in views:
        while j < len(tokens) and color_fraction(v, tokens[j]) >= threshold:
            j += 1
    return j


def color_match_policy(request: PolicyRequest, anticipation: bool | None = None,
                       threshold: float = COLOR_THRESHOLD) -> PolicyDecision:
    """Head for the candidate whose (anticipated or observed) view shows the
    most of the active colour; stop once the last colour is consumed and in front.

    ``anticipation`` defaults to the request's own flag.
    """
    if anticipation is None:
        anticipation = request.anticipation
    moves = [c for c in request.candidates if c.action.kind == "move"]
    tokens = color_tokens(request.instruction)
    if not tokens:
        log.warning("instruction %s names no colour", request.instruction)
        if moves:
            return PolicyDecision(moves[0].index, False, "no colour token")
        return PolicyDecision(request.stop_index, True, "no colour token, no move")
    done = color_progress(request.instruction, [h.view for h in request.history], threshold)
    if done >= len(tokens) and color_fraction(request.front_view, tokens[-1]) >= threshold:
        return PolicyDecision(request.stop_index, True, f"{tokens[-1]} reached")
    target = tokens[min(done, len(tokens) - 1)]
    if not moves:
        back = next((c.index for c in request.candidates if c.action.kind == "backtrack"), None)
        if back is not None:
            return PolicyDecision(back, False, "dead end")
        return PolicyDecision(request.stop_index, True, "no move available")
    best, best_s = moves[0].index, -1.0
    for c in moves:
        view = c.anticipated if anticipation and c.anticipated is not None else c.observed
        s = color_fraction(view, target)
        if s > best_s:
            best, best_s = c.index, s
    return PolicyDecision(best, False, f"{target} score {best_s:.3f}")


# --------------------------------------------------------------------------
# HTTP


def http_policy_client(endpoint: str, request: PolicyRequest, timeout: float = HTTP_TIMEOUT,
                       retries: int = 1) -> PolicyDecision:
    """POST the request to ``endpoint``/decide and validate the reply."""
    url = endpoint.rstrip("/") + "/decide"
    body = request.to_json().encode("utf-8")
    last = None
    for _ in range(retries + 1):
        req = urllib.request.Request(url, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                raw = resp.read()
            break
        except urllib.error.HTTPError as exc:
            raise PolicyProtocolError(f"policy server answered HTTP {exc.code}") from exc
        except (socket.timeout, TimeoutError) as exc:
            last = PolicyTimeoutError(f"policy call to {url} timed out after {timeout} s")
            last.__cause__ = exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                last = PolicyTimeoutError(f"policy call to {url} timed out after {timeout} s")
            else:
                last = PolicyTransportError(f"policy endpoint {url} unreachable: {exc.reason}")
            last.__cause__ = exc
        except (ConnectionError, OSError) as exc:
            last = PolicyTransportError(f"policy endpoint {url} failed: {exc}")
            last.__cause__ = exc
    else:
        raise last
    try:
        payload = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PolicyProtocolError("response body is not valid JSON") from exc
    return parse_response(payload, len(request.candidates))


def make_http_policy(endpoint: str, timeout: float = HTTP_TIMEOUT):
    return lambda request: http_policy_client(endpoint, request, timeout)
