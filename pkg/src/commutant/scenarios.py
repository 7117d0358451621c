"""Builtin scenarios and the JSON scenario-file format.

A scenario bundles named vector fields, their flows, smooth maps and group
actions that live on one coordinate chart with a declared domain box. The
builtins cover the running examples: the circle covering map, the
rotation/translation charts ``g`` and ``h`` on the (angle, position) chart,
their frame fields, the generating rotation/translation fields, commuting
translations and flat-torus flows.

Scenario files may only declare linear generators, references to builtin
fields and linear combinations of those; there is no expression language.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Dict, Mapping

import jsonschema
import numpy as np

from .errors import DimensionError, ScenarioError
from .geometry import Box, Flow, SmoothMap, VectorField, chart_flow, lincomb
from .group_actions import MatrixGroupAction, translation_action

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, eq=False)
class Scenario:
    id: str
    dim: int
    box: Box
    fields: Mapping[str, VectorField] = field(default_factory=dict)
    flows: Mapping[str, Flow] = field(default_factory=dict)
    maps: Mapping[str, SmoothMap] = field(default_factory=dict)
    actions: Mapping[str, MatrixGroupAction] = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        if self.box.dim != self.dim:
            raise DimensionError(f"scenario {self.id!r}: domain has {self.box.dim} axes, dim is {self.dim}")
        for name, X in self.fields.items():
            if X.dim != self.dim:
                raise DimensionError(f"scenario {self.id!r}: field {name!r} has dim {X.dim}")
        for name, a in self.actions.items():
            if a.dim != self.dim:
                raise DimensionError(f"scenario {self.id!r}: action {name!r} acts on R^{a.dim}")
        flows = dict(self.flows)
        for name, X in self.fields.items():
            if name not in flows:
                flows[name] = Flow.from_field(X, self.box, name=name)
        for attr, value in (("fields", self.fields), ("flows", flows),
                            ("maps", self.maps), ("actions", self.actions)):
            object.__setattr__(self, attr, MappingProxyType(dict(value)))

    def _get(self, kind: str, name: str):
        table = getattr(self, kind)
        try:
            return table[name]
        except KeyError:
            raise ScenarioError(
                f"scenario {self.id!r} has no {kind[:-1]} {name!r} "
                f"(available: {', '.join(table) or 'none'})") from None

    def field(self, name: str) -> VectorField:
        return self._get("fields", name)

    def flow(self, name: str) -> Flow:
        return self._get("flows", name)

    def map(self, name: str) -> SmoothMap:
        return self._get("maps", name)

    def action(self, name: str) -> MatrixGroupAction:
        return self._get("actions", name)

    @property
    def field_names(self) -> list:
        return list(self.fields)


# --------------------------------------------------------------------------
# builtin fields and maps
# --------------------------------------------------------------------------


def _rot2(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


def _const(v):
    return VectorField.constant(v)


def _translation_flow(v, box, name):
    v = np.asarray(v, dtype=float)
    return Flow.closed_form(lambda t, p: p + t * v, v.size, box, name)


SE2_BOX = Box.from_pairs([[-math.pi / 2, math.pi / 2], [-1.0, 1.0], [-1.0, 1.0]])


def _g(x):
    return np.concatenate([[x[0]], _rot2(x[0]) @ x[1:3]])


def _g_inv(y):
    return np.concatenate([[y[0]], _rot2(-y[0]) @ y[1:3]])


def _g_jac(x):
    c, s = math.cos(x[0]), math.sin(x[0])
    J = np.zeros((3, 3))
    J[0, 0] = 1.0
    J[1, 0] = -s * x[1] - c * x[2]
    J[2, 0] = c * x[1] - s * x[2]
    J[1:, 1:] = _rot2(x[0])
    return J


# rotation about the grid centre on the (angle, x, y) chart
def _rotation_gen(p):
    return np.array([1.0, -p[2], p[1]])


def _rotation_gen_jac(p):
    return np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def _rotation_gen_flow(t, p):
    return np.concatenate([[p[0] + t], _rot2(t) @ p[1:3]])


def _heading_x(p):
    return np.array([0.0, math.cos(p[0]), math.sin(p[0])])


def _heading_x_jac(p):
    return np.array([[0.0, 0, 0], [-math.sin(p[0]), 0, 0], [math.cos(p[0]), 0, 0]])


def _heading_y(p):
    return np.array([0.0, -math.sin(p[0]), math.cos(p[0])])


def _heading_y_jac(p):
    return np.array([[0.0, 0, 0], [-math.cos(p[0]), 0, 0], [-math.sin(p[0]), 0, 0]])


# literal frame displays (source coordinates used in the target directions)
def _literal_x1(p):
    c, s = math.cos(p[0]), math.sin(p[0])
    return np.array([1.0, -p[1] * s - p[2] * c, p[1] * c - p[2] * s])


def _literal_x1_jac(p):
    c, s = math.cos(p[0]), math.sin(p[0])
    return np.array([
        [0.0, 0.0, 0.0],
        [-p[1] * c + p[2] * s, -s, -c],
        [-p[1] * s - p[2] * c, c, -s],
    ])


def _circle(t):
    a = TWO_PI * t[0]
    return np.array([math.cos(a), math.sin(a)])


def _circle_jac(t):
    a = TWO_PI * t[0]
    return np.array([[-TWO_PI * math.sin(a)], [TWO_PI * math.cos(a)]])


def _circle_inv(y):
    return np.array([math.atan2(y[1], y[0]) / TWO_PI])


def _shifted(f: Callable, shift) -> Callable:
    shift = np.asarray(shift, dtype=float)
    return lambda x: f(np.asarray(x) + shift)


def _tag(scenario_id: str, kind: str, name: str) -> dict:
    key = "field" if kind == "fields" else "map"
    return {"kind": "builtin_ref", "payload": {"scenario": scenario_id, key: name}}


def _finish(sid, dim, box, fields=(), flows=(), maps=(), actions=(), description=""):
    fields = {n: X.renamed(n, _tag(sid, "fields", n)) if X.kind != "linear" else X.renamed(n)
              for n, X in dict(fields).items()}
    maps = {n: SmoothMap(m.func, m.in_dim, m.out_dim, m.jac, m.inverse, m.box, n,
                         _tag(sid, "maps", n))
            for n, m in dict(maps).items()}
    actions = {n: MatrixGroupAction(a.basis, a.homogeneous, n, a.blocks)
               for n, a in dict(actions).items()}
    return Scenario(sid, dim, box, fields, dict(flows), maps, actions, description)


def _circle_cover():
    box = Box.from_pairs([[-1.0, 3.0]])
    r_box = Box.from_pairs([[-0.45, 0.45]])
    s_box = Box.from_pairs([[-0.45, 0.35]])
    pi = SmoothMap(_circle, 1, 2, _circle_jac, box=box)
    restricted = SmoothMap(_circle, 1, 2, _circle_jac, _circle_inv, r_box)
    shifted = SmoothMap(_shifted(_circle, [0.1]), 1, 2, _shifted(_circle_jac, [0.1]),
                        lambda y: _circle_inv(y) - 0.1, s_box)
    return _finish(
        "circle_cover", 1, box,
        fields={"dt": _const([1.0])},
        flows={"dt": _translation_flow([1.0], box, "dt")},
        maps={"pi": pi, "pi_restricted": restricted, "pi_shifted": shifted},
        description="covering map t -> (cos 2 pi t, sin 2 pi t) of the circle and restrictions to "
                    "intervals on which it is a chart",
    )


def _se2_chart_g():
    g = SmoothMap(_g, 3, 3, _g_jac, _g_inv, SE2_BOX)
    delta = np.array([0.1, 0.05, -0.05])
    shifted = SmoothMap(_shifted(_g, delta), 3, 3, _shifted(_g_jac, delta),
                        lambda y: _g_inv(y) - delta, None)
    fields = {
        "frame_0": VectorField(_rotation_gen, 3, _rotation_gen_jac, kind="frame"),
        "frame_1": VectorField(_heading_x, 3, _heading_x_jac, kind="frame"),
        "frame_2": VectorField(_heading_y, 3, _heading_y_jac, kind="frame"),
    }
    flows = {f"frame_{i}": chart_flow(g, i, SE2_BOX, f"frame_{i}") for i in range(3)}
    return _finish(
        "se2_chart_g", 3, SE2_BOX, fields, flows,
        maps={"g": g, "g_shifted": shifted},
        description="g(x) = (x1, R(x1)[x2, x3]): translate then rotate about the grid centre; "
                    "fields are the pushed-forward coordinate frames",
    )


def _se2_chart_h():
    ident = np.eye(3)
    h = SmoothMap(lambda x: np.array(x, dtype=float), 3, 3, lambda x: ident.copy(),
                  lambda y: np.array(y, dtype=float), SE2_BOX)
    fields = {f"frame_{i}": _const(ident[i]) for i in range(3)}
    flows = {f"frame_{i}": _translation_flow(ident[i], SE2_BOX, f"frame_{i}") for i in range(3)}
    return _finish(
        "se2_chart_h", 3, SE2_BOX, fields, flows, maps={"h": h},
        description="h = T(x2, x3) R(x1) p0: rotate about the subject, then translate; in "
                    "(angle, position) coordinates this is the identity chart",
    )


def _se2_frame_fields():
    fields = {
        "X1": VectorField(_literal_x1, 3, _literal_x1_jac),
        "X2": VectorField(_heading_x, 3, _heading_x_jac),
        "X3": VectorField(_heading_y, 3, _heading_y_jac),
    }
    return _finish(
        "se2_frame_fields", 3, SE2_BOX, fields,
        description="the frame fields of g written literally as fields on R^3 (flows by RK4)",
    )


def _se2_generators():
    box = SE2_BOX
    fields = {
        "rotation": VectorField(_rotation_gen, 3, _rotation_gen_jac),
        "translation_x": _const([0.0, 1.0, 0.0]),
        "translation_y": _const([0.0, 0.0, 1.0]),
    }
    flows = {
        "rotation": Flow.closed_form(_rotation_gen_flow, 3, box, "rotation"),
        "translation_x": _translation_flow([0.0, 1.0, 0.0], box, "translation_x"),
        "translation_y": _translation_flow([0.0, 0.0, 1.0], box, "translation_y"),
    }
    return _finish(
        "se2_generators", 3, box, fields, flows,
        description="grid-centred rotation and horizontal/vertical translation acting on "
                    "(angle, x, y)",
    )


def _plane_translations():
    box = Box.cube(2)
    return _finish(
        "plane_translations", 2, box,
        fields={"translation_x": _const([1.0, 0.0]), "translation_y": _const([0.0, 1.0])},
        flows={"translation_x": _translation_flow([1.0, 0.0], box, "translation_x"),
               "translation_y": _translation_flow([0.0, 1.0], box, "translation_y")},
        maps={"identity": SmoothMap.linear(np.eye(2), box=box)},
        actions={"translation_x": translation_action([1.0, 0.0]),
                 "translation_y": translation_action([0.0, 1.0])},
        description="two commuting translations of the plane",
    )


def _plane_euclidean():
    box = Box.cube(2, 2.0)
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    Jh = np.zeros((3, 3))
    Jh[:2, :2] = J
    tx, ty = translation_action([1.0, 0.0]), translation_action([0.0, 1.0])
    return _finish(
        "plane_euclidean", 2, box,
        fields={"rotation": VectorField.linear(J), "translation_x": _const([1.0, 0.0]),
                "translation_y": _const([0.0, 1.0])},
        flows={"rotation": Flow.closed_form(lambda t, p: _rot2(t) @ p, 2, box, "rotation"),
               "translation_x": _translation_flow([1.0, 0.0], box, "translation_x"),
               "translation_y": _translation_flow([0.0, 1.0], box, "translation_y")},
        actions={"rotation": MatrixGroupAction((Jh,), homogeneous=True),
                 "translation_x": tx, "translation_y": ty,
                 "se2": MatrixGroupAction((Jh, tx.basis[0], ty.basis[0]), homogeneous=True)},
        description="rotation about the origin and translations of the plane (non-commuting)",
    )


def _torus_flows():
    box = Box.from_pairs([[0.0, TWO_PI], [0.0, TWO_PI]])
    rates = {"angle_1": np.array([1.0, 0.0]), "angle_2": np.array([0.0, 1.0])}

    def wrap(v, name):
        return Flow.closed_form(lambda t, p: np.mod(p + t * v, TWO_PI), 2, box, name)

    return _finish(
        "torus_flows", 2, box,
        fields={n: _const(v) for n, v in rates.items()},
        flows={n: wrap(v, n) for n, v in rates.items()},
        actions={n: translation_action(v) for n, v in rates.items()},
        description="constant-rate angle flows on the flat torus (an abelian instance)",
    )


def _rank_examples():
    box = Box.cube(3)
    b2 = Box.cube(2)
    return _finish(
        "rank_examples", 3, box,
        maps={
            "submersion": SmoothMap.linear([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]], box=box),
            "flat": SmoothMap.linear([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 0]], box=box),
            "fold": SmoothMap(lambda x: np.array([x[0] ** 2, x[1]]), 2, 2,
                              lambda x: np.array([[2.0 * x[0], 0.0], [0.0, 1.0]]), box=b2),
            "constant": SmoothMap(lambda x: np.array([1.0, 2.0]), 2, 2,
                                  lambda x: np.zeros((2, 2)), box=b2),
            "identity": SmoothMap.linear(np.eye(2), box=b2),
        },
        description="maps of known rank for distillation",
    )


_BUILDERS: Dict[str, Callable[[], Scenario]] = {
    "circle_cover": _circle_cover,
    "se2_chart_g": _se2_chart_g,
    "se2_chart_h": _se2_chart_h,
    "se2_frame_fields": _se2_frame_fields,
    "se2_generators": _se2_generators,
    "plane_translations": _plane_translations,
    "plane_euclidean": _plane_euclidean,
    "torus_flows": _torus_flows,
    "rank_examples": _rank_examples,
}
_CACHE: Dict[str, Scenario] = {}

BUILTIN_IDS = tuple(_BUILDERS)


def load_builtin(scenario_id: str) -> Scenario:
    if scenario_id not in _BUILDERS:
        raise ScenarioError(f"unknown builtin scenario {scenario_id!r} "
                            f"(known: {', '.join(BUILTIN_IDS)})")
    if scenario_id not in _CACHE:
        _CACHE[scenario_id] = _BUILDERS[scenario_id]()
    return _CACHE[scenario_id]


# --------------------------------------------------------------------------
# scenario files
# --------------------------------------------------------------------------

_MATRIX = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["id", "dim", "domain", "fields"],
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "dim": {"type": "integer", "minimum": 1},
        "description": {"type": "string"},
        "domain": {"type": "array", "minItems": 1,
                   "items": {"type": "array", "minItems": 2, "maxItems": 2,
                             "items": {"type": "number"}}},
        "fields": {"type": "array", "items": {"$ref": "#/$defs/field"}},
        "maps": {"type": "array", "items": {"$ref": "#/$defs/map"}},
        "actions": {"type": "array", "items": {"$ref": "#/$defs/action"}},
    },
    "$defs": {
        "field": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name", "kind", "payload"],
            "properties": {
                "name": {"type": "string", "minLength": 1},
                "kind": {"enum": ["matrix", "builtin_ref", "lincomb"]},
                "payload": {},
            },
            "allOf": [
                {"if": {"properties": {"kind": {"const": "matrix"}}},
                 "then": {"properties": {"payload": _MATRIX}}},
                {"if": {"properties": {"kind": {"const": "builtin_ref"}}},
                 "then": {"properties": {"payload": {
                     "type": "object", "additionalProperties": False,
                     "required": ["scenario", "field"],
                     "properties": {"scenario": {"type": "string"}, "field": {"type": "string"}}}}}},
                {"if": {"properties": {"kind": {"const": "lincomb"}}},
                 "then": {"properties": {"payload": {
                     "type": "object", "additionalProperties": False, "required": ["terms"],
                     "properties": {"terms": {
                         "type": "array", "minItems": 1,
                         "items": {"type": "object", "additionalProperties": False,
                                   "required": ["coef", "field"],
                                   "properties": {"coef": {"type": "number"},
                                                  "field": {"type": "string"},
                                                  "scenario": {"type": "string"}}}}}}}}},
            ],
        },
        "map": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name", "kind", "payload"],
            "properties": {
                "name": {"type": "string", "minLength": 1},
                "kind": {"enum": ["linear", "builtin_ref"]},
                "payload": {},
            },
            "allOf": [
                {"if": {"properties": {"kind": {"const": "linear"}}},
                 "then": {"properties": {"payload": _MATRIX}}},
                {"if": {"properties": {"kind": {"const": "builtin_ref"}}},
                 "then": {"properties": {"payload": {
                     "type": "object", "additionalProperties": False,
                     "required": ["scenario", "map"],
                     "properties": {"scenario": {"type": "string"}, "map": {"type": "string"}}}}}},
            ],
        },
        "action": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name", "algebra_basis"],
            "properties": {
                "name": {"type": "string", "minLength": 1},
                "homogeneous": {"type": "boolean"},
                "algebra_basis": {"type": "array", "minItems": 1, "items": _MATRIX},
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)


def _path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def _no_duplicate_keys(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise ScenarioError(f"duplicate key {k!r} in scenario file")
        seen[k] = v
    return seen


def validate_scenario_dict(doc) -> None:
    """Raise :class:`ScenarioError` listing every schema violation with its JSON path."""
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = [f"  at {_path(e)}: {e.message}" for e in errors]
        raise ScenarioError("scenario file does not match the schema:\n" + "\n".join(lines))
    for table in ("fields", "maps", "actions"):
        names = [item["name"] for item in doc.get(table, [])]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise ScenarioError(f"at {table}: duplicated name(s) {', '.join(dup)}")


def _builtin_field(sid: str, name: str):
    sc = load_builtin(sid)
    return sc.field(name), sc.flow(name)


def _matrix(payload, where: str, shape=None) -> np.ndarray:
    rows = {len(r) for r in payload}
    if len(rows) != 1:
        raise ScenarioError(f"at {where}: ragged matrix")
    M = np.array(payload, dtype=float)
    if shape is not None and M.shape != shape:
        raise DimensionError(f"at {where}: expected a {shape[0]}x{shape[1]} matrix, got {M.shape}")
    return M


def scenario_from_dict(doc) -> Scenario:
    """Build a scenario from a parsed (not yet validated) scenario document."""
    validate_scenario_dict(doc)
    sid, dim = doc["id"], doc["dim"]
    if len(doc["domain"]) != dim:
        raise DimensionError(f"at domain: {len(doc['domain'])} intervals for dim {dim}")
    try:
        box = Box.from_pairs(doc["domain"])
    except ValueError as exc:
        raise ScenarioError(f"at domain: {exc}") from None
    fields, flows = {}, {}
    for n, item in enumerate(doc["fields"]):
        name, kind, payload = item["name"], item["kind"], item["payload"]
        where = f"fields/{n}/payload"
        if kind == "matrix":
            X = VectorField.linear(_matrix(payload, where, (dim, dim)), name)
        elif kind == "builtin_ref":
            X, flow = _builtin_field(payload["scenario"], payload["field"])
            if flow.kind == "closed":
                flows[name] = Flow.closed_form(flow.func, flow.dim, box, name, X)
            X = X.renamed(name, {"kind": kind, "payload": dict(payload)})
        else:
            parts, coefs = [], []
            for t, term in enumerate(payload["terms"]):
                if "scenario" in term:
                    Y = _builtin_field(term["scenario"], term["field"])[0]
                elif term["field"] in fields:
                    Y = fields[term["field"]]
                else:
                    raise ScenarioError(f"at {where}/terms/{t}: unknown field {term['field']!r} "
                                        "(reference earlier fields by name)")
                parts.append(Y)
                coefs.append(term["coef"])
            X = lincomb(coefs, parts, name).renamed(name, {"kind": kind, "payload": payload})
        if X.dim != dim:
            raise DimensionError(f"at fields/{n}: field {name!r} has dim {X.dim}, scenario dim is {dim}")
        fields[name] = X
    maps = {}
    for n, item in enumerate(doc.get("maps", [])):
        name, kind, payload = item["name"], item["kind"], item["payload"]
        if kind == "linear":
            f = SmoothMap.linear(_matrix(payload, f"maps/{n}/payload"), name)
        else:
            f = load_builtin(payload["scenario"]).map(payload["map"])
            f = SmoothMap(f.func, f.in_dim, f.out_dim, f.jac, f.inverse, f.box, name,
                          {"kind": kind, "payload": dict(payload)})
        maps[name] = f
    actions = {}
    for n, item in enumerate(doc.get("actions", [])):
        hom = bool(item.get("homogeneous", False))
        size = dim + 1 if hom else dim
        basis = [_matrix(E, f"actions/{n}/algebra_basis/{b}", (size, size))
                 for b, E in enumerate(item["algebra_basis"])]
        actions[item["name"]] = MatrixGroupAction(tuple(basis), hom, item["name"])
    return Scenario(sid, dim, box, fields, flows, maps, actions, doc.get("description", ""))


def load_scenario_file(path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text, object_pairs_hook=_no_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc)


def load_any(ref: str) -> Scenario:
    """A builtin id, or a path to a scenario file."""
    if ref in _BUILDERS:
        return load_builtin(ref)
    if ref.endswith(".json"):
        return load_scenario_file(ref)
    return load_builtin(ref)


def scenario_to_dict(sc: Scenario) -> dict:
    """Serialize a scenario to the file format (fields by matrix or builtin reference)."""
    def field_entry(name, X):
        src = X.source or {}
        if X.kind == "linear" and X.matrix is not None:
            return {"name": name, "kind": "matrix", "payload": X.matrix.tolist()}
        if src.get("kind") in ("builtin_ref", "lincomb"):
            return {"name": name, "kind": src["kind"], "payload": src["payload"]}
        raise ScenarioError(f"field {name!r} has no serializable declaration")

    def map_entry(name, f):
        src = f.source or {}
        if src.get("kind") in ("linear", "builtin_ref"):
            return {"name": name, "kind": src["kind"], "payload": src["payload"]}
        raise ScenarioError(f"map {name!r} has no serializable declaration")

    doc = {
        "id": sc.id,
        "dim": sc.dim,
        "domain": sc.box.to_pairs(),
        "fields": [field_entry(n, X) for n, X in sc.fields.items()],
    }
    if sc.description:
        doc["description"] = sc.description
    if sc.maps:
        doc["maps"] = [map_entry(n, f) for n, f in sc.maps.items()]
    if sc.actions:
        doc["actions"] = [{"name": n, "homogeneous": a.homogeneous,
                           "algebra_basis": [E.tolist() for E in a.basis]}
                          for n, a in sc.actions.items()]
    return doc
