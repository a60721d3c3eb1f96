"""Configuration files, run records, ground-truth files and CSV reports.

Run records and ground-truth files are JSON Lines: a header object first,
then one object per line, keys sorted and reals written with 17 significant
digits so every 64-bit value reads back exactly.
"""
import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import pandas as pd
import yaml
from pydantic import ValidationError

from . import __version__
from .core import FeatureVec, Group, Track, ValueModel
from .errors import (
    CorruptLine,
    InvalidWindow,
    ParseError,
    RangeViolation,
    RecordIOError,
    SchemaVersionMismatch,
    UnknownKey,
)
from .policy import PolicyConfig, PolicyKind
from .scenario import GroundTruth, ScenarioConfig, TruthFrame, check_events
from .tracker import FrameResult, RunRecord, TrackerConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
PathLike = Union[str, Path]

# --- config files ---

SCENARIO_KEYS = {
    "targets": "num_targets",
    "frames": "num_frames",
    "seed": "seed",
    "width": "width",
    "height": "height",
    "radius_min": "radius_min",
    "radius_max": "radius_max",
    "speed_min": "speed_min",
    "speed_max": "speed_max",
    "presence": "presence",
    "feature_dim": "feature_dim",
    "noise": "noise",
    "events": "events",
    "distractors": "distractors",
}
TRACKER_KEYS = {
    "capacity": "capacity",
    "pointer_dim": "pointer_dim",
    "reid_threshold": "reid_threshold",
    "assoc_threshold": "assoc_threshold",
    "motion_gate": "motion_gate",
    "mode": "mode",
    "encoder_noise_seed": "encoder_noise_seed",
}
POLICY_KEYS = {"tau": "tau", "policy": "kind"}
REQUIRED_KEYS = ("targets", "frames", "seed")
NOISE_KEYS = ("sigma_q", "sigma_p", "sigma_pos")
KNOWN_KEYS = set(SCENARIO_KEYS) | set(TRACKER_KEYS) | set(POLICY_KEYS)


def _key_lines(node: yaml.Node) -> Dict[str, int]:
    lines = {}
    for key_node, value_node in node.value:
        lines[str(key_node.value)] = key_node.start_mark.line + 1
        if isinstance(value_node, yaml.MappingNode):
            for inner, _ in value_node.value:
                lines[f"{key_node.value}.{inner.value}"] = inner.start_mark.line + 1
    return lines


def _yaml_key(loc: Tuple[Any, ...], fields: Dict[str, str]) -> str:
    if not loc:
        return "config"
    reverse = {field: key for key, field in fields.items()}
    head = str(loc[0])
    if head == "policy" and len(loc) > 1:
        return {"tau": "tau", "kind": "policy"}.get(str(loc[1]), "policy")
    name = reverse.get(head, head)
    return ".".join([name] + [str(part) for part in loc[1:]])


def _build(model, values: Dict[str, Any], fields: Dict[str, str], lines: Dict[str, int]):
    try:
        return model(**values)
    except ValidationError as exc:
        error = exc.errors()[0]
        key = _yaml_key(tuple(error["loc"]), fields)
        line = lines.get(key, lines.get(key.split(".")[0]))
        if error["type"] == "extra_forbidden":
            raise UnknownKey(key, line) from exc
        raise RangeViolation(key, error["msg"], line) from exc


def parse_config(path: PathLike) -> Tuple[ScenarioConfig, TrackerConfig]:
    """Read a YAML config file into validated scenario and tracker configs."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(None, None, f"cannot read {path}: {exc}") from exc
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(mark.line + 1 if mark else None, None, str(exc)) from exc
    if not isinstance(node, yaml.MappingNode) or not isinstance(data, dict):
        raise ParseError(1, None, "config must be a mapping of keys to values")

    lines = _key_lines(node)
    for key in data:
        if key not in KNOWN_KEYS:
            raise UnknownKey(str(key), lines.get(str(key)))
    noise = data.get("noise") or {}
    if not isinstance(noise, dict):
        raise RangeViolation("noise", "must be a mapping", lines.get("noise"))
    for key in noise:
        if key not in NOISE_KEYS:
            raise UnknownKey(f"noise.{key}", lines.get(f"noise.{key}"))
    for key in REQUIRED_KEYS:
        if key not in data:
            raise ParseError(None, key, "missing required key")

    scenario_values = {field: data[key] for key, field in SCENARIO_KEYS.items() if key in data}
    for key in ("events", "distractors"):
        if scenario_values.get(key) is None:
            scenario_values.pop(key, None)
    if "noise" in scenario_values:
        scenario_values["noise"] = noise
    scenario = _build(ScenarioConfig, scenario_values, SCENARIO_KEYS, lines)
    try:
        check_events(scenario)
    except InvalidWindow as exc:
        raise RangeViolation("events", str(exc), lines.get("events")) from exc

    policy_values = {field: data[key] for key, field in POLICY_KEYS.items() if key in data}
    tracker_values = {field: data[key] for key, field in TRACKER_KEYS.items() if key in data}
    tracker_values.setdefault("encoder_noise_seed", scenario.seed)
    tracker_values["feature_dim"] = scenario.feature_dim
    policy = _build(PolicyConfig, policy_values, POLICY_KEYS, lines)
    tracker = _build(TrackerConfig, dict(tracker_values, policy=policy), TRACKER_KEYS, lines)
    logger.info({"event": "config_parsed", "path": str(path), "digest": config_digest(scenario, tracker)})
    return scenario, tracker


# --- canonical encoding ---

def _canonical_float(value: float) -> str:
    text = format(value, ".17g")
    if text in ("nan", "inf", "-inf"):
        raise ValueError(f"non-finite value {value!r} cannot be recorded")
    if not any(ch in text for ch in ".e"):
        text += ".0"
    return text


def canonical_json(value: Any) -> str:
    """Compact JSON with sorted keys and 17-significant-digit reals."""
    if isinstance(value, dict):
        items = sorted((str(key), item) for key, item in value.items())
        return "{" + ",".join(f"{json.dumps(key)}:{canonical_json(item)}" for key, item in items) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(canonical_json(item) for item in value) + "]"
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, float):
        return _canonical_float(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    raise TypeError(f"cannot encode {type(value).__name__}")


def config_digest(scenario: Optional[ScenarioConfig], tracker: TrackerConfig) -> str:
    payload = {
        "scenario": scenario.model_dump(mode="json") if scenario is not None else None,
        "tracker": tracker.model_dump(mode="json"),
    }
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


# --- run records ---

class RunManifest(ValueModel):
    digest: str
    scenario_seed: int
    policy: PolicyKind
    tool_version: str = __version__
    created_at: str
    schema_version: str = SCHEMA_VERSION


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def make_manifest(
    record: RunRecord, scenario: Optional[ScenarioConfig] = None, created_at: Optional[str] = None
) -> RunManifest:
    return RunManifest(
        digest=config_digest(scenario, record.config),
        scenario_seed=record.scenario_seed,
        policy=record.config.policy.kind,
        created_at=created_at or utc_now(),
    )


def _write_lines(path: PathLike, objects: List[Dict[str, Any]]) -> None:
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for obj in objects:
                handle.write(canonical_json(obj) + "\n")
    except OSError as exc:
        raise RecordIOError(path, str(exc)) from exc


def _read_lines(path: PathLike) -> Iterator[Tuple[int, Dict[str, Any]]]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().split("\n")
    except OSError as exc:
        raise RecordIOError(path, str(exc)) from exc
    except UnicodeDecodeError as exc:
        raise CorruptLine(1, f"not UTF-8: {exc}") from exc
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorruptLine(1, "missing header line")
    for number, line in enumerate(lines, start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptLine(number, str(exc)) from exc
        if not isinstance(obj, dict) or "kind" not in obj:
            raise CorruptLine(number, "expected an object with a 'kind' field")
        yield number, obj


def _check_schema(header: Dict[str, Any]) -> None:
    version = str(header.get("schema_version", ""))
    if version.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise SchemaVersionMismatch(header.get("schema_version"))


def _validate(model, number: int, payload: Dict[str, Any]):
    try:
        return model.model_validate(payload)
    except ValidationError as exc:
        raise CorruptLine(number, str(exc).splitlines()[0]) from exc


def write_run(
    record: RunRecord,
    path: PathLike,
    scenario: Optional[ScenarioConfig] = None,
    created_at: Optional[str] = None,
) -> RunManifest:
    manifest = make_manifest(record, scenario, created_at)
    header = dict(manifest.model_dump(mode="json"), kind="manifest", config=record.config.model_dump(mode="json"))
    objects = [header]
    objects += [dict(frame.model_dump(mode="json"), kind="frame") for frame in record.frames]
    objects += [dict(group.model_dump(mode="json"), kind="group") for group in record.groups]
    objects += [dict(track.model_dump(mode="json"), kind="track") for track in record.tracks]
    _write_lines(path, objects)
    logger.info({"event": "run_written", "path": str(path), "frames": len(record.frames)})
    return manifest


def _read_header(number: int, header: Dict[str, Any], kind: str) -> Dict[str, Any]:
    if header["kind"] != kind:
        raise CorruptLine(number, f"expected a {kind!r} header, found {header['kind']!r}")
    _check_schema(header)
    return {key: value for key, value in header.items() if key != "kind"}


def read_manifest(path: PathLike) -> RunManifest:
    number, header = next(_read_lines(path))
    fields = _read_header(number, header, "manifest")
    fields.pop("config", None)
    return _validate(RunManifest, number, fields)


def read_run(path: PathLike) -> RunRecord:
    lines = _read_lines(path)
    number, header = next(lines)
    fields = _read_header(number, header, "manifest")
    config = _validate(TrackerConfig, number, fields.get("config") or {})
    manifest = _validate(RunManifest, number, {key: value for key, value in fields.items() if key != "config"})
    frames, groups, tracks = [], [], []
    models = {"frame": (FrameResult, frames), "group": (Group, groups), "track": (Track, tracks)}
    for number, obj in lines:
        kind = obj.pop("kind")
        if kind not in models:
            raise CorruptLine(number, f"unexpected record kind {kind!r}")
        model, bucket = models[kind]
        bucket.append(_validate(model, number, obj))
    return RunRecord(
        config=config,
        scenario_seed=manifest.scenario_seed,
        frames=tuple(frames),
        tracks=tuple(tracks),
        groups=tuple(groups),
    )


# --- ground truth ---

def write_truth(truth: GroundTruth, path: PathLike) -> None:
    header = {
        "kind": "truth",
        "schema_version": SCHEMA_VERSION,
        "width": truth.width,
        "height": truth.height,
        "embeddings": [vec.model_dump(mode="json") for vec in truth.embeddings],
        "distractor_embeddings": [vec.model_dump(mode="json") for vec in truth.distractor_embeddings],
    }
    objects = [header] + [dict(frame.model_dump(mode="json"), kind="truth_frame") for frame in truth.frames]
    _write_lines(path, objects)


def read_truth(path: PathLike) -> GroundTruth:
    lines = _read_lines(path)
    number, header = next(lines)
    fields = _read_header(number, header, "truth")
    fields.pop("schema_version", None)
    frames = []
    for number, obj in lines:
        if obj.pop("kind") != "truth_frame":
            raise CorruptLine(number, "expected a 'truth_frame' record")
        frames.append(_validate(TruthFrame, number, obj))
    try:
        return GroundTruth(
            width=fields["width"],
            height=fields["height"],
            embeddings=tuple(FeatureVec.model_validate(vec) for vec in fields["embeddings"]),
            distractor_embeddings=tuple(
                FeatureVec.model_validate(vec) for vec in fields.get("distractor_embeddings", [])
            ),
            frames=tuple(frames),
        )
    except (KeyError, ValidationError) as exc:
        raise CorruptLine(1, f"malformed truth header: {exc}") from exc


# --- CSV reports ---

def with_schema_version(table: pd.DataFrame) -> pd.DataFrame:
    table = table.copy()
    table.insert(0, "schema_version", SCHEMA_VERSION)
    return table


def write_csv(table: pd.DataFrame, path: PathLike) -> None:
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with_schema_version(table).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as exc:
        raise RecordIOError(path, str(exc)) from exc
    logger.info({"event": "csv_written", "path": str(path), "rows": len(table)})


def read_csv(path: PathLike) -> pd.DataFrame:
    try:
        table = pd.read_csv(path, dtype={"schema_version": str}, float_precision="round_trip")
    except OSError as exc:
        raise RecordIOError(path, str(exc)) from exc
    if "schema_version" not in table.columns:
        raise SchemaVersionMismatch(None)
    for version in table["schema_version"].unique():
        _check_schema({"schema_version": version})
    return table.drop(columns=["schema_version"])
