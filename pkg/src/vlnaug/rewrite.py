"""Prompt construction and response parsing for the two rewriting steps.

Scene rewriting asks for an object-enriched version of a caption plus the
list of objects it added; instruction rewriting contrasts the grounded
landmarks of the original trajectory with descriptions of the new views.
Both demand labeled output fields so responses parse deterministically.

Templates live as versioned text files (``templates/scene_rewrite.txt``,
``templates/instr_rewrite.txt``); alternate paths may be configured.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import ParseError, ValidationError
from .providers import ChatRequest

ADDED_OBJECTS_LABEL = "Added objects:"
REWRITTEN_DESC_LABEL = "Rewritten description:"
REWRITTEN_INSTR_LABEL = "Rewritten instruction:"

SCENE_DIRECTIVE = (
    "Generate rewritten descriptions by adding the possible objects that may "
    "exist in the scene for the given scene description"
)
INSTRUCTION_DIRECTIVE = (
    "Rewrite the original instruction by replacing the object (scene) in the "
    "original instruction with the one in the new observation"
)
ACTIONAL_SYNONYM_DIRECTIVE = "actional descriptions to their synonyms"

SCENE_SYSTEM_TEXT = "You enrich indoor scene descriptions for image generation."
INSTR_SYSTEM_TEXT = "You rewrite navigation instructions to match new observations."

DEFAULT_MAX_INSTRUCTION_WORDS = 120

GRAMMAR_REMINDER = (
    "Reminder: answer using the exact labeled fields requested above, "
    "with each label at the start of its line."
)


@lru_cache(maxsize=None)
def _template_text(name: str, override: str | Path | None = None) -> str:
    if override is not None:
        return Path(override).read_text(encoding="utf-8")
    return resources.files("vlnaug.templates").joinpath(name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class ScenePromptTemplate:
    """Object-enrichment prompt: task definition, one worked example, and
    the two-field output grammar."""

    text: str

    def __post_init__(self) -> None:
        if SCENE_DIRECTIVE not in self.text:
            raise ValidationError("scene template lost its add-objects directive")
        if "{scene_description}" not in self.text:
            raise ValidationError("scene template needs a {scene_description} slot")
        # the embedded example must satisfy the parser
        objects, desc = parse_scene_response(self.text)
        if not objects or not desc:
            raise ValidationError("scene template example does not parse")

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ScenePromptTemplate":
        return cls(_template_text("scene_rewrite.txt", path))

    @property
    def task_definition(self) -> str:
        return self.text.split("\n", 1)[0]

    @property
    def in_context_example(self) -> tuple[str, list[str], str]:
        """(input description, added objects, rewritten description)."""
        lines = self.text.splitlines()
        input_desc = ""
        for ln in lines:
            if ln.startswith("Scene description:") and "{scene_description}" not in ln:
                input_desc = ln.split(":", 1)[1].strip()
                break
        objects, desc = parse_scene_response(self.text)
        return input_desc, objects, desc


@dataclass(frozen=True)
class InstructionPromptTemplate:
    """Observation-contrast prompt with per-step landmark/observation lines."""

    text: str

    def __post_init__(self) -> None:
        if INSTRUCTION_DIRECTIVE not in self.text:
            raise ValidationError("instruction template lost its task directive")
        if ACTIONAL_SYNONYM_DIRECTIVE not in self.text:
            raise ValidationError("instruction template lost the actional-synonym directive")
        for slot in ("{step_lines}", "{original_instruction}"):
            if slot not in self.text:
                raise ValidationError(f"instruction template needs a {slot} slot")
        if not parse_instruction_response(self.text):
            raise ValidationError("instruction template example does not parse")

    @classmethod
    def load(cls, path: str | Path | None = None) -> "InstructionPromptTemplate":
        return cls(_template_text("instr_rewrite.txt", path))

    @property
    def task_definition(self) -> str:
        return self.text.split("\n", 1)[0]

    @property
    def in_context_example(self) -> tuple[list[str], list[str], str, str]:
        """(landmarks, new descriptions, original, rewritten)."""
        landmarks, descs = [], []
        original = ""
        for ln in self.text.splitlines():
            m = re.match(r"Step \d+ — original landmark: (.+?) \| new observation: (.+)", ln)
            if m:
                landmarks.append(m.group(1))
                descs.append(m.group(2))
            elif ln.startswith("Original instruction:") and "{original_instruction}" not in ln:
                original = ln.split(":", 1)[1].strip()
        return landmarks, descs, original, parse_instruction_response(self.text)


def build_scene_prompt(
    c_t: str,
    template: ScenePromptTemplate | None = None,
    seed: int | None = None,
    temperature: float | None = None,
) -> ChatRequest:
    """Chat request asking for an object-enriched rewrite of one description."""
    if not c_t.strip():
        raise ValidationError("scene description must be non-empty")
    template = template or ScenePromptTemplate.load()
    user = template.text.replace("{scene_description}", c_t.strip())
    kwargs = {} if temperature is None else {"temperature": temperature}
    return ChatRequest(system_text=SCENE_SYSTEM_TEXT, user_text=user, seed=seed, **kwargs)


def parse_scene_response(text: str) -> tuple[list[str], str]:
    """Extract (added objects, rewritten description) from a labeled reply.

    Objects are comma-split, trimmed, and de-duplicated preserving order
    (case-insensitive); the description is everything after its label up
    to the next blank line or label.
    """
    objects_raw = _labeled_value(text, ADDED_OBJECTS_LABEL)
    desc = _labeled_value(text, REWRITTEN_DESC_LABEL)
    if objects_raw is None:
        raise ParseError(f"response missing {ADDED_OBJECTS_LABEL!r}")
    if desc is None or not desc.strip():
        raise ParseError(f"response missing {REWRITTEN_DESC_LABEL!r}")
    seen = set()
    objects = []
    for part in objects_raw.split(","):
        name = part.strip()
        key = name.casefold()
        if name and key not in seen:
            seen.add(key)
            objects.append(name)
    if not objects:
        raise ParseError("added-objects list is empty")
    return objects, desc.strip()


def build_instruction_prompt(
    landmarks: list[str],
    new_descs: list[str],
    original: str,
    template: InstructionPromptTemplate | None = None,
    seed: int | None = None,
    temperature: float | None = None,
) -> ChatRequest:
    """Chat request contrasting per-step landmarks with new observations."""
    if len(landmarks) != len(new_descs):
        raise ValidationError(
            f"landmarks ({len(landmarks)}) and new descriptions ({len(new_descs)}) "
            "must have equal length"
        )
    if not landmarks:
        raise ValidationError("need at least one step")
    if not original.strip():
        raise ValidationError("original instruction must be non-empty")
    template = template or InstructionPromptTemplate.load()
    step_lines = "\n".join(
        f"Step {t + 1} — original landmark: {u} | new observation: {c}"
        for t, (u, c) in enumerate(zip(landmarks, new_descs))
    )
    user = template.text.replace("{step_lines}", step_lines).replace(
        "{original_instruction}", original.strip()
    )
    kwargs = {} if temperature is None else {"temperature": temperature}
    return ChatRequest(system_text=INSTR_SYSTEM_TEXT, user_text=user, seed=seed, **kwargs)


def parse_instruction_response(
    text: str, max_words: int = DEFAULT_MAX_INSTRUCTION_WORDS
) -> str:
    """Extract the rewritten instruction; enforce the word cap."""
    value = _labeled_value(text, REWRITTEN_INSTR_LABEL)
    if value is None or not value.strip():
        raise ParseError(f"response missing {REWRITTEN_INSTR_LABEL!r}")
    value = value.strip()
    words = len(value.split())
    if words > max_words:
        raise ParseError(f"rewritten instruction has {words} words (cap {max_words})")
    return value


def with_grammar_reminder(req: ChatRequest) -> ChatRequest:
    """Re-query variant of a prompt after a parse failure."""
    return ChatRequest(
        system_text=req.system_text,
        user_text=req.user_text + "\n\n" + GRAMMAR_REMINDER,
        temperature=req.temperature,
        presence_penalty=req.presence_penalty,
        max_tokens=req.max_tokens,
        seed=req.seed,
    )


def _labeled_value(text: str, label: str) -> str | None:
    """Value of the LAST occurrence of a labeled field, joined across
    following lines until the next label or blank line."""
    lines = text.splitlines()
    start = None
    for i, ln in enumerate(lines):
        if ln.strip().startswith(label):
            start = i
    if start is None:
        return None
    first = lines[start].strip()[len(label):].strip()
    collected = [first] if first else []
    for ln in lines[start + 1 :]:
        stripped = ln.strip()
        if not stripped or _looks_like_label(stripped):
            break
        collected.append(stripped)
    return " ".join(collected) if collected else ""


_LABEL_RE = re.compile(r"^[A-Z][A-Za-z ]{2,24}:")


def _looks_like_label(line: str) -> bool:
    return bool(_LABEL_RE.match(line))
