"""Token-level edit operations shared by the tokenizer, mutators and decoder."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

ACTIONS = ("replace", "insert_before", "delete", "noop")
BUG_TYPES = ("var_misuse", "wrong_binop", "wrong_assign_op", "wrong_unary", "wrong_literal")
UNARY_PAYLOADS = ("not", "-")

# repair markers in the external vocabulary for unary edits
INSERT_NOT = "<insert:not>"
INSERT_NEG = "<insert:->"
DELETE = "<delete>"


@dataclass(frozen=True, order=True)
class EditOp:
    action: str
    loc: Optional[int] = None
    payload: Optional[str] = None
    bug_type: Optional[str] = None

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown edit action {self.action!r}")
        if self.action == "noop":
            if self.loc is not None or self.payload is not None:
                raise ValueError("noop carries no location or payload")
        elif self.loc is None:
            raise ValueError(f"{self.action} requires a location")
        if self.action == "delete" and self.payload is not None:
            raise ValueError("delete carries no payload")
        if self.action == "insert_before" and self.payload not in UNARY_PAYLOADS:
            raise ValueError(f"insert_before payload must be one of {UNARY_PAYLOADS}")
        if self.action == "replace" and not self.payload:
            raise ValueError("replace requires a payload")

    @classmethod
    def noop(cls) -> "EditOp":
        return cls("noop")

    @property
    def is_noop(self) -> bool:
        return self.action == "noop"

    def key(self) -> tuple:
        """Identity of the edit ignoring its bug type label."""
        return (self.action, self.loc, self.payload)

    def repair_text(self) -> Optional[str]:
        """The repair symbol this edit corresponds to at its location."""
        if self.action == "replace":
            return self.payload
        if self.action == "insert_before":
            return INSERT_NOT if self.payload == "not" else INSERT_NEG
        if self.action == "delete":
            return DELETE
        return None

    def to_record(self) -> dict:
        return {"action": self.action, "loc": self.loc, "payload": self.payload,
                "bug_type": self.bug_type}


def edit_from_repair(loc: int, repair: str, bug_type: Optional[str] = None) -> EditOp:
    """Map a (location, repair symbol) pair back onto an edit."""
    if repair == DELETE:
        return EditOp("delete", loc, None, bug_type)
    if repair == INSERT_NOT:
        return EditOp("insert_before", loc, "not", bug_type)
    if repair == INSERT_NEG:
        return EditOp("insert_before", loc, "-", bug_type)
    return EditOp("replace", loc, repair, bug_type)


ORIGINS = ("mutant", "real-fix", "correct")


def example_id(code: str, edit: EditOp) -> str:
    h = hashlib.sha1()
    h.update(code.encode("utf-8"))
    h.update(json.dumps(list(edit.key())).encode("utf-8"))
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class BugExample:
    """One labelled function: buggy code plus the edit that fixes it."""
    code: str
    truth_edit: EditOp
    origin: str
    id: str = ""

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        if (self.origin == "correct") != self.truth_edit.is_noop:
            raise ValueError("origin 'correct' must come with a noop edit and vice versa")
        if not self.id:
            object.__setattr__(self, "id", example_id(self.code, self.truth_edit))

    @property
    def bug_type(self) -> Optional[str]:
        return self.truth_edit.bug_type

    @property
    def is_buggy(self) -> bool:
        return not self.truth_edit.is_noop

    @classmethod
    def correct(cls, code: str) -> "BugExample":
        return cls(code, EditOp.noop(), "correct")

    def to_record(self) -> dict:
        rec = {"id": self.id, "code": self.code}
        rec.update(self.truth_edit.to_record())
        rec["origin"] = self.origin
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "BugExample":
        edit = EditOp(rec["action"], rec["loc"], rec["payload"], rec["bug_type"])
        ex = cls(rec["code"], edit, rec["origin"])
        if rec.get("id") not in (None, ex.id):
            raise ValueError(f"record id {rec['id']!r} does not match its content")
        return ex
