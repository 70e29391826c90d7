"""Word lists used to name synthetic tools and fields."""

from __future__ import annotations

import random
import re
import string

DOMAINS = (
    "account", "asset", "billing", "catalog", "claim", "contract", "customer", "device",
    "document", "fleet", "invoice", "ledger", "market", "network", "order", "patient",
    "payment", "policy", "portfolio", "product", "project", "quote", "region", "report",
    "route", "sensor", "shipment", "store", "supplier", "ticket", "vendor", "warehouse",
)

VERBS = (
    "analyze", "audit", "build", "classify", "compute", "convert", "enrich", "estimate",
    "evaluate", "filter", "forecast", "lookup", "match", "merge", "normalize", "rank",
    "reconcile", "resolve", "score", "summarize", "sync", "validate", "verify",
)

# Output field stems.
NOUNS = (
    "amount", "balance", "category", "code", "count", "currency", "date", "duration",
    "flag", "grade", "handle", "index", "label", "level", "limit", "locale", "margin",
    "metric", "owner", "price", "priority", "rate", "ratio", "reference", "region",
    "score", "segment", "size", "status", "tag", "tier", "token", "total", "unit",
    "value", "version", "volume", "weight", "window", "zone",
)

# Input field stems; kept separate from NOUNS so bound inputs rarely echo outputs.
PARAMS = (
    "anchor", "basis", "cursor", "driver", "entry", "factor", "focus", "hint", "input",
    "key", "lens", "marker", "origin", "pivot", "probe", "query", "seed", "selector",
    "signal", "source", "spec", "subject", "target", "term", "trigger", "use",
)

_VERB_PREFIXES = {"get", "fetch", "list", "search", "find", "retrieve", "query", "check", "calculate", "lookup"}


def suffix(rng: random.Random) -> str:
    return rng.choice(string.ascii_lowercase) + rng.choice(string.digits)


def ident(text: str) -> str:
    """Coerce arbitrary text to the identifier grammar."""
    out = re.sub(r"[^A-Za-z0-9_]+", "_", text).strip("_").lower()
    if not out:
        out = "field"
    if out[0].isdigit():
        out = "f_" + out
    return out


def stems(toolname: str) -> list[str]:
    words = [w for w in ident(toolname).split("_") if w]
    kept = [w for w in words if w not in _VERB_PREFIXES and not w.isdigit()]
    return kept or words or ["tool"]
