"""Activity label -> natural-language caption rephrasing."""

_GERUNDS = {
    "cut": "cutting", "put": "putting", "get": "getting", "set": "setting",
    "stir": "stirring", "sit": "sitting", "run": "running", "spread": "spreading",
    "clean": "cleaning", "open": "opening", "peel": "peeling", "pour": "pouring",
}
_VOWELS = "aeiou"


def gerund(verb: str) -> str:
    if verb in _GERUNDS:
        return _GERUNDS[verb]
    if verb.endswith("ie"):
        return verb[:-2] + "ying"
    if verb.endswith("e") and not verb.endswith("ee"):
        return verb[:-1] + "ing"
    return verb + "ing"


def activity_phrase(label: str) -> str:
    """``"slice_cucumber"`` -> ``"slicing a cucumber"``."""
    words = [w for w in label.strip().lower().replace("-", "_").split("_") if w]
    if not words:
        raise ValueError("empty activity label")
    verb, obj = gerund(words[0]), words[1:]
    if not obj:
        return verb
    if obj[-1].endswith("s") and not obj[-1].endswith("ss"):
        det = "the"
    else:
        det = "an" if obj[0][0] in _VOWELS else "a"
    return f"{verb} {det} {' '.join(obj)}"


def rephrase_label(label: str) -> str:
    return f"A person is {activity_phrase(label)}."


def ordered_caption(first: str, second: str) -> str:
    return f"A person is {activity_phrase(first)}, then {activity_phrase(second)}."
