"""Language registry.

Tags are lowercase language names (``"bengali"``, ``"chinese_simplified"``),
the same naming CrossSum uses for its file names. Display names keep the
capitalisation used when talking to chat models.
"""

from __future__ import annotations

# Order matters: the confidence-survey prompt lists languages in this order.
DISPLAY_NAMES: tuple[str, ...] = (
    "Amharic", "Arabic", "Azerbaijani", "Bengali", "Burmese",
    "Chinese_simplified", "Chinese_traditional", "English", "French",
    "Gujarati", "Hausa", "Hindi", "Igbo", "Indonesian", "Japanese",
    "Kirundi", "Korean", "Kyrgyz", "Marathi", "Nepali", "Oromo", "Pashto",
    "Persian", "Pidgin", "Portuguese", "Punjabi", "Russian",
    "Scottish_gaelic", "Serbian_cyrillic", "Serbian_latin", "Sinhala",
    "Somali", "Spanish", "Swahili", "Tamil", "Telugu", "Thai", "Tigrinya",
    "Turkish", "Ukrainian", "Urdu", "Uzbek", "Vietnamese", "Welsh", "Yoruba",
)

LANGUAGES: tuple[str, ...] = tuple(name.lower() for name in DISPLAY_NAMES)

_DISPLAY = dict(zip(LANGUAGES, DISPLAY_NAMES))

# ISO 639-1/3 codes, used to map language-identifier labels onto registry tags.
ISO_CODES: dict[str, str] = {
    "amharic": "am", "arabic": "ar", "azerbaijani": "az", "bengali": "bn",
    "burmese": "my", "chinese_simplified": "zh", "chinese_traditional": "zh",
    "english": "en", "french": "fr", "gujarati": "gu", "hausa": "ha",
    "hindi": "hi", "igbo": "ig", "indonesian": "id", "japanese": "ja",
    "kirundi": "rn", "korean": "ko", "kyrgyz": "ky", "marathi": "mr",
    "nepali": "ne", "oromo": "om", "pashto": "ps", "persian": "fa",
    "pidgin": "pcm", "portuguese": "pt", "punjabi": "pa", "russian": "ru",
    "scottish_gaelic": "gd", "serbian_cyrillic": "sr", "serbian_latin": "sr",
    "sinhala": "si", "somali": "so", "spanish": "es", "swahili": "sw",
    "tamil": "ta", "telugu": "te", "thai": "th", "tigrinya": "ti",
    "turkish": "tr", "ukrainian": "uk", "urdu": "ur", "uzbek": "uz",
    "vietnamese": "vi", "welsh": "cy", "yoruba": "yo",
}


def is_registered(tag: str) -> bool:
    return tag in _DISPLAY


def display_name(tag: str) -> str:
    """Return the capitalised name for a registered tag.

    >>> display_name("chinese_simplified")
    'Chinese_simplified'
    """
    try:
        return _DISPLAY[tag]
    except KeyError:
        raise KeyError(f"unregistered language tag: {tag!r}") from None
