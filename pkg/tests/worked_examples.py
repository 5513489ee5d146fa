"""Fixture data for the worked examples: a clinical record, a short note, and a 20 s audio clip."""

from __future__ import annotations

import numpy as np

from deidkit.audio import AudioBuffer, TimedWord

# ---------------------------------------------------------------- clinical record

RECORD_SCHEMA = {
    "$schema": "http://json-schema.org/draft-04/schema#",
    "type": "object",
    "recordVersion": "1.0",
    "description": "Schema for a free text record",
    "dataType": "clinicalRecord",
    "reviewed": True,
    "properties": {
        "PatientId": {"type": "string", "description": "Patient ID.", "autoDeId": False, "shouldMask": False, "shouldHash": True, "entity_type": None},
        "MRN": {"type": "string", "description": "MRN of the Patient", "autoDeId": False, "shouldMask": False, "shouldHash": True, "entity_type": None},
        "AGE": {"type": "string", "description": "Age of the Patient", "autoDeId": False, "shouldMask": True, "shouldHash": False, "entity_type": "[AGE]"},
        "note": {"type": "string", "description": "Clinical Note", "autoDeId": True, "shouldMask": False, "shouldHash": False, "entity_type": None},
    },
}

NOTE = (
    "John Doe, a 45-year-old male, presented to Stanford Medical Center on 03/16/2025 complaining of severe "
    "abdominal pain. He was referred by Dr. Emily Smith from Valley Health Clinic. His address is 123 Main St, "
    "Palo Alto, CA 94301. Contact number: (650) 555-1234. Past medical history includes hypertension and Type 2 "
    "diabetes. His insurance ID is INS-789456123. The patient's wife, Jane Doe, can be reached at (650) 555-5678. "
    "A CT scan was performed and results were discussed with the patient at 2:00 PM. Follow-up scheduled on "
    "03/22/2025 at 9:00 AM. Patient is employed as a software engineer at TechNova Corp. Social Security Number: "
    "987-65-4321."
)

RECORD = {"dataType": "clinicalRecord", "PatientId": "123456789", "MRN": "A987654321", "AGE": "45 years", "note": NOTE}

# Extractor output for the note. TELEPHONE_NUMBER is included because the
# expected redacted note carries [TELEPHONE_NUMBER] placeholders.
EXTRACTED = {
    "PERSON": ["Jane Doe", "Emily Smith", "John Doe"],
    "ADDRESS": ["123 Main St, Palo Alto, CA 94301"],
    "AGE": ["45 years", "45-year-old"],
    "LOCATION": ["Palo Alto"],
    "MARITAL_STATUS": ["wife"],
    "PARENTHOOD": [],
    "OCCUPATION": ["software engineer"],
    "BIRTH_DATE_TIME": [],
    "SSN_OR_TAXPAYER": ["987-65-4321"],
    "EMAIL": [],
    "FIN": ["INS-789456123"],
    "GUID": ["987-65-4321"],
    "ORGANIZATION": ["TechNova Corp", "Stanford Medical Center", "Valley Health Clinic"],
    "PHARMACY": [],
    "DIAGNOSTIC_LABS": [],
    "TELEPHONE_NUMBER": ["(650) 555-1234", "(650) 555-5678"],
}

DEID_NOTE = (
    "[PERSON], a [AGE] male, presented to [ORGANIZATION] on 03/16/2025 complaining of severe abdominal pain. He "
    "was referred by Dr. [PERSON] from [ORGANIZATION]. His address is [ADDRESS]. Contact number: "
    "[TELEPHONE_NUMBER]. Past medical history includes hypertension and Type 2 diabetes. His insurance ID is "
    "[FIN]. The patient's [MARITAL_STATUS], [PERSON], can be reached at [TELEPHONE_NUMBER]. A CT scan was "
    "performed and results were discussed with the patient at 2:00 PM. Follow-up scheduled on 03/22/2025 at 9:00 "
    "AM. Patient is employed as a [OCCUPATION] at [ORGANIZATION]. Social Security Number: [GUID]."
)

SURROGATES = {
    "John Doe": "Michael Johnson",
    "Jane Doe": "Alice Johnson",
    "Emily Smith": "Sophia Brown",
    "45-year-old": "mid-forties",
    "Stanford Medical Center": "Harvard Medical Center",
    "Valley Health Clinic": "Green Valley Clinic",
    "TechNova Corp": "Innovatech Inc.",
    "123 Main St, Palo Alto, CA 94301": "456 Elm St, Mountain View, CA 94041",
    "(650) 555-1234": "(123) 274-0846",
    "(650) 555-5678": "(123) 274-6354",
    "INS-789456123": "INS-123456789",
    "wife": "spouse",
    "software engineer": "data scientist",
    "987-65-4321": "123-45-6789",
}
CLUSTERS = {"AGE": [["45-year-old", "45 years"]]}

RELEX_NOTE = (
    "Michael Johnson, a mid-forties male, presented to Harvard Medical Center on 03/16/2025 complaining of severe "
    "abdominal pain. He was referred by Dr. Sophia Brown from Green Valley Clinic. His address is 456 Elm St, "
    "Mountain View, CA 94041. Contact number: (123) 274-0846. Past medical history includes hypertension and Type "
    "2 diabetes. His insurance ID is INS-123456789. The patient's spouse, Alice Johnson, can be reached at (123) "
    "274-6354. A CT scan was performed and results were discussed with the patient at 2:00 PM. Follow-up "
    "scheduled on 03/22/2025 at 9:00 AM. Patient is employed as a data scientist at Innovatech Inc.. Social "
    "Security Number: 123-45-6789."
)
RELEX_AGE = "mid-forties"


def agent_script() -> dict:
    """Scripted-agent document for the record example (CLI ``--script`` format)."""
    return {"extract": {"1": EXTRACTED}, "clusters": CLUSTERS, "surrogates": SURROGATES}


# ---------------------------------------------------------------- short note, two chunks

SHORT_NOTE = (
    "Robert Johnson, a patient aged 53 was admitted to Springfield General Hospital for chest pain. "
    "Dr. Mary Smith prescribed medication."
)
SHORT_CHUNKS = (
    "Robert Johnson, a patient aged 53 was admitted to Springfield General Hospital for chest pain.",
    "for chest pain. Dr. Mary Smith prescribed medication.",
)
SHORT_MASKED = (
    "[PERSON], a patient aged 53 was admitted to [ORGANIZATION] for chest pain.",
    "for chest pain. [PERSON] prescribed medication.",
)
SHORT_REDACTED = "[PERSON], a patient aged [AGE] was admitted to [ORGANIZATION] for chest pain. [PERSON] prescribed medication."
SHORT_RECORD = {
    "dataType": "admission",
    "patient_name": "Robert Johnson",
    "patient_id": "A12345",
    "gender": "male",
    "medical_history": SHORT_NOTE,
}
SHORT_SCHEMA = {
    "dataType": "admission",
    "recordVersion": "1.0",
    "reviewed": True,
    "properties": {
        "patient_name": {"shouldMask": True, "entity_type": "[PERSON]"},
        "patient_id": {"shouldHash": True},
        "gender": {},
        "medical_history": {"autoDeId": True},
    },
}


def short_note_responses(chunk_text: str, pass_index: int) -> dict:
    """Pass 1 finds the names and the hospital; pass 2 only sees masked text and adds the age."""
    if pass_index == 1:
        out = {}
        if "Robert Johnson" in chunk_text:
            out["PERSON"] = [{"surface": "Robert Johnson", "context_hint": "Robert Johnson, a patient"}]
            out["ORGANIZATION"] = [{"surface": "Springfield General Hospital", "context_hint": "admitted to Springfield General Hospital"}]
        if "Mary Smith" in chunk_text:
            out.setdefault("PERSON", []).append({"surface": "Dr. Mary Smith", "context_hint": "Dr. Mary Smith prescribed"})
        return out
    if "aged 53" in chunk_text:
        return {"AGE": [{"surface": "53", "context_hint": "aged 53 was admitted"}]}
    return {}


class ShortNoteExtractor:
    def __init__(self):
        self.requests: list[tuple[str, int]] = []

    def extract(self, chunk_text, entity_types, pass_index):
        self.requests.append((chunk_text, pass_index))
        return short_note_responses(chunk_text, pass_index)


# ---------------------------------------------------------------- audio clip

SAMPLE_RATE = 16000
DURATION_S = 20.0
# Two lead-in words cover the start of the clip so that the only gaps are the
# three listed for the example; the example transcript starts after them.
LEAD_IN = "Recording started."
TRANSCRIPT = (
    "The patient visited Dr. Smith last week a follow-up in his clinic at Creekwood Hospital. They discussed "
    "medication changes and scheduled the next appointment for next month. The patient also mentioned feeling "
    "unwell over the weekend."
)
_TIMINGS = [
    ("Recording", 0.00, 1.40), ("started.", 1.40, 2.85),
    ("The", 2.95, 3.30), ("patient", 3.30, 3.75), ("visited", 3.75, 4.23), ("Dr.", 4.23, 4.45),
    ("Smith", 4.45, 4.80), ("last", 4.80, 6.00), ("week", 6.00, 7.42),
    ("a", 7.57, 7.80), ("follow-up", 7.80, 8.60), ("in", 8.60, 9.20), ("his", 9.20, 10.00),
    ("clinic", 10.00, 11.20), ("at", 11.20, 12.57), ("Creekwood", 12.57, 12.90), ("Hospital.", 12.90, 13.20),
    ("They", 13.20, 13.70), ("discussed", 13.70, 14.40), ("medication", 14.40, 15.10),
    ("changes", 15.30, 15.80), ("and", 15.80, 16.10), ("scheduled", 16.10, 16.60), ("the", 16.60, 16.80),
    ("next", 16.80, 17.10), ("appointment", 17.10, 17.60), ("for", 17.60, 17.80), ("next", 17.80, 18.00),
    ("month.", 18.00, 18.30), ("The", 18.30, 18.50), ("patient", 18.50, 18.80), ("also", 18.80, 19.00),
    ("mentioned", 19.00, 19.30), ("feeling", 19.30, 19.50), ("unwell", 19.50, 19.70), ("over", 19.70, 19.80),
    ("the", 19.80, 19.90), ("weekend.", 19.90, 20.00),
]
WORDS = [TimedWord(w, a, b) for w, a, b in _TIMINGS]
GAPS = [(2.85, 2.95), (7.42, 7.57), (15.10, 15.30)]
VOICED_GAPS = [(2.85, 2.95), (7.42, 7.57)]
AUDIO_PHI = {"PERSON": ["Dr. Smith"], "ORGANIZATION": ["Creekwood Hospital"]}
GAP_VERDICTS = {
    "<human_timestamp_(00:02.85 - 00:02.95)>": "NON-PHI",
    "<human_timestamp_(00:07.42 - 00:07.57)>": "PHI",
}
AUDIO_MARGIN_S = 0.30
TRANSCRIPT_PHI_INTERVALS = [(3.93, 5.10), (12.27, 13.50)]
GAP_PHI_INTERVAL = (7.12, 7.87)
MARKED_TRANSCRIPT_TAIL = (
    "<human_timestamp_(00:02.85 - 00:02.95)> The patient visited Dr. Smith last week "
    "<human_timestamp_(00:07.42 - 00:07.57)> a follow-up in his clinic at Creekwood Hospital. They discussed "
    "medication changes and scheduled the next appointment for next month. The patient also mentioned feeling "
    "unwell over the weekend."
)


def synth_clip(seed: int = 7) -> AudioBuffer:
    """Quiet noise everywhere; a 220 Hz burst in the middle 40% of each word and across
    the two voiced gaps. The third gap holds only noise."""
    rng = np.random.default_rng(seed)
    n = int(SAMPLE_RATE * DURATION_S)
    t = np.arange(n) / SAMPLE_RATE
    x = rng.normal(0.0, 30.0, n)
    tone = 3000.0 * np.sin(2 * np.pi * 220.0 * t)
    for _, a, b in _TIMINGS:
        lo, hi = a + 0.3 * (b - a), b - 0.3 * (b - a)
        sel = (t >= lo) & (t < hi)
        x[sel] += tone[sel]
    for a, b in VOICED_GAPS:
        sel = (t >= a) & (t < b)
        x[sel] += tone[sel]
    return AudioBuffer(SAMPLE_RATE, np.clip(np.round(x), -32768, 32767).astype(np.int16))


class AudioExtractor:
    def extract(self, chunk_text, entity_types, pass_index):
        return AUDIO_PHI if pass_index == 1 else {}
