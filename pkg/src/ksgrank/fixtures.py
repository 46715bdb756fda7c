"""Bundled datasets: the two-sub-KSG education example and a synthetic KG.

``python -m ksgrank.fixtures DIR`` regenerates the synthetic files.
"""
from __future__ import annotations

import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

# Topic m.051cc.  Only m.051cc, m.0gl5_ (the answer) and m.076hxb3 (the
# namesake) are real ids; the remaining ids are placeholders.
SCHOOL_TRIPLES = [
    ("m.051cc", "people.person.education", "m.0edu_cvt"),
    ("m.0edu_cvt", "education.education.institution", "m.0gl5_"),
    ("m.0edu_cvt", "education.education.degree", "m.0degree"),
    ("m.051cc", "symbols.name_source.namesakes", "m.076hxb3"),
    ("m.076hxb3", "education.educational_institution.school_type", "m.0school_type"),
    ("m.076hxb3", "location.location.containedby", "m.0school_city"),
    ("m.0parent", "people.person.children", "m.051cc"),
]
SCHOOL_QUESTION = {
    "id": "school",
    "text": "what school did m.051cc go to ?",
    "tokens": ["what", "school", "did", "m.051cc", "go", "to", "?"],
    "topic_entities": ["m.051cc"],
    "answers": ["m.0gl5_"],
}
SCHOOL_EDUCATION_NODES = ["m.051cc", "m.0edu_cvt", "m.0gl5_", "m.0degree"]
SCHOOL_NAMESAKE_NODES = ["m.051cc", "m.076hxb3", "m.0school_type", "m.0school_city"]


def data_dir() -> Path:
    return Path(str(resources.files("ksgrank") / "data"))


def school_paths() -> dict:
    d = data_dir() / "school"
    return {"triples": d / "triples.tsv", "questions": d / "questions.jsonl"}


def synthetic_paths() -> dict:
    d = data_dir() / "synthetic"
    return {
        "triples": d / "triples.tsv",
        "questions": d / "questions.jsonl",
        "embeddings": d / "embeddings.txt",
        "entity_names": d / "entity_names.tsv",
    }


def write_school(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "triples.tsv").write_text("".join("\t".join(t) + "\n" for t in SCHOOL_TRIPLES), encoding="utf-8")
    (out / "questions.jsonl").write_text(json.dumps(SCHOOL_QUESTION) + "\n", encoding="utf-8")


# --- synthetic KG -------------------------------------------------------------

_SYLLABLES = ["ka", "lo", "mi", "ra", "ten", "vo", "zu", "pel", "dar", "sin", "mor", "tal", "bex", "fen", "gil", "hu"]

_SYNONYMS = [
    ["born", "birth", "place"],
    ["school", "education", "institution", "go", "study"],
    ["degree", "get", "earn"],
    ["films", "film", "act", "actor", "in"],
    ["company", "work", "works", "employment", "organization", "employer"],
    ["located", "headquarters", "location", "containedby", "city"],
    ["country", "nationality"],
    ["profession", "job"],
    ["award", "awards", "won", "win"],
    ["genre", "kind"],
]


def _word(rng, used: set, parts=2) -> str:
    while True:
        w = "".join(rng.choice(_SYLLABLES, size=parts))
        if w not in used:
            used.add(w)
            return w


def synthetic_dataset(seed: int = 7, n_questions: int = 50) -> dict:
    rng = np.random.default_rng(seed)
    used: set = set()
    names: dict[str, str] = {}
    counter = iter(range(10_000))

    def entity(label: str) -> str:
        eid = f"m.0{next(counter):04x}"
        names[eid] = label
        return eid

    countries = [entity(_word(rng, used) + "land") for _ in range(8)]
    cities = [entity(_word(rng, used) + " city") for _ in range(24)]
    schools = [entity(_word(rng, used) + " university") for _ in range(12)]
    degrees = [entity(w) for w in ["bachelor", "master", "doctorate", "diploma", "associate", "certificate"]]
    professions = [entity(w) for w in ["actor", "writer", "singer", "lawyer", "doctor", "painter",
                                       "engineer", "teacher", "farmer", "pilot"]]
    genres = [entity(w) for w in ["drama", "comedy", "thriller", "western", "horror", "musical",
                                  "romance", "documentary"]]
    awards = [entity(_word(rng, used) + " prize") for _ in range(10)]
    companies = [entity(_word(rng, used) + " corp") for _ in range(18)]
    films = [entity(_word(rng, used, 3)) for _ in range(24)]
    persons = [entity(_word(rng, used) + " " + _word(rng, used)) for _ in range(30)]

    triples = []
    city_country = {c: countries[int(rng.integers(len(countries)))] for c in cities}
    for c in cities:
        triples.append((c, "location.location.containedby", city_country[c]))
    company_city = {}
    for co in companies:
        company_city[co] = cities[int(rng.integers(len(cities)))]
        triples.append((co, "organization.organization.headquarters", company_city[co]))
    film_genre = {}
    for f in films:
        film_genre[f] = genres[int(rng.integers(len(genres)))]
        triples.append((f, "film.film.genre", film_genre[f]))
    facts = {}
    for p in persons:
        cvt = entity("education record")
        birth = cities[int(rng.integers(len(cities)))]
        school = schools[int(rng.integers(len(schools)))]
        degree = degrees[int(rng.integers(len(degrees)))]
        employer = companies[int(rng.integers(len(companies)))]
        acted = sorted(rng.choice(len(films), size=int(rng.integers(1, 3)), replace=False))
        facts[p] = {
            "born": birth, "country": city_country[birth], "school": school, "degree": degree,
            "employer": employer, "hq": company_city[employer], "films": [films[i] for i in acted],
            "profession": professions[int(rng.integers(len(professions)))],
        }
        triples += [
            (p, "people.person.place_of_birth", birth),
            (p, "people.person.education", cvt),
            (cvt, "education.education.institution", school),
            (cvt, "education.education.degree", degree),
            (p, "people.person.employment", employer),
            (p, "people.person.profession", facts[p]["profession"]),
        ]
        triples += [(p, "film.actor.film", f) for f in facts[p]["films"]]
        if rng.random() < 0.4:
            triples.append((p, "award.award_winner.awards_won", awards[int(rng.integers(len(awards)))]))

    templates = [
        ("where was {} born ?", "born"),
        ("what country was {} born in ?", "country"),
        ("where did {} go to school ?", "school"),
        ("what degree did {} get ?", "degree"),
        ("what films did {} act in ?", "films"),
        ("what company does {} work for ?", "employer"),
        ("where is the company {} works for located ?", "hq"),
        ("what is the profession of {} ?", "profession"),
    ]
    questions = []
    for i in range(n_questions):
        p = persons[int(rng.integers(len(persons)))]
        text, key = templates[int(rng.integers(len(templates)))]
        text = text.format(names[p])
        answers = facts[p][key]
        answers = answers if isinstance(answers, list) else [answers]
        split = "train" if i < 36 else ("dev" if i < 42 else "test")
        questions.append({
            "id": f"syn{i:03d}",
            "text": text,
            "tokens": text.split(),
            "topic_entities": [p],
            "answers": sorted(answers),
            "split": split,
        })

    vocab = set()
    for q in questions:
        vocab.update(q["tokens"])
    for n in names.values():
        vocab.update(n.split())
    for _, r, _ in triples:
        vocab.update(t for t in r.replace("_", ".").split(".") if t)
    dim = 50
    base = {}
    for group in _SYNONYMS:
        centre = rng.normal(size=dim)
        for w in group:
            base[w] = centre + 0.3 * rng.normal(size=dim)
    embeddings = {w: base.get(w, None) for w in sorted(vocab)}
    for w in sorted(vocab):
        if embeddings[w] is None:
            embeddings[w] = rng.normal(size=dim)
    return {"triples": triples, "names": names, "questions": questions, "embeddings": embeddings}


def write_synthetic(out: Path, seed: int = 7):
    data = synthetic_dataset(seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "triples.tsv").write_text("".join("\t".join(t) + "\n" for t in data["triples"]), encoding="utf-8")
    (out / "entity_names.tsv").write_text(
        "".join(f"{e}\t{n}\n" for e, n in data["names"].items()), encoding="utf-8")
    (out / "questions.jsonl").write_text(
        "".join(json.dumps(q) + "\n" for q in data["questions"]), encoding="utf-8")
    with open(out / "embeddings.txt", "w", encoding="utf-8") as fh:
        for w, v in data["embeddings"].items():
            fh.write(w + " " + " ".join(f"{x:.6f}" for x in v) + "\n")


if __name__ == "__main__":
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else data_dir()
    write_school(root / "school")
    write_synthetic(root / "synthetic")
