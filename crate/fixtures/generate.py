#!/usr/bin/env python3
"""Regenerates the bundled fixtures.

Everything here is synthetic and seeded; rerunning the script reproduces the
committed files byte for byte.
"""

import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))


def attr(name, pk=False, fk=False, ref=None, kind="text"):
    a = {"name": name, "pk": pk, "fk": fk, "kind": kind}
    if ref is not None:
        a["ref"] = ref
    return a


def pk(name="id"):
    return attr(name, pk=True, kind="number")


def fk(name, ref):
    return attr(name, fk=True, ref=ref, kind="number")


def table(name, kind, attributes):
    return {"name": name, "kind": kind, "attributes": attributes}


def write_json(path, obj):
    with open(os.path.join(HERE, path), "w") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# schemas

movie_db = {
    "name": "imdb_small",
    "tables": [
        table("movie", "entity", [pk(), attr("title"), attr("release_year", kind="number"), attr("genre")]),
        table("people", "entity", [pk(), attr("name"), attr("gender")]),
        table("cast", "relation", [pk(), fk("movie_id", "movie"), fk("people_id", "people"), attr("role")]),
        table("written_by", "relation", [pk(), fk("movie_id", "movie"), fk("people_id", "people")]),
    ],
}

imdb = {
    "name": "imdb",
    "tables": [
        table("movie", "entity", [pk(), attr("title"), attr("release_year", kind="number"), attr("budget", kind="number")]),
        table("actor", "entity", [pk(), attr("name"), attr("gender"), attr("nationality")]),
        table("director", "entity", [pk(), attr("name"), attr("gender")]),
        table("writer", "entity", [pk(), attr("name"), attr("gender")]),
        table("company", "entity", [pk(), attr("name"), attr("country_code")]),
        table("genre", "entity", [pk(), attr("genre")]),
        table("cast", "relation", [pk(), fk("movie_id", "movie"), fk("actor_id", "actor"), attr("role")]),
        table("directed_by", "relation", [pk(), fk("movie_id", "movie"), fk("director_id", "director")]),
        table("written_by", "relation", [pk(), fk("movie_id", "movie"), fk("writer_id", "writer")]),
        table("made_by", "relation", [pk(), fk("movie_id", "movie"), fk("company_id", "company")]),
        table("classification", "relation", [pk(), fk("movie_id", "movie"), fk("genre_id", "genre")]),
        table("copyright", "relation", [pk(), fk("movie_id", "movie"), fk("company_id", "company")]),
        table("tagged_with", "relation", [pk(), fk("movie_id", "movie"), fk("genre_id", "genre")]),
        table("produced_in", "relation", [pk(), fk("movie_id", "movie"), fk("company_id", "company"), fk("director_id", "director")]),
        table("distributed_by", "relation", [pk(), fk("movie_id", "movie"), fk("company_id", "company")]),
        table("sequel_of", "relation", [pk(), fk("movie_id", "movie"), fk("prequel_id", "movie")]),
        table("award_of", "relation", [pk(), fk("movie_id", "movie"), fk("actor_id", "actor"), fk("director_id", "director")]),
    ],
}

yelp = {
    "name": "yelp",
    "tables": [
        table("business", "entity", [pk(), attr("name"), attr("full_address"), attr("city"), attr("state"),
                                     attr("latitude", kind="number"), attr("longitude", kind="number"),
                                     attr("rating", kind="number"), attr("review_count", kind="number"),
                                     attr("is_open", kind="number")]),
        table("user", "entity", [pk(), attr("name")]),
        table("category", "relation", [pk(), fk("business_id", "business"), fk("user_id", "user"), attr("category_name")]),
        table("checkin", "relation", [pk(), fk("business_id", "business"), fk("user_id", "user"),
                                      fk("neighbourhood_id", "neighbourhood"), attr("count", kind="number"), attr("day")]),
        table("neighbourhood", "relation", [pk(), fk("business_id", "business"), fk("user_id", "user"),
                                            attr("neighbourhood_name")]),
        table("review", "relation", [pk(), fk("business_id", "business"), fk("user_id", "user"),
                                     fk("neighbourhood_id", "neighbourhood"), fk("category_id", "category"),
                                     attr("rating", kind="number"), attr("text")]),
        table("tip", "relation", [pk(), fk("business_id", "business"), fk("user_id", "user"),
                                  fk("review_id", "review"), fk("checkin_id", "checkin")]),
    ],
}

mas = {
    "name": "mas",
    "tables": [
        table("author", "entity", [pk("aid"), attr("name"), fk("oid", "organization")]),
        table("conference", "entity", [pk("cid"), attr("name")]),
        table("domain", "entity", [pk("did"), attr("name")]),
        table("journal", "entity", [pk("jid"), attr("name")]),
        table("keyword", "entity", [pk("kid"), attr("keyword")]),
        table("organization", "entity", [pk("oid"), attr("name")]),
        table("publication", "entity", [pk("pid"), attr("title"), fk("cid", "conference"), fk("jid", "journal")]),
        table("cite", "relation", [pk(), fk("citing", "publication"), fk("cited", "publication")]),
        table("domain_author", "relation", [fk("aid", "author"), fk("did", "domain")]),
        table("domain_publication", "relation", [fk("did", "domain"), fk("pid", "publication")]),
        table("publication_keyword", "relation", [fk("pid", "publication"), fk("kid", "keyword")]),
        table("writes", "relation", [fk("aid", "author"), fk("pid", "publication")]),
    ],
}

os.makedirs(os.path.join(HERE, "schemas"), exist_ok=True)
write_json("schemas/imdb_small.json", movie_db)
write_json("schemas/imdb.json", imdb)
write_json("schemas/yelp.json", yelp)
write_json("schemas/mas.json", mas)

# ---------------------------------------------------------------------------
# annotated corpus over imdb_small

rng = random.Random(20210401)

POOL = ["Silver", "Dawn", "Grace", "Stone", "River", "Hope", "Iron", "Harbor", "Amber", "Fox",
        "Lucky", "Star", "Winter", "Rose", "Dark", "Tide", "Golden", "Gate", "Quiet", "Storm",
        "Blue", "Moon", "Red", "Hill"]
GENRES = ["comedy", "drama", "thriller", "western", "horror", "musical"]
YEARS = ["1994", "1999", "2001", "2008", "2012", "2016"]


def proper(n):
    return [rng.choice(POOL) for _ in range(n)]


def title():
    if rng.random() < 0.3:
        words = ["The"] + proper(2)
        return [(w, "DT" if i == 0 else "NNP") for i, w in enumerate(words)]
    return [(w, "NNP") for w in proper(2)]


def person():
    return [(w, "NNP") for w in proper(2)]


def val(words, schema):
    return [(w, p, "VALUE", schema) for (w, p) in words]


def tok(word, pos, typ="O", schema="O"):
    return [(word, pos, typ, schema)]


def t_acted_in(name=None, movie=None):
    name = name or person()
    movie = movie or title()
    return (tok("who", "WP") + tok("acted", "VBD", "TABLEREF", "cast") + val(name, "cast.role")
            + tok("in", "IN", "COND", "cond") + tok("the", "DT") + tok("movie", "NN", "TABLE", "movie")
            + val(movie, "movie.title"))


def t_name_acted():
    return (val(person(), "people.name") + tok("acted", "VBD", "TABLEREF", "cast") + tok("in", "IN")
            + tok("which", "WDT") + tok("movies", "NNS", "TABLE", "movie"))


def t_title_released():
    return (val(title(), "movie.title") + tok("was", "VBD") + tok("released", "VBN", "ATTRREF", "movie.release_year")
            + tok("in", "IN") + tok("which", "WDT") + tok("year", "NN", "ATTR", "movie.release_year"))


def t_written_by():
    return (tok("find", "VB") + tok("all", "DT") + tok("movies", "NNS", "TABLE", "movie")
            + tok("written", "VBN", "TABLEREF", "written_by") + tok("by", "IN", "COND", "COND")
            + val(person(), "people.name"))


def t_gender_of():
    return (tok("what", "WP") + tok("is", "VBZ") + tok("the", "DT") + tok("gender", "NN", "ATTR", "people.gender")
            + tok("of", "IN", "COND", "COND") + val(person(), "people.name"))


def t_name_wrote():
    return (val(person(), "people.name") + tok("wrote", "VBD", "TABLEREF", "written_by") + tok("which", "WDT")
            + tok("movies", "NNS", "TABLE", "movie"))


def t_writer_of():
    return (tok("who", "WP") + tok("is", "VBZ") + tok("the", "DT") + tok("writer", "NN", "TABLEREF", "written_by")
            + tok("of", "IN", "COND", "COND") + val(title(), "movie.title"))


def t_title_stars():
    return (val(title(), "movie.title") + tok("stars", "VBZ", "TABLEREF", "cast") + tok("which", "WDT")
            + tok("actors", "NNS", "TABLE", "people"))


def t_genre_year():
    return (tok("list", "VB") + val([(rng.choice(GENRES), "JJ")], "movie.genre") + tok("movies", "NNS", "TABLE", "movie")
            + tok("from", "IN", "COND", "COND") + val([(rng.choice(YEARS), "CD")], "movie.release_year"))


def t_played_role():
    return (val(person(), "people.name") + tok("played", "VBD", "TABLEREF", "cast") + tok("which", "WDT")
            + tok("role", "NN", "ATTR", "cast.role") + tok("in", "IN", "COND", "COND") + val(title(), "movie.title"))


TEMPLATES = [t_acted_in, t_name_acted, t_title_released, t_written_by, t_gender_of,
             t_name_wrote, t_writer_of, t_title_stars, t_genre_year, t_played_role]

NASH = t_acted_in([("John", "NNP"), ("Nash", "NNP")],
                    [("A", "DT"), ("Beautiful", "JJ"), ("Mind", "NN")])


def render(queries, header):
    lines = [header]
    for q in queries:
        for (w, p, t, s) in q:
            lines.append(f"{w}\t{p}\t{t}\t{s}")
        lines.append("")
    return "\n".join(lines)


queries = [NASH]
for i in range(5):
    for tpl in TEMPLATES:
        if len(queries) == 50:
            break
        queries.append(tpl())
assert len(queries) == 50

with open(os.path.join(HERE, "imdb_small.tsv"), "w") as f:
    f.write(render(queries, "# 50 annotated queries over schemas/imdb_small.json"))
with open(os.path.join(HERE, "john_nash.tsv"), "w") as f:
    f.write(render([NASH], "# single annotated query"))

# ---------------------------------------------------------------------------
# embeddings: clustered synthetic vectors, 300 dimensions

DIM = 300
erng = random.Random(7)
classes = {
    "function": ["who", "what", "which", "is", "was", "the", "in", "of", "by", "from", "all", "find", "list", "a", "an", "and", "to", "show"],
    "table": ["movie", "movies", "actors", "actor", "people", "cast", "film", "films", "writer"],
    "verb": ["acted", "wrote", "written", "released", "stars", "played", "starring", "directed"],
    "attribute": ["gender", "year", "role", "title", "name", "genre"],
    "proper": POOL + ["John", "Nash", "A", "Beautiful", "Mind", "The", "Truman", "Show", "Matt", "Demon"],
    "genre": GENRES,
    "number": YEARS,
}
centroids = {c: [erng.gauss(0.0, 1.0) for _ in range(DIM)] for c in classes}
rows = []
for c, words in classes.items():
    for w in words:
        v = [centroids[c][i] * 0.6 + erng.gauss(0.0, 0.4) for i in range(DIM)]
        rows.append((w, v))
with open(os.path.join(HERE, "embeddings_300d.vec"), "w") as f:
    f.write(f"{len(rows)} {DIM}\n")
    f.write("#subword B=2097152 seed=0\n")
    for (w, v) in rows:
        f.write(w + " " + " ".join(f"{x:.5f}" for x in v) + "\n")

# ---------------------------------------------------------------------------
# content snapshot for imdb_small

os.makedirs(os.path.join(HERE, "snapshot"), exist_ok=True)
snap = {
    "movie": (["id", "title", "release_year", "genre"],
              [["1", "A Beautiful Mind", "2001", "drama"],
               ["2", "The Truman Show", "1998", "comedy"],
               ["3", "Silver Dawn", "2012", "western"]]),
    "people": (["id", "name", "gender"],
               [["1", "Russell Crowe", "male"],
                ["2", "Jim Carrey", "male"],
                ["3", "Grace Stone", "female"],
                ["4", "Andrew Niccol", "male"]]),
    "cast": (["id", "movie_id", "people_id", "role"],
             [["1", "1", "1", "John Nash"],
              ["2", "2", "2", "Truman Burbank"],
              ["3", "3", "3", "Amber Fox"]]),
    "written_by": (["id", "movie_id", "people_id"],
                   [["1", "2", "4"]]),
}
for name, (header, body) in snap.items():
    with open(os.path.join(HERE, "snapshot", f"{name}.tsv"), "w") as f:
        f.write("\t".join(header) + "\n")
        for r in body:
            f.write("\t".join(r) + "\n")
