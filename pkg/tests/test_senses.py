"""Tests for the sense inventory, gloss matching, and prompt template."""

import io
import math

import numpy as np
import pytest

from vwsd.senses import (
    GlossMatch,
    SenseEntry,
    SenseInventory,
    build_prompt,
    load_inventory,
    match_gloss,
    normalize_lemma,
)

BIRO_LINE = (
    '{"lemma": "biro", "synset_id": "ballpoint.n.01",'
    ' "gloss": "a pen that has a small metal ball as the point of transfer of ink to paper",'
    ' "synonyms": ["ballpoint", "ballpoint_pen", "ballpen", "Biro"]}'
)

BIRO_PROMPT = (
    "This is a picture of biro pen, also known as ballpoint, ballpoint_pen,"
    " ballpen, Biro, where biro refers to a pen that has a small metal ball"
    " as the point of transfer of ink to paper."
)


def biro_entry() -> SenseEntry:
    return SenseEntry(
        synset_id="ballpoint.n.01",
        gloss="a pen that has a small metal ball as the point of transfer of ink to paper",
        synonyms=("ballpoint", "ballpoint_pen", "ballpen", "Biro"),
    )


# --- inventory loading ---


def test_load_single_line():
    inv = load_inventory(io.StringIO(BIRO_LINE + "\n"))
    assert len(inv) == 1
    senses = inv.senses_for("biro")
    assert len(senses) == 1
    assert senses[0] == biro_entry()


def test_load_empty_file():
    inv = load_inventory(io.StringIO(""))
    assert len(inv) == 0
    assert inv.senses_for("anything") == ()


def test_load_skips_comments_and_blank_lines():
    text = "# sense inventory v1\n\n" + BIRO_LINE + "\n   \n# trailing comment\n"
    inv = load_inventory(io.StringIO(text))
    assert len(inv) == 1


def test_load_missing_gloss_reports_line_number():
    bad = '{"lemma": "oak", "synset_id": "oak.n.01", "synonyms": []}'
    text = BIRO_LINE + "\n" + bad + "\n"
    with pytest.raises(ValueError, match="line 2"):
        load_inventory(io.StringIO(text))


def test_load_malformed_json_reports_line_number():
    text = "# header\n{not json}\n"
    with pytest.raises(ValueError, match="line 2"):
        load_inventory(io.StringIO(text))


def test_load_empty_gloss_rejected():
    bad = '{"lemma": "oak", "synset_id": "oak.n.01", "gloss": "", "synonyms": []}'
    with pytest.raises(ValueError, match="line 1"):
        load_inventory(io.StringIO(bad))


def test_load_duplicate_synset_same_lemma_rejected():
    text = BIRO_LINE + "\n" + BIRO_LINE + "\n"
    with pytest.raises(ValueError, match="duplicate"):
        load_inventory(io.StringIO(text))


def test_same_synset_under_different_lemma_ok():
    other = BIRO_LINE.replace('"lemma": "biro"', '"lemma": "ballpen"')
    inv = load_inventory(io.StringIO(BIRO_LINE + "\n" + other + "\n"))
    assert len(inv) == 2
    assert inv.senses_for("ballpen")[0].synset_id == "ballpoint.n.01"


def test_lookup_is_case_insensitive_and_underscores_spaces():
    line = (
        '{"lemma": "ballpoint_pen", "synset_id": "ballpoint.n.01",'
        ' "gloss": "a pen", "synonyms": []}'
    )
    inv = load_inventory(io.StringIO(line))
    assert "Ballpoint Pen" in inv
    assert inv.senses_for("ballpoint pen")[0].gloss == "a pen"
    assert inv.senses_for("BALLPOINT_PEN")[0].gloss == "a pen"


def test_normalize_lemma():
    assert normalize_lemma("Ballpoint Pen") == "ballpoint_pen"
    assert normalize_lemma("biro") == "biro"


def test_multiple_senses_keep_file_order():
    lines = [
        '{"lemma": "bank", "synset_id": "bank.n.01", "gloss": "river edge", "synonyms": []}',
        '{"lemma": "bank", "synset_id": "bank.n.02", "gloss": "money place", "synonyms": ["depository"]}',
    ]
    inv = load_inventory(io.StringIO("\n".join(lines)))
    ids = [s.synset_id for s in inv.senses_for("bank")]
    assert ids == ["bank.n.01", "bank.n.02"]


# --- gloss matching ---


def cosine_naive(a, b):
    num = sum(x * y for x, y in zip(a, b))
    return num / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def entries(n):
    return tuple(SenseEntry(synset_id=f"e.n.{i:02d}", gloss=f"gloss {i}") for i in range(n))


def test_match_picks_highest_cosine():
    # Brute-force the three cosines in plain python first, then compare.
    context = [1.0, 0.0]
    glosses = [[0.0, 1.0], [0.9, 0.1], [0.5, 0.5]]
    sims = [cosine_naive(context, g) for g in glosses]
    assert sims.index(max(sims)) == 1

    match = match_gloss(context, glosses, entries(3))
    assert match.matched
    assert match.entry.synset_id == "e.n.01"
    assert match.similarity == pytest.approx(max(sims), abs=1e-12)


def test_exact_match_wins_with_similarity_one():
    glosses = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, -0.2, 0.9]]
    match = match_gloss([0.3, -0.2, 0.9], glosses, entries(3))
    assert match.entry.synset_id == "e.n.02"
    assert match.similarity == pytest.approx(1.0, abs=1e-12)


def test_single_candidate_always_wins():
    rng = np.random.default_rng(7)
    only = entries(1)
    for _ in range(20):
        context = rng.normal(size=8)
        gloss = rng.normal(size=8)
        match = match_gloss(context, [gloss], only)
        assert match.matched
        assert match.entry is only[0]


def test_tie_breaks_to_lowest_index():
    same = [0.8, 0.6]
    match = match_gloss([1.0, 0.0], [same, list(same), [0.1, 0.9]], entries(3))
    # first two candidates tie for best similarity; index 0 must win
    assert match.entry.synset_id == "e.n.00"


def test_empty_entries_is_unmatched():
    match = match_gloss([1.0, 0.0], [], ())
    assert not match.matched
    assert match.entry is None
    assert match.similarity is None


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        match_gloss([1.0, 0.0], [[1.0, 0.0]], entries(2))


def test_dim_mismatch_rejected():
    with pytest.raises(ValueError):
        match_gloss([1.0, 0.0], [[1.0, 0.0, 0.0]], entries(1))


def test_monosemy_invariant():
    # A one-sense lemma is matched for every context embedding.
    rng = np.random.default_rng(123)
    only = entries(1)
    gloss = rng.normal(size=16)
    for _ in range(50):
        context = rng.normal(size=16)
        match = match_gloss(context, [gloss], only)
        assert match.matched and match.entry is only[0]


def test_match_invariant_under_positive_scaling():
    rng = np.random.default_rng(456)
    for _ in range(25):
        n = int(rng.integers(2, 6))
        context = rng.normal(size=12)
        glosses = [rng.normal(size=12) for _ in range(n)]
        ents = entries(n)
        base = match_gloss(context, glosses, ents)
        for scale in (0.001, 3.0, 4096.0):
            scaled = match_gloss(scale * context, glosses, ents)
            assert scaled.entry is base.entry
            assert scaled.similarity == pytest.approx(base.similarity, abs=1e-9)


# --- prompt template ---


def test_biro_prompt_exact():
    match = GlossMatch(matched=True, entry=biro_entry(), similarity=0.9)
    assert build_prompt("biro pen", "biro", match) == BIRO_PROMPT


def test_target_word_dropped_from_synonyms_case_sensitively():
    # "biro" is removed, capitalized "Biro" survives — same golden string.
    entry = SenseEntry(
        synset_id="ballpoint.n.01",
        gloss="a pen that has a small metal ball as the point of transfer of ink to paper",
        synonyms=("ballpoint", "ballpoint_pen", "ballpen", "Biro", "biro"),
    )
    match = GlossMatch(matched=True, entry=entry, similarity=0.9)
    assert build_prompt("biro pen", "biro", match) == BIRO_PROMPT


def test_unmatched_fallback_prompt():
    prompt = build_prompt("andromeda tree", "andromeda", GlossMatch(matched=False))
    assert prompt == "This is a picture of andromeda tree"


def test_empty_synonyms_drop_known_as_clause():
    entry = SenseEntry(synset_id="oak.n.01", gloss="a large tree", synonyms=())
    prompt = build_prompt("oak tree", "oak", GlossMatch(matched=True, entry=entry, similarity=0.5))
    assert prompt == "This is a picture of oak tree, where oak refers to a large tree."


def test_synonyms_reduced_to_target_only_drop_clause():
    entry = SenseEntry(synset_id="oak.n.01", gloss="a large tree", synonyms=("oak",))
    prompt = build_prompt("oak tree", "oak", GlossMatch(matched=True, entry=entry, similarity=0.5))
    assert prompt == "This is a picture of oak tree, where oak refers to a large tree."


def test_underscores_in_synonyms_preserved():
    match = GlossMatch(matched=True, entry=biro_entry(), similarity=0.9)
    assert "ballpoint_pen" in build_prompt("biro pen", "biro", match)


def test_empty_context_or_target_rejected():
    match = GlossMatch(matched=True, entry=biro_entry(), similarity=0.9)
    with pytest.raises(ValueError):
        build_prompt("", "biro", match)
    with pytest.raises(ValueError):
        build_prompt("biro pen", "", match)


def test_matched_prompt_shape():
    rng = np.random.default_rng(99)
    words = ["oak", "bank", "mole", "ruby", "jaguar_cat"]
    for _ in range(30):
        target = words[int(rng.integers(len(words)))]
        n_syn = int(rng.integers(0, 4))
        synonyms = tuple(f"syn_{i}" for i in range(n_syn))
        entry = SenseEntry(synset_id="x.n.01", gloss=f"gloss {rng.integers(1000)}", synonyms=synonyms)
        out = build_prompt(f"{target} thing", target, GlossMatch(True, entry, 0.1))
        assert out.startswith("This is a picture of ")
        assert " refers to " in out
        assert out.endswith(".")


def test_prompt_injective_in_gloss():
    e1 = SenseEntry(synset_id="a.n.01", gloss="first meaning")
    e2 = SenseEntry(synset_id="a.n.01", gloss="second meaning")
    p1 = build_prompt("oak tree", "oak", GlossMatch(True, e1, 0.5))
    p2 = build_prompt("oak tree", "oak", GlossMatch(True, e2, 0.5))
    assert p1 != p2


def test_unmatched_match_rejects_payload():
    with pytest.raises(ValueError):
        GlossMatch(matched=False, entry=biro_entry(), similarity=0.5)


def test_inventory_round_trip_through_file(tmp_path):
    path = tmp_path / "inv.jsonl"
    path.write_text("# v1\n" + BIRO_LINE + "\n", encoding="utf-8")
    inv = load_inventory(path)
    assert inv.senses_for("biro")[0] == biro_entry()
