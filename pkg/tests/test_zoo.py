import itertools

import pytest

from hesm.harness import synth_corpus
from hesm.hierarchy import Leaf, MbrSelect, TokenEnsemble, describe_spec, leaves, validate_spec
from hesm.zoo import (CORE_IDS, build_competition_roster, build_fixtures, build_registry_for, build_roster,
                      default_seeds, fixture_json, get_fixture, list_fixtures, write_fixtures)


@pytest.fixture(scope="module")
def competition(small_corpus):
    return build_competition_roster(small_corpus[:48])


def test_roster_members_are_distinct(small_roster):
    assert sorted(small_roster) == sorted(CORE_IDS)
    dumps = [m.dumps() for m in small_roster.values()]
    assert len(set(dumps)) == 18
    for a, b in itertools.combinations(small_roster.values(), 2):
        assert a.vocab == b.vocab


def test_roster_is_deterministic(small_corpus, small_roster):
    again = build_roster(small_corpus[:48])
    assert {k: m.dumps() for k, m in again.items()} == {k: m.dumps() for k, m in small_roster.items()}


def test_roster_errors(small_corpus):
    with pytest.raises(ValueError):
        build_roster([])
    with pytest.raises(ValueError):
        build_roster(small_corpus, seeds=[1, 2, 3])


def test_default_seeds_distinct():
    assert len(set(default_seeds(0))) == 18
    assert not set(default_seeds(0)) & set(default_seeds(1))


def test_checked_in_fixtures_match_the_builder(tmp_path):
    built = build_fixtures()
    shipped = list_fixtures()
    assert [f.name for f in shipped] == [f.name for f in built]
    assert shipped == built
    write_fixtures(tmp_path)
    for f in built:
        assert (tmp_path / f"{f.name}.json").read_text(encoding="utf-8") == fixture_json(f)


def test_fixture_catalogue():
    names = {f.name for f in build_fixtures()}
    for role in ("A", "AS"):
        assert {f"individual-{role}", f"wavg-{role}", f"tokens-{role}", f"mbr-{role}"} <= names
    assert {"hesm-1-1-mbr9", "tokens-3-3", "hesm-3-3-mbr3", "hesm-3-3-mbr9", "hesm-final",
            "unpack-1", "unpack-2"} <= names
    with pytest.raises(KeyError):
        get_fixture("nope")


def test_every_fixture_validates(competition):
    for fixture in list_fixtures():
        for spec in fixture.systems:
            assert validate_spec(spec, competition) == [], fixture.name


def test_core_fixtures_validate_on_the_plain_roster(small_roster):
    core = [f for f in list_fixtures()
            if all({leaf.model_id for leaf in leaves(s)} <= CORE_IDS for s in f.systems)]
    assert len(core) >= 10
    for fixture in core:
        for spec in fixture.systems:
            assert validate_spec(spec, small_roster) == []


def test_table_shapes():
    pairs = get_fixture("hesm-1-1-mbr9").spec
    assert isinstance(pairs, MbrSelect) and len(pairs.children) == 9
    assert all(describe_spec(c) == "(1, 1)" for c in pairs.children)
    assert describe_spec(get_fixture("hesm-3-3-mbr9").spec) == "(3, 3) / MBR=9"
    final = get_fixture("hesm-final").spec
    assert isinstance(final.children[0], MbrSelect) and len(final.children) == 3


def test_non_overlap_partition():
    spec = get_fixture("hesm-3-3-mbr3").spec
    assert describe_spec(spec) == "(3, 3) / MBR=3"
    groups = [[leaf.model_id for leaf in leaves(child)] for child in spec.children]
    flat = [m for g in groups for m in g]
    assert len(flat) == len(set(flat)) == 18
    assert set(flat) == CORE_IDS


def test_unpacked_sizes():
    one = get_fixture("unpack-1").spec
    two = get_fixture("unpack-2").spec
    assert len(one.children) == 18
    assert len(two.children) == 34
    assert all(isinstance(c, Leaf) for c in two.children)
    assert len({c.model_id for c in two.children}) == 34
    assert any(isinstance(c, TokenEnsemble) for c in one.children)


def test_registry_choice(small_corpus):
    core = build_registry_for([get_fixture("mbr-A").spec], small_corpus[:48])
    assert set(core) == CORE_IDS
    full = build_registry_for([get_fixture("hesm-final").spec], small_corpus[:48])
    assert CORE_IDS < set(full)


def test_competition_roster_members(competition, small_roster):
    for i in range(1, 4):
        v1 = competition[f"θ_A-v1-{i}"]
        assert any(v1 is competition[f"θ_A-{j}"] for j in range(1, 10))
        assert competition[f"θ_A-v2-{i}"].order == 3
    assert competition["θ_A-rl-1"].counts == build_competition_roster(synth_corpus(11, 60)[:48])["θ_A-rl-1"].counts
