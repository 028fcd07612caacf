import numpy as np
import numpy.testing as npt
import pytest

from guided_attention.corpus import Sentence, Token, build_vocab
from guided_attention.errors import ShapeMismatchError
from guided_attention.masks import (
    GUIDED_ROLES,
    NEG_INF,
    RoleMask,
    apply_fallback,
    build_role_mask,
    combine,
    dep_syntax_mask,
    dump_record,
    expand,
    major_relations_mask,
    padding_mask,
    parse_dump,
    rare_words_mask,
    relative_position_mask,
    separator_mask,
)
from oracles import (
    columns_to_pairs,
    edge_pairs_bruteforce,
    mask_zero_pairs,
    pairs_with_fallback,
    rare_columns_bruteforce,
    separator_columns_bruteforce,
    tridiagonal_pairs,
)


def sent(forms, heads=None, deprels=None, label=None):
    heads = heads or [None] * len(forms)
    deprels = deprels or [None] * len(forms)
    tokens = [
        Token(form=f, index=i + 1, head=h, deprel=d)
        for i, (f, h, d) in enumerate(zip(forms, heads, deprels))
    ]
    return Sentence(tokens, label=label)


def assert_binary(mask: RoleMask):
    assert np.all((mask.values == 0.0) | (mask.values == NEG_INF))


class TestRareWordsMask:
    def test_single_rarest_column(self):
        vocab = build_vocab(
            [sent(["a", "b", "c", "d", "rare"])]
            + [sent(["a", "b", "c", "d"]) for _ in range(3)]
        )
        mask = rare_words_mask(sent(["a", "b", "rare", "c", "d"]), vocab)
        assert np.all(mask.values[:, 2] == 0.0)
        other = np.delete(mask.values, 2, axis=1)
        assert np.all(other == NEG_INF)

    def test_all_identical_tokens_tie_break(self):
        vocab = build_vocab([sent(["x", "x", "x"])])
        mask = rare_words_mask(sent(["x", "x", "x"]), vocab)
        assert np.all(mask.values[:, 0] == 0.0)
        assert np.all(mask.values[:, 1:] == NEG_INF)

    def test_fixture_matches_bruteforce(self, twenty, twenty_vocab):
        for s in twenty:
            mask = rare_words_mask(s, twenty_vocab)
            expected = columns_to_pairs(rare_columns_bruteforce(s, twenty_vocab), len(s))
            assert mask_zero_pairs(mask.values) == expected
            assert_binary(mask)


class TestSeparatorMask:
    def test_hello_comma_world_dot(self):
        mask = separator_mask(sent(["Hello", ",", "world", "."]))
        for col, open_ in [(0, False), (1, True), (2, False), (3, True)]:
            assert np.all((mask.values[:, col] == 0.0) == open_)

    def test_no_punctuation_falls_back_to_diagonal(self):
        mask = separator_mask(sent(["just", "plain", "words"]))
        npt.assert_array_equal(mask.values, np.where(np.eye(3, dtype=bool), 0.0, NEG_INF))

    def test_question_mark_mid_sentence(self, twenty):
        s17 = next(s for s in twenty if s.sent_id == "s17")
        mask = separator_mask(s17)
        assert s17.tokens[6].form == "?"
        assert np.all(mask.values[:, 6] == 0.0)

    def test_reserved_markers_count(self):
        mask = separator_mask(sent(["[START]", "body", "[SEP]", "tail", "[END]"]))
        for col in (0, 2, 4):
            assert np.all(mask.values[:, col] == 0.0)
        for col in (1, 3):
            assert np.all(mask.values[:, col] == NEG_INF)

    def test_fixture_matches_bruteforce(self, twenty):
        for s in twenty:
            expected = columns_to_pairs(separator_columns_bruteforce(s), len(s))
            assert mask_zero_pairs(separator_mask(s).values) == expected


class TestDependencyMasks:
    def test_single_edge_symmetric(self):
        s = sent(["She", "runs"], heads=[2, 0], deprels=["nsubj", "root"])
        mask = dep_syntax_mask(s)
        assert mask.values[0, 1] == 0.0
        assert mask.values[1, 0] == 0.0
        # both rows feasible via the edge, so diagonals stay closed
        assert mask.values[0, 0] == NEG_INF
        assert mask.values[1, 1] == NEG_INF

    def test_single_token_diagonal_fallback(self):
        mask = dep_syntax_mask(sent(["Run"], heads=[0], deprels=["root"]))
        npt.assert_array_equal(mask.values, [[0.0]])

    def test_root_edge_contributes_nothing(self):
        s = sent(["a", "b"], heads=[0, 1], deprels=["root", "obj"])
        mask = dep_syntax_mask(s)
        assert mask_zero_pairs(mask.values) == {(0, 1), (1, 0)}

    def test_fixture_matches_edge_list_oracle(self, twenty):
        for s in twenty:
            expected = pairs_with_fallback(edge_pairs_bruteforce(s), len(s))
            assert mask_zero_pairs(dep_syntax_mask(s).values) == expected

    def test_majrel_qualifying_edge(self):
        s = sent(["She", "runs"], heads=[2, 0], deprels=["nsubj", "root"])
        mask = major_relations_mask(s)
        assert mask.values[0, 1] == 0.0 and mask.values[1, 0] == 0.0

    def test_majrel_non_qualifying_edge_all_fallback(self):
        s = sent(["the", "cat"], heads=[2, 0], deprels=["det", "root"])
        mask = major_relations_mask(s)
        npt.assert_array_equal(mask.values, np.where(np.eye(2, dtype=bool), 0.0, NEG_INF))

    def test_majrel_accepts_obj_and_dobj(self, twenty):
        s02 = next(s for s in twenty if s.sent_id == "s02")  # uses obj
        s11 = next(s for s in twenty if s.sent_id == "s11")  # uses dobj
        assert (2, 4) in mask_zero_pairs(major_relations_mask(s02).values)
        assert (2, 4) in mask_zero_pairs(major_relations_mask(s11).values)

    def test_fixture_majrel_matches_filtered_oracle(self, twenty):
        rel = {"nsubj", "dobj", "obj", "amod", "advmod"}
        for s in twenty:
            expected = pairs_with_fallback(edge_pairs_bruteforce(s, rel), len(s))
            assert mask_zero_pairs(major_relations_mask(s).values) == expected

    def test_majrel_subset_of_depsyn_prefallback(self, twenty):
        rel = {"nsubj", "dobj", "obj", "amod", "advmod"}
        for s in twenty:
            assert edge_pairs_bruteforce(s, rel) <= edge_pairs_bruteforce(s)

    def test_unparsed_sentence_degrades_to_diagonal(self):
        s = sent(["no", "parse", "here"])
        for build in (dep_syntax_mask, major_relations_mask):
            npt.assert_array_equal(build(s).values, np.where(np.eye(3, dtype=bool), 0.0, NEG_INF))

    def test_symmetry_and_subset_on_random_trees(self):
        # head != index and edges never touch the diagonal, so removing the
        # diagonal recovers the pre-fallback zero set exactly
        rng = np.random.default_rng(7)
        deprels = ["nsubj", "obj", "det", "amod", "advmod", "case", "conj"]
        for _ in range(100):
            n = int(rng.integers(1, 10))
            tokens = [Token(f"w{rng.integers(0, 8)}", 1, head=0, deprel="root")]
            for i in range(2, n + 1):
                tokens.append(
                    Token(
                        f"w{rng.integers(0, 8)}", i,
                        head=int(rng.integers(1, i)), deprel=str(rng.choice(deprels)),
                    )
                )
            s = Sentence(tokens)
            diagonal = {(i, i) for i in range(n)}
            dep_zeros = mask_zero_pairs(dep_syntax_mask(s).values)
            maj_zeros = mask_zero_pairs(major_relations_mask(s).values)
            dep_edges = dep_zeros - diagonal
            maj_edges = maj_zeros - diagonal
            assert {(j, i) for i, j in dep_edges} == dep_edges
            assert {(j, i) for i, j in maj_edges} == maj_edges
            assert maj_edges <= dep_edges


class TestRelativePositionMask:
    def test_n4_tridiagonal(self):
        mask = relative_position_mask(4)
        assert mask_zero_pairs(mask.values) == tridiagonal_pairs(4)

    def test_n1_single_entry(self):
        npt.assert_array_equal(relative_position_mask(1).values, [[0.0]])

    def test_n10_zero_count_formula(self):
        assert len(mask_zero_pairs(relative_position_mask(10).values)) == 3 * 10 - 2

    def test_symmetric(self):
        values = relative_position_mask(7).values
        npt.assert_array_equal(values, values.T)


class TestPaddingMask:
    def test_columns_beyond_valid_closed(self):
        mask = padding_mask(3, 5)
        assert np.all(mask.values[:, 3:] == NEG_INF)
        assert np.all(mask.values[:, :3] == 0.0)

    def test_no_padding_all_zero(self):
        npt.assert_array_equal(padding_mask(4, 4).values, np.zeros((4, 4)))

    def test_invalid_length_rejected(self):
        with pytest.raises(ShapeMismatchError):
            padding_mask(6, 5)


class TestFallbackAndCombine:
    def test_full_fallback_gives_identity_diagonal(self):
        mask = RoleMask("seprat", np.full((3, 3), NEG_INF))
        out = apply_fallback(mask, 3)
        npt.assert_array_equal(out.values, np.where(np.eye(3, dtype=bool), 0.0, NEG_INF))

    def test_feasible_mask_unchanged(self):
        values = np.where(np.eye(3, dtype=bool), 0.0, NEG_INF)
        out = apply_fallback(RoleMask("relpos", values.copy()), 3)
        npt.assert_array_equal(out.values, values)

    def test_only_infeasible_rows_gain_diagonal(self):
        values = np.full((4, 4), NEG_INF)
        values[0, 2] = 0.0
        values[3, 1] = 0.0
        out = apply_fallback(RoleMask("depsyn", values), 4)
        assert mask_zero_pairs(out.values) == {(0, 2), (3, 1), (1, 1), (2, 2)}

    def test_role_allowing_only_pad_column_falls_back(self):
        role = RoleMask("rarew", np.full((4, 4), NEG_INF))
        role.values[:, 3] = 0.0  # only column 4 open, which padding closes
        combined = combine(role, padding_mask(3, 4))
        for i in range(3):
            assert combined.values[i, i] == 0.0
            assert combined.values[i, 3] == NEG_INF

    def test_all_zero_pad_is_identity(self):
        role = relative_position_mask(4)
        combined = combine(role, padding_mask(4, 4))
        npt.assert_array_equal(combined.values, role.values)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            combine(relative_position_mask(3), padding_mask(3, 4))

    def test_random_combine_matches_set_intersection(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n, n_valid = 6, int(rng.integers(1, 7))
            role_vals = np.where(rng.random((n, n)) < 0.4, 0.0, NEG_INF)
            role = RoleMask("seprat", role_vals)
            pad = padding_mask(n_valid, n)
            combined = combine(role, pad)
            intersection = mask_zero_pairs(role.values) & mask_zero_pairs(pad.values)
            fallback_rows = {
                i for i in range(n_valid)
                if not any(p[0] == i for p in intersection)
            }
            expected = intersection | {(i, i) for i in fallback_rows}
            assert mask_zero_pairs(combined.values) == expected
            # row feasibility for valid rows
            assert np.all((combined.values[:n_valid] == 0.0).any(axis=1))

    def test_expand_then_combine_keeps_pad_rows_feasible(self):
        role = separator_mask(sent(["a", "b"]))
        combined = combine(expand(role, 5), padding_mask(2, 5))
        assert np.all((combined.values == 0.0).any(axis=1))
        assert np.all(combined.values[:, 2:] == NEG_INF)


class TestPurityAndStructure:
    def test_construction_is_bit_identical(self, twenty, twenty_vocab):
        for s in twenty[:5]:
            for role in GUIDED_ROLES:
                a = build_role_mask(role, s, twenty_vocab)
                b = build_role_mask(role, s, twenty_vocab)
                npt.assert_array_equal(a.values, b.values)

    def test_every_mask_is_binary_and_feasible(self, twenty, twenty_vocab):
        for s in twenty:
            for role in GUIDED_ROLES:
                mask = build_role_mask(role, s, twenty_vocab)
                assert_binary(mask)
                assert np.all((mask.values == 0.0).any(axis=1))

    def test_column_constant_roles(self, twenty, twenty_vocab):
        for s in twenty:
            for build in (lambda x: rare_words_mask(x, twenty_vocab), separator_mask):
                values = build(s).values
                if len(s) > 1 and not np.all(values == np.where(np.eye(len(s), dtype=bool), 0.0, NEG_INF)):
                    npt.assert_array_equal(values, np.tile(values[0], (len(s), 1)))

    def test_unknown_role_rejected(self, twenty, twenty_vocab):
        with pytest.raises(ShapeMismatchError):
            build_role_mask("coref", twenty[0], twenty_vocab)


class TestDumpFormat:
    def test_round_trip(self, twenty, twenty_vocab):
        s = twenty[1]
        mask = build_role_mask("majrel", s, twenty_vocab)
        ((sid, role, n, pairs),) = parse_dump(dump_record(s.sent_id, mask))
        assert (sid, role, n) == (s.sent_id, "majrel", len(s))
        assert pairs == mask.zero_coordinates()

    def test_coordinates_sorted_one_based(self):
        mask = relative_position_mask(3)
        assert mask.zero_coordinates() == [(1, 1), (1, 2), (2, 1), (2, 2), (2, 3), (3, 2), (3, 3)]
