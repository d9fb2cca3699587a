import pytest
from src.core import ConfigError, FormatError
from src.process_words import levenshtein, soundex, select_words, min_pair_score, load_word_pool


class TestLevenshtein:
    @pytest.mark.parametrize("a,b,d", [("Ba", "Ba", 0), ("Ba", "Ku", 2), ("kitten", "sitting", 3),
                                       ("", "abc", 3), ("flaw", "lawn", 2)])
    def test_distance(self, a, b, d):
        assert levenshtein(a, b) == d
        assert levenshtein(b, a) == d


class TestSoundex:
    @pytest.mark.parametrize("word,code", [("Robert", "R163"), ("Rupert", "R163"), ("B", "B000"),
                                           ("Pfister", "P236"), ("Ashcraft", "A261"), ("Tymczak", "T522")])
    def test_codes(self, word, code):
        assert soundex(word) == code

    def test_needs_letters(self):
        with pytest.raises(ConfigError):
            soundex("123")


class TestSelectWords:
    def test_k_equals_pool(self):
        assert sorted(select_words(["Ba", "Ku", "He", "Li"], 4)) == ["Ba", "He", "Ku", "Li"]

    def test_near_duplicates_not_paired(self):
        chosen = set(select_words(["Ba", "Bb", "Ku"], 2))
        assert chosen in ({"Ba", "Ku"}, {"Bb", "Ku"})

    def test_duplicates_avoided_when_possible(self):
        chosen = select_words(["Ba", "Ba", "Ku", "He", "Li"], 3)
        assert chosen.count("Ba") <= 1
        assert min_pair_score(chosen) > 0

    def test_duplicates_forced(self):
        chosen = select_words(["Ba", "Ba", "Ku"], 3)
        assert min_pair_score(chosen) == 0

    def test_deterministic(self):
        pool = load_word_pool()
        assert select_words(pool, 4) == select_words(list(reversed(pool)), 4)

    def test_bundled_pool_selection(self):
        chosen = select_words(load_word_pool(), 4)
        assert chosen == ["Ba", "Fi", "He", "Jo"]
        assert min_pair_score(chosen) == 3

    def test_bad_k(self):
        with pytest.raises(ConfigError):
            select_words(["Ba", "Ku"], 3)
        with pytest.raises(ConfigError):
            select_words(["Ba", "Ku"], 1)


class TestWordPool:
    def test_bundled_pool(self):
        pool = load_word_pool()
        assert len(pool) == 20 and {"Ba", "Ku", "He", "Li"} <= set(pool)

    def test_comments_skipped(self, tmp_path):
        path = tmp_path / "pool.txt"
        path.write_text("# từ thử\nBa\n\nKu\n", encoding="utf-8")
        assert load_word_pool(str(path)) == ["Ba", "Ku"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            load_word_pool(str(tmp_path / "none.txt"))
