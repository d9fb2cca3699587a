"""Chọn bộ từ có khác biệt lớn theo khoảng cách Levenshtein và mã Soundex."""
import os
from itertools import combinations
from src.core import _CONFIG, ConfigError, FormatError, _project_path

_SOUNDEX_CODES = {c: d for d, letters in
                  {"1": "BFPV", "2": "CGJKQSXZ", "3": "DT", "4": "L", "5": "MN", "6": "R"}.items()
                  for c in letters}


def levenshtein(a, b):
    """Khoảng cách chỉnh sửa với chi phí chèn/xoá/thay bằng 1."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def soundex(word):
    """American Soundex: chữ đầu + 3 chữ số; H/W trong suốt, nguyên âm ngăn cách mã trùng."""
    w = "".join(ch for ch in str(word).upper() if ch.isalpha())
    if not w:
        raise ConfigError(f"Soundex cần từ có chữ cái, nhận '{word}'")
    digits = []
    last = _SOUNDEX_CODES.get(w[0], "")
    for ch in w[1:]:
        if ch in "HW":
            continue
        code = _SOUNDEX_CODES.get(ch, "")
        if code and code != last:
            digits.append(code)
        last = code
    return (w[0] + "".join(digits) + "000")[:4]


def pair_score(a, b):
    return levenshtein(a, b) + levenshtein(soundex(a), soundex(b))


def select_words(candidates, k):
    """Chọn tham lam k từ, tối đa hoá điểm nhỏ nhất giữa các cặp đã chọn.

    Bắt đầu từ cặp có điểm lớn nhất; hoà thì lấy theo thứ tự từ điển.
    """
    pool = sorted(candidates)
    if k < 2:
        raise ConfigError(f"k phải >= 2, nhận {k}")
    if k > len(pool):
        raise ConfigError(f"k={k} lớn hơn số ứng viên ({len(pool)})")
    best = max(combinations(range(len(pool)), 2),
               key=lambda ij: (pair_score(pool[ij[0]], pool[ij[1]]), [-ij[0], -ij[1]]))
    chosen = list(best)
    while len(chosen) < k:
        rest = [i for i in range(len(pool)) if i not in chosen]
        # max theo điểm min; hoà thì chỉ số nhỏ hơn (từ điển) thắng
        nxt = max(rest, key=lambda i: (min(pair_score(pool[i], pool[j]) for j in chosen), -i))
        chosen.append(nxt)
    return [pool[i] for i in sorted(chosen)]


def min_pair_score(words):
    return min(pair_score(a, b) for a, b in combinations(words, 2))


def load_word_pool(path=None):
    path = path or _project_path(_CONFIG.WORD_POOL_FILE)
    if not os.path.exists(path):
        raise FormatError(f"Không tìm thấy danh sách từ '{path}'")
    with open(path, "r", encoding="utf-8") as f:
        words = [line.strip() for line in f if line.strip() and not line.lstrip().startswith("#")]
    if not words:
        raise FormatError(f"Danh sách từ '{path}' trống")
    return words
