// Moses tokenizer (tokenizer.perl semantics as ported by sacremoses), English.
// Each rule is a left-to-right, non-overlapping rewrite over code points.

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ddimedit/evaluation.hpp"

namespace ddimedit {
namespace {

struct CodeRange {
    char32_t lo, hi;
};

#include "moses_tables.inc"

template <std::size_t N>
bool in_table(const CodeRange (&table)[N], char32_t c) {
    const auto* end = table + N;
    const auto* it = std::upper_bound(table, end, c, [](char32_t v, const CodeRange& r) { return v < r.lo; });
    return it != table && c <= (it - 1)->hi;
}

bool is_n(char32_t c) { return in_table(kIsN, c); }
bool is_alnum(char32_t c) { return in_table(kIsAlnum, c); }
bool is_alpha(char32_t c) { return in_table(kIsAlpha, c); }
bool is_lower(char32_t c) { return in_table(kIsLower, c); }

// str.isspace()
bool is_space(char32_t c) {
    return (c >= 0x09 && c <= 0x0D) || (c >= 0x1C && c <= 0x20) || c == 0x85 || c == 0xA0 || c == 0x1680 ||
           (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

std::u32string decode_utf8(std::string_view s) {
    std::u32string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto b = static_cast<unsigned char>(s[i]);
        int len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xE ? 3 : (b >> 3) == 0x1E ? 4 : 0;
        char32_t cp = len == 1 ? b : len == 2 ? (b & 0x1F) : len == 3 ? (b & 0x0F) : (b & 0x07);
        bool ok = len > 0 && i + len <= s.size();
        for (int k = 1; ok && k < len; ++k) {
            const auto cb = static_cast<unsigned char>(s[i + k]);
            if ((cb & 0xC0) != 0x80) ok = false;
            cp = (cp << 6) | (cb & 0x3F);
        }
        if (!ok) {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

std::string encode_utf8(std::u32string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char32_t c : s) {
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
        } else if (c < 0x800) {
            out.push_back(static_cast<char>(0xC0 | (c >> 6)));
            out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
        } else if (c < 0x10000) {
            out.push_back(static_cast<char>(0xE0 | (c >> 12)));
            out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
        } else {
            out.push_back(static_cast<char>(0xF0 | (c >> 18)));
            out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
        }
    }
    return out;
}

std::vector<std::u32string> split_ws(const std::u32string& s) {
    std::vector<std::u32string> out;
    std::u32string cur;
    for (char32_t c : s) {
        if (is_space(c)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::u32string join(const std::vector<std::u32string>& parts) {
    std::u32string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.push_back(U' ');
        out += parts[i];
    }
    return out;
}

std::u32string dedupe_spaces(const std::u32string& s) {
    std::u32string out;
    bool in_space = false;
    for (char32_t c : s) {
        if (is_space(c)) {
            if (!in_space) out.push_back(U' ');
            in_space = true;
        } else {
            out.push_back(c);
            in_space = false;
        }
    }
    return out;
}

std::u32string strip(const std::u32string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return s.substr(b, e - b);
}

// (L)<mid>(R) -> L + left_pad + mid + right_pad + R, non-overlapping.
template <class PL, class PR>
std::u32string rewrite3(const std::u32string& s, PL left, char32_t mid, PR right, std::u32string_view between_l,
                        std::u32string_view between_r) {
    std::u32string out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (i + 2 < s.size() && s[i + 1] == mid && left(s[i]) && right(s[i + 2])) {
            out.push_back(s[i]);
            out += between_l;
            out.push_back(mid);
            out += between_r;
            out.push_back(s[i + 2]);
            i += 3;
        } else {
            out.push_back(s[i++]);
        }
    }
    return out;
}

std::u32string pad_not_isalnum(const std::u32string& s) {
    static const std::u32string keep = U".'`,-";
    std::u32string out;
    for (char32_t c : s) {
        if (!is_alnum(c) && !is_space(c) && keep.find(c) == std::u32string::npos) {
            out.push_back(U' ');
            out.push_back(c);
            out.push_back(U' ');
        } else {
            out.push_back(c);
        }
    }
    return out;
}

std::u32string replace_multidots(const std::u32string& s) {
    std::u32string out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s[i] == U'.' && i + 1 < s.size() && s[i + 1] == U'.') {
            std::size_t j = i;
            while (j < s.size() && s[j] == U'.') ++j;
            out.push_back(U' ');
            for (std::size_t k = i; k < j; ++k) out += U"DOT";
            out += U"MULTI";
            if (j < s.size()) out.push_back(U' ');
            i = j;
        } else {
            out.push_back(s[i++]);
        }
    }
    return out;
}

std::u32string restore_multidots(const std::u32string& s) {
    std::u32string out;
    std::size_t i = 0;
    while (i < s.size()) {
        std::size_t j = i, dots = 0;
        while (s.compare(j, 3, U"DOT") == 0) {
            j += 3;
            ++dots;
        }
        if (dots > 0 && s.compare(j, 5, U"MULTI") == 0) {
            out.append(dots, U'.');
            i = j + 5;
        } else {
            out.push_back(s[i++]);
        }
    }
    return out;
}

std::u32string separate_commas(const std::u32string& in) {
    // ([^N]),  ->  "\1 , "
    std::u32string s;
    for (std::size_t i = 0; i < in.size();) {
        if (i + 1 < in.size() && in[i + 1] == U',' && !is_n(in[i])) {
            s.push_back(in[i]);
            s += U" , ";
            i += 2;
        } else {
            s.push_back(in[i++]);
        }
    }
    // ,([^N])  ->  " , \1"
    std::u32string t;
    for (std::size_t i = 0; i < s.size();) {
        if (s[i] == U',' && i + 1 < s.size() && !is_n(s[i + 1])) {
            t += U" , ";
            t.push_back(s[i + 1]);
            i += 2;
        } else {
            t.push_back(s[i++]);
        }
    }
    // ([N]),$  ->  "\1 , "
    if (t.size() >= 2 && t.back() == U',' && is_n(t[t.size() - 2])) {
        t.pop_back();
        t += U" , ";
    }
    return t;
}

std::u32string english_apostrophes(std::u32string s) {
    auto alpha = [](char32_t c) { return is_alpha(c); };
    auto not_alpha = [](char32_t c) { return !is_alpha(c); };
    auto not_alpha_n = [](char32_t c) { return !is_alpha(c) && !is_n(c); };
    auto num = [](char32_t c) { return is_n(c); };
    auto ess = [](char32_t c) { return c == U's'; };
    s = rewrite3(s, not_alpha, U'\'', not_alpha, U" ", U" ");
    s = rewrite3(s, not_alpha_n, U'\'', alpha, U" ", U" ");
    s = rewrite3(s, alpha, U'\'', not_alpha, U" ", U" ");
    s = rewrite3(s, alpha, U'\'', alpha, U" ", U"");
    s = rewrite3(s, num, U'\'', ess, U" ", U"");
    return s;
}

const std::set<std::u32string>& prefixes() {
    static const std::set<std::u32string> p = [] {
        std::set<std::u32string> numeric;
        for (const char* w : kNumericOnlyPrefixes) numeric.insert(decode_utf8(w));
        std::set<std::u32string> out;
        for (const char* w : kNonbreakingPrefixes) {
            auto u = decode_utf8(w);
            if (!numeric.count(u)) out.insert(u);
        }
        return out;
    }();
    return p;
}

const std::set<std::u32string>& numeric_prefixes() {
    static const std::set<std::u32string> p = [] {
        std::set<std::u32string> out;
        for (const char* w : kNumericOnlyPrefixes) out.insert(decode_utf8(w));
        return out;
    }();
    return p;
}

std::u32string nonbreaking_prefixes(const std::u32string& s) {
    auto tokens = split_ws(s);
    const std::size_t n = tokens.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& tok = tokens[i];
        if (tok.size() < 2 || tok.back() != U'.') continue;
        const std::u32string prefix = tok.substr(0, tok.size() - 1);
        const bool has_dot_and_alpha =
            prefix.find(U'.') != std::u32string::npos && std::any_of(prefix.begin(), prefix.end(), is_alpha);
        const bool known = prefixes().count(prefix) > 0;
        const bool next_lower = i + 1 < n && !tokens[i + 1].empty() && is_lower(tokens[i + 1][0]);
        if (has_dot_and_alpha || known || next_lower) continue;
        if (numeric_prefixes().count(prefix) && i + 1 < n && !tokens[i + 1].empty() && tokens[i + 1][0] >= U'0' &&
            tokens[i + 1][0] <= U'9')
            continue;
        tokens[i] = prefix + U" .";
    }
    return join(tokens);
}

}  // namespace

std::vector<std::string> moses_tokenize(std::string_view text) {
    std::u32string s = dedupe_spaces(decode_utf8(text));
    s.erase(std::remove_if(s.begin(), s.end(), [](char32_t c) { return c < 0x20; }), s.end());
    s = strip(s);
    s = pad_not_isalnum(s);
    s = replace_multidots(s);
    s = separate_commas(s);
    s = english_apostrophes(std::move(s));
    s = nonbreaking_prefixes(s);
    s = strip(dedupe_spaces(s));
    if (s.size() >= 2 && s.compare(s.size() - 2, 2, U".'") == 0) {
        s.resize(s.size() - 2);
        s += U" . ' ";
    }
    s = restore_multidots(s);
    std::vector<std::string> out;
    for (const auto& t : split_ws(s)) out.push_back(encode_utf8(t));
    return out;
}

}  // namespace ddimedit
