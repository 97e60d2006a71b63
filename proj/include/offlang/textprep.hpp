#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "unicode.hpp"

namespace offlang {

using TokenSequence = std::vector<std::string>;

// Emoji sequence (bytes, may include ZWJ / variation selectors) -> plain
// descriptive name, demoji-style.
class EmojiTable {
public:
    void add(const std::string& sequence, const std::string& name) {
        if (sequence.empty() || name.empty())
            throw DataError("emoji table entries must be non-empty");
        if (name.find('_') != std::string::npos)
            throw DataError("emoji name contains an underscore: " + name);
        auto& bucket = by_first_cp_[first_codepoint(sequence)];
        bucket.emplace_back(sequence, name);
        // Longest key first so ZWJ sequences win over their prefixes.
        std::sort(bucket.begin(), bucket.end(), [](const auto& a, const auto& b) {
            if (a.first.size() != b.first.size())
                return a.first.size() > b.first.size();
            return a.first < b.first;
        });
        size_ = 0;
        for (const auto& [cp, entries] : by_first_cp_) size_ += entries.size();
    }

    std::size_t size() const { return size_; }

    // Longest table entry starting at byte offset i, or nullptr.
    const std::pair<std::string, std::string>* match(std::string_view text,
                                                     std::size_t i) const {
        std::size_t j = i;
        const char32_t cp = utf8_next(text, j);
        auto it = by_first_cp_.find(cp);
        if (it == by_first_cp_.end()) return nullptr;
        for (const auto& entry : it->second) {
            if (text.compare(i, entry.first.size(), entry.first) == 0)
                return &entry;
        }
        return nullptr;
    }

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        for (const auto& [cp, entries] : by_first_cp_)
            for (const auto& e : entries) out.push_back(e.first);
        return out;
    }

private:
    static char32_t first_codepoint(std::string_view s) {
        std::size_t i = 0;
        return utf8_next(s, i);
    }

    std::map<char32_t, std::vector<std::pair<std::string, std::string>>> by_first_cp_;
    std::size_t size_ = 0;
};

inline EmojiTable load_emoji_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open emoji table: " + path);
    EmojiTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError(path + ": line " + std::to_string(line_no) +
                            " is not 'sequence<TAB>name'");
        table.add(line.substr(0, tab), line.substr(tab + 1));
    }
    return table;
}

namespace detail {

// Pictographic blocks; used to recognize emoji the table does not know.
inline bool is_emoji_codepoint(char32_t cp) {
    return (cp >= 0x2600 && cp <= 0x27BF) || (cp >= 0x1F000 && cp <= 0x1FAFF) ||
           (cp >= 0x2B00 && cp <= 0x2BFF) || (cp >= 0x2194 && cp <= 0x21AA) ||
           (cp >= 0x231A && cp <= 0x231B) || (cp >= 0x23E9 && cp <= 0x23F3);
}

inline bool is_emoji_joiner(char32_t cp) {
    return cp == 0x200D || cp == 0xFE0F || (cp >= 0x1F3FB && cp <= 0x1F3FF);
}

// Consumes one maximal emoji-ish run starting at i (already known to start
// with an emoji codepoint). Returns the end offset.
inline std::size_t skip_emoji_run(std::string_view text, std::size_t i) {
    std::size_t j = i;
    while (j < text.size()) {
        std::size_t k = j;
        const char32_t cp = utf8_next(text, k);
        if (is_emoji_codepoint(cp) || is_emoji_joiner(cp)) {
            j = k;
        } else {
            break;
        }
    }
    return j;
}

enum class EmojiMode { Convert, Strip };

struct EmojiScan {
    std::string text;
    std::size_t unknown_sequences = 0;
};

// A boundary is where an emoji sequence was replaced or deleted. Spaces the
// sequence owned collapse to a single separator mid-string and to nothing at
// the edges; text with no boundaries passes through byte-identical.
inline EmojiScan scan_emojis(std::string_view text, const EmojiTable& table,
                             EmojiMode mode) {
    EmojiScan result;
    std::string& out = result.text;
    bool after_boundary = false;

    auto rtrim = [&out] {
        while (!out.empty() && out.back() == ' ') out.pop_back();
    };
    auto append_literal = [&](std::string_view lit) {
        if (after_boundary) {
            while (!lit.empty() && lit.front() == ' ') lit.remove_prefix(1);
            if (lit.empty()) return;
            if (!out.empty()) out.push_back(' ');
            after_boundary = false;
        }
        out.append(lit);
    };

    std::size_t i = 0;
    std::size_t lit_start = 0;
    while (i < text.size()) {
        const auto* entry = table.match(text, i);
        std::size_t j = i;
        const char32_t cp = entry ? 0 : utf8_next(text, j);
        if (!entry && !is_emoji_codepoint(cp)) {
            i = j;
            continue;
        }
        append_literal(text.substr(lit_start, i - lit_start));
        rtrim();
        if (entry) {
            if (mode == EmojiMode::Convert) {
                if (!out.empty()) out.push_back(' ');
                out.append(entry->second);
            }
            i += entry->first.size();
        } else {
            ++result.unknown_sequences;
            i = skip_emoji_run(text, i);
        }
        after_boundary = true;
        lit_start = i;
    }
    append_literal(text.substr(lit_start));
    if (after_boundary) rtrim();
    return result;
}

} // namespace detail

struct EmojiResult {
    std::string text;
    std::size_t unknown_sequences = 0; // emoji runs absent from the table
};

// Replaces each table entry with its name, single-space separated from the
// surrounding text. Emoji not in the table are dropped and tallied.
inline EmojiResult convert_emojis(std::string_view text, const EmojiTable& table) {
    auto scan = detail::scan_emojis(text, table, detail::EmojiMode::Convert);
    return {std::move(scan.text), scan.unknown_sequences};
}

// Deletes emoji; a deletion between two words leaves a single space.
inline EmojiResult strip_emojis(std::string_view text, const EmojiTable& table) {
    auto scan = detail::scan_emojis(text, table, detail::EmojiMode::Strip);
    return {std::move(scan.text), scan.unknown_sequences};
}

// Drops every character in the Unicode P* categories; the gap becomes a
// space so "it's" splits rather than fusing, then whitespace is normalized.
inline std::string remove_punctuation(std::string_view text) {
    std::string out;
    bool pending_space = false;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t j = i;
        const char32_t cp = utf8_next(text, j);
        if (is_punct(cp) || is_space(cp)) {
            pending_space = !out.empty();
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.append(text.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

inline TokenSequence whitespace_tokenize(std::string_view text) {
    TokenSequence tokens;
    std::string current;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t j = i;
        const char32_t cp = utf8_next(text, j);
        if (is_space(cp)) {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
        } else {
            current.append(text.substr(i, j - i));
        }
        i = j;
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

namespace detail {

inline bool ascii_alpha_token(const std::string& t) {
    if (t.empty()) return false;
    for (const char c : t)
        if (!std::isalpha(static_cast<unsigned char>(c))) return false;
    return true;
}

inline bool vowel(char c) {
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

// After stripping -ing/-ed: undouble a trailing consonant (not l/s/z),
// else restore a final e on a short CVC stem ("mak" -> "make").
inline std::string fixup_stem(std::string stem) {
    const std::size_t n = stem.size();
    if (n >= 2 && stem[n - 1] == stem[n - 2] && !vowel(stem[n - 1]) &&
        stem[n - 1] != 'l' && stem[n - 1] != 's' && stem[n - 1] != 'z') {
        stem.pop_back();
        return stem;
    }
    if (n >= 3 && n <= 4 && !vowel(stem[n - 3]) && vowel(stem[n - 2]) &&
        !vowel(stem[n - 1]) && stem[n - 1] != 'w' && stem[n - 1] != 'x' &&
        stem[n - 1] != 'y') {
        stem.push_back('e');
    }
    return stem;
}

inline bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline std::string lemmatize_token(const std::string& token) {
    std::string t = token;
    for (char& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const std::size_t n = t.size();
    if (n >= 5 && ends_with(t, "ies")) return t.substr(0, n - 3) + "y";
    if (n >= 4 && ends_with(t, "es")) {
        const std::string_view before(t.data(), n - 2);
        if (before.back() == 's' || before.back() == 'x' || before.back() == 'z' ||
            ends_with(std::string(before), "ch") || ends_with(std::string(before), "sh"))
            return t.substr(0, n - 2);
    }
    if (n >= 4 && ends_with(t, "s") && !ends_with(t, "ss") && !ends_with(t, "us") &&
        !ends_with(t, "is"))
        return t.substr(0, n - 1);
    if (n >= 6 && ends_with(t, "ing")) return fixup_stem(t.substr(0, n - 3));
    if (n >= 5 && ends_with(t, "ed")) return fixup_stem(t.substr(0, n - 2));
    return t;
}

} // namespace detail

// Suffix-rule lemmatizer for all-ASCII-alphabetic tokens only; anything
// else (Malayalam script, digits, mixed) passes through untouched.
inline TokenSequence lemmatize_english(const TokenSequence& tokens) {
    TokenSequence out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
        if (detail::ascii_alpha_token(t))
            out.push_back(detail::lemmatize_token(t));
        else
            out.push_back(t);
    }
    return out;
}

// Classical regime: strip emojis, drop punctuation, tokenize, lemmatize.
inline TokenSequence classical_preprocess(std::string_view text,
                                          const EmojiTable& table,
                                          bool lowercase_ascii = true) {
    std::string s = strip_emojis(text, table).text;
    s = remove_punctuation(s);
    if (lowercase_ascii)
        for (char& c : s)
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return lemmatize_english(whitespace_tokenize(s));
}

// Transformer regime: emoji-to-text only.
inline std::string transformer_preprocess(std::string_view text,
                                          const EmojiTable& table) {
    return convert_emojis(text, table).text;
}

} // namespace offlang
