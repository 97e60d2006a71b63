#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace offlang {

// Byte-level BPE vocabulary. Ids: specials 0..4, byte symbols 5..260 (byte b
// at id 5+b), then one id per merge in learned order. Every byte value is
// reachable, so encode/decode round-trips any UTF-8 string.
struct SubwordVocabulary {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;
    static constexpr int kMask = 4;
    static constexpr int kNumSpecials = 5;
    static constexpr int kFirstByte = kNumSpecials;
    static constexpr int kFirstMerge = kNumSpecials + 256;

    std::vector<std::pair<int, int>> merges;       // merge k builds id kFirstMerge+k
    std::vector<std::string> id_to_token;          // byte strings; specials are display names
    std::map<std::pair<int, int>, int> merge_rank; // pair -> k
    std::uint64_t fingerprint = 0;

    int size() const { return static_cast<int>(id_to_token.size()); }

    static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }
};

struct TokenIdSequence {
    std::vector<int> ids;
    int attention_length = 0; // count of non-pad positions

    int max_len() const { return static_cast<int>(ids.size()); }
};

inline bool valid_token_id_sequence(const TokenIdSequence& seq) {
    const int n = seq.max_len();
    if (seq.attention_length < 2 || seq.attention_length > n) return false;
    if (seq.ids[0] != SubwordVocabulary::kCls) return false;
    if (seq.ids[seq.attention_length - 1] != SubwordVocabulary::kSep) return false;
    for (int i = 1; i < seq.attention_length - 1; ++i)
        if (seq.ids[i] == SubwordVocabulary::kSep ||
            seq.ids[i] == SubwordVocabulary::kPad)
            return false;
    for (int i = seq.attention_length; i < n; ++i)
        if (seq.ids[i] != SubwordVocabulary::kPad) return false;
    return true;
}

namespace detail {

inline bool bpe_ws(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Alternating runs of non-whitespace and whitespace. Merges never cross a
// run boundary; keeping the whitespace runs makes decoding lossless.
inline std::vector<std::string_view> bpe_pieces(std::string_view text) {
    std::vector<std::string_view> pieces;
    std::size_t i = 0;
    while (i < text.size()) {
        const bool ws = bpe_ws(text[i]);
        std::size_t j = i + 1;
        while (j < text.size() && bpe_ws(text[j]) == ws) ++j;
        pieces.push_back(text.substr(i, j - i));
        i = j;
    }
    return pieces;
}

inline std::vector<int> bytes_to_symbols(std::string_view piece) {
    std::vector<int> syms;
    syms.reserve(piece.size());
    for (const char c : piece)
        syms.push_back(SubwordVocabulary::kFirstByte +
                       static_cast<int>(static_cast<unsigned char>(c)));
    return syms;
}

inline void apply_merge(std::vector<int>& syms, int a, int b, int merged) {
    std::size_t w = 0;
    for (std::size_t r = 0; r < syms.size();) {
        if (r + 1 < syms.size() && syms[r] == a && syms[r + 1] == b) {
            syms[w++] = merged;
            r += 2;
        } else {
            syms[w++] = syms[r++];
        }
    }
    syms.resize(w);
}

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (const char c : data) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

inline std::uint64_t vocabulary_fingerprint(const std::vector<std::pair<int, int>>& merges) {
    std::uint64_t h = detail::fnv1a64("offlang-bpe-v1");
    for (const auto& [a, b] : merges) {
        char buf[8];
        for (int k = 0; k < 4; ++k) buf[k] = static_cast<char>((a >> (8 * k)) & 0xFF);
        for (int k = 0; k < 4; ++k) buf[4 + k] = static_cast<char>((b >> (8 * k)) & 0xFF);
        h = detail::fnv1a64(std::string_view(buf, 8), h);
    }
    return h;
}

namespace detail {

inline SubwordVocabulary vocabulary_from_merges(std::vector<std::pair<int, int>> merges) {
    SubwordVocabulary vocab;
    vocab.id_to_token = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    for (int b = 0; b < 256; ++b)
        vocab.id_to_token.push_back(std::string(1, static_cast<char>(b)));
    for (std::size_t k = 0; k < merges.size(); ++k) {
        const auto [a, b] = merges[k];
        const int id = SubwordVocabulary::kFirstMerge + static_cast<int>(k);
        if (a < SubwordVocabulary::kFirstByte || a >= id ||
            b < SubwordVocabulary::kFirstByte || b >= id)
            throw DataError("BPE merge rule references an invalid token id");
        vocab.id_to_token.push_back(vocab.id_to_token[a] + vocab.id_to_token[b]);
        vocab.merge_rank[{a, b}] = static_cast<int>(k);
    }
    vocab.merges = std::move(merges);
    vocab.fingerprint = vocabulary_fingerprint(vocab.merges);
    return vocab;
}

} // namespace detail

// Greedy highest-frequency pair merging over whitespace-delimited pieces;
// ties go to the lexicographically smaller (left, right) token-string pair.
inline SubwordVocabulary train_bpe(const std::vector<std::string>& corpus,
                                   int merge_count) {
    if (merge_count < 0) throw ConfigError("merge_count must be >= 0");
    std::size_t total_bytes = 0;
    for (const auto& s : corpus) total_bytes += s.size();
    if (corpus.empty() || total_bytes == 0) throw DataError("train_bpe: empty corpus");

    std::map<std::string, long long> piece_counts;
    for (const auto& text : corpus)
        for (const auto piece : detail::bpe_pieces(text)) ++piece_counts[std::string(piece)];

    std::vector<std::pair<std::vector<int>, long long>> work;
    work.reserve(piece_counts.size());
    for (const auto& [piece, count] : piece_counts)
        work.emplace_back(detail::bytes_to_symbols(piece), count);

    std::vector<std::string> token_str = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    for (int b = 0; b < 256; ++b) token_str.push_back(std::string(1, static_cast<char>(b)));

    std::vector<std::pair<int, int>> merges;
    for (int step = 0; step < merge_count; ++step) {
        std::map<std::pair<int, int>, long long> pair_counts;
        for (const auto& [syms, count] : work)
            for (std::size_t i = 0; i + 1 < syms.size(); ++i)
                pair_counts[{syms[i], syms[i + 1]}] += count;
        if (pair_counts.empty()) break;

        std::pair<int, int> best{-1, -1};
        long long best_count = 0;
        for (const auto& [pair, count] : pair_counts) {
            if (count < best_count) continue;
            if (count > best_count) {
                best = pair;
                best_count = count;
                continue;
            }
            const auto lex = [&](const std::pair<int, int>& p) {
                return std::make_pair(token_str[p.first], token_str[p.second]);
            };
            if (lex(pair) < lex(best)) best = pair;
        }
        const int merged = SubwordVocabulary::kFirstMerge + static_cast<int>(merges.size());
        token_str.push_back(token_str[best.first] + token_str[best.second]);
        merges.push_back(best);
        for (auto& [syms, count] : work)
            detail::apply_merge(syms, best.first, best.second, merged);
    }
    return detail::vocabulary_from_merges(std::move(merges));
}

namespace detail {

inline std::vector<int> encode_piece(const SubwordVocabulary& vocab,
                                     std::string_view piece) {
    std::vector<int> syms = bytes_to_symbols(piece);
    while (syms.size() > 1) {
        int best_rank = -1;
        std::pair<int, int> best{-1, -1};
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
            const auto it = vocab.merge_rank.find({syms[i], syms[i + 1]});
            if (it != vocab.merge_rank.end() &&
                (best_rank < 0 || it->second < best_rank)) {
                best_rank = it->second;
                best = it->first;
            }
        }
        if (best_rank < 0) break;
        apply_merge(syms, best.first, best.second,
                    SubwordVocabulary::kFirstMerge + best_rank);
    }
    return syms;
}

} // namespace detail

// [CLS] + subword ids + [SEP], tail-truncated to max_len, padded with [PAD].
inline TokenIdSequence encode(const SubwordVocabulary& vocab, std::string_view text,
                              int max_len) {
    if (max_len < 3) throw ConfigError("encode: max_len must be >= 3");
    std::vector<int> content;
    for (const auto piece : detail::bpe_pieces(text)) {
        const auto syms = detail::encode_piece(vocab, piece);
        content.insert(content.end(), syms.begin(), syms.end());
    }
    if (content.size() > static_cast<std::size_t>(max_len - 2))
        content.resize(max_len - 2);

    TokenIdSequence seq;
    seq.ids.reserve(max_len);
    seq.ids.push_back(SubwordVocabulary::kCls);
    seq.ids.insert(seq.ids.end(), content.begin(), content.end());
    seq.ids.push_back(SubwordVocabulary::kSep);
    seq.attention_length = static_cast<int>(seq.ids.size());
    seq.ids.resize(max_len, SubwordVocabulary::kPad);
    return seq;
}

// Inverse of encode on non-special positions; special ids are dropped.
inline std::string decode(const SubwordVocabulary& vocab, const TokenIdSequence& seq) {
    std::string out;
    for (const int id : seq.ids) {
        if (id < 0 || id >= vocab.size())
            throw DataError("decode: token id " + std::to_string(id) + " out of range");
        if (SubwordVocabulary::is_special(id)) continue;
        out += vocab.id_to_token[id];
    }
    return out;
}

// Line-oriented vocabulary file with a fingerprint trailer.
inline void save_vocabulary(const SubwordVocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file: " + path);
    out << "offlang-bpe v1\n";
    out << "specials [PAD] [UNK] [CLS] [SEP] [MASK]\n";
    out << "merges " << vocab.merges.size() << "\n";
    for (const auto& [a, b] : vocab.merges) out << "m " << a << " " << b << "\n";
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(vocab.fingerprint));
    out << "fingerprint " << hex << "\n";
    if (!out) throw DataError("failed writing vocabulary file: " + path);
}

inline SubwordVocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary file: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "offlang-bpe v1")
        throw DataError(path + ": not an offlang-bpe v1 vocabulary file");
    if (!std::getline(in, line) || line.rfind("specials ", 0) != 0)
        throw DataError(path + ": missing specials line");
    if (!std::getline(in, line) || line.rfind("merges ", 0) != 0)
        throw DataError(path + ": missing merges line");
    const std::size_t count = std::stoul(line.substr(7));
    std::vector<std::pair<int, int>> merges;
    merges.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        if (!std::getline(in, line)) throw DataError(path + ": truncated merge list");
        std::istringstream ss(line);
        std::string tag;
        int a = -1, b = -1;
        if (!(ss >> tag >> a >> b) || tag != "m")
            throw DataError(path + ": malformed merge line");
        merges.emplace_back(a, b);
    }
    if (!std::getline(in, line) || line.rfind("fingerprint ", 0) != 0)
        throw DataError(path + ": missing fingerprint line");
    auto vocab = detail::vocabulary_from_merges(std::move(merges));
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(vocab.fingerprint));
    if (line.substr(12) != hex)
        throw DataError(path + ": fingerprint mismatch, file is corrupt or stale");
    return vocab;
}

} // namespace offlang
