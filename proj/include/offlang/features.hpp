#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "textprep.hpp"

namespace offlang {

struct BowVocabulary {
    std::unordered_map<std::string, int> token_to_index;
    std::vector<std::string> index_to_token;
    int min_frequency = 1;

    int size() const { return static_cast<int>(index_to_token.size()); }
};

struct SparseCountVector {
    std::vector<std::pair<int, int>> entries; // (index, count), index ascending
    int dimension = 0;
};

// Tokens with corpus frequency >= min_frequency, indexed in first-occurrence
// order over the training documents.
inline BowVocabulary build_vocabulary(const std::vector<TokenSequence>& train_docs,
                                      int min_frequency = 1) {
    if (min_frequency < 1) throw ConfigError("min_frequency must be >= 1");
    std::unordered_map<std::string, long long> freq;
    std::vector<std::string> order;
    for (const auto& doc : train_docs) {
        for (const auto& tok : doc) {
            auto [it, inserted] = freq.try_emplace(tok, 0);
            if (inserted) order.push_back(tok);
            ++it->second;
        }
    }
    if (order.empty()) throw DataError("build_vocabulary: corpus has no tokens");

    BowVocabulary vocab;
    vocab.min_frequency = min_frequency;
    for (const auto& tok : order) {
        if (freq[tok] < min_frequency) continue;
        vocab.token_to_index.emplace(tok, vocab.size());
        vocab.index_to_token.push_back(tok);
    }
    if (vocab.index_to_token.empty())
        throw DataError("build_vocabulary: min_frequency filtered out every token");
    return vocab;
}

// Counts of in-vocabulary tokens; out-of-vocabulary tokens are dropped.
inline SparseCountVector vectorize(const BowVocabulary& vocab,
                                   const TokenSequence& tokens) {
    std::vector<int> counts(vocab.size(), 0);
    for (const auto& tok : tokens) {
        const auto it = vocab.token_to_index.find(tok);
        if (it != vocab.token_to_index.end()) ++counts[it->second];
    }
    SparseCountVector vec;
    vec.dimension = vocab.size();
    for (int i = 0; i < vocab.size(); ++i)
        if (counts[i] > 0) vec.entries.emplace_back(i, counts[i]);
    return vec;
}

inline void save_bow_vocabulary(const BowVocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary: " + path);
    for (int i = 0; i < vocab.size(); ++i)
        out << vocab.index_to_token[i] << '\t' << i << '\n';
    if (!out) throw DataError("failed writing vocabulary: " + path);
}

inline BowVocabulary load_bow_vocabulary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary: " + path);
    BowVocabulary vocab;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::size_t tab = line.rfind('\t');
        if (tab == std::string::npos)
            throw DataError(path + ": line " + std::to_string(line_no) +
                            " is not 'token<TAB>index'");
        const std::string tok = line.substr(0, tab);
        const int idx = std::stoi(line.substr(tab + 1));
        if (idx != vocab.size())
            throw DataError(path + ": line " + std::to_string(line_no) +
                            " index out of order");
        vocab.token_to_index.emplace(tok, idx);
        vocab.index_to_token.push_back(tok);
    }
    if (vocab.index_to_token.empty()) throw DataError(path + ": empty vocabulary");
    return vocab;
}

} // namespace offlang
