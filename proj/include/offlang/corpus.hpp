#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "unicode.hpp"

namespace offlang {

enum class BinaryLabel : int { NOT = 0, OFF = 1 };

inline const char* label_name(BinaryLabel l) {
    return l == BinaryLabel::OFF ? "OFF" : "NOT";
}

struct Document {
    std::string id;
    std::string text;
    std::optional<BinaryLabel> label;
};

struct LabeledDataset {
    std::vector<Document> documents;
    std::string name;

    std::size_t size() const { return documents.size(); }
    bool fully_labeled() const {
        for (const auto& d : documents)
            if (!d.label) return false;
        return !documents.empty();
    }
    bool fully_unlabeled() const {
        for (const auto& d : documents)
            if (d.label) return false;
        return true;
    }
};

struct CorpusStats {
    std::size_t total = 0;
    std::map<BinaryLabel, std::size_t> per_class;
    double class_ratio = 0.0; // fraction of OFF documents
};

// OLID level A only; level B/C labels are rejected.
inline BinaryLabel map_olid_level_a(const std::string& raw_label) {
    if (raw_label == "OFF") return BinaryLabel::OFF;
    if (raw_label == "NOT") return BinaryLabel::NOT;
    throw DataError("unknown OLID level-A label: '" + raw_label + "'");
}

using LabelAliases = std::map<std::string, BinaryLabel>;

inline LabelAliases default_label_aliases() {
    return {
        {"NOT", BinaryLabel::NOT},
        {"OFF", BinaryLabel::OFF},
        {"not-offensive", BinaryLabel::NOT},
        {"offensive", BinaryLabel::OFF},
        {"Not_offensive", BinaryLabel::NOT},
        {"Offensive", BinaryLabel::OFF},
    };
}

// Column selectors are decimal indices or, with has_header, header names.
struct TsvSchema {
    bool has_header = false;
    std::string id_column = "0";
    std::string text_column = "1";
    std::string label_column = "2";
    bool has_label = true;
    bool allow_extra_columns = false; // trailing columns beyond the schema
    LabelAliases label_aliases = default_label_aliases();
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            cols.push_back(line.substr(start));
            break;
        }
        cols.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return cols;
}

inline std::size_t resolve_column(const std::string& selector,
                                  const std::vector<std::string>* header,
                                  const std::string& what) {
    if (!selector.empty() &&
        selector.find_first_not_of("0123456789") == std::string::npos) {
        return static_cast<std::size_t>(std::stoul(selector));
    }
    if (!header)
        throw ConfigError(what + " column '" + selector +
                          "' is a name but the schema has no header row");
    for (std::size_t i = 0; i < header->size(); ++i)
        if ((*header)[i] == selector) return i;
    throw DataError(what + " column '" + selector + "' not found in header");
}

} // namespace detail

// UTF-8, tab-separated, no quoting. A tab inside text changes the column
// count and is reported as a malformed row.
inline LabeledDataset load_tsv(const std::string& path, const TsvSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open TSV file: " + path);

    LabeledDataset ds;
    ds.name = path;
    std::set<std::string> seen_ids;

    std::string line;
    std::size_t line_no = 0;
    std::optional<std::vector<std::string>> header;
    std::size_t id_col = 0, text_col = 0, label_col = 0;
    bool columns_resolved = false;
    std::size_t expected_cols = 0;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto cols = detail::split_tabs(line);
        if (line_no == 1 && schema.has_header) {
            header = cols;
            continue;
        }
        if (!columns_resolved) {
            const auto* hdr = header ? &*header : nullptr;
            id_col = detail::resolve_column(schema.id_column, hdr, "id");
            text_col = detail::resolve_column(schema.text_column, hdr, "text");
            if (schema.has_label)
                label_col = detail::resolve_column(schema.label_column, hdr, "label");
            expected_cols = std::max(id_col, text_col) + 1;
            if (schema.has_label)
                expected_cols = std::max(expected_cols, label_col + 1);
            if (header) expected_cols = std::max(expected_cols, header->size());
            columns_resolved = true;
        }
        const bool bad_count = schema.allow_extra_columns
                                   ? cols.size() < expected_cols
                                   : cols.size() != expected_cols;
        if (bad_count)
            throw DataError(path + ": line " + std::to_string(line_no) + " has " +
                            std::to_string(cols.size()) + " columns, expected " +
                            std::to_string(expected_cols));
        Document doc;
        doc.id = cols[id_col];
        doc.text = cols[text_col];
        if (!valid_utf8(doc.text))
            throw DataError(path + ": line " + std::to_string(line_no) +
                            " text is not valid UTF-8");
        if (!seen_ids.insert(doc.id).second)
            throw DataError(path + ": line " + std::to_string(line_no) +
                            " duplicate document id '" + doc.id + "'");
        if (schema.has_label) {
            const std::string& raw = cols[label_col];
            auto it = schema.label_aliases.find(raw);
            if (it == schema.label_aliases.end())
                throw DataError(path + ": line " + std::to_string(line_no) +
                                " unknown label '" + raw + "'");
            doc.label = it->second;
        }
        ds.documents.push_back(std::move(doc));
    }
    return ds;
}

inline CorpusStats stats(const LabeledDataset& ds) {
    if (ds.documents.empty()) throw DataError("stats: empty dataset");
    if (!ds.fully_labeled()) throw DataError("stats: dataset has unlabeled documents");
    CorpusStats s;
    s.total = ds.documents.size();
    s.per_class[BinaryLabel::NOT] = 0;
    s.per_class[BinaryLabel::OFF] = 0;
    for (const auto& d : ds.documents) ++s.per_class[*d.label];
    s.class_ratio = static_cast<double>(s.per_class[BinaryLabel::OFF]) /
                    static_cast<double>(s.total);
    return s;
}

struct SplitResult {
    LabeledDataset train;
    LabeledDataset validation;
};

// Per-class counts by largest remainder so the validation total matches
// round(fraction * N) and each class lands within one document of its quota.
inline SplitResult stratified_split(const LabeledDataset& ds,
                                    double validation_fraction,
                                    std::uint64_t seed) {
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw ConfigError("validation fraction must be in (0, 1)");
    if (ds.documents.empty() || !ds.fully_labeled())
        throw DataError("stratified_split: dataset must be non-empty and fully labeled");

    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < ds.documents.size(); ++i)
        by_class[static_cast<int>(*ds.documents[i].label)].push_back(i);

    const auto total_val = static_cast<std::size_t>(
        std::lround(validation_fraction * static_cast<double>(ds.documents.size())));
    std::size_t take[2] = {0, 0};
    double remainder[2] = {0.0, 0.0};
    std::size_t assigned = 0;
    for (int c = 0; c < 2; ++c) {
        const double quota = validation_fraction * static_cast<double>(by_class[c].size());
        take[c] = static_cast<std::size_t>(std::floor(quota));
        remainder[c] = quota - static_cast<double>(take[c]);
        assigned += take[c];
    }
    while (assigned < total_val) {
        int pick = remainder[0] >= remainder[1] ? 0 : 1;
        if (take[pick] >= by_class[pick].size()) pick = 1 - pick;
        ++take[pick];
        remainder[pick] = -1.0;
        ++assigned;
    }
    for (int c = 0; c < 2; ++c) {
        // A class of one document may be forced to either side; a larger
        // class must keep at least one training document.
        if (by_class[c].size() >= 2 && take[c] == by_class[c].size())
            throw ConfigError(std::string("validation fraction leaves class ") +
                              label_name(static_cast<BinaryLabel>(c)) +
                              " empty in train");
    }

    SplitResult out;
    out.train.name = ds.name + "/train";
    out.validation.name = ds.name + "/validation";
    std::vector<bool> in_val(ds.documents.size(), false);
    Rng rng(seed);
    for (int c = 0; c < 2; ++c) {
        auto idx = by_class[c];
        rng.shuffle(idx);
        for (std::size_t k = 0; k < take[c]; ++k) in_val[idx[k]] = true;
    }
    for (std::size_t i = 0; i < ds.documents.size(); ++i)
        (in_val[i] ? out.validation : out.train).documents.push_back(ds.documents[i]);
    return out;
}

// Synthetic two-language transfer benchmark. Source and target use disjoint
// surface words built from a shared root inventory (roots carry the class
// signal, suffixes differ per language), so a BPE vocabulary trained on both
// corpora shares the root subwords across languages. A document is OFF iff
// it contains at least one marker word.
struct SynthConfig {
    std::size_t source_size = 2000;
    std::size_t target_size = 400;
    double class_ratio = 567.0 / 3200.0;
    std::size_t neutral_vocab = 40; // neutral words per language
    std::size_t marker_vocab = 6;   // offensive-marker words per language
    std::size_t min_len = 5;
    std::size_t max_len = 12;
};

struct SynthBenchmark {
    LabeledDataset source;
    LabeledDataset target;
    std::vector<std::string> source_markers;
    std::vector<std::string> target_markers;
};

namespace detail {

inline std::vector<std::string> synth_roots(std::size_t count, bool markers) {
    static const char* const onsets[] = {"z",  "gr", "v",  "sk", "pl", "dr",
                                         "m",  "th", "br", "kn", "f",  "j",
                                         "tr", "sp", "kl", "sn"};
    static const char* const nuclei[] = {"or", "u", "a", "i", "e", "au", "ei", "oo"};
    static const char* const codas[] = {"g", "m", "x", "l", "nd", "rk", "p", "st"};
    std::vector<std::string> roots;
    // Marker roots draw from a slice of the grid that neutral roots skip.
    std::size_t n = 0;
    for (std::size_t i = 0; i < 16 && roots.size() < count; ++i) {
        for (std::size_t j = 0; j < 8 && roots.size() < count; ++j) {
            for (std::size_t k = 0; k < 8 && roots.size() < count; ++k, ++n) {
                const bool marker_cell = (i + j + k) % 7 == 0;
                if (marker_cell != markers) continue;
                roots.push_back(std::string(onsets[i]) + nuclei[j] + codas[k]);
            }
        }
    }
    if (roots.size() < count)
        throw ConfigError("synth vocabulary size exceeds the root inventory");
    return roots;
}

inline LabeledDataset synth_language(const std::string& name,
                                     const std::vector<std::string>& suffixes,
                                     const char* id_prefix, std::size_t size,
                                     const SynthConfig& cfg, std::uint64_t seed,
                                     std::vector<std::string>* markers_out) {
    // Every root appears under several language-specific suffixes, so roots
    // stay frequent shared subword units while the surface words differ.
    const auto neutral_roots = synth_roots(cfg.neutral_vocab, false);
    const auto marker_roots = synth_roots(cfg.marker_vocab, true);
    std::vector<std::string> neutral, markers;
    for (const auto& r : neutral_roots)
        for (const auto& s : suffixes) neutral.push_back(r + s);
    for (const auto& r : marker_roots)
        for (const auto& s : suffixes) markers.push_back(r + s);
    if (markers_out) *markers_out = markers;

    const auto n_off = static_cast<std::size_t>(
        std::lround(cfg.class_ratio * static_cast<double>(size)));
    const std::size_t n_not = size - n_off;
    if (n_off < 4 || n_not < 4)
        throw ConfigError("synth_codeswitch: each class needs at least 4 documents");

    std::vector<BinaryLabel> labels(n_off, BinaryLabel::OFF);
    labels.resize(size, BinaryLabel::NOT);
    Rng rng(seed);
    rng.shuffle(labels);

    LabeledDataset ds;
    ds.name = name;
    for (std::size_t i = 0; i < size; ++i) {
        const std::size_t len = cfg.min_len + rng.index(cfg.max_len - cfg.min_len + 1);
        std::vector<std::string> words;
        words.reserve(len);
        for (std::size_t k = 0; k < len; ++k)
            words.push_back(neutral[rng.index(neutral.size())]);
        if (labels[i] == BinaryLabel::OFF) {
            const std::size_t marker_count = 1 + rng.index(2);
            for (std::size_t k = 0; k < marker_count; ++k)
                words[rng.index(words.size())] = markers[rng.index(markers.size())];
        }
        Document doc;
        char id[32];
        std::snprintf(id, sizeof(id), "%s-%06zu", id_prefix, i);
        doc.id = id;
        doc.label = labels[i];
        for (std::size_t k = 0; k < words.size(); ++k) {
            if (k) doc.text += ' ';
            doc.text += words[k];
        }
        ds.documents.push_back(std::move(doc));
    }
    return ds;
}

} // namespace detail

inline SynthBenchmark synth_codeswitch(const SynthConfig& cfg, std::uint64_t seed) {
    if (cfg.min_len < 1 || cfg.max_len < cfg.min_len)
        throw ConfigError("synth_codeswitch: bad document length bounds");
    if (cfg.target_size >= cfg.source_size)
        throw ConfigError("synth_codeswitch: target must be smaller than source");
    SynthBenchmark bench;
    bench.source = detail::synth_language("synth-source", {"an", "el", "or"}, "src",
                                          cfg.source_size, cfg, derive_seed(seed, 1),
                                          &bench.source_markers);
    bench.target = detail::synth_language("synth-target", {"ik", "ut", "ay"}, "tgt",
                                          cfg.target_size, cfg, derive_seed(seed, 2),
                                          &bench.target_markers);
    return bench;
}

} // namespace offlang
