#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"

#include "json.hpp"

namespace offlang {

// 2x2 gold x predicted counts, class order (NOT, OFF).
struct ConfusionMatrix {
    std::array<std::array<std::size_t, 2>, 2> counts{{{0, 0}, {0, 0}}};

    std::size_t total() const {
        return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
    }
    std::size_t support(BinaryLabel gold) const {
        const int g = static_cast<int>(gold);
        return counts[g][0] + counts[g][1];
    }
};

inline ConfusionMatrix confusion(const std::vector<BinaryLabel>& golds,
                                 const std::vector<BinaryLabel>& preds) {
    if (golds.empty()) throw DataError("confusion: empty input");
    if (golds.size() != preds.size())
        throw DataError("confusion: gold/prediction length mismatch");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < golds.size(); ++i)
        ++cm.counts[static_cast<int>(golds[i])][static_cast<int>(preds[i])];
    return cm;
}

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

// Zero denominators yield 0 (flagged in the report), never NaN.
inline ClassMetrics class_prf(const ConfusionMatrix& cm, BinaryLabel cls) {
    const int c = static_cast<int>(cls);
    const double tp = static_cast<double>(cm.counts[c][c]);
    const double fp = static_cast<double>(cm.counts[1 - c][c]);
    const double fn = static_cast<double>(cm.counts[c][1 - c]);
    ClassMetrics m;
    m.support = cm.support(cls);
    m.precision = (tp + fp) > 0 ? tp / (tp + fp) : 0.0;
    m.recall = (tp + fn) > 0 ? tp / (tp + fn) : 0.0;
    m.f1 = (m.precision + m.recall) > 0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

struct EvalReport {
    ClassMetrics per_class[2]; // indexed by BinaryLabel
    double weighted_precision = 0.0;
    double weighted_recall = 0.0;
    double weighted_f1 = 0.0;
    double macro_f1 = 0.0;
    std::size_t total = 0;
    bool degenerate = false; // some zero-denominator convention fired
};

struct WeightedMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Support-weighted means with gold-count weights.
inline WeightedMetrics weighted_average(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw DataError("weighted_average: empty confusion matrix");
    WeightedMetrics w;
    const double total = static_cast<double>(cm.total());
    for (int c = 0; c < 2; ++c) {
        const auto m = class_prf(cm, static_cast<BinaryLabel>(c));
        const double weight = static_cast<double>(m.support) / total;
        w.precision += weight * m.precision;
        w.recall += weight * m.recall;
        w.f1 += weight * m.f1;
    }
    return w;
}

inline double macro_f1(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw DataError("macro_f1: empty confusion matrix");
    return (class_prf(cm, BinaryLabel::NOT).f1 + class_prf(cm, BinaryLabel::OFF).f1) / 2.0;
}

inline EvalReport build_report(const ConfusionMatrix& cm) {
    EvalReport r;
    r.total = cm.total();
    for (int c = 0; c < 2; ++c) {
        r.per_class[c] = class_prf(cm, static_cast<BinaryLabel>(c));
        const auto& m = r.per_class[c];
        const double tp = static_cast<double>(cm.counts[c][c]);
        const double fp = static_cast<double>(cm.counts[1 - c][c]);
        const double fn = static_cast<double>(cm.counts[c][1 - c]);
        if (tp + fp == 0 || tp + fn == 0 || m.precision + m.recall == 0)
            r.degenerate = true;
    }
    const auto w = weighted_average(cm);
    r.weighted_precision = w.precision;
    r.weighted_recall = w.recall;
    r.weighted_f1 = w.f1;
    r.macro_f1 = macro_f1(cm);
    return r;
}

// Round half to even at `digits` decimals.
inline double round_half_even(double v, int digits) {
    const double scale = std::pow(10.0, digits);
    const double scaled = v * scale;
    const double floor_v = std::floor(scaled);
    const double frac = scaled - floor_v;
    double r;
    if (frac > 0.5) {
        r = floor_v + 1.0;
    } else if (frac < 0.5) {
        r = floor_v;
    } else {
        r = (std::fmod(floor_v, 2.0) == 0.0) ? floor_v : floor_v + 1.0;
    }
    return r / scale;
}

namespace detail {

inline std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", round_half_even(v, 2));
    return buf;
}

} // namespace detail

// Table-style text rendering: per-class P/R/F1 blocks, the weighted block,
// then macro F1, with the display names the report tables use.
inline std::string render_report_text(const EvalReport& r) {
    std::string out;
    out += "Non Hate Offensive        Hate Offensive            Weighted Average\n";
    out += "P     R     F1            P     R     F1            P     R     F1            F1 Macro\n";
    const auto& n = r.per_class[static_cast<int>(BinaryLabel::NOT)];
    const auto& o = r.per_class[static_cast<int>(BinaryLabel::OFF)];
    char line[256];
    std::snprintf(line, sizeof(line),
                  "%-6s%-6s%-14s%-6s%-6s%-14s%-6s%-6s%-14s%s\n",
                  detail::fixed2(n.precision).c_str(), detail::fixed2(n.recall).c_str(),
                  detail::fixed2(n.f1).c_str(), detail::fixed2(o.precision).c_str(),
                  detail::fixed2(o.recall).c_str(), detail::fixed2(o.f1).c_str(),
                  detail::fixed2(r.weighted_precision).c_str(),
                  detail::fixed2(r.weighted_recall).c_str(),
                  detail::fixed2(r.weighted_f1).c_str(),
                  detail::fixed2(r.macro_f1).c_str());
    out += line;
    std::snprintf(line, sizeof(line), "support NOT=%zu OFF=%zu total=%zu\n",
                  n.support, o.support, r.total);
    out += line;
    if (r.degenerate)
        out += "note: a zero-denominator convention fired (P/R/F1 reported as 0)\n";
    return out;
}

// Full-precision structured rendering; parses back to equal values.
inline std::string render_report_structured(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["format_version"] = 1;
    for (int c = 0; c < 2; ++c) {
        const char* key = label_name(static_cast<BinaryLabel>(c));
        const auto& m = r.per_class[c];
        j["per_class"][key] = {{"precision", m.precision},
                               {"recall", m.recall},
                               {"f1", m.f1},
                               {"support", m.support}};
    }
    j["weighted"] = {{"precision", r.weighted_precision},
                     {"recall", r.weighted_recall},
                     {"f1", r.weighted_f1}};
    j["macro_f1"] = r.macro_f1;
    j["total"] = r.total;
    j["degenerate"] = r.degenerate;
    return j.dump(2) + "\n";
}

inline EvalReport parse_report_structured(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format_version").get<int>() != 1)
        throw DataError("report: unsupported format version");
    EvalReport r;
    for (int c = 0; c < 2; ++c) {
        const char* key = label_name(static_cast<BinaryLabel>(c));
        const auto& m = j.at("per_class").at(key);
        r.per_class[c].precision = m.at("precision").get<double>();
        r.per_class[c].recall = m.at("recall").get<double>();
        r.per_class[c].f1 = m.at("f1").get<double>();
        r.per_class[c].support = m.at("support").get<std::size_t>();
    }
    r.weighted_precision = j.at("weighted").at("precision").get<double>();
    r.weighted_recall = j.at("weighted").at("recall").get<double>();
    r.weighted_f1 = j.at("weighted").at("f1").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.total = j.at("total").get<std::size_t>();
    r.degenerate = j.at("degenerate").get<bool>();
    return r;
}

} // namespace offlang
