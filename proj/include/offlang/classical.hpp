#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "error.hpp"
#include "features.hpp"
#include "parallel.hpp"
#include "prob.hpp"
#include "rng.hpp"

namespace offlang {

namespace detail {

inline void check_training_set(const std::vector<SparseCountVector>& X,
                               const std::vector<BinaryLabel>& y) {
    if (X.empty() || X.size() != y.size())
        throw DataError("training set empty or features/labels length mismatch");
    bool seen[2] = {false, false};
    for (const auto l : y) seen[static_cast<int>(l)] = true;
    if (!seen[0] || !seen[1])
        throw DataError("training set contains a single class");
    for (const auto& x : X)
        if (x.dimension != X.front().dimension)
            throw DataError("inconsistent feature dimensions in training set");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Multinomial Naive Bayes
// ---------------------------------------------------------------------------

struct MnbModel {
    std::array<double, 2> log_priors{};
    std::array<std::vector<double>, 2> log_likelihoods; // per class, per feature
    double smoothing = 1.0;

    int dimension() const { return static_cast<int>(log_likelihoods[0].size()); }
};

inline MnbModel train_mnb(const std::vector<SparseCountVector>& X,
                          const std::vector<BinaryLabel>& y, double smoothing = 1.0) {
    detail::check_training_set(X, y);
    if (!(smoothing > 0.0)) throw ConfigError("MNB smoothing must be positive");
    const int dim = X.front().dimension;

    MnbModel m;
    m.smoothing = smoothing;
    std::array<std::vector<double>, 2> feature_counts;
    std::array<double, 2> class_totals{0.0, 0.0};
    std::array<std::size_t, 2> class_docs{0, 0};
    for (int c = 0; c < 2; ++c) feature_counts[c].assign(dim, 0.0);

    for (std::size_t i = 0; i < X.size(); ++i) {
        const int c = static_cast<int>(y[i]);
        ++class_docs[c];
        for (const auto& [idx, count] : X[i].entries) {
            feature_counts[c][idx] += count;
            class_totals[c] += count;
        }
    }
    for (int c = 0; c < 2; ++c) {
        m.log_priors[c] = std::log(static_cast<double>(class_docs[c]) /
                                   static_cast<double>(X.size()));
        m.log_likelihoods[c].resize(dim);
        const double denom = class_totals[c] + smoothing * dim;
        for (int f = 0; f < dim; ++f)
            m.log_likelihoods[c][f] = std::log((feature_counts[c][f] + smoothing) / denom);
    }
    return m;
}

inline ProbabilityDistribution predict_mnb(const MnbModel& m,
                                           const SparseCountVector& x) {
    if (x.dimension != m.dimension())
        throw DataError("predict_mnb: feature dimension mismatch");
    std::array<double, 2> log_post;
    for (int c = 0; c < 2; ++c) {
        double lp = m.log_priors[c];
        for (const auto& [idx, count] : x.entries)
            lp += count * m.log_likelihoods[c][idx];
        log_post[c] = lp;
    }
    const double mx = std::max(log_post[0], log_post[1]);
    const double e0 = std::exp(log_post[0] - mx);
    const double e1 = std::exp(log_post[1] - mx);
    ProbabilityDistribution p;
    p.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
    return p;
}

// ---------------------------------------------------------------------------
// Linear SVM with SGD (hinge loss + L2)
// ---------------------------------------------------------------------------

struct SvmHyper {
    double alpha = 0.001;  // L2 regularization strength
    std::uint64_t seed = 5;
    int epochs = 15;
};

struct SvmModel {
    std::vector<double> weights;
    double bias = 0.0;
    SvmHyper hyper;

    int dimension() const { return static_cast<int>(weights.size()); }
};

// Inverse-scaling step size eta_t = 1 / (alpha * (t + t0)) with t0 = 1/alpha,
// per-epoch shuffling from `seed`, exactly `epochs` passes. OFF maps to +1.
inline SvmModel train_svm_sgd(const std::vector<SparseCountVector>& X,
                              const std::vector<BinaryLabel>& y,
                              const SvmHyper& hyper = {}) {
    detail::check_training_set(X, y);
    if (!(hyper.alpha > 0.0) || hyper.epochs < 1)
        throw ConfigError("SVM hyperparameters out of range");

    SvmModel m;
    m.hyper = hyper;
    m.weights.assign(X.front().dimension, 0.0);

    std::vector<std::size_t> order(X.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(hyper.seed);
    const double t0 = 1.0 / hyper.alpha;
    double t = 0.0;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        for (const std::size_t i : order) {
            const double eta = 1.0 / (hyper.alpha * (t + t0));
            const double target = y[i] == BinaryLabel::OFF ? 1.0 : -1.0;
            double margin = m.bias;
            for (const auto& [idx, count] : X[i].entries)
                margin += m.weights[idx] * count;
            // L2 shrink applies every step; the hinge term only when active.
            // Clamped at zero so very large alpha stays stable.
            const double shrink = std::max(0.0, 1.0 - eta * hyper.alpha);
            for (double& w : m.weights) w *= shrink;
            if (target * margin < 1.0) {
                for (const auto& [idx, count] : X[i].entries)
                    m.weights[idx] += eta * target * count;
                m.bias += eta * target;
            }
            t += 1.0;
        }
    }
    for (const double w : m.weights)
        if (!std::isfinite(w)) throw NumericError("SVM training produced non-finite weights");
    return m;
}

struct SvmPrediction {
    BinaryLabel label;
    double margin;
};

// sign(w.x + b): positive -> OFF; an exact tie goes to NOT.
inline SvmPrediction predict_svm(const SvmModel& m, const SparseCountVector& x) {
    if (x.dimension != m.dimension())
        throw DataError("predict_svm: feature dimension mismatch");
    double margin = m.bias;
    for (const auto& [idx, count] : x.entries)
        margin += m.weights[idx] * count;
    return {margin > 0.0 ? BinaryLabel::OFF : BinaryLabel::NOT, margin};
}

// ---------------------------------------------------------------------------
// Random Forest (CART trees, Gini impurity, class-count leaves)
// ---------------------------------------------------------------------------

struct TreeNode {
    int feature = -1;       // -1 for leaves
    double threshold = 0.0; // go left when x[feature] <= threshold
    int left = -1;
    int right = -1;
    std::array<double, 2> class_counts{0.0, 0.0};
};

struct DecisionTree {
    std::vector<TreeNode> nodes; // node 0 is the root
};

struct RfHyper {
    int n_trees = 500;
    std::uint64_t seed = 0;
    bool bootstrap = true; // test hook: off trains each tree on X directly
    int mtry = 0;          // candidate features per node; 0 = ceil(sqrt(|V|))
};

struct RfModel {
    std::vector<DecisionTree> trees;
    RfHyper hyper;
    int dimension = 0;
};

namespace detail {

struct TreeBuilder {
    const std::vector<std::vector<double>>& rows; // dense feature matrix
    const std::vector<BinaryLabel>& y;
    int dim;
    int mtry;
    Rng& rng;
    DecisionTree tree;

    static double gini(const std::array<double, 2>& counts) {
        const double n = counts[0] + counts[1];
        if (n == 0.0) return 0.0;
        const double p0 = counts[0] / n;
        const double p1 = counts[1] / n;
        return 1.0 - p0 * p0 - p1 * p1;
    }

    int build(std::vector<std::size_t>& samples) {
        std::array<double, 2> counts{0.0, 0.0};
        for (const auto s : samples) counts[static_cast<int>(y[s])] += 1.0;
        const int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(TreeNode{});
        tree.nodes[node_id].class_counts = counts;
        if (counts[0] == 0.0 || counts[1] == 0.0) return node_id; // pure

        // Candidate features without replacement; partial Fisher-Yates.
        std::vector<int> features(dim);
        std::iota(features.begin(), features.end(), 0);
        const int k = std::min(mtry, dim);
        for (int i = 0; i < k; ++i) {
            const std::size_t j = i + rng.index(dim - i);
            std::swap(features[i], features[j]);
        }
        features.resize(k);
        std::sort(features.begin(), features.end()); // deterministic tie order

        const double parent_gini = gini(counts);
        const double n = counts[0] + counts[1];
        double best_gain = 0.0;
        int best_feature = -1;
        double best_threshold = 0.0;

        std::vector<std::pair<double, int>> values(samples.size());
        for (const int f : features) {
            for (std::size_t i = 0; i < samples.size(); ++i)
                values[i] = {rows[samples[i]][f], static_cast<int>(y[samples[i]])};
            std::sort(values.begin(), values.end());
            std::array<double, 2> left{0.0, 0.0};
            std::array<double, 2> right = counts;
            for (std::size_t i = 0; i + 1 < values.size(); ++i) {
                left[values[i].second] += 1.0;
                right[values[i].second] -= 1.0;
                if (values[i].first == values[i + 1].first) continue;
                const double nl = i + 1.0;
                const double nr = n - nl;
                const double gain =
                    parent_gini - (nl / n) * gini(left) - (nr / n) * gini(right);
                if (gain > best_gain + 1e-12) {
                    best_gain = gain;
                    best_feature = f;
                    best_threshold = (values[i].first + values[i + 1].first) / 2.0;
                }
            }
        }
        if (best_feature < 0) return node_id; // no splitting gain

        std::vector<std::size_t> left_samples, right_samples;
        for (const auto s : samples)
            (rows[s][best_feature] <= best_threshold ? left_samples : right_samples)
                .push_back(s);
        if (left_samples.empty() || right_samples.empty()) return node_id;
        tree.nodes[node_id].feature = best_feature;
        tree.nodes[node_id].threshold = best_threshold;
        const int left_id = build(left_samples);
        tree.nodes[node_id].left = left_id;
        const int right_id = build(right_samples);
        tree.nodes[node_id].right = right_id;
        return node_id;
    }
};

inline std::vector<std::vector<double>> densify(const std::vector<SparseCountVector>& X) {
    std::vector<std::vector<double>> rows(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) {
        rows[i].assign(X[i].dimension, 0.0);
        for (const auto& [idx, count] : X[i].entries) rows[i][idx] = count;
    }
    return rows;
}

} // namespace detail

inline DecisionTree train_tree(const std::vector<std::vector<double>>& rows,
                               const std::vector<BinaryLabel>& y, int dim, int mtry,
                               Rng& rng, const std::vector<std::size_t>& samples) {
    detail::TreeBuilder builder{rows, y, dim, mtry, rng, {}};
    auto work = samples;
    builder.build(work);
    return std::move(builder.tree);
}

// Per-tree RNG derives from (seed, tree index), so trees may be trained in
// any order or in parallel with identical results.
inline RfModel train_random_forest(const std::vector<SparseCountVector>& X,
                                   const std::vector<BinaryLabel>& y,
                                   const RfHyper& hyper = {}, int threads = 1) {
    detail::check_training_set(X, y);
    if (hyper.n_trees < 1) throw ConfigError("random forest needs n_trees >= 1");
    const int dim = X.front().dimension;
    const int mtry = hyper.mtry > 0
                         ? std::min(hyper.mtry, dim)
                         : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(dim))));
    const auto rows = detail::densify(X);

    RfModel model;
    model.hyper = hyper;
    model.dimension = dim;
    model.trees.resize(hyper.n_trees);
    parallel_for(hyper.n_trees, threads, [&](int t) {
        Rng rng(derive_seed(hyper.seed, static_cast<std::uint64_t>(t)));
        std::vector<std::size_t> samples(X.size());
        if (hyper.bootstrap) {
            for (auto& s : samples) s = rng.index(X.size());
        } else {
            std::iota(samples.begin(), samples.end(), 0);
        }
        model.trees[t] = train_tree(rows, y, dim, mtry, rng, samples);
    });
    return model;
}

inline const TreeNode& tree_leaf(const DecisionTree& tree, const std::vector<double>& row) {
    int node = 0;
    while (tree.nodes[node].feature >= 0) {
        const auto& nd = tree.nodes[node];
        node = row[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return tree.nodes[node];
}

// Average of per-tree leaf class frequencies.
inline ProbabilityDistribution predict_rf(const RfModel& m, const SparseCountVector& x) {
    if (x.dimension != m.dimension)
        throw DataError("predict_rf: feature dimension mismatch");
    std::vector<double> row(x.dimension, 0.0);
    for (const auto& [idx, count] : x.entries) row[idx] = count;
    ProbabilityDistribution p;
    for (const auto& tree : m.trees) {
        const auto& leaf = tree_leaf(tree, row);
        const double n = leaf.class_counts[0] + leaf.class_counts[1];
        p.probs[0] += leaf.class_counts[0] / n;
        p.probs[1] += leaf.class_counts[1] / n;
    }
    p.probs[0] /= static_cast<double>(m.trees.size());
    p.probs[1] /= static_cast<double>(m.trees.size());
    return p;
}

} // namespace offlang
