#include "offlang/classical.hpp"

#include <cmath>

#include "catch_amalgamated.hpp"

using namespace offlang;

namespace {

SparseCountVector sparse(std::vector<int> dense) {
    SparseCountVector v;
    v.dimension = static_cast<int>(dense.size());
    for (int i = 0; i < v.dimension; ++i)
        if (dense[i] != 0) v.entries.emplace_back(i, dense[i]);
    return v;
}

// Brute-force Bayes oracle: plain products of smoothed count ratios, no
// log-space tricks, straight from P(c) * prod_t P(t|c)^count.
ProbabilityDistribution mnb_oracle(const std::vector<SparseCountVector>& X,
                                   const std::vector<BinaryLabel>& y, double smoothing,
                                   const SparseCountVector& query) {
    const int dim = X.front().dimension;
    double class_docs[2] = {0, 0};
    std::vector<double> counts[2];
    counts[0].assign(dim, 0.0);
    counts[1].assign(dim, 0.0);
    double totals[2] = {0, 0};
    for (std::size_t i = 0; i < X.size(); ++i) {
        const int c = static_cast<int>(y[i]);
        class_docs[c] += 1.0;
        for (const auto& [f, n] : X[i].entries) {
            counts[c][f] += n;
            totals[c] += n;
        }
    }
    double post[2];
    for (int c = 0; c < 2; ++c) {
        double p = class_docs[c] / static_cast<double>(X.size());
        for (const auto& [f, n] : query.entries) {
            const double like = (counts[c][f] + smoothing) / (totals[c] + smoothing * dim);
            for (int k = 0; k < n; ++k) p *= like;
        }
        post[c] = p;
    }
    ProbabilityDistribution out;
    out.probs = {post[0] / (post[0] + post[1]), post[1] / (post[0] + post[1])};
    return out;
}

struct RandomCorpus {
    std::vector<SparseCountVector> X;
    std::vector<BinaryLabel> y;
};

RandomCorpus random_corpus(Rng& rng, int max_docs = 20, int max_vocab = 10) {
    const int dim = 2 + static_cast<int>(rng.index(max_vocab - 1));
    const int docs = 2 + static_cast<int>(rng.index(max_docs - 1));
    RandomCorpus c;
    for (int i = 0; i < docs; ++i) {
        std::vector<int> dense(dim, 0);
        const int tokens = 1 + static_cast<int>(rng.index(8));
        for (int t = 0; t < tokens; ++t) ++dense[rng.index(dim)];
        c.X.push_back(sparse(dense));
        c.y.push_back(i % 2 == 0 ? BinaryLabel::NOT : BinaryLabel::OFF);
    }
    return c;
}

} // namespace

// ---------------------------------------------------------------------------
// Multinomial Naive Bayes
// ---------------------------------------------------------------------------

TEST_CASE("mnb matches the brute-force oracle on small corpora") {
    Rng rng(21);
    for (int trial = 0; trial < 40; ++trial) {
        const auto corpus = random_corpus(rng);
        const auto model = train_mnb(corpus.X, corpus.y, 1.0);
        for (int q = 0; q < 5; ++q) {
            std::vector<int> dense(corpus.X.front().dimension, 0);
            const int tokens = static_cast<int>(rng.index(6));
            for (int t = 0; t < tokens; ++t) ++dense[rng.index(dense.size())];
            const auto query = sparse(dense);
            const auto got = predict_mnb(model, query);
            const auto want = mnb_oracle(corpus.X, corpus.y, 1.0, query);
            CHECK(got.probs[0] == Catch::Approx(want.probs[0]).margin(1e-9));
            CHECK(got.probs[1] == Catch::Approx(want.probs[1]).margin(1e-9));
            CHECK(got.valid());
        }
    }
}

TEST_CASE("mnb log-likelihoods are normalized per class") {
    Rng rng(8);
    const auto corpus = random_corpus(rng);
    const auto model = train_mnb(corpus.X, corpus.y, 0.5);
    for (int c = 0; c < 2; ++c) {
        double sum = 0.0;
        for (const double ll : model.log_likelihoods[c]) sum += std::exp(ll);
        CHECK(sum == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("mnb symmetric corpus yields equal priors") {
    const std::vector<SparseCountVector> X = {sparse({2, 0}), sparse({0, 2})};
    const std::vector<BinaryLabel> y = {BinaryLabel::NOT, BinaryLabel::OFF};
    const auto model = train_mnb(X, y);
    CHECK(model.log_priors[0] == Catch::Approx(model.log_priors[1]));
    // Empty query falls back to the priors.
    const auto p = predict_mnb(model, sparse({0, 0}));
    CHECK(p.probs[0] == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("mnb handles unseen features through smoothing") {
    const std::vector<SparseCountVector> X = {sparse({3, 0, 0}), sparse({0, 3, 0})};
    const std::vector<BinaryLabel> y = {BinaryLabel::NOT, BinaryLabel::OFF};
    const auto model = train_mnb(X, y, 1.0);
    const auto query = sparse({0, 0, 2}); // feature unseen in both classes
    const auto got = predict_mnb(model, query);
    const auto want = mnb_oracle(X, y, 1.0, query);
    CHECK(got.probs[0] == Catch::Approx(want.probs[0]).margin(1e-9));
    CHECK(got.probs[0] > 0.0);
    CHECK(got.probs[1] > 0.0);
}

TEST_CASE("mnb argmax is stable under document duplication") {
    const std::vector<SparseCountVector> X = {sparse({4, 1}), sparse({1, 4})};
    const std::vector<BinaryLabel> y = {BinaryLabel::NOT, BinaryLabel::OFF};
    const auto model = train_mnb(X, y);
    const auto x1 = sparse({3, 1});
    const auto x2 = sparse({6, 2});
    CHECK(predict_mnb(model, x1).argmax() == predict_mnb(model, x2).argmax());
}

TEST_CASE("mnb rejects single-class and mismatched inputs") {
    const std::vector<SparseCountVector> X = {sparse({1, 0}), sparse({0, 1})};
    CHECK_THROWS_AS(train_mnb(X, {BinaryLabel::NOT, BinaryLabel::NOT}), DataError);
    const auto model = train_mnb(X, {BinaryLabel::NOT, BinaryLabel::OFF});
    CHECK_THROWS_AS(predict_mnb(model, sparse({1, 0, 0})), DataError);
}

// ---------------------------------------------------------------------------
// Linear SVM
// ---------------------------------------------------------------------------

namespace {

RandomCorpus separable_fixture() {
    RandomCorpus c;
    // NOT documents live on feature 0, OFF documents on feature 1.
    for (int i = 0; i < 6; ++i) {
        c.X.push_back(sparse({3 + i % 2, 0}));
        c.y.push_back(BinaryLabel::NOT);
        c.X.push_back(sparse({0, 3 + i % 3}));
        c.y.push_back(BinaryLabel::OFF);
    }
    return c;
}

} // namespace

TEST_CASE("svm separates a separable fixture at the paper hyperparameters") {
    const auto c = separable_fixture();
    const auto model = train_svm_sgd(c.X, c.y); // alpha=0.001, seed=5, epochs=15
    for (std::size_t i = 0; i < c.X.size(); ++i)
        CHECK(predict_svm(model, c.X[i]).label == c.y[i]);
}

TEST_CASE("svm training is bit-deterministic") {
    const auto c = separable_fixture();
    const auto a = train_svm_sgd(c.X, c.y);
    const auto b = train_svm_sgd(c.X, c.y);
    CHECK(a.bias == b.bias);
    REQUIRE(a.weights.size() == b.weights.size());
    for (std::size_t i = 0; i < a.weights.size(); ++i) CHECK(a.weights[i] == b.weights[i]);

    SvmHyper other;
    other.seed = 6;
    const auto d = train_svm_sgd(c.X, c.y, other);
    bool differs = d.bias != a.bias;
    for (std::size_t i = 0; i < a.weights.size() && !differs; ++i)
        differs = a.weights[i] != d.weights[i];
    CHECK(differs);
}

TEST_CASE("large alpha shrinks the weight norm") {
    const auto c = separable_fixture();
    SvmHyper small;
    small.alpha = 0.001;
    SvmHyper large;
    large.alpha = 1000.0;
    const auto a = train_svm_sgd(c.X, c.y, small);
    const auto b = train_svm_sgd(c.X, c.y, large);
    auto norm = [](const SvmModel& m) {
        double s = 0.0;
        for (const double w : m.weights) s += w * w;
        return std::sqrt(s);
    };
    CHECK(norm(b) < norm(a));
}

TEST_CASE("svm tie goes to NOT and margins are linear") {
    SvmModel zero;
    zero.weights = {0.0, 0.0};
    zero.bias = 0.0;
    const auto p = predict_svm(zero, sparse({1, 1}));
    CHECK(p.label == BinaryLabel::NOT);
    CHECK(p.margin == 0.0);

    SvmModel m;
    m.weights = {1.5, -2.0};
    m.bias = 0.0;
    SparseCountVector x;
    x.dimension = 2;
    x.entries = {{0, 2}, {1, 1}};
    SparseCountVector neg;
    neg.dimension = 2;
    neg.entries = {{0, -2}, {1, -1}}; // sign probe, not a real count vector
    CHECK(predict_svm(m, x).margin == -predict_svm(m, neg).margin);

    CHECK_THROWS_AS(predict_svm(m, sparse({1, 0, 0})), DataError);
    CHECK_THROWS_AS(
        train_svm_sgd({sparse({1, 0})}, std::vector<BinaryLabel>{BinaryLabel::NOT}),
        DataError);
}

// ---------------------------------------------------------------------------
// Random Forest
// ---------------------------------------------------------------------------

namespace {

// Independent CART oracle with the documented conventions: all features
// considered, midpoint thresholds, Gini gain with strict 1e-12 improvement,
// first-improving split wins, leaves on purity or no gain.
struct OracleTree {
    struct Node {
        int feature = -1;
        double threshold = 0.0;
        int left = -1, right = -1;
        double counts[2] = {0, 0};
    };
    std::vector<Node> nodes;

    static double gini(double a, double b) {
        const double n = a + b;
        if (n == 0) return 0.0;
        return 1.0 - (a / n) * (a / n) - (b / n) * (b / n);
    }

    int build(const std::vector<std::vector<double>>& rows,
              const std::vector<BinaryLabel>& y, std::vector<std::size_t> samples) {
        Node node;
        for (const auto s : samples) node.counts[static_cast<int>(y[s])] += 1.0;
        const int id = static_cast<int>(nodes.size());
        nodes.push_back(node);
        if (node.counts[0] == 0 || node.counts[1] == 0) return id;

        const double n = node.counts[0] + node.counts[1];
        const double parent = gini(node.counts[0], node.counts[1]);
        double best_gain = 0.0;
        int best_f = -1;
        double best_t = 0.0;
        const int dim = static_cast<int>(rows.front().size());
        for (int f = 0; f < dim; ++f) {
            std::vector<std::pair<double, int>> vals;
            for (const auto s : samples) vals.push_back({rows[s][f], static_cast<int>(y[s])});
            std::sort(vals.begin(), vals.end());
            double l0 = 0, l1 = 0, r0 = node.counts[0], r1 = node.counts[1];
            for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                (vals[i].second == 0 ? l0 : l1) += 1.0;
                (vals[i].second == 0 ? r0 : r1) -= 1.0;
                if (vals[i].first == vals[i + 1].first) continue;
                const double nl = l0 + l1, nr = r0 + r1;
                const double gain =
                    parent - nl / n * gini(l0, l1) - nr / n * gini(r0, r1);
                if (gain > best_gain + 1e-12) {
                    best_gain = gain;
                    best_f = f;
                    best_t = (vals[i].first + vals[i + 1].first) / 2.0;
                }
            }
        }
        if (best_f < 0) return id;
        std::vector<std::size_t> left, right;
        for (const auto s : samples)
            (rows[s][best_f] <= best_t ? left : right).push_back(s);
        nodes[id].feature = best_f;
        nodes[id].threshold = best_t;
        const int l = build(rows, y, left);
        nodes[id].left = l;
        const int r = build(rows, y, right);
        nodes[id].right = r;
        return id;
    }

    BinaryLabel predict(const std::vector<double>& row) const {
        int n = 0;
        while (nodes[n].feature >= 0)
            n = row[nodes[n].feature] <= nodes[n].threshold ? nodes[n].left : nodes[n].right;
        return nodes[n].counts[1] > nodes[n].counts[0] ? BinaryLabel::OFF
                                                       : BinaryLabel::NOT;
    }
};

} // namespace

TEST_CASE("single tree without bootstrap equals the CART oracle") {
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        const auto corpus = random_corpus(rng, 16, 6);
        RfHyper hyper;
        hyper.n_trees = 1;
        hyper.bootstrap = false;
        hyper.mtry = corpus.X.front().dimension; // consider every feature
        hyper.seed = trial;
        const auto forest = train_random_forest(corpus.X, corpus.y, hyper);

        std::vector<std::vector<double>> rows;
        for (const auto& x : corpus.X) {
            std::vector<double> row(x.dimension, 0.0);
            for (const auto& [i, c] : x.entries) row[i] = c;
            rows.push_back(row);
        }
        OracleTree oracle;
        std::vector<std::size_t> all(corpus.X.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        oracle.build(rows, corpus.y, all);

        for (int probe = 0; probe < 12; ++probe) {
            std::vector<int> dense(corpus.X.front().dimension, 0);
            for (int t = 0; t < 4; ++t) ++dense[rng.index(dense.size())];
            const auto x = sparse(dense);
            std::vector<double> row(dense.begin(), dense.end());
            CHECK(predict_rf(forest, x).argmax() == oracle.predict(row));
        }
    }
}

TEST_CASE("forest predictions are deterministic per seed") {
    Rng rng(15);
    const auto corpus = random_corpus(rng, 18, 6);
    RfHyper hyper;
    hyper.n_trees = 21;
    hyper.seed = 4;
    const auto a = train_random_forest(corpus.X, corpus.y, hyper);
    const auto b = train_random_forest(corpus.X, corpus.y, hyper);
    const auto threaded = train_random_forest(corpus.X, corpus.y, hyper, 4);
    for (const auto& x : corpus.X) {
        CHECK(predict_rf(a, x).probs == predict_rf(b, x).probs);
        CHECK(predict_rf(a, x).probs == predict_rf(threaded, x).probs);
    }
}

TEST_CASE("pure single-feature data trains to perfect accuracy") {
    std::vector<SparseCountVector> X;
    std::vector<BinaryLabel> y;
    for (int i = 0; i < 8; ++i) {
        X.push_back(sparse({i < 4 ? 0 : 3, 1}));
        y.push_back(i < 4 ? BinaryLabel::NOT : BinaryLabel::OFF);
    }
    RfHyper hyper;
    hyper.n_trees = 15;
    hyper.seed = 2;
    const auto forest = train_random_forest(X, y, hyper);
    for (std::size_t i = 0; i < X.size(); ++i)
        CHECK(predict_rf(forest, X[i]).argmax() == y[i]);
    for (const auto& tree : forest.trees) CHECK(tree.nodes.size() <= 3);
}

TEST_CASE("rf probabilities average leaf frequencies with NOT on ties") {
    RfModel model;
    model.dimension = 1;
    DecisionTree pure_not, pure_off;
    TreeNode leaf;
    leaf.class_counts = {5.0, 0.0};
    pure_not.nodes.push_back(leaf);
    leaf.class_counts = {0.0, 7.0};
    pure_off.nodes.push_back(leaf);
    model.trees = {pure_not, pure_off};

    const auto p = predict_rf(model, sparse({2}));
    CHECK(p.probs[0] == Catch::Approx(0.5).margin(1e-12));
    CHECK(p.probs[1] == Catch::Approx(0.5).margin(1e-12));
    CHECK(p.argmax() == BinaryLabel::NOT);
    CHECK(p.valid());

    CHECK_THROWS_AS(predict_rf(model, sparse({1, 2})), DataError);
}

TEST_CASE("rf rejects single-class training sets") {
    const std::vector<SparseCountVector> X = {sparse({1}), sparse({2})};
    CHECK_THROWS_AS(
        train_random_forest(X, {BinaryLabel::OFF, BinaryLabel::OFF}, RfHyper{}),
        DataError);
}
