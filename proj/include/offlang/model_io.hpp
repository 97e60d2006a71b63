#pragma once

#include <string>
#include <vector>

#include "classical.hpp"
#include "strategies.hpp"

namespace offlang {

// Classical models reuse the checkpoint container with a model-kind tag.
// Parameters are stored as float32 like every other tensor; training-time
// reports are produced from the reloaded model so the artifacts agree.

inline void save_mnb(const MnbModel& m, const std::string& path) {
    ContainerWriter w;
    w.set("model_kind", "mnb");
    w.set("smoothing", std::to_string(m.smoothing));
    w.set("dimension", static_cast<std::uint64_t>(m.dimension()));
    std::vector<float> priors{static_cast<float>(m.log_priors[0]),
                              static_cast<float>(m.log_priors[1])};
    w.add_tensor("log_priors", priors.data(), priors.size());
    for (int c = 0; c < 2; ++c) {
        std::vector<float> ll(m.log_likelihoods[c].begin(), m.log_likelihoods[c].end());
        w.add_tensor(c == 0 ? "log_likelihoods_not" : "log_likelihoods_off", ll.data(),
                     ll.size());
    }
    w.write(path);
}

inline MnbModel load_mnb(const std::string& path) {
    const auto c = load_container(path);
    if (c.require("model_kind") != "mnb")
        throw DataError(path + ": not an mnb checkpoint");
    MnbModel m;
    m.smoothing = std::stod(c.require("smoothing"));
    const auto dim = std::stoul(c.require("dimension"));
    const auto& priors = c.tensor("log_priors");
    if (priors.size() != 2) throw DataError(path + ": bad log_priors tensor");
    m.log_priors = {priors[0], priors[1]};
    for (int cls = 0; cls < 2; ++cls) {
        const auto& ll = c.tensor(cls == 0 ? "log_likelihoods_not" : "log_likelihoods_off");
        if (ll.size() != dim) throw DataError(path + ": bad likelihood tensor size");
        m.log_likelihoods[cls].assign(ll.begin(), ll.end());
    }
    return m;
}

inline void save_svm(const SvmModel& m, const std::string& path) {
    ContainerWriter w;
    w.set("model_kind", "svm");
    w.set("alpha", std::to_string(m.hyper.alpha));
    w.set("seed", m.hyper.seed);
    w.set("epochs", static_cast<std::uint64_t>(m.hyper.epochs));
    w.set("dimension", static_cast<std::uint64_t>(m.dimension()));
    std::vector<float> weights(m.weights.begin(), m.weights.end());
    w.add_tensor("weights", weights.data(), weights.size());
    const float bias = static_cast<float>(m.bias);
    w.add_tensor("bias", &bias, 1);
    w.write(path);
}

inline SvmModel load_svm(const std::string& path) {
    const auto c = load_container(path);
    if (c.require("model_kind") != "svm")
        throw DataError(path + ": not an svm checkpoint");
    SvmModel m;
    m.hyper.alpha = std::stod(c.require("alpha"));
    m.hyper.seed = std::stoull(c.require("seed"));
    m.hyper.epochs = std::stoi(c.require("epochs"));
    const auto& weights = c.tensor("weights");
    if (weights.size() != std::stoul(c.require("dimension")))
        throw DataError(path + ": weight tensor size mismatch");
    m.weights.assign(weights.begin(), weights.end());
    m.bias = c.tensor("bias").at(0);
    return m;
}

// Each tree serializes as [n_nodes x 6]: feature, threshold, left, right,
// count_not, count_off (leaves use feature = -1 and children = -1).
inline void save_rf(const RfModel& m, const std::string& path) {
    ContainerWriter w;
    w.set("model_kind", "rf");
    w.set("n_trees", static_cast<std::uint64_t>(m.trees.size()));
    w.set("seed", m.hyper.seed);
    w.set("bootstrap", m.hyper.bootstrap ? "1" : "0");
    w.set("mtry", static_cast<std::uint64_t>(m.hyper.mtry));
    w.set("dimension", static_cast<std::uint64_t>(m.dimension));
    for (std::size_t t = 0; t < m.trees.size(); ++t) {
        std::vector<float> flat;
        flat.reserve(m.trees[t].nodes.size() * 6);
        for (const auto& nd : m.trees[t].nodes) {
            flat.push_back(static_cast<float>(nd.feature));
            flat.push_back(static_cast<float>(nd.threshold));
            flat.push_back(static_cast<float>(nd.left));
            flat.push_back(static_cast<float>(nd.right));
            flat.push_back(static_cast<float>(nd.class_counts[0]));
            flat.push_back(static_cast<float>(nd.class_counts[1]));
        }
        w.add_tensor("tree" + std::to_string(t), flat.data(), flat.size());
    }
    w.write(path);
}

inline RfModel load_rf(const std::string& path) {
    const auto c = load_container(path);
    if (c.require("model_kind") != "rf")
        throw DataError(path + ": not an rf checkpoint");
    RfModel m;
    const auto n_trees = std::stoul(c.require("n_trees"));
    m.hyper.n_trees = static_cast<int>(n_trees);
    m.hyper.seed = std::stoull(c.require("seed"));
    m.hyper.bootstrap = c.require("bootstrap") == "1";
    m.hyper.mtry = std::stoi(c.require("mtry"));
    m.dimension = std::stoi(c.require("dimension"));
    for (std::size_t t = 0; t < n_trees; ++t) {
        const auto& flat = c.tensor("tree" + std::to_string(t));
        if (flat.size() % 6 != 0) throw DataError(path + ": malformed tree tensor");
        DecisionTree tree;
        for (std::size_t i = 0; i < flat.size(); i += 6) {
            TreeNode nd;
            nd.feature = static_cast<int>(flat[i]);
            nd.threshold = flat[i + 1];
            nd.left = static_cast<int>(flat[i + 2]);
            nd.right = static_cast<int>(flat[i + 3]);
            nd.class_counts = {flat[i + 4], flat[i + 5]};
            tree.nodes.push_back(nd);
        }
        m.trees.push_back(std::move(tree));
    }
    return m;
}

} // namespace offlang
