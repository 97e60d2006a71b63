#pragma once

#include <array>
#include <cmath>

#include "corpus.hpp"

namespace offlang {

// Per-class probabilities in class order (NOT, OFF).
struct ProbabilityDistribution {
    std::array<double, 2> probs{0.0, 0.0};

    double operator[](BinaryLabel l) const { return probs[static_cast<int>(l)]; }

    bool valid(double tol = 1e-9) const {
        double sum = 0.0;
        for (const double p : probs) {
            if (!(p >= 0.0 && p <= 1.0 + tol)) return false;
            sum += p;
        }
        return std::abs(sum - 1.0) <= tol;
    }

    // Ties go to the lower class index, i.e. NOT.
    BinaryLabel argmax() const {
        return probs[1] > probs[0] ? BinaryLabel::OFF : BinaryLabel::NOT;
    }
};

} // namespace offlang
