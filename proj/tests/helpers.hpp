#pragma once

#include <vector>

#include "tokenq/applications.hpp"

// Shared fixtures: the five reference models at the parameters used across
// the suite, plus small numeric helpers.

namespace fixtures {

using namespace tokenq;

inline ModelSpec mmk3() { return build_mmk_hetero(3, {1.0, 2.0, 3.0}, 4.0); }
inline ModelSpec msccc3() { return build_msccc(2, {0.5, 0.4, 0.3}, 1.0); }
inline ModelSpec cos32() { return build_redundancy_cos(3, 2, 1.2, 1.0); }
inline ModelSpec coc32() { return build_redundancy_coc(3, 2, 1.2, 1.0); }

inline Eta matching_A() {
    Eta a;
    for (int j = 1; j <= 20; ++j) a.head.push_back(1.0 + j / 10.0);
    a.tail = 3.0;
    return a;
}
inline ModelSpec matching2() {
    return build_matching({0.6, 0.5}, {ClassSet{1}, ClassSet{3}}, matching_A());
}

inline std::vector<ModelSpec> all_models() {
    return {mmk3(), msccc3(), cos32(), coc32(), matching2()};
}

inline double rel_diff(double a, double b) {
    const double m = std::max(std::abs(a), std::abs(b));
    return m > 0.0 ? std::abs(a - b) / m : 0.0;
}

}  // namespace fixtures
