#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <fstream>
#include <sstream>
#include <string>

#include "rkflow/rkflow.hpp"

namespace rkflow::test {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("rkflow_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Distance in units in the last place between two finite doubles of equal sign.
inline std::uint64_t ulp_distance(double a, double b) {
    if (a == b) return 0;
    std::int64_t ia = 0;
    std::int64_t ib = 0;
    std::memcpy(&ia, &a, sizeof a);
    std::memcpy(&ib, &b, sizeof b);
    if (ia < 0) ia = std::numeric_limits<std::int64_t>::min() - ia;
    if (ib < 0) ib = std::numeric_limits<std::int64_t>::min() - ib;
    return ia > ib ? static_cast<std::uint64_t>(ia - ib) : static_cast<std::uint64_t>(ib - ia);
}

/// Small toy model used where the default size would only slow tests down.
inline ToyMMDiTConfig small_toy(std::uint64_t seed = 7) {
    ToyMMDiTConfig c;
    c.d_model = 32;
    c.n_heads = 2;
    c.l_multi = 1;
    c.l_single = 2;
    c.n_text = 4;
    c.grid_h = 4;
    c.grid_w = 4;
    c.channels = 2;
    c.vocab = 64;
    c.seed = seed;
    return c;
}

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = rng.normal();
        }
    }
    return m;
}

/// Row-stochastic matrix from random logits.
inline Matrix random_stochastic(Rng& rng, Eigen::Index n) {
    Matrix m = random_matrix(rng, n, n).array().exp().matrix();
    for (Eigen::Index r = 0; r < n; ++r) {
        m.row(r) /= m.row(r).sum();
    }
    return m;
}

} // namespace rkflow::test
