#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rkflow/attention.hpp"
#include "rkflow/error.hpp"

namespace rkflow {

inline constexpr double kRowSumTolerance = 1e-6;

// ---------------------------------------------------------------------------
// Quadrant decomposition

/// Slices a joint (n_c + n_i)^2 attention map and its values at the text/image
/// boundary. Text tokens come first.
[[nodiscard]] inline DecoupledAttention decompose_attention(const Matrix& m, const Matrix& v, std::size_t n_c) {
    const auto n = static_cast<std::size_t>(m.rows());
    if (static_cast<std::size_t>(m.cols()) != n) {
        throw PreconditionError("decompose_attention: map is " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()) + ", expected square");
    }
    if (static_cast<std::size_t>(v.rows()) != n) {
        throw PreconditionError("decompose_attention: values have " + std::to_string(v.rows()) + " rows, map has " +
                                std::to_string(n));
    }
    if (n_c == 0 || n_c >= n) {
        throw PreconditionError("decompose_attention: n_c = " + std::to_string(n_c) + " out of range [1, " +
                                std::to_string(n) + ")");
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double sum = m.row(r).sum();
        if (std::abs(sum - 1.0) > kRowSumTolerance || (m.row(r).array() < 0.0).any()) {
            throw PreconditionError("decompose_attention: row " + std::to_string(r) + " is not stochastic (sum " +
                                    std::to_string(sum) + ")");
        }
    }
    const auto c = static_cast<Eigen::Index>(n_c);
    const auto i = static_cast<Eigen::Index>(n - n_c);
    DecoupledAttention d;
    d.n_c = n_c;
    d.n_i = n - n_c;
    d.m_cc = m.topLeftCorner(c, c);
    d.m_ci = m.topRightCorner(c, i);
    d.m_ic = m.bottomLeftCorner(i, c);
    d.m_ii = m.bottomRightCorner(i, i);
    d.v_c = v.topRows(c);
    d.v_i = v.bottomRows(i);
    return d;
}

inline void check_quadrants(const DecoupledAttention& d) {
    const auto c = static_cast<Eigen::Index>(d.n_c);
    const auto i = static_cast<Eigen::Index>(d.n_i);
    auto expect = [](const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
        if (m.rows() != rows || m.cols() != cols) {
            throw ShapeError(std::string("quadrant ") + name + " is " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                             std::to_string(cols));
        }
    };
    expect(d.m_cc, c, c, "m_cc");
    expect(d.m_ci, c, i, "m_ci");
    expect(d.m_ic, i, c, "m_ic");
    expect(d.m_ii, i, i, "m_ii");
    if (d.v_c.rows() != c || d.v_i.rows() != i || d.v_c.cols() != d.v_i.cols()) {
        throw ShapeError("value split has shapes " + std::to_string(d.v_c.rows()) + "x" +
                         std::to_string(d.v_c.cols()) + " and " + std::to_string(d.v_i.rows()) + "x" +
                         std::to_string(d.v_i.cols()));
    }
}

/// Exact block re-assembly of decompose_attention's output.
[[nodiscard]] inline std::pair<Matrix, Matrix> recompose_attention(const DecoupledAttention& d) {
    check_quadrants(d);
    const auto c = static_cast<Eigen::Index>(d.n_c);
    const auto i = static_cast<Eigen::Index>(d.n_i);
    Matrix m(c + i, c + i);
    m.topLeftCorner(c, c) = d.m_cc;
    m.topRightCorner(c, i) = d.m_ci;
    m.bottomLeftCorner(i, c) = d.m_ic;
    m.bottomRightCorner(i, i) = d.m_ii;
    Matrix v(c + i, d.v_c.cols());
    v.topRows(c) = d.v_c;
    v.bottomRows(i) = d.v_i;
    return {std::move(m), std::move(v)};
}

// ---------------------------------------------------------------------------
// Manipulation plan

enum class RegionOp { none, replace, mean };
enum class Region { m_cc, m_ci, m_ic, m_ii, v_c, v_i };

inline constexpr std::array<Region, 6> kAllRegions{Region::m_cc, Region::m_ci, Region::m_ic,
                                                   Region::m_ii, Region::v_c,  Region::v_i};

[[nodiscard]] inline const char* to_string(Region r) noexcept {
    switch (r) {
    case Region::m_cc: return "m_cc";
    case Region::m_ci: return "m_ci";
    case Region::m_ic: return "m_ic";
    case Region::m_ii: return "m_ii";
    case Region::v_c: return "v_c";
    case Region::v_i: return "v_i";
    }
    return "?";
}

[[nodiscard]] inline const char* to_string(RegionOp op) noexcept {
    switch (op) {
    case RegionOp::none: return "none";
    case RegionOp::replace: return "replace";
    case RegionOp::mean: return "mean";
    }
    return "?";
}

[[nodiscard]] inline RegionOp parse_region_op(const std::string& s) {
    if (s == "none") return RegionOp::none;
    if (s == "replace") return RegionOp::replace;
    if (s == "mean") return RegionOp::mean;
    throw LookupError("unknown region op '" + s + "'; valid: none, replace, mean");
}

/// Which regions are manipulated, in which blocks, at which function evaluations.
struct ManipulationPlan {
    std::array<RegionOp, 6> ops{};  ///< indexed by Region
    bool multi_blocks = false;
    bool single_blocks = true;
    std::set<int> layers;           ///< empty = every layer of the selected kinds
    std::vector<int> d_list{1};     ///< 1-based function-evaluation indices

    [[nodiscard]] RegionOp op(Region r) const noexcept { return ops[static_cast<std::size_t>(r)]; }
    void set(Region r, RegionOp o) noexcept { ops[static_cast<std::size_t>(r)] = o; }

    [[nodiscard]] bool in_scope(BlockKind kind, int layer) const noexcept {
        const bool kind_ok = kind == BlockKind::multi ? multi_blocks : single_blocks;
        return kind_ok && (layers.empty() || layers.contains(layer));
    }

    [[nodiscard]] bool in_d_list(int fe_index) const noexcept {
        return std::find(d_list.begin(), d_list.end(), fe_index) != d_list.end();
    }

    /// No region is touched; editing with this plan is plain reconstruction.
    [[nodiscard]] bool empty() const noexcept {
        return std::all_of(ops.begin(), ops.end(), [](RegionOp o) { return o == RegionOp::none; });
    }

    /// Every region set to `op`, keeping scope and d_list.
    [[nodiscard]] ManipulationPlan with_all(RegionOp o) const {
        ManipulationPlan p = *this;
        p.ops.fill(o);
        return p;
    }

    /// Replace both cross-attention maps, average the image values, single-stream
    /// blocks only, first function evaluation only.
    [[nodiscard]] static ManipulationPlan editing_default() {
        ManipulationPlan p;
        p.set(Region::m_ci, RegionOp::replace);
        p.set(Region::m_ic, RegionOp::replace);
        p.set(Region::v_i, RegionOp::mean);
        return p;
    }
};

namespace detail {

inline Matrix& region_ref(DecoupledAttention& d, Region r) {
    switch (r) {
    case Region::m_cc: return d.m_cc;
    case Region::m_ci: return d.m_ci;
    case Region::m_ic: return d.m_ic;
    case Region::m_ii: return d.m_ii;
    case Region::v_c: return d.v_c;
    case Region::v_i: return d.v_i;
    }
    return d.m_cc;
}

inline const Matrix& region_ref(const DecoupledAttention& d, Region r) {
    return region_ref(const_cast<DecoupledAttention&>(d), r);
}

} // namespace detail

/// Applies replace (take cached) or mean ((cached + current) / 2) per region.
/// No renormalisation: a row of the recomposed map may stop summing to one.
[[nodiscard]] inline DecoupledAttention manipulate(const DecoupledAttention& current, const DecoupledAttention& cached,
                                                   const ManipulationPlan& plan) {
    DecoupledAttention out = current;
    for (Region r : kAllRegions) {
        const RegionOp op = plan.op(r);
        if (op == RegionOp::none) {
            continue;
        }
        const Matrix& cur = detail::region_ref(current, r);
        const Matrix& cac = detail::region_ref(cached, r);
        if (cur.rows() != cac.rows() || cur.cols() != cac.cols()) {
            throw ManipulationError(std::string("region ") + to_string(r) + ": editing branch is " +
                                    std::to_string(cur.rows()) + "x" + std::to_string(cur.cols()) +
                                    ", cached is " + std::to_string(cac.rows()) + "x" + std::to_string(cac.cols()));
        }
        Matrix& dst = detail::region_ref(out, r);
        if (op == RegionOp::replace) {
            dst = cac;
        } else {
            dst = (cac + cur) / 2.0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Inversion-branch cache

struct CacheKey {
    int fe_index = 0;
    BlockKind kind = BlockKind::single;
    int layer = 0;

    friend auto operator<=>(const CacheKey&, const CacheKey&) = default;

    [[nodiscard]] std::string to_string() const {
        return "(fe=" + std::to_string(fe_index) + ", " + rkflow::to_string(kind) + ", layer=" +
               std::to_string(layer) + ")";
    }
};

/// Per-head attention snapshots keyed by (evaluation, block kind, layer).
/// Entries are write-once.
class AttentionCache {
public:
    void store(const CacheKey& key, std::vector<DecoupledAttention> heads) {
        const auto [it, inserted] = entries_.emplace(key, std::move(heads));
        if (!inserted) {
            throw PreconditionError("attention cache already holds " + key.to_string());
        }
    }

    [[nodiscard]] const std::vector<DecoupledAttention>& at(const CacheKey& key) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) {
            throw CacheMissError("attention cache miss at " + key.to_string());
        }
        return it->second;
    }

    [[nodiscard]] bool contains(const CacheKey& key) const { return entries_.contains(key); }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
    [[nodiscard]] const std::map<CacheKey, std::vector<DecoupledAttention>>& entries() const noexcept {
        return entries_;
    }

private:
    std::map<CacheKey, std::vector<DecoupledAttention>> entries_;
};

enum class CacheMode { save, manipulate };

/// Hook bound to one function evaluation: stores in-scope snapshots (save) or
/// overwrites them from the cache (manipulate).
class CacheHook final : public AttentionHook {
public:
    CacheHook(AttentionCache& cache, int fe_index, CacheMode mode, ManipulationPlan plan)
        : cache_(&cache), fe_index_(fe_index), mode_(mode), plan_(std::move(plan)) {}

    void on_attention(BlockKind kind, int layer, std::span<DecoupledAttention> heads) override {
        if (!plan_.in_scope(kind, layer)) {
            return;
        }
        const CacheKey key{fe_index_, kind, layer};
        if (mode_ == CacheMode::save) {
            cache_->store(key, std::vector<DecoupledAttention>(heads.begin(), heads.end()));
            return;
        }
        const auto& cached = cache_->at(key);
        if (cached.size() != heads.size()) {
            throw ManipulationError("head count mismatch at " + key.to_string());
        }
        for (std::size_t h = 0; h < heads.size(); ++h) {
            heads[h] = manipulate(heads[h], cached[h], plan_);
        }
    }

private:
    AttentionCache* cache_;
    int fe_index_;
    CacheMode mode_;
    ManipulationPlan plan_;
};

[[nodiscard]] inline CacheHook cache_hook(AttentionCache& cache, int fe_index, CacheMode mode,
                                          const ManipulationPlan& plan) {
    return CacheHook(cache, fe_index, mode, plan);
}

// ---------------------------------------------------------------------------
// Cache spill: plain JSON number arrays, one file per run.

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            row[static_cast<std::size_t>(c)] = m(r, c);
        }
        rows.push_back(std::move(row));
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    Matrix m(rows, cols);
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows) {
        throw ParseError("cache spill: matrix row count mismatch");
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = data[static_cast<std::size_t>(r)];
        if (static_cast<Eigen::Index>(row.size()) != cols) {
            throw ParseError("cache spill: matrix column count mismatch");
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
        }
    }
    return m;
}

} // namespace detail

[[nodiscard]] inline nlohmann::json cache_to_json(const AttentionCache& cache) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [key, heads] : cache.entries()) {
        nlohmann::json jheads = nlohmann::json::array();
        for (const auto& d : heads) {
            jheads.push_back({{"n_c", d.n_c},
                              {"n_i", d.n_i},
                              {"m_cc", detail::matrix_to_json(d.m_cc)},
                              {"m_ci", detail::matrix_to_json(d.m_ci)},
                              {"m_ic", detail::matrix_to_json(d.m_ic)},
                              {"m_ii", detail::matrix_to_json(d.m_ii)},
                              {"v_c", detail::matrix_to_json(d.v_c)},
                              {"v_i", detail::matrix_to_json(d.v_i)}});
        }
        entries.push_back({{"fe_index", key.fe_index},
                           {"block", to_string(key.kind)},
                           {"layer", key.layer},
                           {"heads", std::move(jheads)}});
    }
    return {{"format", "rkflow-attention-cache"}, {"version", 1}, {"entries", std::move(entries)}};
}

[[nodiscard]] inline AttentionCache cache_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "rkflow-attention-cache") {
        throw ParseError("cache spill: unrecognised format tag");
    }
    AttentionCache cache;
    for (const auto& e : j.at("entries")) {
        const std::string block = e.at("block").get<std::string>();
        if (block != "multi" && block != "single") {
            throw ParseError("cache spill: unknown block kind '" + block + "'");
        }
        CacheKey key{e.at("fe_index").get<int>(), block == "multi" ? BlockKind::multi : BlockKind::single,
                     e.at("layer").get<int>()};
        std::vector<DecoupledAttention> heads;
        for (const auto& h : e.at("heads")) {
            DecoupledAttention d;
            d.n_c = h.at("n_c").get<std::size_t>();
            d.n_i = h.at("n_i").get<std::size_t>();
            d.m_cc = detail::matrix_from_json(h.at("m_cc"));
            d.m_ci = detail::matrix_from_json(h.at("m_ci"));
            d.m_ic = detail::matrix_from_json(h.at("m_ic"));
            d.m_ii = detail::matrix_from_json(h.at("m_ii"));
            d.v_c = detail::matrix_from_json(h.at("v_c"));
            d.v_i = detail::matrix_from_json(h.at("v_i"));
            check_quadrants(d);
            heads.push_back(std::move(d));
        }
        cache.store(key, std::move(heads));
    }
    return cache;
}

inline void spill_cache(const AttentionCache& cache, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error(path + ": cannot open file for writing");
    }
    out << cache_to_json(cache).dump() << '\n';
}

[[nodiscard]] inline AttentionCache load_cache(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError(path + ": cannot open file");
    }
    try {
        return cache_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Word-pixel response maps

/// Head-averaged cross-attention quadrants of one block in one evaluation.
struct CrossAttentionRecord {
    BlockKind kind = BlockKind::multi;
    int layer = 0;
    Matrix m_ic; ///< n_i x n_c
    Matrix m_ci; ///< n_c x n_i
};

/// records[e] holds every block of function evaluation e, in forward order.
using ResponseRun = std::vector<std::vector<CrossAttentionRecord>>;

/// Records every block's head-averaged M_IC and M_CI for one evaluation.
class CrossAttentionRecorder final : public AttentionHook {
public:
    void on_attention(BlockKind kind, int layer, std::span<DecoupledAttention> heads) override {
        if (heads.empty()) {
            return;
        }
        Matrix ic = Matrix::Zero(heads[0].m_ic.rows(), heads[0].m_ic.cols());
        Matrix ci = Matrix::Zero(heads[0].m_ci.rows(), heads[0].m_ci.cols());
        for (const auto& h : heads) {
            ic += h.m_ic;
            ci += h.m_ci;
        }
        const auto n = static_cast<double>(heads.size());
        blocks_.push_back({kind, layer, ic / n, ci / n});
    }

    [[nodiscard]] std::vector<CrossAttentionRecord> take() { return std::exchange(blocks_, {}); }

private:
    std::vector<CrossAttentionRecord> blocks_;
};

struct ResponseMap {
    int word_index = 0;
    Matrix grid_map; ///< grid_h x grid_w
    Matrix resized;  ///< height x width
};

/// Bilinear resize with corner-aligned sampling: output corners coincide with input corners.
[[nodiscard]] inline Matrix bilinear_resize(const Matrix& src, Eigen::Index height, Eigen::Index width) {
    if (src.rows() < 1 || src.cols() < 1 || height < 1 || width < 1) {
        throw PreconditionError("bilinear_resize: empty input or output");
    }
    Matrix out(height, width);
    const double sy = height > 1 ? static_cast<double>(src.rows() - 1) / static_cast<double>(height - 1) : 0.0;
    const double sx = width > 1 ? static_cast<double>(src.cols() - 1) / static_cast<double>(width - 1) : 0.0;
    for (Eigen::Index y = 0; y < height; ++y) {
        const double fy = static_cast<double>(y) * sy;
        const auto y0 = std::min(static_cast<Eigen::Index>(fy), src.rows() - 1);
        const auto y1 = std::min(y0 + 1, src.rows() - 1);
        const double wy = fy - static_cast<double>(y0);
        for (Eigen::Index x = 0; x < width; ++x) {
            const double fx = static_cast<double>(x) * sx;
            const auto x0 = std::min(static_cast<Eigen::Index>(fx), src.cols() - 1);
            const auto x1 = std::min(x0 + 1, src.cols() - 1);
            const double wx = fx - static_cast<double>(x0);
            const double top = (1.0 - wx) * src(y0, x0) + wx * src(y0, x1);
            const double bottom = (1.0 - wx) * src(y1, x0) + wx * src(y1, x1);
            out(y, x) = (1.0 - wy) * top + wy * bottom;
        }
    }
    return out;
}

/// A = (1/N) sum_steps (1/L) sum_blocks (M_IC + M_CI^T); R_g = resize(reshape(A[:, g])).
[[nodiscard]] inline std::vector<ResponseMap> aggregate_response_maps(const ResponseRun& run,
                                                                      std::span<const int> word_indices,
                                                                      Eigen::Index grid_h, Eigen::Index grid_w,
                                                                      Eigen::Index height, Eigen::Index width) {
    if (run.empty() || run.front().empty()) {
        throw PreconditionError("aggregate_response_maps: empty run record");
    }
    const auto n_i = run.front().front().m_ic.rows();
    const auto n_c = run.front().front().m_ic.cols();
    if (n_i != grid_h * grid_w) {
        throw ShapeError("aggregate_response_maps: " + std::to_string(n_i) + " image tokens for a " +
                         std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
    }
    for (int g : word_indices) {
        if (g < 0 || g >= n_c) {
            throw PreconditionError("aggregate_response_maps: word index " + std::to_string(g) + " outside [0, " +
                                    std::to_string(n_c) + ")");
        }
    }

    Matrix total = Matrix::Zero(n_i, n_c);
    for (const auto& eval : run) {
        Matrix per_eval = Matrix::Zero(n_i, n_c);
        for (const auto& block : eval) {
            per_eval += block.m_ic + block.m_ci.transpose();
        }
        total += per_eval / static_cast<double>(eval.size());
    }
    total /= static_cast<double>(run.size());

    std::vector<ResponseMap> maps;
    for (int g : word_indices) {
        ResponseMap rm;
        rm.word_index = g;
        rm.grid_map.resize(grid_h, grid_w);
        for (Eigen::Index p = 0; p < n_i; ++p) {
            rm.grid_map(p / grid_w, p % grid_w) = total(p, g);
        }
        rm.resized = bilinear_resize(rm.grid_map, height, width);
        maps.push_back(std::move(rm));
    }
    return maps;
}

} // namespace rkflow
