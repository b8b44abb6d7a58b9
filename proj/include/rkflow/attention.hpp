#pragma once

#include <cstddef>
#include <span>
#include <string>

#include <Eigen/Core>

namespace rkflow {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class BlockKind { multi, single };

[[nodiscard]] inline const char* to_string(BlockKind kind) noexcept {
    return kind == BlockKind::multi ? "multi" : "single";
}

/// One head's joint attention map split at the text/image boundary, text first:
///
///     M = [ m_cc | m_ci ]      V = [ v_c ]
///         [ m_ic | m_ii ]          [ v_i ]
struct DecoupledAttention {
    std::size_t n_c = 0;
    std::size_t n_i = 0;
    Matrix m_cc; ///< n_c x n_c
    Matrix m_ci; ///< n_c x n_i
    Matrix m_ic; ///< n_i x n_c
    Matrix m_ii; ///< n_i x n_i
    Matrix v_c;  ///< n_c x d_head
    Matrix v_i;  ///< n_i x d_head

    friend bool operator==(const DecoupledAttention& x, const DecoupledAttention& y) {
        return x.n_c == y.n_c && x.n_i == y.n_i && same(x.m_cc, y.m_cc) && same(x.m_ci, y.m_ci) &&
               same(x.m_ic, y.m_ic) && same(x.m_ii, y.m_ii) && same(x.v_c, y.v_c) && same(x.v_i, y.v_i);
    }

private:
    static bool same(const Matrix& p, const Matrix& q) {
        return p.rows() == q.rows() && p.cols() == q.cols() && p == q;
    }
};

/// Interception seam inside every attention layer of the toy MM-DiT.
///
/// The model decomposes each head's map before calling on_attention and recomposes
/// whatever the hook leaves behind; the attention output is computed from that.
/// Quadrant shapes must not change. A hook instance belongs to one solve.
class AttentionHook {
public:
    virtual ~AttentionHook() = default;
    virtual void on_attention(BlockKind kind, int layer, std::span<DecoupledAttention> heads) = 0;
};

/// Passes everything through untouched.
class IdentityHook final : public AttentionHook {
public:
    void on_attention(BlockKind, int, std::span<DecoupledAttention>) override {}
};

} // namespace rkflow
