#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rkflow/attention.hpp"
#include "rkflow/ddta.hpp"
#include "rkflow/error.hpp"
#include "rkflow/latent.hpp"
#include "rkflow/rng.hpp"
#include "rkflow/velocity.hpp"

namespace rkflow {

struct ToyMMDiTConfig {
    int d_model = 64;
    int n_heads = 4;
    int l_multi = 2;
    int l_single = 4;
    int n_text = 8;
    int grid_h = 8;
    int grid_w = 8;
    int channels = 4;
    int vocab = 256; ///< id 0 is the pad token
    std::uint64_t seed = 0;

    [[nodiscard]] LatentShape latent_shape() const {
        return LatentShape{static_cast<std::size_t>(channels), static_cast<std::size_t>(grid_h),
                           static_cast<std::size_t>(grid_w)};
    }

    /// Every violated invariant, empty when the config is usable.
    [[nodiscard]] std::vector<std::string> violations() const {
        std::vector<std::string> out;
        auto positive = [&](int v, const char* name) {
            if (v < 1) {
                out.push_back(std::string(name) + " must be >= 1 (got " + std::to_string(v) + ")");
            }
        };
        positive(d_model, "d_model");
        positive(n_heads, "n_heads");
        positive(l_multi, "l_multi");
        positive(l_single, "l_single");
        positive(n_text, "n_text");
        positive(grid_h, "grid_h");
        positive(grid_w, "grid_w");
        positive(channels, "channels");
        if (vocab < 2) {
            out.push_back("vocab must be >= 2 (got " + std::to_string(vocab) + ")");
        }
        if (d_model >= 1 && n_heads >= 1 && d_model % n_heads != 0) {
            out.push_back("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
        }
        if (d_model >= 1 && d_model % 4 != 0) {
            out.push_back("d_model must be a multiple of 4 for the sinusoidal embeddings");
        }
        return out;
    }
};

inline void to_json(nlohmann::json& j, const ToyMMDiTConfig& c) {
    j = nlohmann::json{{"d_model", c.d_model}, {"n_heads", c.n_heads}, {"l_multi", c.l_multi},
                       {"l_single", c.l_single}, {"n_text", c.n_text},   {"grid_h", c.grid_h},
                       {"grid_w", c.grid_w},     {"channels", c.channels}, {"vocab", c.vocab},
                       {"seed", c.seed}};
}

/// Debug knobs for structural probes. Defaults leave the model untouched.
struct ToyMMDiTProbe {
    bool zero_text_keys = false; ///< multi-stream blocks use K_C = 0
};

/// Deterministic, untrained multimodal diffusion transformer used as a
/// nonlinear velocity field.
///
/// Multi-stream blocks project text and image tokens with separate weights,
/// attend jointly over (text || image) and update each stream with its own
/// output projection and feed-forward. Single-stream blocks project the
/// concatenated sequence with shared weights. Time and guidance enter through
/// a sinusoidal embedding and per-block adaptive layer-norm scale/shift.
class ToyMMDiT final : public VelocityField {
public:
    explicit ToyMMDiT(ToyMMDiTConfig cfg, ToyMMDiTProbe probe = {}) : cfg_(cfg), probe_(probe) {
        const auto bad = cfg_.violations();
        if (!bad.empty()) {
            std::string msg = "invalid toy MM-DiT config:";
            for (const auto& b : bad) {
                msg += " " + b + ";";
            }
            throw ConfigError(msg);
        }
        init_weights();
    }

    [[nodiscard]] const ToyMMDiTConfig& config() const noexcept { return cfg_; }
    std::optional<LatentShape> native_shape() const override { return cfg_.latent_shape(); }
    std::string describe() const override { return "toy_mmdit"; }

    PromptEmbedding embed_prompt(std::span<const int> tokens) const override {
        if (tokens.empty() || tokens.size() > static_cast<std::size_t>(cfg_.n_text)) {
            throw PreconditionError("prompt length " + std::to_string(tokens.size()) + " outside [1, " +
                                    std::to_string(cfg_.n_text) + "]");
        }
        PromptEmbedding p;
        p.tokens.assign(tokens.begin(), tokens.end());
        p.vectors.resize(cfg_.n_text, cfg_.d_model);
        for (int k = 0; k < cfg_.n_text; ++k) {
            int id = kPadId;
            if (static_cast<std::size_t>(k) < tokens.size()) {
                id = tokens[static_cast<std::size_t>(k)];
                if (id <= kPadId || id >= cfg_.vocab) {
                    throw PreconditionError("token id " + std::to_string(id) + " outside [1, " +
                                            std::to_string(cfg_.vocab) + ")");
                }
            }
            p.vectors.row(k) = embedding_.row(id);
        }
        return p;
    }

    static constexpr int kPadId = 0;

private:
    struct Linear {
        Matrix w; ///< in x out
        Eigen::RowVectorXd b;
        [[nodiscard]] Matrix apply(const Matrix& x) const {
            Matrix y = x * w;
            y.rowwise() += b;
            return y;
        }
    };

    struct FeedForward {
        Linear up;
        Linear down;
    };

    struct StreamWeights {
        Linear q, k, v, o;
        Linear modulation; ///< d -> 2d (scale, shift)
        FeedForward ffn;
    };

    struct MultiBlock {
        StreamWeights text;
        StreamWeights image;
    };

    Linear make_linear(Rng& rng, int in, int out) const {
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
        Linear l;
        l.w.resize(in, out);
        for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.w.cols(); ++c) {
                l.w(r, c) = scale * rng.normal();
            }
        }
        l.b.resize(out);
        for (Eigen::Index c = 0; c < l.b.size(); ++c) {
            l.b(c) = scale * rng.normal();
        }
        return l;
    }

    StreamWeights make_stream(Rng& rng) const {
        const int d = cfg_.d_model;
        StreamWeights s;
        s.q = make_linear(rng, d, d);
        s.k = make_linear(rng, d, d);
        s.v = make_linear(rng, d, d);
        s.o = make_linear(rng, d, d);
        s.modulation = make_linear(rng, d, 2 * d);
        s.ffn.up = make_linear(rng, d, 2 * d);
        s.ffn.down = make_linear(rng, 2 * d, d);
        return s;
    }

    void init_weights() {
        Rng rng(cfg_.seed);
        const int d = cfg_.d_model;
        const double scale = 1.0 / std::sqrt(static_cast<double>(d));
        embedding_.resize(cfg_.vocab, d);
        for (Eigen::Index r = 0; r < embedding_.rows(); ++r) {
            for (Eigen::Index c = 0; c < embedding_.cols(); ++c) {
                embedding_(r, c) = scale * rng.normal();
            }
        }
        patch_ = make_linear(rng, cfg_.channels, d);
        text_in_ = make_linear(rng, d, d);
        cond_in_ = make_linear(rng, d, d);
        cond_out_ = make_linear(rng, d, d);
        for (int l = 0; l < cfg_.l_multi; ++l) {
            multi_.push_back(MultiBlock{make_stream(rng), make_stream(rng)});
        }
        for (int l = 0; l < cfg_.l_single; ++l) {
            single_.push_back(make_stream(rng));
        }
        head_ = make_linear(rng, d, cfg_.channels);

        // Fixed 2-D sinusoidal positions: half the features encode the row, half the column.
        const int n_i = cfg_.grid_h * cfg_.grid_w;
        positions_.resize(n_i, d);
        const int quarter = d / 4;
        for (int p = 0; p < n_i; ++p) {
            const double y = p / cfg_.grid_w;
            const double x = p % cfg_.grid_w;
            for (int k = 0; k < quarter; ++k) {
                const double freq = std::pow(100.0, -static_cast<double>(k) / quarter);
                positions_(p, k) = std::sin(y * freq);
                positions_(p, quarter + k) = std::cos(y * freq);
                positions_(p, 2 * quarter + k) = std::sin(x * freq);
                positions_(p, 3 * quarter + k) = std::cos(x * freq);
            }
        }
    }

    static Matrix layer_norm(const Matrix& x) {
        Matrix y(x.rows(), x.cols());
        const auto n = static_cast<double>(x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double mean = x.row(r).sum() / n;
            const double var = (x.row(r).array() - mean).square().sum() / n;
            y.row(r) = (x.row(r).array() - mean) / std::sqrt(var + 1e-6);
        }
        return y;
    }

    static double silu(double v) { return v / (1.0 + std::exp(-v)); }

    static Matrix modulated_norm(const Matrix& x, const Eigen::RowVectorXd& mod) {
        const auto d = x.cols();
        Matrix y = layer_norm(x);
        const Eigen::RowVectorXd scale = mod.head(d);
        const Eigen::RowVectorXd shift = mod.tail(d);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            y.row(r) = y.row(r).cwiseProduct((scale.array() + 1.0).matrix()) + shift;
        }
        return y;
    }

    static Matrix feed_forward(const FeedForward& f, const Matrix& x) {
        Matrix hidden = f.up.apply(layer_norm(x));
        hidden = hidden.unaryExpr([](double v) { return silu(v); });
        return f.down.apply(hidden);
    }

    /// Sinusoidal embedding of (t, guidance) mapped through a 2-layer network.
    Eigen::RowVectorXd conditioning_vector(double t, double guidance) const {
        const int d = cfg_.d_model;
        const int quarter = d / 4;
        Matrix e(1, d);
        for (int k = 0; k < quarter; ++k) {
            // Frequencies in [0.1, pi] keep the field smooth in t over [0, 1].
            const double freq = std::numbers::pi * std::pow(0.1 / std::numbers::pi, static_cast<double>(k) / quarter);
            e(0, k) = std::sin(t * freq);
            e(0, quarter + k) = std::cos(t * freq);
            e(0, 2 * quarter + k) = std::sin(guidance * freq);
            e(0, 3 * quarter + k) = std::cos(guidance * freq);
        }
        Matrix hidden = cond_in_.apply(e).unaryExpr([](double v) { return silu(v); });
        Matrix out = cond_out_.apply(hidden).unaryExpr([](double v) { return silu(v); });
        return out.row(0);
    }

    /// Multi-head softmax(Q K^T / sqrt(d_head)) V with the hook seam.
    Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, BlockKind kind, int layer,
                     AttentionHook* hook) const {
        const auto n = q.rows();
        const int dh = cfg_.d_model / cfg_.n_heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        const auto n_c = static_cast<std::size_t>(cfg_.n_text);

        std::vector<Matrix> maps(static_cast<std::size_t>(cfg_.n_heads));
        std::vector<Matrix> values(static_cast<std::size_t>(cfg_.n_heads));
        for (int h = 0; h < cfg_.n_heads; ++h) {
            const Matrix qh = q.middleCols(h * dh, dh);
            const Matrix kh = k.middleCols(h * dh, dh);
            Matrix logits = (qh * kh.transpose()) * inv_sqrt;
            for (Eigen::Index r = 0; r < n; ++r) {
                const double mx = logits.row(r).maxCoeff();
                logits.row(r) = (logits.row(r).array() - mx).exp().matrix();
                logits.row(r) /= logits.row(r).sum();
            }
            maps[static_cast<std::size_t>(h)] = std::move(logits);
            values[static_cast<std::size_t>(h)] = v.middleCols(h * dh, dh);
        }

        if (hook != nullptr) {
            std::vector<DecoupledAttention> heads;
            heads.reserve(maps.size());
            for (std::size_t h = 0; h < maps.size(); ++h) {
                heads.push_back(decompose_attention(maps[h], values[h], n_c));
            }
            hook->on_attention(kind, layer, heads);
            if (heads.size() != maps.size()) {
                throw ShapeError("attention hook changed the head count");
            }
            for (std::size_t h = 0; h < maps.size(); ++h) {
                if (heads[h].n_c != n_c || heads[h].n_i != static_cast<std::size_t>(n) - n_c) {
                    throw ShapeError("attention hook changed the token split");
                }
                auto [m, val] = recompose_attention(heads[h]);
                maps[h] = std::move(m);
                values[h] = std::move(val);
            }
        }

        Matrix out(n, cfg_.d_model);
        for (int h = 0; h < cfg_.n_heads; ++h) {
            const Matrix oh = maps[static_cast<std::size_t>(h)] * values[static_cast<std::size_t>(h)];
            out.middleCols(h * dh, dh) = oh;
        }
        return out;
    }

    Latent evaluate(const Latent& z, double t, const Conditioning& cond, AttentionHook* hook) const override {
        if (z.shape() != cfg_.latent_shape()) {
            throw ShapeError("toy MM-DiT expects latent " + cfg_.latent_shape().to_string() + ", got " +
                             z.shape().to_string());
        }
        const int d = cfg_.d_model;
        const int n_c = cfg_.n_text;
        const int n_i = cfg_.grid_h * cfg_.grid_w;

        Matrix tokens(n_i, cfg_.channels);
        for (int p = 0; p < n_i; ++p) {
            for (int c = 0; c < cfg_.channels; ++c) {
                tokens(p, c) = z[static_cast<std::size_t>(c * n_i + p)];
            }
        }
        Matrix h_img = patch_.apply(tokens) + positions_;

        Matrix text;
        if (cond.prompt != nullptr && cond.prompt->vectors.size() > 0) {
            if (cond.prompt->vectors.rows() != n_c || cond.prompt->vectors.cols() != d) {
                throw ShapeError("prompt embedding is " + std::to_string(cond.prompt->vectors.rows()) + "x" +
                                 std::to_string(cond.prompt->vectors.cols()) + ", model expects " +
                                 std::to_string(n_c) + "x" + std::to_string(d));
            }
            text = cond.prompt->vectors;
        } else {
            text = embedding_.row(kPadId).replicate(n_c, 1);
        }
        Matrix h_txt = text_in_.apply(text);

        const Eigen::RowVectorXd cvec = conditioning_vector(t, cond.guidance);

        for (int l = 0; l < cfg_.l_multi; ++l) {
            const auto& blk = multi_[static_cast<std::size_t>(l)];
            const Eigen::RowVectorXd mod_t = blk.text.modulation.apply(cvec).row(0);
            const Eigen::RowVectorXd mod_i = blk.image.modulation.apply(cvec).row(0);
            const Matrix nt = modulated_norm(h_txt, mod_t);
            const Matrix ni = modulated_norm(h_img, mod_i);

            Matrix q(n_c + n_i, d), k(n_c + n_i, d), v(n_c + n_i, d);
            q.topRows(n_c) = blk.text.q.apply(nt);
            q.bottomRows(n_i) = blk.image.q.apply(ni);
            k.topRows(n_c) = blk.text.k.apply(nt);
            k.bottomRows(n_i) = blk.image.k.apply(ni);
            v.topRows(n_c) = blk.text.v.apply(nt);
            v.bottomRows(n_i) = blk.image.v.apply(ni);
            if (probe_.zero_text_keys) {
                k.topRows(n_c).setZero();
            }

            const Matrix att = attention(q, k, v, BlockKind::multi, l, hook);
            h_txt += blk.text.o.apply(att.topRows(n_c));
            h_img += blk.image.o.apply(att.bottomRows(n_i));
            h_txt += feed_forward(blk.text.ffn, h_txt);
            h_img += feed_forward(blk.image.ffn, h_img);
        }

        Matrix h(n_c + n_i, d);
        h.topRows(n_c) = h_txt;
        h.bottomRows(n_i) = h_img;
        for (int l = 0; l < cfg_.l_single; ++l) {
            const auto& blk = single_[static_cast<std::size_t>(l)];
            const Eigen::RowVectorXd mod = blk.modulation.apply(cvec).row(0);
            const Matrix hn = modulated_norm(h, mod);
            const Matrix att = attention(blk.q.apply(hn), blk.k.apply(hn), blk.v.apply(hn), BlockKind::single, l, hook);
            h += blk.o.apply(att);
            h += feed_forward(blk.ffn, h);
        }

        const Matrix vel = head_.apply(layer_norm(h.bottomRows(n_i)));
        Latent out(z.shape());
        for (int p = 0; p < n_i; ++p) {
            for (int c = 0; c < cfg_.channels; ++c) {
                out[static_cast<std::size_t>(c * n_i + p)] = vel(p, c);
            }
        }
        return out;
    }

    ToyMMDiTConfig cfg_;
    ToyMMDiTProbe probe_;
    Matrix embedding_;
    Matrix positions_;
    Linear patch_;
    Linear text_in_;
    Linear cond_in_;
    Linear cond_out_;
    std::vector<MultiBlock> multi_;
    std::vector<StreamWeights> single_;
    Linear head_;
};

[[nodiscard]] inline ToyMMDiT toy_mmdit_new(const ToyMMDiTConfig& cfg) { return ToyMMDiT(cfg); }

} // namespace rkflow
