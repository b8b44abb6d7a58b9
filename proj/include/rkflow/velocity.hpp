#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rkflow/attention.hpp"
#include "rkflow/error.hpp"
#include "rkflow/latent.hpp"
#include "rkflow/rng.hpp"

namespace rkflow {

/// Prompt condition P: token ids plus an n_text x d_model embedding.
/// Analytic fields carry the tokens and an empty matrix.
struct PromptEmbedding {
    std::vector<int> tokens;
    Matrix vectors;

    friend bool operator==(const PromptEmbedding& x, const PromptEmbedding& y) {
        return x.tokens == y.tokens && x.vectors.rows() == y.vectors.rows() &&
               x.vectors.cols() == y.vectors.cols() && x.vectors == y.vectors;
    }
};

/// Conditioning passed through the solver untouched.
struct Conditioning {
    const PromptEmbedding* prompt = nullptr;
    double guidance = 1.0;
};

/// Velocity field v(z, t, P, guidance) of the flow ODE dZ = v dt.
///
/// eval is pure and re-entrant given construction parameters. Stage times may
/// fall slightly outside [0, 1] for tableaus with negative coefficients, so
/// implementations accept t in [-0.1, 1.1].
class VelocityField {
public:
    virtual ~VelocityField() = default;

    [[nodiscard]] Latent eval(const Latent& z, double t, const Conditioning& cond,
                              AttentionHook* hook = nullptr) const {
        Latent out = evaluate(z, t, cond, hook);
        if (out.shape() != z.shape()) {
            throw ShapeError("velocity output shape " + out.shape().to_string() + " differs from input " +
                             z.shape().to_string());
        }
        return out;
    }

    /// Lipschitz constant in z, when known.
    [[nodiscard]] virtual std::optional<double> lipschitz() const { return std::nullopt; }

    /// Exact state at time t of the trajectory through z0 at t = 0, when known.
    [[nodiscard]] virtual std::optional<Latent> exact_solution(const Latent& /*z0*/, double /*t*/) const {
        return std::nullopt;
    }

    /// Latent layout the field is built for; analytic fields accept any shape.
    [[nodiscard]] virtual std::optional<LatentShape> native_shape() const { return std::nullopt; }

    [[nodiscard]] virtual PromptEmbedding embed_prompt(std::span<const int> tokens) const {
        return PromptEmbedding{std::vector<int>(tokens.begin(), tokens.end()), Matrix{}};
    }

    [[nodiscard]] virtual std::string describe() const = 0;

private:
    virtual Latent evaluate(const Latent& z, double t, const Conditioning& cond, AttentionHook* hook) const = 0;
};

// ---------------------------------------------------------------------------
// Analytic fields. Each acts elementwise on the latent, so a one-element latent
// is the scalar ODE and larger latents are independent copies of it.

enum class AnalyticKind { constant, linear_scalar, time_poly, logistic, gauss_to_gauss };

[[nodiscard]] inline AnalyticKind parse_analytic_kind(const std::string& name) {
    if (name == "constant") return AnalyticKind::constant;
    if (name == "linear_scalar") return AnalyticKind::linear_scalar;
    if (name == "time_poly") return AnalyticKind::time_poly;
    if (name == "logistic") return AnalyticKind::logistic;
    if (name == "gauss_to_gauss") return AnalyticKind::gauss_to_gauss;
    throw LookupError("unknown analytic field '" + name +
                      "'; valid kinds: constant, linear_scalar, time_poly, logistic, gauss_to_gauss");
}

struct AnalyticParams {
    double c = 1.0;                   ///< constant
    double lambda = 1.0;              ///< linear_scalar
    std::vector<double> coeffs{1.0};  ///< time_poly, p_0 + p_1 t + ...
    double mu0 = 0.0;                 ///< gauss_to_gauss data mean
    double sigma0 = 1.0;              ///< gauss_to_gauss data stddev
};

namespace detail {

template <class F>
Latent map_latent(const Latent& z, F&& f) {
    Latent out(z.shape());
    for (std::size_t k = 0; k < z.size(); ++k) {
        out[k] = f(z[k]);
    }
    return out;
}

} // namespace detail

class ConstantField final : public VelocityField {
public:
    explicit ConstantField(double c) : c_(c) {}
    std::optional<double> lipschitz() const override { return 0.0; }
    std::optional<Latent> exact_solution(const Latent& z0, double t) const override {
        return detail::map_latent(z0, [&](double v) { return v + c_ * t; });
    }
    std::string describe() const override { return "constant(c=" + std::to_string(c_) + ")"; }

private:
    Latent evaluate(const Latent& z, double, const Conditioning&, AttentionHook*) const override {
        return Latent(z.shape(), c_);
    }
    double c_;
};

/// v = lambda z.
class LinearField final : public VelocityField {
public:
    explicit LinearField(double lambda) : lambda_(lambda) {}
    std::optional<double> lipschitz() const override { return std::abs(lambda_); }
    std::optional<Latent> exact_solution(const Latent& z0, double t) const override {
        const double g = std::exp(lambda_ * t);
        return detail::map_latent(z0, [&](double v) { return v * g; });
    }
    std::string describe() const override { return "linear_scalar(lambda=" + std::to_string(lambda_) + ")"; }

private:
    Latent evaluate(const Latent& z, double, const Conditioning&, AttentionHook*) const override {
        return detail::map_latent(z, [&](double v) { return lambda_ * v; });
    }
    double lambda_;
};

/// v = sum_k p_k t^k, independent of z.
class TimePolynomialField final : public VelocityField {
public:
    explicit TimePolynomialField(std::vector<double> coeffs) : coeffs_(std::move(coeffs)) {
        if (coeffs_.empty()) {
            throw PreconditionError("time_poly needs at least one coefficient");
        }
    }
    std::optional<double> lipschitz() const override { return 0.0; }
    std::optional<Latent> exact_solution(const Latent& z0, double t) const override {
        double integral = 0.0;
        double tp = t;
        for (std::size_t k = 0; k < coeffs_.size(); ++k) {
            integral += coeffs_[k] * tp / static_cast<double>(k + 1);
            tp *= t;
        }
        return detail::map_latent(z0, [&](double v) { return v + integral; });
    }
    std::string describe() const override {
        return "time_poly(degree=" + std::to_string(coeffs_.size() - 1) + ")";
    }

private:
    Latent evaluate(const Latent& z, double t, const Conditioning&, AttentionHook*) const override {
        double value = 0.0;
        for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) {
            value = value * t + *it;
        }
        return Latent(z.shape(), value);
    }
    std::vector<double> coeffs_;
};

/// v = z (1 - z); Lipschitz constant 1 on [0, 1].
class LogisticField final : public VelocityField {
public:
    std::optional<double> lipschitz() const override { return 1.0; }
    std::optional<Latent> exact_solution(const Latent& z0, double t) const override {
        const double g = std::exp(t);
        return detail::map_latent(z0, [&](double v) { return v * g / (1.0 - v + v * g); });
    }
    std::string describe() const override { return "logistic"; }

private:
    Latent evaluate(const Latent& z, double, const Conditioning&, AttentionHook*) const override {
        return detail::map_latent(z, [](double v) { return v * (1.0 - v); });
    }
};

/// Marginal rectified-flow velocity between N(mu0, sigma0^2) data at t = 0 and
/// N(0, 1) noise at t = 1 under Z_t = t Z1 + (1 - t) Z0 with independent ends.
///
/// With D = Z1 - Z0, m_t = (1 - t) mu0 and s_t^2 = t^2 + (1 - t)^2 sigma0^2,
///     v(z, t) = E[D | Z_t = z] = -mu0 + (t - (1 - t) sigma0^2) / s_t^2 * (z - m_t),
/// whose flow maps z0 to m_t + s_t (z0 - mu0) / sigma0.
class GaussianFlowField final : public VelocityField {
public:
    GaussianFlowField(double mu0, double sigma0) : mu0_(mu0), sigma0_(sigma0) {
        if (!(sigma0_ > 0.0)) {
            throw PreconditionError("gauss_to_gauss needs sigma0 > 0");
        }
        // |slope(t)| is a smooth rational function; dense sampling over the
        // admissible stage-time range [-0.1, 1.1] gives its supremum.
        double sup = 0.0;
        constexpr int kSamples = 120000;
        for (int k = 0; k <= kSamples; ++k) {
            const double t = -0.1 + 1.2 * static_cast<double>(k) / kSamples;
            sup = std::max(sup, std::abs(slope(t)));
        }
        lipschitz_ = sup;
    }

    std::optional<double> lipschitz() const override { return lipschitz_; }
    std::optional<Latent> exact_solution(const Latent& z0, double t) const override {
        const double m = (1.0 - t) * mu0_;
        const double s = std::sqrt(variance(t));
        return detail::map_latent(z0, [&](double v) { return m + s * (v - mu0_) / sigma0_; });
    }
    std::string describe() const override {
        return "gauss_to_gauss(mu0=" + std::to_string(mu0_) + ", sigma0=" + std::to_string(sigma0_) + ")";
    }

    [[nodiscard]] double variance(double t) const noexcept {
        return t * t + (1.0 - t) * (1.0 - t) * sigma0_ * sigma0_;
    }
    [[nodiscard]] double slope(double t) const noexcept {
        return (t - (1.0 - t) * sigma0_ * sigma0_) / variance(t);
    }

private:
    Latent evaluate(const Latent& z, double t, const Conditioning&, AttentionHook*) const override {
        const double a = slope(t);
        const double m = (1.0 - t) * mu0_;
        return detail::map_latent(z, [&](double v) { return -mu0_ + a * (v - m); });
    }
    double mu0_;
    double sigma0_;
    double lipschitz_ = 0.0;
};

[[nodiscard]] inline std::unique_ptr<VelocityField> make_analytic_field(AnalyticKind kind,
                                                                        const AnalyticParams& params = {}) {
    switch (kind) {
    case AnalyticKind::constant:
        return std::make_unique<ConstantField>(params.c);
    case AnalyticKind::linear_scalar:
        return std::make_unique<LinearField>(params.lambda);
    case AnalyticKind::time_poly:
        return std::make_unique<TimePolynomialField>(params.coeffs);
    case AnalyticKind::logistic:
        return std::make_unique<LogisticField>();
    case AnalyticKind::gauss_to_gauss:
        return std::make_unique<GaussianFlowField>(params.mu0, params.sigma0);
    }
    throw LookupError("unknown analytic field kind");
}

/// Empirical Lipschitz estimate: max of |v(z + eps u) - v(z)| / eps over seeded unit
/// directions u. Used for fields without a closed-form constant.
[[nodiscard]] inline double estimate_lipschitz(const VelocityField& field, const Latent& z, double t,
                                               const Conditioning& cond, int n_probes = 1000, double eps = 1e-5,
                                               std::uint64_t seed = 0) {
    Rng rng(seed);
    const Latent base = field.eval(z, t, cond);
    double best = 0.0;
    for (int p = 0; p < n_probes; ++p) {
        Latent dir = Latent::gaussian(z.shape(), rng);
        const double n = dir.norm();
        Latent probe = z;
        for (std::size_t k = 0; k < z.size(); ++k) {
            probe[k] += eps * dir[k] / n;
        }
        best = std::max(best, distance(field.eval(probe, t, cond), base) / eps);
    }
    return best;
}

} // namespace rkflow
