#include <gtest/gtest.h>

#include <numbers>

#include "common.hpp"

using namespace rkflow;

namespace {

const Conditioning kNoCond{};

/// Central difference of the closed form against the field itself.
void expect_solves_ode(const VelocityField& f, double z0, double tol) {
    const double eps = 1e-5;
    for (double t : {0.1, 0.45, 0.9}) {
        const auto z = Latent::scalar(z0);
        const double ahead = (*f.exact_solution(z, t + eps))[0];
        const double behind = (*f.exact_solution(z, t - eps))[0];
        const double here = (*f.exact_solution(z, t))[0];
        const double slope = (ahead - behind) / (2 * eps);
        EXPECT_NEAR(slope, f.eval(Latent::scalar(here), t, kNoCond)[0], tol) << f.describe() << " t=" << t;
    }
    EXPECT_NEAR((*f.exact_solution(Latent::scalar(z0), 0.0))[0], z0, 1e-15);
}

ToyMMDiTConfig spec_shape_config() {
    ToyMMDiTConfig c;
    c.channels = 4;
    c.grid_h = 8;
    c.grid_w = 8;
    c.d_model = 64;
    c.n_heads = 4;
    c.l_multi = 2;
    c.l_single = 2;
    c.n_text = 8;
    return c;
}

/// Collects every head of every block in one evaluation.
class Snapshot final : public AttentionHook {
public:
    struct Entry {
        BlockKind kind;
        int layer;
        std::vector<DecoupledAttention> heads;
    };
    void on_attention(BlockKind kind, int layer, std::span<DecoupledAttention> heads) override {
        entries.push_back({kind, layer, {heads.begin(), heads.end()}});
    }
    std::vector<Entry> entries;
};

} // namespace

TEST(Analytic, ConstantEval) {
    const auto f = make_analytic_field(AnalyticKind::constant, {.c = 2.0});
    Rng rng(1);
    const auto z = Latent::gaussian({2, 2, 2}, rng);
    const auto v = f->eval(z, 0.3, kNoCond);
    for (std::size_t k = 0; k < v.size(); ++k) {
        EXPECT_EQ(v[k], 2.0);
    }
}

TEST(Analytic, LinearExactSolution) {
    const auto f = make_analytic_field(AnalyticKind::linear_scalar, {.lambda = 1.0});
    EXPECT_NEAR((*f->exact_solution(Latent::scalar(1.0), 0.5))[0], 1.6487212707, 1e-10);
    expect_solves_ode(*f, 0.7, 1e-8);
    EXPECT_EQ(*f->lipschitz(), 1.0);
}

TEST(Analytic, TimePolyExactSolution) {
    const auto f = make_analytic_field(AnalyticKind::time_poly, {.coeffs = {0.5, -2.0, 3.0}});
    expect_solves_ode(*f, 0.2, 1e-8);
    EXPECT_THROW(TimePolynomialField({}), PreconditionError);
}

TEST(Analytic, LogisticExactSolution) {
    const auto f = make_analytic_field(AnalyticKind::logistic);
    expect_solves_ode(*f, 0.25, 1e-8);
}

TEST(Analytic, GaussToGaussExactSolution) {
    const auto f = make_analytic_field(AnalyticKind::gauss_to_gauss, {.mu0 = 0.6, .sigma0 = 0.4});
    expect_solves_ode(*f, 1.3, 1e-7);
    EXPECT_THROW(GaussianFlowField(0.0, 0.0), PreconditionError);
}

TEST(Analytic, ParseKind) {
    EXPECT_EQ(parse_analytic_kind("logistic"), AnalyticKind::logistic);
    EXPECT_THROW((void)parse_analytic_kind("quadratic"), LookupError);
}

TEST(Analytic, ElementwiseOnLargerLatents) {
    const auto f = make_analytic_field(AnalyticKind::linear_scalar, {.lambda = -0.5});
    const Latent z({1, 1, 3}, std::vector<double>{1, -2, 4});
    const auto v = f->eval(z, 0.0, kNoCond);
    EXPECT_EQ(v.values(), (std::vector<double>{-0.5, 1, -2}));
}

// E[Z1 - Z0 | Z_t] is affine in Z_t for Gaussian ends; least squares over
// samples of the forward process recovers it.
TEST(Analytic, GaussToGaussMatchesMonteCarloRegression) {
    for (const auto& [mu0, sigma0] : std::vector<std::pair<double, double>>{{0.0, 1.0}, {1.0, 0.5}}) {
        GaussianFlowField f(mu0, sigma0);
        const double t = 0.5;
        Rng rng(derive_seed(2024, static_cast<std::uint64_t>(mu0 * 10)));
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        constexpr int n = 1000000;
        for (int k = 0; k < n; ++k) {
            const double z0 = rng.normal(mu0, sigma0);
            const double z1 = rng.normal();
            const double x = t * z1 + (1 - t) * z0;
            const double y = z1 - z0;
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        const double intercept = (sy - slope * sx) / n;
        for (double z : {-1.0, 0.0, 0.5, 1.5}) {
            EXPECT_NEAR(f.eval(Latent::scalar(z), t, kNoCond)[0], intercept + slope * z, 2e-2)
                << "mu0=" << mu0 << " z=" << z;
        }
    }
}

TEST(Analytic, GaussToGaussLipschitzCoversStageRange) {
    GaussianFlowField f(0.0, 0.3);
    for (double t = -0.1; t <= 1.1; t += 0.01) {
        EXPECT_LE(std::abs(f.slope(t)), *f.lipschitz() + 1e-12);
    }
}

TEST(EstimateLipschitz, LinearFieldIsExact) {
    LinearField f(-2.5);
    Rng rng(4);
    const auto z = Latent::gaussian({1, 4, 4}, rng);
    EXPECT_NEAR(estimate_lipschitz(f, z, 0.5, kNoCond, 50), 2.5, 1e-6);
}

TEST(EstimateLipschitz, ToyIsDeterministicAndPositive) {
    ToyMMDiT model(test::small_toy());
    Rng rng(8);
    const auto z = Latent::gaussian(model.config().latent_shape(), rng);
    const double a = estimate_lipschitz(model, z, 0.5, kNoCond, 40, 1e-5, 3);
    const double b = estimate_lipschitz(model, z, 0.5, kNoCond, 40, 1e-5, 3);
    EXPECT_EQ(a, b);
    EXPECT_GT(a, 0.0);
    EXPECT_TRUE(std::isfinite(a));
}

TEST(ToyMMDiT, DeterministicAcrossInstances) {
    const auto cfg = spec_shape_config();
    ToyMMDiT a(cfg);
    ToyMMDiT b(cfg);
    Rng rng(12);
    const auto z = Latent::gaussian(cfg.latent_shape(), rng);
    const std::vector<int> tokens{5, 9, 33};
    const auto p = a.embed_prompt(tokens);
    const Conditioning cond{&p, 2.0};
    EXPECT_EQ(a.eval(z, 0.37, cond), b.eval(z, 0.37, cond));
}

TEST(ToyMMDiT, SeedChangesWeights) {
    auto cfg = test::small_toy(1);
    ToyMMDiT a(cfg);
    cfg.seed = 2;
    ToyMMDiT b(cfg);
    Rng rng(12);
    const auto z = Latent::gaussian(cfg.latent_shape(), rng);
    EXPECT_NE(a.eval(z, 0.5, kNoCond), b.eval(z, 0.5, kNoCond));
}

TEST(ToyMMDiT, OutputShapeMatchesInput) {
    const auto cfg = spec_shape_config();
    ToyMMDiT m(cfg);
    Rng rng(13);
    const auto z = Latent::gaussian(cfg.latent_shape(), rng);
    const auto v = m.eval(z, 0.5, kNoCond);
    EXPECT_EQ(v.shape(), (LatentShape{4, 8, 8}));
    EXPECT_TRUE(v.all_finite());
    EXPECT_THROW((void)m.eval(Latent::scalar(1.0), 0.5, kNoCond), ShapeError);
}

TEST(ToyMMDiT, IdentityHookIsNeutral) {
    ToyMMDiT m(test::small_toy());
    Rng rng(14);
    const auto z = Latent::gaussian(m.config().latent_shape(), rng);
    const std::vector<int> tokens{3, 4};
    const auto p = m.embed_prompt(tokens);
    const Conditioning cond{&p, 1.5};
    IdentityHook id;
    EXPECT_EQ(m.eval(z, 0.6, cond, &id), m.eval(z, 0.6, cond));
}

TEST(ToyMMDiT, AcceptsStageTimeRange) {
    ToyMMDiT m(test::small_toy());
    Rng rng(15);
    const auto z = Latent::gaussian(m.config().latent_shape(), rng);
    EXPECT_TRUE(m.eval(z, -0.1, kNoCond).all_finite());
    EXPECT_TRUE(m.eval(z, 1.1, kNoCond).all_finite());
}

TEST(ToyMMDiT, JointAttentionRowsAreStochastic) {
    ToyMMDiT m(test::small_toy());
    Rng rng(16);
    const auto z = Latent::gaussian(m.config().latent_shape(), rng);
    Snapshot snap;
    (void)m.eval(z, 0.4, kNoCond, &snap);
    const auto& cfg = m.config();
    ASSERT_EQ(snap.entries.size(), static_cast<std::size_t>(cfg.l_multi + cfg.l_single));
    for (const auto& e : snap.entries) {
        ASSERT_EQ(e.heads.size(), static_cast<std::size_t>(cfg.n_heads));
        for (const auto& h : e.heads) {
            const auto [map, values] = recompose_attention(h);
            for (Eigen::Index r = 0; r < map.rows(); ++r) {
                EXPECT_NEAR(map.row(r).sum(), 1.0, 1e-6);
            }
        }
    }
}

TEST(ToyMMDiT, BlocksReportedInForwardOrder) {
    ToyMMDiT m(test::small_toy());
    Rng rng(17);
    Snapshot snap;
    (void)m.eval(Latent::gaussian(m.config().latent_shape(), rng), 0.4, kNoCond, &snap);
    ASSERT_EQ(snap.entries.size(), 3u);
    EXPECT_EQ(snap.entries[0].kind, BlockKind::multi);
    EXPECT_EQ(snap.entries[1].kind, BlockKind::single);
    EXPECT_EQ(snap.entries[1].layer, 0);
    EXPECT_EQ(snap.entries[2].layer, 1);
}

// Text tokens come first in the joint sequence: with zero text keys every
// text column of a multi-stream row gets the same logit, so the text-column
// quadrants (m_cc, m_ic) become constant along each row.
TEST(ToyMMDiT, ZeroTextKeyProbeFlattensTextColumns) {
    const auto cfg = test::small_toy();
    ToyMMDiT plain(cfg);
    ToyMMDiT probed(cfg, ToyMMDiTProbe{true});
    Rng rng(18);
    const auto z = Latent::gaussian(cfg.latent_shape(), rng);

    auto row_spread = [](const Matrix& m) {
        double worst = 0.0;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            worst = std::max(worst, m.row(r).maxCoeff() - m.row(r).minCoeff());
        }
        return worst;
    };
    const std::vector<int> tokens{11, 22, 33, 44};
    const auto prompt = plain.embed_prompt(tokens);
    const Conditioning cond{&prompt, 1.0};
    Snapshot a;
    Snapshot b;
    (void)plain.eval(z, 0.5, cond, &a);
    (void)probed.eval(z, 0.5, cond, &b);
    for (std::size_t h = 0; h < a.entries[0].heads.size(); ++h) {
        EXPECT_LT(row_spread(b.entries[0].heads[h].m_ic), 1e-15);
        EXPECT_LT(row_spread(b.entries[0].heads[h].m_cc), 1e-15);
        EXPECT_GT(row_spread(a.entries[0].heads[h].m_ic), 1e-6);
    }
}

TEST(EmbedPrompt, SameTokensSameEmbedding) {
    ToyMMDiT m(test::small_toy());
    const std::vector<int> t{1, 2, 3};
    EXPECT_EQ(m.embed_prompt(t), m.embed_prompt(t));
}

TEST(EmbedPrompt, OneTokenChangesOneRow) {
    ToyMMDiT m(test::small_toy());
    const std::vector<int> a{10, 20, 30};
    const std::vector<int> b{10, 21, 30};
    const auto pa = m.embed_prompt(a);
    const auto pb = m.embed_prompt(b);
    for (Eigen::Index r = 0; r < pa.vectors.rows(); ++r) {
        const bool same = pa.vectors.row(r) == pb.vectors.row(r);
        EXPECT_EQ(same, r != 1) << r;
    }
}

TEST(EmbedPrompt, ShorterPromptDiffersInPadRows) {
    ToyMMDiT m(test::small_toy());
    const std::vector<int> a{10, 20, 30};
    const std::vector<int> b{10, 20};
    const auto pa = m.embed_prompt(a);
    const auto pb = m.embed_prompt(b);
    EXPECT_TRUE(pa.vectors.topRows(2) == pb.vectors.topRows(2));
    EXPECT_FALSE(pa.vectors.row(2) == pb.vectors.row(2));
    EXPECT_TRUE(pa.vectors.row(3) == pb.vectors.row(3));
}

TEST(EmbedPrompt, Rejections) {
    ToyMMDiT m(test::small_toy());
    EXPECT_THROW((void)m.embed_prompt(std::vector<int>{1, 2, 3, 4, 5}), PreconditionError);
    EXPECT_THROW((void)m.embed_prompt(std::vector<int>{}), PreconditionError);
    EXPECT_THROW((void)m.embed_prompt(std::vector<int>{0}), PreconditionError);
    EXPECT_THROW((void)m.embed_prompt(std::vector<int>{64}), PreconditionError);
}

TEST(EmbedPrompt, AnalyticFieldsCarryTokensOnly) {
    LinearField f(1.0);
    const auto p = f.embed_prompt(std::vector<int>{4, 5});
    EXPECT_EQ(p.tokens, (std::vector<int>{4, 5}));
    EXPECT_EQ(p.vectors.size(), 0);
}

TEST(ToyMMDiTConfig, ViolationsListed) {
    ToyMMDiTConfig c;
    c.d_model = 30;
    c.n_heads = 4;
    c.grid_h = 0;
    const auto v = c.violations();
    EXPECT_EQ(v.size(), 3u);
    EXPECT_THROW(ToyMMDiT{c}, ConfigError);
}
