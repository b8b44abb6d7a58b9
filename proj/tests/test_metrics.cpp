#include <gtest/gtest.h>

#include "common.hpp"

using namespace rkflow;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ImagePair {
    std::vector<double> x;
    std::vector<double> y;
};

ImagePair noisy_pair(std::uint64_t seed, std::size_t side, double sd) {
    Rng rng(seed);
    ImagePair p;
    p.x.resize(side * side);
    for (auto& v : p.x) v = rng.uniform();
    p.y.resize(p.x.size());
    for (std::size_t k = 0; k < p.x.size(); ++k) p.y[k] = p.x[k] + rng.normal(0.0, sd);
    return p;
}

ImageView view(const std::vector<double>& v, std::size_t h, std::size_t w) {
    return {std::span<const double>(v), h, w};
}

} // namespace

TEST(Psnr, EqualInputsAreInfinite) {
    const std::vector<double> x{0.1, 0.2, 0.3};
    EXPECT_EQ(psnr(x, x, 1.0), kInf);
}

TEST(Psnr, MseOfOneHundredthIsTwentyDb) {
    const std::vector<double> x{0.0, 0.0, 0.0, 0.0};
    const std::vector<double> y{0.1, -0.1, 0.1, -0.1};
    EXPECT_NEAR(psnr(x, y, 1.0), 20.0, 1e-12);
}

TEST(Psnr, ConstantOffset) {
    std::vector<double> x(50);
    std::vector<double> y(50);
    for (std::size_t k = 0; k < x.size(); ++k) {
        x[k] = static_cast<double>(k) / 50.0;
        y[k] = x[k] + 0.1;
    }
    EXPECT_NEAR(psnr(x, y, 1.0), 20.0, 1e-9);
    EXPECT_NEAR(psnr(x, y, 10.0), 40.0, 1e-9);
}

TEST(Psnr, Symmetric) {
    const auto p = noisy_pair(1, 8, 0.2);
    EXPECT_EQ(psnr(p.x, p.y, 1.0), psnr(p.y, p.x, 1.0));
}

TEST(Psnr, Preconditions) {
    const std::vector<double> a{1.0, 2.0};
    const std::vector<double> b{1.0};
    EXPECT_THROW((void)psnr(a, b, 1.0), ShapeError);
    EXPECT_THROW((void)psnr({}, {}, 1.0), ShapeError);
    EXPECT_THROW((void)psnr(a, a, 0.0), PreconditionError);
}

TEST(Ssim, EqualInputsAreOne) {
    const auto p = noisy_pair(2, 32, 0.1);
    EXPECT_DOUBLE_EQ(ssim(view(p.x, 32, 32), view(p.x, 32, 32), 1.0), 1.0);
}

TEST(Ssim, AntiCorrelatedIsNegative) {
    const auto p = noisy_pair(3, 24, 0.0);
    std::vector<double> neg(p.x.size());
    for (std::size_t k = 0; k < neg.size(); ++k) neg[k] = 1.0 - p.x[k];
    EXPECT_LT(ssim(view(p.x, 24, 24), view(neg, 24, 24), 1.0), 0.0);
}

// Reference value from scikit-image structural_similarity(gaussian_weights=True,
// sigma=1.5, use_sample_covariance=False, data_range=1) on the same arrays.
TEST(Ssim, MatchesReferenceImplementation) {
    const auto p = noisy_pair(2024, 64, 0.1);
    EXPECT_NEAR(ssim(view(p.x, 64, 64), view(p.y, 64, 64), 1.0), 0.9411497604277224, 1e-10);
}

TEST(Ssim, Symmetric) {
    const auto p = noisy_pair(4, 20, 0.2);
    EXPECT_NEAR(ssim(view(p.x, 20, 20), view(p.y, 20, 20), 1.0), ssim(view(p.y, 20, 20), view(p.x, 20, 20), 1.0),
                1e-15);
}

TEST(Ssim, BoundedByOne) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto p = noisy_pair(seed, 16, 0.05 * static_cast<double>(seed + 1));
        const double s = ssim(view(p.x, 16, 16), view(p.y, 16, 16), 1.0);
        EXPECT_LE(s, 1.0);
        EXPECT_GE(s, -1.0);
    }
}

TEST(Ssim, InvariantToCommonShift) {
    const auto p = noisy_pair(5, 32, 1e-3);
    std::vector<double> xs(p.x), ys(p.y);
    for (auto& v : xs) v += 0.25;
    for (auto& v : ys) v += 0.25;
    EXPECT_NEAR(ssim(view(p.x, 32, 32), view(p.y, 32, 32), 1.0), ssim(view(xs, 32, 32), view(ys, 32, 32), 1.0), 1e-6);
}

TEST(Ssim, Preconditions) {
    const std::vector<double> small(100, 0.5);
    EXPECT_THROW((void)ssim(view(small, 10, 10), view(small, 10, 10), 1.0), PreconditionError);
    const std::vector<double> a(144, 0.5);
    const std::vector<double> b(156, 0.5);
    EXPECT_THROW((void)ssim(view(a, 12, 12), view(b, 12, 13), 1.0), ShapeError);
    EXPECT_THROW((void)ssim(view(a, 12, 12), view(a, 12, 12), -1.0), PreconditionError);
}

TEST(L2Rel, ZeroInputs) {
    const std::vector<double> z(4, 0.0);
    const auto r = l2_rel(z, z);
    EXPECT_EQ(r.l2, 0.0);
    EXPECT_EQ(r.rel, 0.0);
}

TEST(L2Rel, ThreeFourFive) {
    const std::vector<double> x{3.0, 4.0};
    const std::vector<double> y{0.0, 0.0};
    const auto r = l2_rel(x, y);
    EXPECT_EQ(r.l2, 5.0);
    EXPECT_EQ(r.rel, 1.0);
}

TEST(L2Rel, HomogeneityAndTriangle) {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x(9), y(9), w(9);
        for (std::size_t k = 0; k < 9; ++k) {
            x[k] = rng.normal();
            y[k] = rng.normal();
            w[k] = rng.normal();
        }
        const double a = rng.uniform(0.1, 10.0);
        std::vector<double> ax(9), ay(9);
        for (std::size_t k = 0; k < 9; ++k) {
            ax[k] = a * x[k];
            ay[k] = a * y[k];
        }
        EXPECT_NEAR(l2_rel(ax, ay).l2, a * l2_rel(x, y).l2, 1e-12 * a * l2_rel(x, y).l2);
        EXPECT_NEAR(l2_rel(ax, ay).rel, l2_rel(x, y).rel, 1e-12 * l2_rel(x, y).rel);
        EXPECT_LE(l2_rel(x, y).l2, l2_rel(x, w).l2 + l2_rel(w, y).l2 + 1e-12);
    }
}

TEST(L2Rel, SizeMismatch) {
    const std::vector<double> a{1.0, 2.0};
    const std::vector<double> b{1.0};
    EXPECT_THROW((void)l2_rel(a, b), ShapeError);
}

TEST(LatentMetrics, SmallGridOmitsSsim) {
    Rng rng(7);
    const auto z = Latent::gaussian({2, 4, 4}, rng);
    const auto rep = latent_metrics(z, z);
    EXPECT_EQ(rep.psnr, kInf);
    EXPECT_FALSE(rep.ssim.has_value());
    EXPECT_EQ(rep.l2, 0.0);
}

TEST(LatentMetrics, ChannelMeanSsim) {
    const auto p = noisy_pair(8, 16, 0.1);
    const auto q = noisy_pair(9, 16, 0.3);
    std::vector<double> ref(p.x);
    ref.insert(ref.end(), q.x.begin(), q.x.end());
    std::vector<double> est(p.y);
    est.insert(est.end(), q.y.begin(), q.y.end());
    const Latent a({2, 16, 16}, ref);
    const Latent b({2, 16, 16}, est);
    const auto [lo, hi] = std::minmax_element(ref.begin(), ref.end());
    const double range = *hi - *lo;
    const auto rep = latent_metrics(a, b);
    ASSERT_TRUE(rep.ssim.has_value());
    const double expected =
        0.5 * (ssim(view(p.x, 16, 16), view(p.y, 16, 16), range) + ssim(view(q.x, 16, 16), view(q.y, 16, 16), range));
    EXPECT_NEAR(*rep.ssim, expected, 1e-15);
    EXPECT_EQ(rep.psnr, psnr(ref, est, range));
}

TEST(LatentMetrics, ConstantReferenceUsesUnitRange) {
    const Latent a({1, 2, 2}, std::vector<double>(4, 3.0));
    const Latent b({1, 2, 2}, std::vector<double>{3.1, 2.9, 3.1, 2.9});
    EXPECT_NEAR(latent_metrics(a, b).psnr, 20.0, 1e-9);
}
