#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rkflow/error.hpp"
#include "rkflow/latent.hpp"

namespace rkflow {

/// Row-major grayscale plane.
struct ImageView {
    std::span<const double> pixels;
    std::size_t height = 0;
    std::size_t width = 0;
};

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

namespace detail {

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " + std::to_string(b) +
                         ")");
    }
}

inline std::array<double, kSsimWindow> gaussian_window() {
    std::array<double, kSsimWindow> w{};
    constexpr int radius = kSsimWindow / 2;
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double v = std::exp(-0.5 * (k * k) / (kSsimSigma * kSsimSigma));
        w[static_cast<std::size_t>(k + radius)] = v;
        sum += v;
    }
    for (auto& v : w) {
        v /= sum;
    }
    return w;
}

/// Separable Gaussian filter evaluated only where the window fits.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w) {
    const auto g = gaussian_window();
    const std::size_t oh = h - kSsimWindow + 1;
    const std::size_t ow = w - kSsimWindow + 1;
    std::vector<double> rows(h * ow, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kSsimWindow; ++k) {
                acc += g[k] * img[y * w + x + k];
            }
            rows[y * ow + x] = acc;
        }
    }
    std::vector<double> out(oh * ow, 0.0);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kSsimWindow; ++k) {
                acc += g[k] * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    return out;
}

} // namespace detail

/// 10 log10(R^2 / mse); +infinity when the inputs are equal.
[[nodiscard]] inline double psnr(std::span<const double> x, std::span<const double> y, double data_range) {
    detail::require_same_size(x.size(), y.size(), "psnr");
    if (x.empty()) {
        throw ShapeError("psnr: empty input");
    }
    if (!(data_range > 0.0)) {
        throw PreconditionError("psnr: data_range must be positive");
    }
    double se = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = x[k] - y[k];
        se += d * d;
    }
    if (se == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    const double mse = se / static_cast<double>(x.size());
    return 10.0 * std::log10(data_range * data_range / mse);
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), population
/// statistics, C1 = (0.01 R)^2, C2 = (0.03 R)^2, averaged over every position
/// where the window fits inside the image.
[[nodiscard]] inline double ssim(const ImageView& x, const ImageView& y, double data_range) {
    if (x.height != y.height || x.width != y.width) {
        throw ShapeError("ssim: shape mismatch (" + std::to_string(x.height) + "x" + std::to_string(x.width) +
                         " vs " + std::to_string(y.height) + "x" + std::to_string(y.width) + ")");
    }
    detail::require_same_size(x.pixels.size(), x.height * x.width, "ssim input x");
    detail::require_same_size(y.pixels.size(), y.height * y.width, "ssim input y");
    if (x.height < kSsimWindow || x.width < kSsimWindow) {
        throw PreconditionError("ssim: image " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                                " smaller than the 11x11 window");
    }
    if (!(data_range > 0.0)) {
        throw PreconditionError("ssim: data_range must be positive");
    }
    const std::size_t h = x.height;
    const std::size_t w = x.width;
    const std::size_t n = h * w;
    std::vector<double> xv(x.pixels.begin(), x.pixels.end());
    std::vector<double> yv(y.pixels.begin(), y.pixels.end());
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t k = 0; k < n; ++k) {
        xx[k] = xv[k] * xv[k];
        yy[k] = yv[k] * yv[k];
        xy[k] = xv[k] * yv[k];
    }
    const auto ux = detail::filter_valid(xv, h, w);
    const auto uy = detail::filter_valid(yv, h, w);
    const auto uxx = detail::filter_valid(xx, h, w);
    const auto uyy = detail::filter_valid(yy, h, w);
    const auto uxy = detail::filter_valid(xy, h, w);

    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    double total = 0.0;
    for (std::size_t k = 0; k < ux.size(); ++k) {
        const double vx = uxx[k] - ux[k] * ux[k];
        const double vy = uyy[k] - uy[k] * uy[k];
        const double vxy = uxy[k] - ux[k] * uy[k];
        const double num = (2.0 * ux[k] * uy[k] + c1) * (2.0 * vxy + c2);
        const double den = (ux[k] * ux[k] + uy[k] * uy[k] + c1) * (vx + vy + c2);
        total += num / den;
    }
    return total / static_cast<double>(ux.size());
}

struct L2Rel {
    double l2 = 0.0;
    double rel = 0.0;
};

/// l2 = |x - y|, rel = l2 / max(|x|, 1e-30).
[[nodiscard]] inline L2Rel l2_rel(std::span<const double> x, std::span<const double> y) {
    detail::require_same_size(x.size(), y.size(), "l2_rel");
    double se = 0.0;
    double xs = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = x[k] - y[k];
        se += d * d;
        xs += x[k] * x[k];
    }
    const double l2 = std::sqrt(se);
    return {l2, l2 / std::max(std::sqrt(xs), 1e-30)};
}

struct MetricReport {
    double psnr = 0.0;
    std::optional<double> ssim; ///< absent when the token grid is smaller than the window
    double l2 = 0.0;
    double rel = 0.0;
};

/// Latent compared to a reference latent. Each channel is a grayscale plane;
/// SSIM is the channel mean. The data range is max - min of the reference
/// (1 when the reference is constant).
[[nodiscard]] inline MetricReport latent_metrics(const Latent& reference, const Latent& estimate) {
    require_same_shape(reference, estimate, "latent_metrics");
    const auto ref = reference.data();
    const auto [lo, hi] = std::minmax_element(ref.begin(), ref.end());
    const double range = (*hi > *lo) ? *hi - *lo : 1.0;

    MetricReport rep;
    const auto lr = l2_rel(ref, estimate.data());
    rep.l2 = lr.l2;
    rep.rel = lr.rel;
    rep.psnr = psnr(ref, estimate.data(), range);

    const auto s = reference.shape();
    if (s.grid_h >= kSsimWindow && s.grid_w >= kSsimWindow) {
        const std::size_t plane = s.grid_h * s.grid_w;
        double acc = 0.0;
        for (std::size_t c = 0; c < s.channels; ++c) {
            const ImageView a{ref.subspan(c * plane, plane), s.grid_h, s.grid_w};
            const ImageView b{estimate.data().subspan(c * plane, plane), s.grid_h, s.grid_w};
            acc += ssim(a, b, range);
        }
        rep.ssim = acc / static_cast<double>(s.channels);
    }
    return rep;
}

} // namespace rkflow
