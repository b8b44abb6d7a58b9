#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rkflow/error.hpp"
#include "rkflow/rng.hpp"

namespace rkflow {

/// Logical (channels x grid_h x grid_w) layout of a flat latent vector.
struct LatentShape {
    std::size_t channels = 1;
    std::size_t grid_h = 1;
    std::size_t grid_w = 1;

    [[nodiscard]] constexpr std::size_t size() const noexcept { return channels * grid_h * grid_w; }
    [[nodiscard]] constexpr std::size_t tokens() const noexcept { return grid_h * grid_w; }

    friend constexpr bool operator==(const LatentShape&, const LatentShape&) = default;

    [[nodiscard]] std::string to_string() const {
        return std::to_string(channels) + "x" + std::to_string(grid_h) + "x" + std::to_string(grid_w);
    }
};

/// The state Z_t integrated by the flow ODE. Channel-major storage:
/// element (c, y, x) lives at c*grid_h*grid_w + y*grid_w + x.
class Latent {
public:
    Latent() = default;

    explicit Latent(LatentShape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}

    Latent(LatentShape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.size()) {
            throw ShapeError("latent data has " + std::to_string(data_.size()) + " entries, shape " +
                             shape_.to_string() + " needs " + std::to_string(shape_.size()));
        }
    }

    /// One-element latent; the analytic fields treat it as a scalar ODE.
    [[nodiscard]] static Latent scalar(double value) { return Latent(LatentShape{}, std::vector<double>{value}); }

    [[nodiscard]] static Latent gaussian(LatentShape shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
        Latent z(shape);
        for (auto& v : z.data_) {
            v = rng.normal(mean, stddev);
        }
        return z;
    }

    [[nodiscard]] static Latent uniform(LatentShape shape, Rng& rng, double lo, double hi) {
        Latent z(shape);
        for (auto& v : z.data_) {
            v = rng.uniform(lo, hi);
        }
        return z;
    }

    [[nodiscard]] const LatentShape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::size_t c, std::size_t y, std::size_t x) noexcept {
        return data_[(c * shape_.grid_h + y) * shape_.grid_w + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return data_[(c * shape_.grid_h + y) * shape_.grid_w + x];
    }

    [[nodiscard]] bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    [[nodiscard]] double norm() const noexcept {
        double acc = 0.0;
        for (double v : data_) {
            acc += v * v;
        }
        return std::sqrt(acc);
    }

    [[nodiscard]] double max_abs() const noexcept {
        double m = 0.0;
        for (double v : data_) {
            m = std::max(m, std::abs(v));
        }
        return m;
    }

    /// Bitwise comparison of shape and every entry.
    friend bool operator==(const Latent&, const Latent&) = default;

private:
    LatentShape shape_{};
    std::vector<double> data_;
};

inline void require_same_shape(const Latent& a, const Latent& b, const char* what) {
    if (a.shape() != b.shape() || a.size() != b.size()) {
        throw ShapeError(std::string(what) + ": shape " + a.shape().to_string() + " vs " + b.shape().to_string());
    }
}

/// l2 distance between two latents of equal shape.
[[nodiscard]] inline double distance(const Latent& a, const Latent& b) {
    require_same_shape(a, b, "distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

[[nodiscard]] inline double distance_inf(const Latent& a, const Latent& b) {
    require_same_shape(a, b, "distance_inf");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

} // namespace rkflow
