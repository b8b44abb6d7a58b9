#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "rkflow/attention.hpp"
#include "rkflow/error.hpp"

namespace rkflow::report {

/// Shortest text that round-trips; non-finite values as inf, -inf, nan.
[[nodiscard]] inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// JSON has no infinity; non-finite values become the strings used by fmt().
[[nodiscard]] inline nlohmann::json number(double v) {
    if (std::isfinite(v)) {
        return v;
    }
    return fmt(v);
}

[[nodiscard]] inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        out += c;
        if (c == '"') {
            out += '"';
        }
    }
    return out + "\"";
}

class Csv {
public:
    explicit Csv(std::vector<std::string> header) : width_(header.size()) { add(header); }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != width_) {
            throw Error("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(width_));
        }
        add(cells);
    }

    [[nodiscard]] const std::string& str() const noexcept { return text_; }

private:
    void add(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            text_ += (i ? "," : "") + csv_field(cells[i]);
        }
        text_ += '\n';
    }
    std::size_t width_;
    std::string text_;
};

[[nodiscard]] inline std::string matrix_csv(const Matrix& m) {
    std::string out;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            out += (c ? "," : "") + fmt(m(r, c));
        }
        out += '\n';
    }
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(path.string() + ": cannot open for writing");
    }
    out << text;
    if (!out) {
        throw Error(path.string() + ": write failed");
    }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// SVG. Coordinates are printed with fixed precision so output is byte-stable.

namespace detail {

inline std::string f3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

/// Five-stop blue-green-yellow ramp on [0, 1].
inline std::string ramp(double u) {
    static constexpr std::array<std::array<double, 3>, 5> stops{{{68, 1, 84},
                                                                  {59, 82, 139},
                                                                  {33, 145, 140},
                                                                  {94, 201, 98},
                                                                  {253, 231, 37}}};
    u = std::clamp(u, 0.0, 1.0) * 4.0;
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(u), 3);
    const double w = u - static_cast<double>(k);
    char buf[8];
    int rgb[3];
    for (int ch = 0; ch < 3; ++ch) {
        rgb[ch] = static_cast<int>(std::lround((1.0 - w) * stops[k][ch] + w * stops[k + 1][ch]));
    }
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
    return buf;
}

} // namespace detail

/// Heatmap with per-map min-max normalisation (a constant map renders mid-ramp).
[[nodiscard]] inline std::string svg_heatmap(const Matrix& m, const std::string& title, double cell = 8.0) {
    const double lo = m.minCoeff();
    const double hi = m.maxCoeff();
    const double w = cell * static_cast<double>(m.cols());
    const double h = cell * static_cast<double>(m.rows());
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::f3(w) + "\" height=\"" +
                    detail::f3(h + 20.0) + "\">\n";
    s += "<text x=\"2\" y=\"14\" font-family=\"monospace\" font-size=\"12\">" + detail::escape(title) + "</text>\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const double u = hi > lo ? (m(r, c) - lo) / (hi - lo) : 0.5;
            s += "<rect x=\"" + detail::f3(cell * static_cast<double>(c)) + "\" y=\"" +
                 detail::f3(20.0 + cell * static_cast<double>(r)) + "\" width=\"" + detail::f3(cell) +
                 "\" height=\"" + detail::f3(cell) + "\" fill=\"" + detail::ramp(u) + "\"/>\n";
        }
    }
    return s + "</svg>\n";
}

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Log-log line plot; non-positive points are skipped.
[[nodiscard]] inline std::string svg_loglog(const std::vector<Series>& series, const std::string& title,
                                            const std::string& x_label, const std::string& y_label) {
    constexpr double W = 560, H = 400, L = 70, R = 150, T = 30, B = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (s.x[i] > 0 && s.y[i] > 0) {
                x0 = std::min(x0, std::log10(s.x[i]));
                x1 = std::max(x1, std::log10(s.x[i]));
                y0 = std::min(y0, std::log10(s.y[i]));
                y1 = std::max(y1, std::log10(s.y[i]));
            }
        }
    }
    if (!(x1 >= x0)) {
        x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    }
    if (x1 - x0 < 1e-12) x1 = x0 + 1;
    if (y1 - y0 < 1e-12) y1 = y0 + 1;
    auto px = [&](double lx) { return L + (lx - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double ly) { return H - B - (ly - y0) / (y1 - y0) * (H - T - B); };

    static constexpr std::array<const char*, 6> colors{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                                       "#17becf"};
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::f3(W) + "\" height=\"" +
                    detail::f3(H) + "\">\n";
    s += "<rect x=\"0\" y=\"0\" width=\"" + detail::f3(W) + "\" height=\"" + detail::f3(H) + "\" fill=\"white\"/>\n";
    s += "<text x=\"" + detail::f3(L) + "\" y=\"20\" font-family=\"monospace\" font-size=\"13\">" +
         detail::escape(title) + "</text>\n";
    s += "<rect x=\"" + detail::f3(L) + "\" y=\"" + detail::f3(T) + "\" width=\"" + detail::f3(W - L - R) +
         "\" height=\"" + detail::f3(H - T - B) + "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double d = std::ceil(x0); d <= std::floor(x1) + 1e-9; d += 1.0) {
        s += "<text x=\"" + detail::f3(px(d)) + "\" y=\"" + detail::f3(H - B + 16) +
             "\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">1e" + std::to_string(int(d)) +
             "</text>\n";
    }
    for (double d = std::ceil(y0); d <= std::floor(y1) + 1e-9; d += 1.0) {
        s += "<text x=\"" + detail::f3(L - 4) + "\" y=\"" + detail::f3(py(d) + 3) +
             "\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">1e" + std::to_string(int(d)) +
             "</text>\n";
    }
    s += "<text x=\"" + detail::f3((L + W - R) / 2) + "\" y=\"" + detail::f3(H - 12) +
         "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">" + detail::escape(x_label) +
         "</text>\n";
    s += "<text x=\"14\" y=\"" + detail::f3((T + H - B) / 2) + "\" font-family=\"monospace\" font-size=\"11\" " +
         "transform=\"rotate(-90 14 " + detail::f3((T + H - B) / 2) + ")\" text-anchor=\"middle\">" +
         detail::escape(y_label) + "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& ser = series[k];
        const char* color = colors[k % colors.size()];
        std::string pts;
        for (std::size_t i = 0; i < ser.x.size(); ++i) {
            if (ser.x[i] > 0 && ser.y[i] > 0) {
                pts += (pts.empty() ? "" : " ") + detail::f3(px(std::log10(ser.x[i]))) + "," +
                       detail::f3(py(std::log10(ser.y[i])));
            }
        }
        s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
        s += "<text x=\"" + detail::f3(W - R + 8) + "\" y=\"" + detail::f3(T + 14 + 14 * static_cast<double>(k)) +
             "\" font-family=\"monospace\" font-size=\"11\" fill=\"" + color + "\">" + detail::escape(ser.label) +
             "</text>\n";
    }
    return s + "</svg>\n";
}

} // namespace rkflow::report
