/*
 * Copyright 2026 The smoothcert Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include "smoothcert/dataset.hpp"
#include "smoothcert/mlp.hpp"
#include "smoothcert/sigma_select.hpp"
#include "smoothcert/smoothing.hpp"
#include "smoothcert/train.hpp"

namespace smoothcert {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace io_detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

inline void put_be32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    os.write(b, 4);
}

inline void put_le64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
    os.write(b, 8);
}

inline std::uint64_t get_le64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline std::ofstream open_out(const std::filesystem::path& p, bool binary = false) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, binary ? std::ios::binary : std::ios::out);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    return out;
}

}  // namespace io_detail

// ---------------------------------------------------------------- IDX

/// Reads an IDX image/label pair. Pixels are scaled to [0, 1]; the class
/// count is max(largest label + 1, 10) so digit subsets keep ten outputs.
inline Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    using io_detail::be32;
    const auto ib = io_detail::read_file(images);
    const auto lb = io_detail::read_file(labels);
    if (ib.size() < 16) throw FormatError(images.string() + ": truncated IDX header");
    if (be32(ib, 0) != 0x00000803u) {
        std::ostringstream os;
        os << images.string() << ": bad magic 0x" << std::hex << be32(ib, 0) << ", expected 0x00000803";
        throw FormatError(os.str());
    }
    if (lb.size() < 8) throw FormatError(labels.string() + ": truncated IDX header");
    if (be32(lb, 0) != 0x00000801u) {
        std::ostringstream os;
        os << labels.string() << ": bad magic 0x" << std::hex << be32(lb, 0) << ", expected 0x00000801";
        throw FormatError(os.str());
    }
    const std::size_t n = be32(ib, 4), rows = be32(ib, 8), cols = be32(ib, 12);
    const std::size_t nl = be32(lb, 4);
    if (n != nl)
        throw FormatError("IDX count mismatch: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
    const std::size_t d = rows * cols;
    if (ib.size() - 16 < n * d)
        throw FormatError(images.string() + ": truncated payload, expected " + std::to_string(n * d) + " bytes");
    if (lb.size() - 8 < n) throw FormatError(labels.string() + ": truncated payload");
    Dataset ds;
    ds.name = images.filename().string();
    ds.inputs = Matrix(n, d);
    ds.labels.resize(n);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lb[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
        for (std::size_t j = 0; j < d; ++j) ds.inputs(i, j) = ib[16 + i * d + j] / 255.0;
    }
    ds.num_classes = std::max<std::size_t>(max_label + 1, 10);
    return ds;
}

/// Writes a dataset as IDX; pixels are rounded to the nearest 1/255.
inline void write_idx(const Dataset& ds, std::size_t rows, std::size_t cols, const std::filesystem::path& images,
                      const std::filesystem::path& labels) {
    if (rows * cols != ds.dim()) throw std::invalid_argument("write_idx: rows * cols must equal the input dimension");
    auto io = io_detail::open_out(images, true);
    io_detail::put_be32(io, 0x00000803u);
    io_detail::put_be32(io, static_cast<std::uint32_t>(ds.size()));
    io_detail::put_be32(io, static_cast<std::uint32_t>(rows));
    io_detail::put_be32(io, static_cast<std::uint32_t>(cols));
    for (double v : ds.inputs.data()) io.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    auto lo = io_detail::open_out(labels, true);
    io_detail::put_be32(lo, 0x00000801u);
    io_detail::put_be32(lo, static_cast<std::uint32_t>(ds.size()));
    for (std::size_t y : ds.labels) {
        if (y > 255) throw std::invalid_argument("write_idx: label does not fit a byte");
        lo.put(static_cast<char>(y));
    }
}

// ---------------------------------------------------------------- checkpoint

inline constexpr char kCheckpointMagic[8] = {'S', 'M', 'C', 'E', 'R', 'T', '0', '1'};
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    MlpModel model;
    nlohmann::json metadata = nlohmann::json::object();
};

/// "SMCERT01", u64 LE header length, JSON header, then every layer's
/// weights as LE doubles in row-major order.
inline void save_checkpoint(const std::filesystem::path& path, const MlpModel& model,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
    static_assert(std::numeric_limits<double>::is_iec559);
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["dims"] = model.dims();
    header["augmented_input"] = model.augmented_input();
    header["metadata"] = metadata;
    const std::string h = header.dump();
    auto out = io_detail::open_out(path, true);
    out.write(kCheckpointMagic, 8);
    io_detail::put_le64(out, h.size());
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& l : model.layers())
        for (double v : l.data()) io_detail::put_le64(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto b = io_detail::read_file(path);
    const std::string where = path.string() + ": ";
    if (b.size() < 16 || std::memcmp(b.data(), kCheckpointMagic, 8) != 0)
        throw FormatError(where + "not a SMCERT01 checkpoint (bad magic)");
    const std::uint64_t hlen = io_detail::get_le64(b.data() + 8);
    if (hlen > b.size() - 16) throw FormatError(where + "truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(where + "malformed header: " + e.what());
    }
    const int version = header.value("format_version", 0);
    if (version < 1) throw FormatError(where + "missing format_version");
    if (version > kCheckpointVersion)
        throw FormatError(where + "format_version " + std::to_string(version) + " is newer than supported (" +
                          std::to_string(kCheckpointVersion) + ")");
    if (!header.contains("dims") || !header["dims"].is_array() || header["dims"].size() < 2)
        throw FormatError(where + "header lacks layer dims");
    const auto dims = header["dims"].get<std::vector<std::size_t>>();
    std::size_t count = 0;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) count += dims[i] * dims[i + 1];
    const std::size_t payload = b.size() - 16 - hlen;
    if (payload != count * 8)
        throw FormatError(where + "payload has " + std::to_string(payload) + " bytes but dims declare " +
                          std::to_string(count * 8));
    std::vector<Matrix> layers;
    const unsigned char* p = b.data() + 16 + hlen;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Matrix m(dims[i + 1], dims[i]);
        for (double& v : m.data()) {
            v = std::bit_cast<double>(io_detail::get_le64(p));
            p += 8;
        }
        layers.push_back(std::move(m));
    }
    Checkpoint ck;
    ck.model = MlpModel(std::move(layers), header.value("augmented_input", false));
    ck.metadata = header.value("metadata", nlohmann::json::object());
    return ck;
}

// ---------------------------------------------------------------- CSV

/// Shortest decimal that round-trips.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw FormatError("not a number: '" + std::string(s) + "'");
    return v;
}

inline constexpr std::string_view kCertifyHeader = "sample_index,label,predicted,abstain,pa_lower,radius,correct";
inline constexpr std::string_view kCurveHeader = "radius,accuracy";
inline constexpr std::string_view kMetricsHeader = "epoch,loss,train_acc,reg_value,seconds";
inline constexpr std::string_view kSigmaTraceHeader = "sigma2,mean_drop";

inline void write_certify_csv(const std::filesystem::path& path, std::span<const CertifiedSample> samples) {
    auto out = io_detail::open_out(path);
    out << kCertifyHeader << '\n';
    for (const auto& s : samples) {
        out << s.index << ',' << s.label << ','
            << (s.result.predicted ? std::to_string(*s.result.predicted) : std::string("-1")) << ','
            << (s.result.abstain() ? 1 : 0) << ',' << format_double(s.result.pa_lower) << ','
            << format_double(s.result.radius) << ',' << (s.correct() ? 1 : 0) << '\n';
    }
}

inline void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve) {
    auto out = io_detail::open_out(path);
    out << kCurveHeader << '\n';
    for (const auto& p : curve) out << format_double(p.radius) << ',' << format_double(p.accuracy) << '\n';
}

inline void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> metrics) {
    auto out = io_detail::open_out(path);
    out << kMetricsHeader << '\n';
    for (const auto& m : metrics)
        out << m.epoch << ',' << format_double(m.loss) << ',' << format_double(m.train_acc) << ','
            << format_double(m.reg_value) << ',' << format_double(m.seconds) << '\n';
}

inline void write_sigma_trace_csv(const std::filesystem::path& path, std::span<const SigmaTracePoint> trace) {
    auto out = io_detail::open_out(path);
    out << kSigmaTraceHeader << '\n';
    for (const auto& p : trace) out << format_double(p.sigma2) << ',' << format_double(p.mean_drop) << '\n';
}

/// Rows of a numeric CSV whose header must equal `header`.
inline std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path, std::string_view header) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != header)
        throw FormatError(path.string() + ": expected header '" + std::string(header) + "'");
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            row.push_back(parse_double(std::string_view(line).substr(start, comma - start)));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path) {
    std::vector<CurvePoint> out;
    for (const auto& r : read_numeric_csv(path, kCurveHeader)) {
        if (r.size() != 2) throw FormatError(path.string() + ": curve rows need 2 columns");
        out.push_back({r[0], r[1]});
    }
    return out;
}

inline std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path) {
    std::vector<EpochMetrics> out;
    for (const auto& r : read_numeric_csv(path, kMetricsHeader)) {
        if (r.size() != 5) throw FormatError(path.string() + ": metrics rows need 5 columns");
        out.push_back({static_cast<std::size_t>(r[0]), r[1], r[2], r[3], r[4]});
    }
    return out;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    auto out = io_detail::open_out(path);
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------- SVG

struct PlotSeries {
    std::string name;
    std::vector<CurvePoint> points;
};

struct PlotOptions {
    std::string title = "Certified accuracy";
    std::string x_label = "radius";
    std::string y_label = "certified accuracy";
    double width = 640.0;
    double height = 420.0;
    double margin_left = 70.0, margin_right = 150.0, margin_top = 40.0, margin_bottom = 55.0;
};

namespace io_detail {
inline std::string xml_escape(std::string_view s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '&': o += "&amp;"; break;
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}
}  // namespace io_detail

/// Standalone SVG line chart. The plot area spans exactly the data extents;
/// a degenerate extent is widened by 0.5 on each side.
inline std::string render_plot(std::span<const PlotSeries> series, const PlotOptions& opt = {}) {
    if (series.empty()) throw std::invalid_argument("emit_plot: no series");
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        if (s.points.empty()) throw std::invalid_argument("emit_plot: series '" + s.name + "' is empty");
        for (std::size_t i = 0; i < s.points.size(); ++i) {
            const auto& p = s.points[i];
            if (!std::isfinite(p.radius) || !std::isfinite(p.accuracy))
                throw std::invalid_argument("emit_plot: non-finite point in '" + s.name + "'");
            if (i > 0 && p.radius < s.points[i - 1].radius)
                throw std::invalid_argument("emit_plot: series '" + s.name + "' is not sorted by radius");
            xmin = std::min(xmin, p.radius);
            xmax = std::max(xmax, p.radius);
            ymin = std::min(ymin, p.accuracy);
            ymax = std::max(ymax, p.accuracy);
        }
    }
    if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
    if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
    const double x0 = opt.margin_left, x1 = opt.width - opt.margin_right;
    const double y0 = opt.height - opt.margin_bottom, y1 = opt.margin_top;
    auto px = [&](double x) { return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0); };
    auto py = [&](double y) { return y0 + (y - ymin) / (ymax - ymin) * (y1 - y0); };
    static constexpr std::array<const char*, 8> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                           "#9467bd", "#8c564b", "#e377c2", "#17becf"};
    using io_detail::xml_escape;
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << format_double(opt.width) << "\" height=\""
       << format_double(opt.height) << "\" viewBox=\"0 0 " << format_double(opt.width) << ' '
       << format_double(opt.height) << "\" data-x-min=\"" << format_double(xmin) << "\" data-x-max=\""
       << format_double(xmax) << "\" data-y-min=\"" << format_double(ymin) << "\" data-y-max=\""
       << format_double(ymax) << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << format_double(opt.width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       << "font-size=\"15\">" << xml_escape(opt.title) << "</text>\n";
    os << "<g stroke=\"black\" stroke-width=\"1\">\n"
       << "<line x1=\"" << format_double(x0) << "\" y1=\"" << format_double(y0) << "\" x2=\"" << format_double(x1)
       << "\" y2=\"" << format_double(y0) << "\"/>\n"
       << "<line x1=\"" << format_double(x0) << "\" y1=\"" << format_double(y0) << "\" x2=\"" << format_double(x0)
       << "\" y2=\"" << format_double(y1) << "\"/>\n</g>\n";
    os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
    for (int t = 0; t <= 4; ++t) {
        const double fx = xmin + (xmax - xmin) * t / 4.0, fy = ymin + (ymax - ymin) * t / 4.0;
        char lx[32], ly[32];
        std::snprintf(lx, sizeof lx, "%.3g", fx);
        std::snprintf(ly, sizeof ly, "%.3g", fy);
        os << "<text x=\"" << format_double(px(fx)) << "\" y=\"" << format_double(y0 + 16)
           << "\" text-anchor=\"middle\">" << lx << "</text>\n";
        os << "<text x=\"" << format_double(x0 - 6) << "\" y=\"" << format_double(py(fy) + 4)
           << "\" text-anchor=\"end\">" << ly << "</text>\n";
    }
    os << "<text x=\"" << format_double((x0 + x1) / 2) << "\" y=\"" << format_double(opt.height - 12)
       << "\" text-anchor=\"middle\">" << xml_escape(opt.x_label) << "</text>\n";
    os << "<text transform=\"translate(16," << format_double((y0 + y1) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
       << xml_escape(opt.y_label) << "</text>\n</g>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kColors[s % kColors.size()];
        os << "<polyline class=\"series\" data-name=\"" << xml_escape(series[s].name) << "\" fill=\"none\" stroke=\""
           << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < series[s].points.size(); ++i) {
            if (i) os << ' ';
            os << format_double(px(series[s].points[i].radius)) << ',' << format_double(py(series[s].points[i].accuracy));
        }
        os << "\"/>\n";
        const double ly = opt.margin_top + 10 + 18.0 * static_cast<double>(s);
        os << "<line x1=\"" << format_double(x1 + 12) << "\" y1=\"" << format_double(ly) << "\" x2=\""
           << format_double(x1 + 32) << "\" y2=\"" << format_double(ly) << "\" stroke=\"" << color
           << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << format_double(x1 + 38) << "\" y=\"" << format_double(ly + 4)
           << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(series[s].name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

inline void emit_plot(std::span<const PlotSeries> series, const std::filesystem::path& path,
                      const PlotOptions& opt = {}) {
    const std::string svg = render_plot(series, opt);
    auto out = io_detail::open_out(path);
    out << svg;
}

}  // namespace smoothcert
