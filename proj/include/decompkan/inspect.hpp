#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "decompkan/error.hpp"
#include "decompkan/layers.hpp"
#include "decompkan/model.hpp"
#include "decompkan/textio.hpp"

namespace decompkan {

inline constexpr std::size_t kCurvePoints = 257;
inline constexpr double kCurveLo = -3.0;
inline constexpr double kCurveHi = 3.0;

inline std::vector<double> curve_grid() {
  std::vector<double> xs(kCurvePoints);
  for (std::size_t k = 0; k < kCurvePoints; ++k) {
    xs[k] = kCurveLo + (kCurveHi - kCurveLo) * static_cast<double>(k) / static_cast<double>(kCurvePoints - 1);
  }
  return xs;
}

struct EdgeCurve {
  std::string branch;
  std::size_t layer = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  std::vector<double> xs;
  std::vector<double> values;
  double activation_range = 0.0;
};

struct LayerActivitySummary {
  std::string branch;
  std::size_t layer = 0;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t edges = 0;
  double mean_range = 0.0;
  double std_range = 0.0;  // population
};

inline const KanLayerParams& kan_layer(const ModelParams& p, const std::string& branch, std::size_t layer) {
  const BranchParams* b = nullptr;
  if (branch == "trend") {
    if (!p.trend) throw ConfigError("inspect: model has no trend branch");
    b = &*p.trend;
  } else if (branch == "residual") {
    b = &p.residual;
  } else {
    throw ConfigError("inspect: branch must be 'trend' or 'residual', got '" + branch + "'");
  }
  if (b->core != CoreKind::kan) throw ConfigError("inspect: " + branch + " branch has no KAN core");
  if (layer >= b->kan.size()) {
    throw ConfigError("inspect: layer " + std::to_string(layer) + " out of range (branch has " +
                      std::to_string(b->kan.size()) + " KAN layers)");
  }
  return b->kan[layer];
}

/// Precomputed SiLU and basis values on the sample grid for one layer's
/// spline grid, so every edge curve is a short dot product.
class CurveTable {
 public:
  explicit CurveTable(const SplineGrid& g) : nb_(g.num_basis()), xs_(curve_grid()) {
    silu_.resize(xs_.size());
    basis_.resize(xs_.size() * nb_);
    std::vector<double> work(g.work_size());
    for (std::size_t k = 0; k < xs_.size(); ++k) {
      silu_[k] = silu(xs_[k]);
      g.eval(xs_[k], work);
      std::copy_n(work.begin(), nb_, basis_.begin() + static_cast<std::ptrdiff_t>(k * nb_));
    }
  }

  const std::vector<double>& xs() const noexcept { return xs_; }

  /// φ_{i→j} on the grid, from this edge's parameters only.
  void values(const KanLayerParams& p, std::size_t i, std::size_t j, std::vector<double>& out) const {
    const double w = p.base_weight(j, i), s = p.spline_scaler(j, i);
    const double* c = p.coef(j, i);
    out.resize(xs_.size());
    for (std::size_t k = 0; k < xs_.size(); ++k) {
      const double* b = &basis_[k * nb_];
      double acc = 0.0;
      for (std::size_t q = 0; q < nb_; ++q) acc += c[q] * b[q];
      out[k] = w * silu_[k] + s * acc;
    }
  }

  double range(const KanLayerParams& p, std::size_t i, std::size_t j, std::vector<double>& scratch) const {
    values(p, i, j, scratch);
    const auto [lo, hi] = std::minmax_element(scratch.begin(), scratch.end());
    return *hi - *lo;
  }

 private:
  std::size_t nb_;
  std::vector<double> xs_;
  std::vector<double> silu_;
  std::vector<double> basis_;
};

inline EdgeCurve extract_edge(const ModelParams& p, const std::string& branch, std::size_t layer, std::size_t i,
                              std::size_t j) {
  const KanLayerParams& kl = kan_layer(p, branch, layer);
  if (i >= kl.in_dim() || j >= kl.out_dim()) {
    throw ConfigError("inspect: edge (" + std::to_string(i) + "," + std::to_string(j) + ") out of range for a " +
                      std::to_string(kl.in_dim()) + "→" + std::to_string(kl.out_dim()) + " layer");
  }
  const CurveTable table(kl.grid);
  EdgeCurve c{branch, layer, i, j, table.xs(), {}, 0.0};
  table.values(kl, i, j, c.values);
  const auto [lo, hi] = std::minmax_element(c.values.begin(), c.values.end());
  c.activation_range = *hi - *lo;
  return c;
}

/// The k edges with the largest activation range, descending; ties keep
/// (i, j) order.
inline std::vector<EdgeCurve> top_edges(const ModelParams& p, const std::string& branch, std::size_t layer,
                                        std::size_t k = 8) {
  const KanLayerParams& kl = kan_layer(p, branch, layer);
  const std::size_t in = kl.in_dim(), out = kl.out_dim();
  if (k > in * out) throw ConfigError("inspect: k exceeds the layer's edge count");
  const CurveTable table(kl.grid);
  struct Ranked {
    double range;
    std::size_t i, j;
  };
  std::vector<Ranked> all;
  all.reserve(in * out);
  std::vector<double> scratch;
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < out; ++j) all.push_back({table.range(kl, i, j, scratch), i, j});
  std::stable_sort(all.begin(), all.end(), [](const Ranked& a, const Ranked& b) { return a.range > b.range; });
  std::vector<EdgeCurve> top;
  for (std::size_t n = 0; n < k; ++n) top.push_back(extract_edge(p, branch, layer, all[n].i, all[n].j));
  return top;
}

inline std::vector<LayerActivitySummary> layer_activity(const ModelParams& p) {
  std::vector<LayerActivitySummary> out;
  auto visit = [&](const std::string& name, const BranchParams& b) {
    if (b.core != CoreKind::kan) return;
    for (std::size_t l = 0; l < b.kan.size(); ++l) {
      const KanLayerParams& kl = b.kan[l];
      const CurveTable table(kl.grid);
      std::vector<double> scratch, ranges;
      for (std::size_t i = 0; i < kl.in_dim(); ++i)
        for (std::size_t j = 0; j < kl.out_dim(); ++j) ranges.push_back(table.range(kl, i, j, scratch));
      double mean = 0.0;
      for (double r : ranges) mean += r;
      mean /= static_cast<double>(ranges.size());
      double var = 0.0;
      for (double r : ranges) var += (r - mean) * (r - mean);
      var /= static_cast<double>(ranges.size());
      out.push_back({name, l, kl.in_dim(), kl.out_dim(), ranges.size(), mean, std::sqrt(var)});
    }
  };
  if (p.trend) visit("trend", *p.trend);
  visit("residual", p.residual);
  return out;
}

// ---- export -----------------------------------------------------------------------------

/// One row per (edge, x): branch,layer,i,j,activation_range,x,phi with
/// 17 significant digits, so values parse back bit-exactly.
inline std::string curves_to_csv(const std::vector<EdgeCurve>& curves) {
  std::string s = "branch,layer,i,j,activation_range,x,phi\n";
  for (const auto& c : curves) {
    const std::string head = c.branch + "," + std::to_string(c.layer) + "," + std::to_string(c.i) + "," +
                             std::to_string(c.j) + "," + format_double17(c.activation_range) + ",";
    for (std::size_t k = 0; k < c.xs.size(); ++k) {
      s += head + format_double17(c.xs[k]) + "," + format_double17(c.values[k]) + "\n";
    }
  }
  return s;
}

namespace detail {
inline std::string svg_num(double v) { return format_fixed(v, 2); }
}  // namespace detail

/// Small-multiples panel, four plots per row, one per curve. Trend curves are
/// drawn in orange, residual curves in blue; each panel is annotated with its
/// edge and activation range.
inline std::string curves_to_svg(const std::vector<EdgeCurve>& curves, const std::string& title = "") {
  using detail::svg_num;
  const double pw = 220, ph = 160, pad = 36;
  const std::size_t cols = std::min<std::size_t>(4, std::max<std::size_t>(1, curves.size()));
  const std::size_t rows = (curves.size() + cols - 1) / cols;
  const double W = cols * pw, H = rows * ph + 30;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg_num(W) << "\" height=\"" << svg_num(H)
     << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"8\" y=\"18\" font-size=\"13\">" << (title.empty() ? "edge functions" : title) << "</text>\n";
  for (std::size_t n = 0; n < curves.size(); ++n) {
    const EdgeCurve& c = curves[n];
    const double ox = static_cast<double>(n % cols) * pw, oy = 30 + static_cast<double>(n / cols) * ph;
    const double x0 = ox + pad, x1 = ox + pw - 10, y0 = oy + 20, y1 = oy + ph - pad + 10;
    double lo = *std::min_element(c.values.begin(), c.values.end());
    double hi = *std::max_element(c.values.begin(), c.values.end());
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    auto sx = [&](double x) { return x0 + (x - kCurveLo) / (kCurveHi - kCurveLo) * (x1 - x0); };
    auto sy = [&](double y) { return y1 - (y - lo) / (hi - lo) * (y1 - y0); };
    const char* color = c.branch == "trend" ? "#d95f02" : "#1f78b4";
    os << "<g>\n";
    os << "<rect x=\"" << svg_num(x0) << "\" y=\"" << svg_num(y0) << "\" width=\"" << svg_num(x1 - x0)
       << "\" height=\"" << svg_num(y1 - y0) << "\" fill=\"none\" stroke=\"#999\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < c.xs.size(); ++k) {
      os << svg_num(sx(c.xs[k])) << "," << svg_num(sy(c.values[k])) << (k + 1 < c.xs.size() ? " " : "");
    }
    os << "\"/>\n";
    os << "<text x=\"" << svg_num(x0) << "\" y=\"" << svg_num(y0 - 5) << "\">" << c.branch << " L" << c.layer
       << " " << c.i << "&#8594;" << c.j << "  range " << format_fixed(c.activation_range, 3) << "</text>\n";
    os << "<text x=\"" << svg_num((x0 + x1) / 2) << "\" y=\"" << svg_num(y1 + 22)
       << "\" text-anchor=\"middle\">x</text>\n";
    os << "<text x=\"" << svg_num(x0) << "\" y=\"" << svg_num(y1 + 12) << "\" text-anchor=\"middle\">-3</text>\n";
    os << "<text x=\"" << svg_num(x1) << "\" y=\"" << svg_num(y1 + 12) << "\" text-anchor=\"middle\">3</text>\n";
    os << "<text x=\"" << svg_num(x0 - 3) << "\" y=\"" << svg_num(y0 + 8) << "\" text-anchor=\"end\">"
       << format_fixed(hi, 2) << "</text>\n";
    os << "<text x=\"" << svg_num(x0 - 3) << "\" y=\"" << svg_num(y1) << "\" text-anchor=\"end\">"
       << format_fixed(lo, 2) << "</text>\n";
    os << "<text x=\"" << svg_num(ox + 10) << "\" y=\"" << svg_num((y0 + y1) / 2)
       << "\" transform=\"rotate(-90 " << svg_num(ox + 10) << " " << svg_num((y0 + y1) / 2)
       << ")\" text-anchor=\"middle\">phi(x)</text>\n";
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << body;
  if (!os.flush()) throw IoError("failed writing '" + path + "'");
}

enum class CurveFormat { csv, svg };

inline void export_curves(const std::vector<EdgeCurve>& curves, CurveFormat fmt, const std::string& path) {
  if (curves.empty()) throw ConfigError("export_curves: no curves to export");
  write_text_file(path, fmt == CurveFormat::csv ? curves_to_csv(curves) : curves_to_svg(curves));
}

}  // namespace decompkan
