#include "iclbench/plot.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace iclbench {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Comments may not contain "--".
std::string comment_safe(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '-' && !out.empty() && out.back() == '-') out += ' ';
    out += c;
  }
  return out;
}

std::string header(const std::string& title, const std::vector<std::string>& provenance) {
  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n",
      kWidth, kHeight);
  for (const auto& p : provenance) s += fmt::format("<!-- {} -->\n", comment_safe(p));
  s += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", kWidth, kHeight);
  s += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
                   kWidth / 2, escape(title));
  return s;
}

struct Series {
  std::vector<double> x, mean, lo, hi;
};

Series collect(const std::vector<RunLog>& logs, double EvalRecord::*field) {
  Series s;
  const auto& ref = logs.front().records;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    double sum = 0.0, lo = INFINITY, hi = -INFINITY;
    for (const auto& log : logs) {
      if (log.records.size() != ref.size() || log.records[i].step != ref[i].step) {
        throw ShapeMismatchError("loss_curve_svg: seeds do not share an evaluation grid");
      }
      const double v = log.records[i].*field;
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    s.x.push_back(static_cast<double>(ref[i].samples_seen));
    s.mean.push_back(sum / static_cast<double>(logs.size()));
    s.lo.push_back(lo);
    s.hi.push_back(hi);
  }
  return s;
}

}  // namespace

std::string loss_curve_svg(const std::string& title, const std::vector<RunLog>& seeds,
                           const std::vector<std::string>& provenance) {
  if (seeds.empty() || seeds.front().records.empty()) {
    throw EmptyCurveError("loss_curve_svg: no records");
  }
  const Series train = collect(seeds, &EvalRecord::train_loss);
  const Series test = collect(seeds, &EvalRecord::test_loss);

  double ymin = INFINITY, ymax = -INFINITY;
  for (const Series* s : {&train, &test}) {
    for (double v : s->lo) ymin = std::min(ymin, v);
    for (double v : s->hi) ymax = std::max(ymax, v);
  }
  ymin = std::max(ymin, 1e-6);
  ymax = std::max(ymax, ymin * 10);
  const double lmin = std::floor(std::log10(ymin));
  const double lmax = std::ceil(std::log10(ymax));
  const double xmax = std::max(train.x.back(), 1.0);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + pw * x / xmax; };
  auto py = [&](double y) {
    const double l = std::log10(std::max(y, ymin));
    return kTop + ph * (lmax - l) / (lmax - lmin);
  };

  std::string s = header(title, provenance);
  // Axes and decade grid.
  for (double d = lmin; d <= lmax; d += 1) {
    const double y = py(std::pow(10.0, d));
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#ddd\"/>\n",
                     kLeft, y, kLeft + pw, y);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">1e{:.0f}</text>\n", kLeft - 6,
                     y + 4, d);
  }
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmax * i / 4.0;
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.0f}</text>\n", px(xv),
                     kTop + ph + 16, xv);
  }
  s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
                   kLeft, kTop, pw, ph);
  s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">samples seen</text>\n",
                   kLeft + pw / 2, kHeight - 18);
  s += fmt::format(
      "<text x=\"16\" y=\"{:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1f})\">"
      "normalized MSE</text>\n",
      kTop + ph / 2, kTop + ph / 2);

  auto draw = [&](const Series& ser, const char* color, const char* dash, const char* label, int slot) {
    std::string band = "<polygon fill=\"" + std::string(color) + "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < ser.x.size(); ++i) band += fmt::format("{:.1f},{:.1f} ", px(ser.x[i]), py(ser.hi[i]));
    for (std::size_t i = ser.x.size(); i-- > 0;) band += fmt::format("{:.1f},{:.1f} ", px(ser.x[i]), py(ser.lo[i]));
    band.back() = '"';
    s += band + "/>\n";
    std::string line = fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{} points=\"",
                                   color, dash);
    for (std::size_t i = 0; i < ser.x.size(); ++i) line += fmt::format("{:.1f},{:.1f} ", px(ser.x[i]), py(ser.mean[i]));
    line.back() = '"';
    s += line + "/>\n";
    const double ly = kTop + 14 + 16 * slot;
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"1.5\"{}/>\n",
                     kLeft + pw - 120, ly, kLeft + pw - 96, ly, color, dash);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n", kLeft + pw - 90, ly + 4, label);
  };
  draw(train, "#1f77b4", " stroke-dasharray=\"5,3\"", "train", 0);
  draw(test, "#d62728", "", "test", 1);
  s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" fill=\"#555\">{} seed(s), band = min-max</text>\n",
                   kLeft + 8, kTop + 14, seeds.size());
  s += "</svg>\n";
  return s;
}

std::string robustness_bars_svg(const std::string& title, const std::vector<ConfigRow>& rows,
                                const std::vector<std::string>& provenance) {
  if (rows.empty()) throw MissingRunError("robustness_bars_svg: no rows");
  double ymax = 0.0;
  for (const auto& r : rows) {
    ymax = std::max(ymax, r.test_mean + r.test_ci.value_or(0.0));
    ymax = std::max(ymax, r.aniso_mean + r.aniso_ci.value_or(0.0));
  }
  ymax = ymax > 0 ? ymax * 1.15 : 1.0;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto py = [&](double y) { return kTop + ph * (1.0 - y / ymax); };
  const double group = pw / static_cast<double>(rows.size());
  const double bar = std::min(40.0, group / 3.0);

  std::string s = header(title, provenance);
  for (int i = 0; i <= 5; ++i) {
    const double v = ymax * i / 5.0;
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#ddd\"/>\n",
                     kLeft, py(v), kLeft + pw, py(v));
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3f}</text>\n", kLeft - 6,
                     py(v) + 4, v);
  }
  s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
                   kLeft, kTop, pw, ph);
  for (std::size_t g = 0; g < rows.size(); ++g) {
    const auto& r = rows[g];
    const double cx = kLeft + group * (static_cast<double>(g) + 0.5);
    const struct {
      double v;
      std::optional<double> ci;
      const char* color;
      double x;
    } bars[2] = {{r.test_mean, r.test_ci, "#1f77b4", cx - bar}, {r.aniso_mean, r.aniso_ci, "#ff7f0e", cx}};
    for (const auto& b : bars) {
      s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"{}\"/>\n",
                       b.x, py(b.v), bar, py(0) - py(b.v), b.color);
      if (b.ci) {
        const double mx = b.x + bar / 2;
        s += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n",
                         mx, py(std::max(0.0, b.v - *b.ci)), py(b.v + *b.ci));
      }
    }
    const double top = std::max(r.test_mean + r.test_ci.value_or(0.0), r.aniso_mean + r.aniso_ci.value_or(0.0));
    const std::string label = r.degradation_pct ? fmt::format("{:+.1f}%", *r.degradation_pct) : "n/a";
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", cx,
                     py(top) - 6, label);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", cx,
                     kTop + ph + 16, escape(r.name));
  }
  s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"10\" height=\"10\" fill=\"#1f77b4\"/>"
                   "<text x=\"{:.1f}\" y=\"{:.1f}\">isotropic</text>\n",
                   kLeft + 8, kTop + 6, kLeft + 22, kTop + 15);
  s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"10\" height=\"10\" fill=\"#ff7f0e\"/>"
                   "<text x=\"{:.1f}\" y=\"{:.1f}\">anisotropic</text>\n",
                   kLeft + 8, kTop + 22, kLeft + 22, kTop + 31);
  s += "</svg>\n";
  return s;
}

}  // namespace iclbench
