#include "physiofuse/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "physiofuse/error.hpp"

namespace physiofuse {

void ConfusionCounts::add(int label, int prediction) {
  if ((label != 0 && label != 1) || (prediction != 0 && prediction != 1)) {
    throw DomainError("ConfusionCounts::add: labels and predictions must be 0 or 1");
  }
  if (label == 1) (prediction == 1 ? tp : fn) += 1;
  else (prediction == 1 ? fp : tn) += 1;
}

ConfusionCounts confusion(const std::vector<int>& labels, const std::vector<int>& predictions) {
  if (labels.size() != predictions.size()) throw DimensionError("confusion: label and prediction counts differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) c.add(labels[i], predictions[i]);
  return c;
}

namespace {

void require_total(const ConfusionCounts& c, const char* what) {
  if (c.total() == 0) throw ContractError(std::string(what) + ": no evaluated segments");
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

/// Harmonic mean of precision and recall, written over the counts so it is rounded once.
double f1(std::size_t tp, std::size_t fp, std::size_t fn) { return ratio(2 * tp, 2 * tp + fp + fn); }

}  // namespace

double accuracy(const ConfusionCounts& c) {
  require_total(c, "accuracy");
  return ratio(c.tp + c.tn, c.total());
}

double macro_f1(const ConfusionCounts& c) {
  require_total(c, "macro_f1");
  return (f1(c.tp, c.fp, c.fn) + f1(c.tn, c.fn, c.fp)) / 2.0;
}

double balanced_accuracy(const ConfusionCounts& c) {
  require_total(c, "balanced_accuracy");
  return (ratio(c.tp, c.tp + c.fn) + ratio(c.tn, c.tn + c.fp)) / 2.0;
}

namespace {

double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericError("regularized_incomplete_beta: continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("regularized_incomplete_beta: a and b must be positive");
  if (x < 0.0 || x > 1.0) throw DomainError("regularized_incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw DomainError("student_t_cdf: degrees of freedom must be positive");
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double dof) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("student_t_quantile: p must lie in (0, 1)");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -student_t_quantile(1.0 - p, dof);
  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, dof) < p) {
    hi *= 2.0;
    if (hi > 1e12) throw NumericError("student_t_quantile: failed to bracket the quantile");
  }
  for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, dof) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Interval t_confidence_interval(const std::vector<double>& values, double level) {
  const std::size_t k = values.size();
  if (k < 2) throw ContractError("t_confidence_interval: need at least 2 fold values, got " + std::to_string(k));
  if (!(level > 0.0 && level < 1.0)) throw DomainError("t_confidence_interval: level must lie in (0, 1)");
  // Shifted by the first value so identical folds give exactly zero spread.
  const double shift = values.front();
  double sum = 0.0;
  for (double v : values) sum += v - shift;
  const double offset = sum / static_cast<double>(k);
  const double mean = shift + offset;
  double sq = 0.0;
  for (double v : values) sq += (v - shift - offset) * (v - shift - offset);
  const double s = std::sqrt(sq / static_cast<double>(k - 1));
  const double t = student_t_quantile((1.0 + level) / 2.0, static_cast<double>(k - 1));
  return {mean, t * s / std::sqrt(static_cast<double>(k))};
}

// ---------------------------------------------------------------------------

void RunReport::add(std::size_t fold, const std::string& model, const std::string& target, const ConfusionCounts& c) {
  const double bacc = balanced_accuracy(c);
  rows.push_back({fold, model, target, "accuracy", accuracy(c), bacc, c});
  rows.push_back({fold, model, target, "f1", macro_f1(c), bacc, c});
}

void RunReport::sort() {
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return std::tie(a.fold, a.model, a.target, a.metric) < std::tie(b.fold, b.model, b.target, b.metric);
  });
}

std::vector<SummaryCell> RunReport::summarize(double level) const {
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> cells;
  for (const auto& r : rows) cells[{r.model, r.target, r.metric}].push_back(r.value);
  std::vector<SummaryCell> out;
  for (const auto& [key, values] : cells) {
    SummaryCell s;
    std::tie(s.model, s.target, s.metric) = key;
    s.k = values.size();
    if (values.size() >= 2) {
      const Interval ci = t_confidence_interval(values, level);
      s.mean = ci.mean;
      s.half_width = ci.half_width;
    } else {
      s.mean = values.front();
    }
    out.push_back(s);
  }
  return out;
}

namespace {

/// Shortest text that round-trips the double.
std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void emit_report(const RunReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  RunReport sorted = report;
  sorted.sort();
  {
    std::ofstream out(dir / "report.csv", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "report.csv").string());
    out << "fold,model,target,metric,value,balanced_accuracy,tp,fp,tn,fn,n_test\n";
    for (const auto& r : sorted.rows) {
      out << r.fold << ',' << r.model << ',' << r.target << ',' << r.metric << ',' << format_double(r.value) << ','
          << format_double(r.balanced_accuracy) << ',' << r.counts.tp << ',' << r.counts.fp << ',' << r.counts.tn
          << ',' << r.counts.fn << ',' << r.counts.total() << '\n';
    }
    if (!out) throw IoError("short write to " + (dir / "report.csv").string());
  }
  {
    nlohmann::ordered_json j;
    j["k"] = report.k;
    j["level"] = 0.95;
    auto& cells = j["cells"] = nlohmann::ordered_json::array();
    for (const auto& s : sorted.summarize()) {
      cells.push_back({{"model", s.model},
                       {"target", s.target},
                       {"metric", s.metric},
                       {"mean", s.mean},
                       {"ci_half_width", s.half_width},
                       {"folds", s.k}});
    }
    std::ofstream out(dir / "summary.json", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "summary.json").string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("short write to " + (dir / "summary.json").string());
  }
  {
    nlohmann::ordered_json j;
    j["k"] = report.k;
    j["test_sets"] = report.test_sets;
    std::ofstream out(dir / "folds.json", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "folds.json").string());
    out << j.dump() << '\n';
  }
}

RunReport read_report(const std::filesystem::path& dir) {
  RunReport report;
  std::ifstream in(dir / "report.csv");
  if (!in) throw LoadError("cannot open " + (dir / "report.csv").string());
  std::string line;
  std::getline(in, line);
  if (line != "fold,model,target,metric,value,balanced_accuracy,tp,fp,tn,fn,n_test") {
    throw LoadError((dir / "report.csv").string() + ": unexpected header");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 11) throw LoadError((dir / "report.csv").string() + ":" + std::to_string(lineno) + ": expected 11 fields");
    try {
      ReportRow r;
      r.fold = std::stoul(f[0]);
      r.model = f[1];
      r.target = f[2];
      r.metric = f[3];
      r.value = std::stod(f[4]);
      r.balanced_accuracy = std::stod(f[5]);
      r.counts = {std::stoul(f[6]), std::stoul(f[7]), std::stoul(f[8]), std::stoul(f[9])};
      report.rows.push_back(r);
    } catch (const std::logic_error&) {
      throw LoadError((dir / "report.csv").string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  std::ifstream folds(dir / "folds.json");
  if (folds) {
    const auto j = nlohmann::json::parse(folds, nullptr, false);
    if (j.is_discarded()) throw LoadError((dir / "folds.json").string() + ": not JSON");
    report.k = j.value("k", std::size_t{0});
    report.test_sets = j.value("test_sets", std::vector<std::vector<std::size_t>>{});
  }
  return report;
}

}  // namespace physiofuse
