#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace physiofuse {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  void add(int label, int prediction);
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(const std::vector<int>& labels, const std::vector<int>& predictions);

/// logit > 0 → 1; a logit of exactly 0 goes to class 0.
inline int predict_class(double logit) { return logit > 0.0 ? 1 : 0; }

double accuracy(const ConfusionCounts& c);
/// Unweighted mean of the F1 scores of both classes; zero denominators count as 0.
double macro_f1(const ConfusionCounts& c);
double balanced_accuracy(const ConfusionCounts& c);

/// I_x(a, b) by Lentz's continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double dof);
/// Inverse of student_t_cdf by bisection on the incomplete beta form.
double student_t_quantile(double p, double dof);

struct Interval {
  double mean = 0.0;
  double half_width = 0.0;
};

/// Two-sided t interval over k ≥ 2 fold values with k − 1 degrees of freedom.
Interval t_confidence_interval(const std::vector<double>& values, double level = 0.95);

struct ReportRow {
  std::size_t fold = 0;
  std::string model;   // ecg, eeg, fused
  std::string target;  // arousal, valence
  std::string metric;  // accuracy, f1
  double value = 0.0;
  double balanced_accuracy = 0.0;
  ConfusionCounts counts;
};

struct SummaryCell {
  std::string model;
  std::string target;
  std::string metric;
  double mean = 0.0;
  double half_width = 0.0;
  std::size_t k = 0;
};

struct RunReport {
  std::size_t k = 0;
  std::vector<ReportRow> rows;
  /// Test segment ids of every fold that was run, indexed by fold.
  std::vector<std::vector<std::size_t>> test_sets;

  /// Appends an accuracy row and an f1 row for one (fold, model, target).
  void add(std::size_t fold, const std::string& model, const std::string& target, const ConfusionCounts& c);
  /// Rows sorted by (fold, model, target, metric) so emission order is fixed.
  void sort();
  std::vector<SummaryCell> summarize(double level = 0.95) const;
};

/// Writes report.csv, summary.json and folds.json into `dir`.
void emit_report(const RunReport& report, const std::filesystem::path& dir);
RunReport read_report(const std::filesystem::path& dir);

}  // namespace physiofuse
