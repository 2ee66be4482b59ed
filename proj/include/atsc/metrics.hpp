#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "atsc/data.hpp"
#include "atsc/losses.hpp"
#include "atsc/model.hpp"

namespace atsc {

/// Rows whose argmax (lowest index on ties) equals the label.
template <class S>
std::size_t count_correct(const Tensor<S>& predictions, const std::vector<int>& labels) {
  if (predictions.rank() != 2) throw ContractViolation("top1: predictions must be (N, K)");
  const std::size_t n = predictions.dim(0), k = predictions.dim(1);
  if (n == 0 || labels.empty()) throw ContractViolation("top1: empty input");
  if (labels.size() != n) throw ContractViolation("top1: prediction/label count mismatch");
  std::size_t correct = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const S* row = predictions.data.data() + b * k;
    const auto arg = static_cast<int>(std::max_element(row, row + k) - row);
    correct += arg == labels[b];
  }
  return correct;
}

template <class S>
double top1(const Tensor<S>& predictions, const std::vector<int>& labels) {
  const auto correct = count_correct(predictions, labels);
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// RMS parameter displacement of `e` from its snapshot.
template <class S>
double teacher_drift(const ParameterSnapshot<S>& snap, const Encoder<S>& e) {
  return std::sqrt(static_cast<double>(anchor_penalty(snap, e).total));
}

/// Eval-mode predictions over a whole split, computed in chunks. `predict` maps an input batch
/// to (n, K) probabilities.
template <class S>
double evaluate_split(const Dataset<S>& ds, const Split<S>& split,
                      const std::function<Tensor<S>(const Tensor<S>&)>& predict, std::size_t chunk = 256) {
  if (split.size() == 0) throw ContractViolation("evaluate: empty split");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < split.size(); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(split.size(), start + chunk); ++i) idx.push_back(i);
    const auto b = ds.batch(split, idx, false, 0, 0, 0);
    const auto p = predict(b.x);
    correct += count_correct(p, b.y);
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(split.size());
}

/// Top-1 of sigma(C(E_T(x))) over `split`, eval-mode.
template <class S>
double evaluate_teacher(Encoder<S>& teacher, SharedClassifier<S>& clf, const Dataset<S>& ds, const Split<S>& split) {
  return evaluate_split<S>(ds, split,
                           [&](const Tensor<S>& x) { return softmax(clf.forward(teacher.forward(x, false), false)); });
}

/// One CSV row per (epoch, split).
struct MetricRow {
  static constexpr double kNone = std::numeric_limits<double>::quiet_NaN();

  int epoch = 0;
  std::string split;
  double top1 = kNone;
  double feat_mse = kNone;
  double anchor = kNone;
  double ce = kNone;
  double total = kNone;
  double teacher_drift_rms = kNone;
  double lr = kNone;
  double wall_time_s = kNone;
};

inline constexpr const char* kMetricsHeader =
    "epoch,split,top1,feat_mse,anchor,ce,total,teacher_drift_rms,lr,wall_time_s";

inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string to_csv(const MetricRow& r) {
  std::ostringstream os;
  os << r.epoch << ',' << r.split << ',' << format_number(r.top1) << ',' << format_number(r.feat_mse) << ','
     << format_number(r.anchor) << ',' << format_number(r.ce) << ',' << format_number(r.total) << ','
     << format_number(r.teacher_drift_rms) << ',' << format_number(r.lr) << ',' << format_number(r.wall_time_s);
  return os.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
  if (s.empty()) return MetricRow::kNone;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IngestionError(where + ": not a number: '" + s + "'");
  }
}

inline std::vector<MetricRow> read_metrics_csv(std::istream& in, const std::string& name = "metrics.csv") {
  std::string line;
  if (!std::getline(in, line)) throw IngestionError(name + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) throw IngestionError(name + ": unexpected header '" + line + "'");
  std::vector<MetricRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const std::string where = name + ":" + std::to_string(lineno);
    if (f.size() != 10) throw IngestionError(where + ": expected 10 fields, got " + std::to_string(f.size()));
    MetricRow r;
    r.epoch = static_cast<int>(parse_number(f[0], where));
    r.split = f[1];
    r.top1 = parse_number(f[2], where);
    r.feat_mse = parse_number(f[3], where);
    r.anchor = parse_number(f[4], where);
    r.ce = parse_number(f[5], where);
    r.total = parse_number(f[6], where);
    r.teacher_drift_rms = parse_number(f[7], where);
    r.lr = parse_number(f[8], where);
    r.wall_time_s = parse_number(f[9], where);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IngestionError("cannot open " + file.string());
  return read_metrics_csv(in, file.string());
}

}  // namespace atsc
