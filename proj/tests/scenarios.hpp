#pragma once

// Small training scenarios shared by the trainer unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "atsc/trainer.hpp"
#include "test_util.hpp"

namespace atsc::test {

struct Toy {
  Dataset<double> ds;
  ModelSetup<double> setup;
  OptimConfig optim;
};

inline DatasetSpec toy_dataset(std::uint64_t seed) {
  DatasetSpec d;
  d.num_classes = 3;
  d.dims = 6;
  d.train_size = 120;
  d.test_size = 30;
  d.separation = 3.0;
  d.seed = seed;
  return d;
}

/// Teachers with random weights stand in for pretrained ones; `n_teachers` heterogeneous widths.
inline Toy make_toy(std::uint64_t seed, std::size_t n_teachers = 1, std::size_t r = 2) {
  Toy t;
  t.ds = load_dataset<double>(toy_dataset(seed));
  for (std::size_t i = 0; i < n_teachers; ++i) {
    const std::size_t w = 8 + 2 * i;
    t.setup.teachers.push_back(make_encoder<double>(mlp_spec(6, {12, w}), Role::teacher, seed * 31 + i));
    t.setup.classifiers.push_back(make_classifier<double>(w, 3, seed * 37 + i));
    // non-trivial running statistics, as a pretrained teacher would have
    t.setup.teachers.back().forward(t.ds.whole(t.ds.train).x, true);
  }
  t.setup.student_spec = mlp_spec(6, {5});
  t.setup.num_classes = 3;
  t.setup.reduction = r;
  t.optim.base_lr = 0.05;
  t.optim.epochs = 5;
  t.optim.milestones = {};
  t.optim.batch_size = 16;
  return t;
}

inline std::vector<Batch<double>> toy_batches(const Toy& t, std::size_t count, std::uint64_t seed) {
  std::vector<Batch<double>> out;
  for (int epoch = 0; out.size() < count; ++epoch) {
    const auto idx = iterate_batches(t.ds.train.size(), static_cast<std::size_t>(t.optim.batch_size), seed, epoch);
    for (std::size_t bi = 0; bi < idx.size() && out.size() < count; ++bi)
      out.push_back(t.ds.batch(t.ds.train, idx[bi], true, seed, epoch, bi));
  }
  return out;
}

/// Trainable values plus BN running statistics of one parameter group.
inline std::vector<double> group_state(TrainState<double>& st, Group g) {
  std::vector<double> out;
  for (const auto* p : st.group_params(g)) out.insert(out.end(), p->value.data.begin(), p->value.data.end());
  auto add_buffers = [&](const auto& m) {
    const auto b = atsc::detail::buffer_values(m.net());
    out.insert(out.end(), b.begin(), b.end());
  };
  if (g == Group::teachers)
    for (const auto& t : st.teachers) add_buffers(t);
  if (g == Group::student) add_buffers(st.student);
  if (g == Group::projectors)
    for (const auto& p : st.projectors) add_buffers(p);
  return out;
}

struct IsolationReport {
  std::size_t steps = 0;
  std::vector<std::string> violations;  // groups outside a step's set that changed
  std::vector<std::string> idle;        // groups inside a step's set that did not change
};

/// Runs `batches` minibatches of `mode`, checking after every step which groups moved.
inline IsolationReport check_isolation(TrainMode mode, std::size_t batches, std::uint64_t seed) {
  auto toy = make_toy(seed, mode == TrainMode::MULTI_ATSC ? 2 : 1);
  auto st = init_state(mode, toy.setup, seed, toy.optim);
  IsolationReport rep;
  const auto data = toy_batches(toy, batches, seed);
  for (std::size_t b = 0; b < data.size(); ++b)
    for (const auto& step : step_plan(mode)) {
      std::vector<std::vector<double>> before;
      for (auto g : kAllGroups) before.push_back(group_state(st, g));
      run_step(st, step, data[b], 0.5, 0.05);
      ++rep.steps;
      for (std::size_t gi = 0; gi < std::size(kAllGroups); ++gi) {
        const auto g = kAllGroups[gi];
        const bool member = std::find(step.groups.begin(), step.groups.end(), g) != step.groups.end();
        const bool changed = group_state(st, g) != before[gi];
        const auto where = std::string(to_string(mode)) + " batch " + std::to_string(b) + " step " +
                           to_string(step.kind) + ": " + to_string(g);
        if (!member && changed) rep.violations.push_back(where);
        if (member && !changed && !before[gi].empty()) rep.idle.push_back(where);
      }
    }
  return rep;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// ATSC with the teacher update and classifier step switched off, against SIMKD from the same
/// initialization; returns the largest deviation over student and projector parameters and losses.
inline double simkd_reduction_gap(std::uint64_t seed, std::size_t batches, double alpha) {
  auto toy = make_toy(seed);
  auto a = init_state(TrainMode::ATSC, toy.setup, seed, toy.optim, StepOptions{false, false});
  auto s = init_state(TrainMode::SIMKD, toy.setup, seed, toy.optim);
  double gap = 0;
  for (const auto& b : toy_batches(toy, batches, seed)) {
    const auto la = step_batch(a, b, alpha, 0.05);
    const auto ls = step_batch(s, b, alpha, 0.05);
    gap = std::max(gap, std::abs(la.steps.at(0).second.total - ls.steps.at(0).second.total));
    for (auto g : {Group::student, Group::projectors, Group::teachers})
      gap = std::max(gap, max_abs_diff(group_state(a, g), group_state(s, g)));
  }
  return gap;
}

/// MULTI_ATSC with one teacher against ATSC from the same initialization.
inline double multi_single_gap(std::uint64_t seed, std::size_t batches, double alpha) {
  auto toy = make_toy(seed);
  auto m = init_state(TrainMode::MULTI_ATSC, toy.setup, seed, toy.optim);
  auto a = init_state(TrainMode::ATSC, toy.setup, seed, toy.optim);
  double gap = 0;
  for (const auto& b : toy_batches(toy, batches, seed)) {
    const auto lm = step_batch(m, b, alpha, 0.05);
    const auto la = step_batch(a, b, alpha, 0.05);
    for (std::size_t i = 0; i < la.steps.size(); ++i)
      gap = std::max(gap, std::abs(lm.steps.at(i).second.total - la.steps.at(i).second.total));
    for (auto g : kAllGroups) gap = std::max(gap, max_abs_diff(group_state(m, g), group_state(a, g)));
  }
  return gap;
}

/// Relative deviation of the N-copy multi-teacher distillation loss from N times the single-teacher
/// loss, on the first batch.
inline double multi_copies_gap(std::uint64_t seed, std::size_t n, double alpha) {
  auto toy = make_toy(seed);
  auto one = init_state(TrainMode::ATSC, toy.setup, seed, toy.optim);
  ModelSetup<double> many = toy.setup;
  for (std::size_t i = 1; i < n; ++i) {
    many.teachers.push_back(toy.setup.teachers[0]);
    many.classifiers.push_back(toy.setup.classifiers[0]);
  }
  auto multi = init_state(TrainMode::MULTI_ATSC, many, seed, toy.optim);
  // every projector starts from the single-teacher projector
  for (auto& p : multi.projectors) unflatten_params(p, flatten_params<double>(one.projectors[0]));
  // move teachers off their snapshots so the anchor term is non-zero
  for (auto& t : one.teachers) jitter(t, seed + 9, 0.05);
  for (auto& t : multi.teachers) jitter(t, seed + 9, 0.05);
  const auto b = toy_batches(toy, 1, seed).front();
  const double l1 = step_batch(one, b, alpha, 0.05).steps.at(0).second.total;
  const double ln = step_batch(multi, b, alpha, 0.05).steps.at(0).second.total;
  return std::abs(ln - static_cast<double>(n) * l1) / std::max(1e-300, std::abs(static_cast<double>(n) * l1));
}

}  // namespace atsc::test
