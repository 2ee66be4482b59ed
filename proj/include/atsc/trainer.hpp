#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "atsc/data.hpp"
#include "atsc/losses.hpp"
#include "atsc/metrics.hpp"
#include "atsc/model.hpp"
#include "atsc/objectives.hpp"
#include "atsc/optim.hpp"

namespace atsc {

enum class TrainMode { ATSC, SIMKD, O_SIMKD, O_ATSC, ATSC_STUDENT_FT, STANDALONE_STUDENT, MULTI_ATSC };

inline constexpr TrainMode kAllModes[] = {TrainMode::ATSC,   TrainMode::SIMKD,           TrainMode::O_SIMKD,
                                          TrainMode::O_ATSC, TrainMode::ATSC_STUDENT_FT, TrainMode::STANDALONE_STUDENT,
                                          TrainMode::MULTI_ATSC};

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::ATSC: return "ATSC";
    case TrainMode::SIMKD: return "SIMKD";
    case TrainMode::O_SIMKD: return "O_SIMKD";
    case TrainMode::O_ATSC: return "O_ATSC";
    case TrainMode::ATSC_STUDENT_FT: return "ATSC_STUDENT_FT";
    case TrainMode::STANDALONE_STUDENT: return "STANDALONE_STUDENT";
    case TrainMode::MULTI_ATSC: return "MULTI_ATSC";
  }
  return "?";
}

inline TrainMode parse_mode(const std::string& s) {
  for (auto m : kAllModes)
    if (s == to_string(m)) return m;
  throw ConfigError("mode: unknown training mode '" + s + "'");
}

/// Modes that start from a pretrained teacher checkpoint.
inline bool needs_pretrained_teacher(TrainMode m) {
  return m == TrainMode::ATSC || m == TrainMode::SIMKD || m == TrainMode::ATSC_STUDENT_FT ||
         m == TrainMode::MULTI_ATSC;
}

/// Modes whose objective contains the alpha-weighted anchor penalty.
inline bool uses_alpha(TrainMode m) {
  return m == TrainMode::ATSC || m == TrainMode::O_ATSC || m == TrainMode::ATSC_STUDENT_FT ||
         m == TrainMode::MULTI_ATSC;
}

inline bool is_online(TrainMode m) { return m == TrainMode::O_SIMKD || m == TrainMode::O_ATSC; }

/// Parameter groups addressable by a training step.
enum class Group { teachers, student, projectors, classifiers, student_classifier };

inline const char* to_string(Group g) {
  switch (g) {
    case Group::teachers: return "teachers";
    case Group::student: return "student";
    case Group::projectors: return "projectors";
    case Group::classifiers: return "classifiers";
    case Group::student_classifier: return "student_classifier";
  }
  return "?";
}

inline constexpr Group kAllGroups[] = {Group::teachers, Group::student, Group::projectors, Group::classifiers,
                                       Group::student_classifier};

enum class StepKind {
  teacher_self,  // online teacher CE update on {teachers, classifiers}
  distill,       // representation matching (+ anchor) on {teachers?, student, projectors}
  classifier,    // shared-classifier fine-tune on {classifiers}
  standalone     // plain CE on {student, student_classifier}
};

inline const char* to_string(StepKind k) {
  switch (k) {
    case StepKind::teacher_self: return "teacher_self";
    case StepKind::distill: return "distill";
    case StepKind::classifier: return "classifier";
    case StepKind::standalone: return "standalone";
  }
  return "?";
}

/// Switches used by reduction checks; defaults give the full algorithm.
struct StepOptions {
  bool update_teacher = true;  // teacher encoders join the distillation step (anchor modes)
  bool classifier_step = true;
};

struct StepPlan {
  StepKind kind;
  std::vector<Group> groups;
};

/// Ordered steps executed on each minibatch and the parameter groups each one may modify.
inline std::vector<StepPlan> step_plan(TrainMode m, const StepOptions& opt = {}) {
  const std::vector<Group> distill_full{Group::teachers, Group::student, Group::projectors};
  const std::vector<Group> distill_student{Group::student, Group::projectors};
  const auto distill_anchor = opt.update_teacher ? distill_full : distill_student;
  std::vector<StepPlan> out;
  switch (m) {
    case TrainMode::ATSC:
    case TrainMode::ATSC_STUDENT_FT:
    case TrainMode::MULTI_ATSC:
      out.push_back({StepKind::distill, distill_anchor});
      if (opt.classifier_step) out.push_back({StepKind::classifier, {Group::classifiers}});
      break;
    case TrainMode::SIMKD:
      out.push_back({StepKind::distill, distill_student});
      break;
    case TrainMode::O_SIMKD:
      out.push_back({StepKind::teacher_self, {Group::teachers, Group::classifiers}});
      out.push_back({StepKind::distill, distill_student});
      break;
    case TrainMode::O_ATSC:
      out.push_back({StepKind::teacher_self, {Group::teachers, Group::classifiers}});
      out.push_back({StepKind::distill, distill_anchor});
      if (opt.classifier_step) out.push_back({StepKind::classifier, {Group::classifiers}});
      break;
    case TrainMode::STANDALONE_STUDENT:
      out.push_back({StepKind::standalone, {Group::student, Group::student_classifier}});
      break;
  }
  return out;
}

/// Everything mutated by training. Copyable: momentum buffers are positional, not pointer-keyed.
template <class S>
struct TrainState {
  TrainMode mode = TrainMode::ATSC;
  StepOptions options;
  int epoch = 0;
  std::uint64_t seed = 0;

  std::vector<Encoder<S>> teachers;
  Encoder<S> student;
  std::vector<Projector<S>> projectors;
  std::vector<SharedClassifier<S>> classifiers;
  std::optional<SharedClassifier<S>> student_classifier;
  std::vector<ParameterSnapshot<S>> snapshots;  // one per teacher, taken before collaborative training

  Sgd<S> step1_opt;    // distill / standalone group
  Sgd<S> step2_opt;    // classifier group
  Sgd<S> teacher_opt;  // online teacher self-update group

  ParamRefs<S> group_params(Group g) {
    ParamRefs<S> out;
    auto append = [&](auto& model) {
      for (auto* p : model.params()) out.push_back(p);
    };
    switch (g) {
      case Group::teachers:
        for (auto& t : teachers) append(t);
        break;
      case Group::student: append(student); break;
      case Group::projectors:
        for (auto& p : projectors) append(p);
        break;
      case Group::classifiers:
        for (auto& c : classifiers) append(c);
        break;
      case Group::student_classifier:
        if (student_classifier) append(*student_classifier);
        break;
    }
    return out;
  }

  ParamRefs<S> params_of(const std::vector<Group>& groups) {
    ParamRefs<S> out;
    for (auto g : groups)
      for (auto* p : group_params(g)) out.push_back(p);
    return out;
  }

  /// Combined RMS displacement of all teacher encoders from their snapshots.
  double drift_rms() const {
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < teachers.size(); ++i) {
      const double d = teacher_drift(snapshots[i], teachers[i]);
      sq += d * d * static_cast<double>(snapshots[i].size());
      n += snapshots[i].size();
    }
    return n ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
  }

  /// Student inference probabilities for the mode's deployed path.
  Tensor<S> predict_student(const Tensor<S>& x) {
    if (mode == TrainMode::STANDALONE_STUDENT) return softmax(student_classifier->forward(student.forward(x, false)));
    if (projectors.size() == 1) return student_predict(x, student, projectors[0], classifiers[0]);
    return mt_student_predict(x, student, projectors, classifiers);
  }

  /// Teacher-path probabilities sigma((1/N) sum_i C_i(E_Ti(x))).
  Tensor<S> predict_teacher(const Tensor<S>& x) {
    std::vector<Tensor<S>> logits;
    for (std::size_t i = 0; i < teachers.size(); ++i)
      logits.push_back(classifiers[i].forward(teachers[i].forward(x, false)));
    return softmax(average_logits(logits));
  }
};

/// Initial models for a run. Teachers/classifiers are the pretrained parts (or, in online modes,
/// shape templates that get re-initialized).
template <class S>
struct ModelSetup {
  std::vector<Encoder<S>> teachers;
  std::vector<SharedClassifier<S>> classifiers;
  EncoderSpec student_spec;
  std::size_t num_classes = 10;
  std::size_t reduction = 2;
};

template <class S>
TrainState<S> init_state(TrainMode mode, ModelSetup<S> setup, std::uint64_t seed, const OptimConfig& optim,
                         StepOptions options = {}) {
  TrainState<S> st;
  st.mode = mode;
  st.options = options;
  st.seed = seed;

  if (mode == TrainMode::STANDALONE_STUDENT) {
    setup.teachers.clear();
    setup.classifiers.clear();
  } else {
    if (setup.teachers.empty()) throw ConfigError("mode " + std::string(to_string(mode)) + " needs a teacher");
    if (mode != TrainMode::MULTI_ATSC && setup.teachers.size() != 1)
      throw ConfigError("mode " + std::string(to_string(mode)) + " takes exactly one teacher");
    if (setup.classifiers.size() != setup.teachers.size())
      throw ConfigError("each teacher needs its own classifier");
  }

  st.student = Encoder<S>(setup.student_spec, Role::student);
  {
    auto rng = make_engine(seed, "student");
    st.student.init(rng);
  }
  const std::size_t ch_s = setup.student_spec.out_channels();
  const auto s_hw = setup.student_spec.out_hw();

  for (std::size_t i = 0; i < setup.teachers.size(); ++i) {
    auto& t = setup.teachers[i];
    auto& c = setup.classifiers[i];
    if (t.spec().in_h != setup.student_spec.in_h || t.spec().in_w != setup.student_spec.in_w ||
        t.spec().in_ch != setup.student_spec.in_ch)
      throw ConfigError("teacher " + std::to_string(i) + " and student disagree on the input shape");
    if (c.ch_in() != t.spec().out_channels())
      throw ConfigError("classifier " + std::to_string(i) + " input width does not match teacher channels");
    if (c.num_classes() != setup.num_classes)
      throw ConfigError("classifier " + std::to_string(i) + " has " + std::to_string(c.num_classes()) +
                        " classes, dataset has " + std::to_string(setup.num_classes));
    alignment_window({1, t.spec().out_hw()[0], t.spec().out_hw()[1], 1}, s_hw[0], s_hw[1]);
    if (is_online(mode)) {
      auto trng = make_engine(seed, "teacher", {i});
      t = Encoder<S>(t.spec(), Role::teacher);
      t.init(trng);
      auto crng = make_engine(seed, "classifier", {i});
      c = SharedClassifier<S>(c.ch_in(), c.num_classes(), "classifier" + std::to_string(i));
      c.init(crng);
    }
    st.projectors.emplace_back(ch_s, t.spec().out_channels(), setup.reduction, "projector" + std::to_string(i));
    auto prng = make_engine(seed, "projector", {i});
    st.projectors.back().init(prng);
  }
  st.teachers = std::move(setup.teachers);
  st.classifiers = std::move(setup.classifiers);
  for (const auto& t : st.teachers) st.snapshots.push_back(snapshot_params(t));

  if (mode == TrainMode::STANDALONE_STUDENT) {
    st.student_classifier = SharedClassifier<S>(ch_s, setup.num_classes, "student_classifier");
    auto rng = make_engine(seed, "student_classifier");
    st.student_classifier->init(rng);
  }

  st.step1_opt = Sgd<S>(optim.momentum, optim.weight_decay);
  st.step2_opt = Sgd<S>(optim.momentum, optim.weight_decay);
  st.teacher_opt = Sgd<S>(optim.momentum, optim.weight_decay);
  return st;
}

/// Objective values produced by each executed step of one minibatch, in execution order.
template <class S>
struct BatchLosses {
  std::vector<std::pair<StepKind, LossValue<S>>> steps;

  const LossValue<S>* find(StepKind k) const {
    for (const auto& [kind, v] : steps)
      if (kind == k) return &v;
    return nullptr;
  }
};

inline constexpr double kDivergenceThreshold = 1e6;

template <class S>
void check_divergence(const LossValue<S>& v, StepKind step) {
  for (const auto& [name, value] : v.components)
    if (!std::isfinite(value)) throw DivergenceError(std::string(to_string(step)) + "." + name, static_cast<double>(value));
  if (!std::isfinite(v.total) || std::abs(static_cast<double>(v.total)) > kDivergenceThreshold)
    throw DivergenceError(std::string(to_string(step)) + ".total", static_cast<double>(v.total));
}

/// Executes one step of the plan on `batch` and applies its optimizer update.
template <class S>
LossValue<S> run_step(TrainState<S>& st, const StepPlan& step, const Batch<S>& batch, double alpha, double lr) {
  LossValue<S> loss;
  const auto group = st.params_of(step.groups);
  Sgd<S>* opt = nullptr;
  switch (step.kind) {
    case StepKind::teacher_self: {
      for (std::size_t i = 0; i < st.teachers.size(); ++i) {
        const auto l = classify_objective(st.teachers[i], static_cast<Projector<S>*>(nullptr), st.classifiers[i],
                                          batch.x, batch.y, true, true);
        loss.total += l.total;
        loss.components["ce"] += l.total;
      }
      opt = &st.teacher_opt;
      break;
    }
    case StepKind::distill: {
      const bool update_teachers =
          std::find(step.groups.begin(), step.groups.end(), Group::teachers) != step.groups.end();
      const bool anchored = uses_alpha(st.mode);
      std::vector<TeacherBranch<S>> branches;
      for (std::size_t i = 0; i < st.teachers.size(); ++i)
        branches.push_back({&st.teachers[i], anchored ? &st.snapshots[i] : nullptr, &st.projectors[i]});
      loss = distill_objective(branches, st.student, batch.x, anchored ? alpha : 0.0, update_teachers);
      opt = &st.step1_opt;
      break;
    }
    case StepKind::classifier: {
      if (st.mode == TrainMode::ATSC_STUDENT_FT) {
        loss = classify_objective(st.student, &st.projectors[0], st.classifiers[0], batch.x, batch.y, false, false);
      } else if (st.mode == TrainMode::MULTI_ATSC) {
        std::vector<Encoder<S>*> ts;
        std::vector<SharedClassifier<S>*> cs;
        for (std::size_t i = 0; i < st.teachers.size(); ++i) {
          ts.push_back(&st.teachers[i]);
          cs.push_back(&st.classifiers[i]);
        }
        loss = mt_classify_objective(ts, cs, batch.x, batch.y);
      } else {
        loss = classify_objective(st.teachers[0], static_cast<Projector<S>*>(nullptr), st.classifiers[0], batch.x,
                                  batch.y, false, false);
      }
      opt = &st.step2_opt;
      break;
    }
    case StepKind::standalone: {
      loss = classify_objective(st.student, static_cast<Projector<S>*>(nullptr), *st.student_classifier, batch.x,
                                batch.y, true, true);
      opt = &st.step1_opt;
      break;
    }
  }
  check_divergence(loss, step.kind);
  opt->step(group, lr);
  return loss;
}

/// One minibatch of the mode's alternating schedule; every step sees the same batch.
template <class S>
BatchLosses<S> step_batch(TrainState<S>& st, const Batch<S>& batch, double alpha, double lr) {
  if (batch.size() == 0) throw ContractViolation("step_batch: empty batch");
  BatchLosses<S> out;
  for (const auto& step : step_plan(st.mode, st.options)) out.steps.emplace_back(step.kind, run_step(st, step, batch, alpha, lr));
  return out;
}

// ---------------------------------------------------------------------------------------------
// Epoch-level driver.

struct TeacherRef {
  std::optional<EncoderSpec> spec;  // required for online modes without a checkpoint
  std::string checkpoint;
};

struct RunConfig {
  TrainMode mode = TrainMode::ATSC;
  DatasetSpec dataset;
  std::vector<TeacherRef> teachers;
  EncoderSpec student;
  double alpha = 1.0;
  bool alpha_explicit = false;
  std::size_t reduction_factor = 2;
  OptimConfig optim;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool deterministic = false;
  StepOptions steps;

  void validate() const {
    BalancingConfig{alpha}.validate();
    if (reduction_factor < 1) throw ConfigError("reduction_factor must be >= 1");
    optim.validate();
    dataset.validate();
    if (mode != TrainMode::STANDALONE_STUDENT && teachers.empty())
      throw ConfigError("teachers: mode " + std::string(to_string(mode)) + " needs at least one teacher");
    if (mode != TrainMode::MULTI_ATSC && mode != TrainMode::STANDALONE_STUDENT && teachers.size() > 1)
      throw ConfigError("teachers: mode " + std::string(to_string(mode)) + " takes exactly one teacher");
    for (std::size_t i = 0; i < teachers.size(); ++i) {
      const auto ctx = "teachers[" + std::to_string(i) + "]";
      if (needs_pretrained_teacher(mode) && teachers[i].checkpoint.empty())
        throw ConfigError(ctx + ".checkpoint: mode " + std::string(to_string(mode)) + " needs a pretrained teacher");
      if (is_online(mode) && !teachers[i].spec && teachers[i].checkpoint.empty())
        throw ConfigError(ctx + ".spec: online modes need a teacher architecture");
    }
  }
};

struct RunRecord {
  TrainMode mode = TrainMode::ATSC;
  std::vector<MetricRow> rows;
  double student_top1 = 0.0;
  double train_top1 = 0.0;
  std::vector<double> teacher_top1;             // adapted teacher(s) on test, per teacher
  std::optional<double> ensemble_teacher_top1;  // averaged-logit teacher path
  std::vector<double> pretrained_teacher_top1;  // before training
  std::vector<double> drift;                    // per-epoch teacher drift RMS
  ParamReport params;
  int epochs_completed = 0;
};

/// Hooks for streaming results; all optional.
template <class S>
struct TrainObserver {
  std::function<void(const MetricRow&)> on_row;
  std::function<void(const TrainState<S>&, int epoch)> on_epoch_end;  // after metrics, e.g. to checkpoint
};

template <class S>
ParamReport param_report(const TrainState<S>& st) {
  PartCounts parts;
  parts.student = st.student.param_count();
  if (!st.teachers.empty()) {
    std::size_t t = 0, c = 0, p = 0;
    for (const auto& e : st.teachers) t += e.param_count();
    for (const auto& e : st.classifiers) c += e.param_count();
    for (const auto& e : st.projectors) p += e.param_count();
    parts.teacher = t;
    parts.classifier = c;
    parts.projector = p;
  } else if (st.student_classifier) {
    parts.classifier = st.student_classifier->param_count();
  }
  return count_params(parts);
}

/// Runs `cfg.optim.epochs` epochs of `step_batch` over `ds` from an initialized state.
/// Divergence propagates as DivergenceError tagged with epoch and batch; rows emitted before the
/// failure have already been delivered to the observer.
template <class S>
RunRecord train_state(TrainState<S>& st, const Dataset<S>& ds, const RunConfig& cfg,
                      const TrainObserver<S>& obs = {}) {
  RunRecord rec;
  rec.mode = st.mode;
  rec.params = param_report(st);
  for (std::size_t i = 0; i < st.teachers.size(); ++i)
    rec.pretrained_teacher_top1.push_back(evaluate_teacher(st.teachers[i], st.classifiers[i], ds, ds.test));

  const auto t0 = std::chrono::steady_clock::now();
  const auto emit = [&](const MetricRow& r) {
    rec.rows.push_back(r);
    if (obs.on_row) obs.on_row(r);
  };
  const bool has_teacher = !st.teachers.empty();

  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    st.epoch = epoch;
    const double lr = lr_at(epoch, cfg.optim);
    const auto batches = iterate_batches(ds.train.size(), static_cast<std::size_t>(cfg.optim.batch_size), cfg.seed, epoch);
    double feat = 0, anchor = 0, ce = 0, total = 0;
    bool has_ce = false;
    std::size_t seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto batch = ds.batch(ds.train, batches[bi], true, cfg.seed, epoch, bi);
      BatchLosses<S> losses;
      try {
        losses = step_batch(st, batch, cfg.alpha, lr);
      } catch (const DivergenceError& e) {
        throw e.at(epoch, static_cast<int>(bi));
      }
      const double w = static_cast<double>(batch.size());
      seen += batch.size();
      for (const auto& [kind, v] : losses.steps) {
        total += w * static_cast<double>(v.total);
        if (kind == StepKind::distill) {
          feat += w * static_cast<double>(v.component("feat_mse"));
          anchor += w * static_cast<double>(v.component("anchor"));
        }
      }
      const auto* ce_src = losses.find(StepKind::classifier);
      if (!ce_src) ce_src = losses.find(StepKind::standalone);
      if (!ce_src) ce_src = losses.find(StepKind::teacher_self);
      if (ce_src) {
        ce += w * static_cast<double>(ce_src->component("ce"));
        has_ce = true;
      }
    }
    const double inv = 1.0 / static_cast<double>(seen);
    const double wall =
        cfg.deterministic ? 0.0 : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double drift = st.drift_rms();
    rec.drift.push_back(drift);

    const auto predict = [&](const Tensor<S>& x) { return st.predict_student(x); };
    MetricRow train_row;
    train_row.epoch = epoch;
    train_row.split = "train";
    train_row.top1 = evaluate_split<S>(ds, ds.train, predict);
    if (st.mode != TrainMode::STANDALONE_STUDENT) {
      train_row.feat_mse = feat * inv;
      if (uses_alpha(st.mode)) train_row.anchor = anchor * inv;
    }
    if (has_ce) train_row.ce = ce * inv;
    train_row.total = total * inv;
    train_row.teacher_drift_rms = has_teacher ? drift : MetricRow::kNone;
    train_row.lr = lr;
    train_row.wall_time_s = wall;
    emit(train_row);

    MetricRow test_row;
    test_row.epoch = epoch;
    test_row.split = "test";
    test_row.top1 = evaluate_split<S>(ds, ds.test, predict);
    test_row.teacher_drift_rms = train_row.teacher_drift_rms;
    test_row.lr = lr;
    test_row.wall_time_s = wall;
    emit(test_row);

    if (has_teacher) {
      MetricRow teacher_row = test_row;
      teacher_row.split = "teacher_test";
      teacher_row.top1 = evaluate_split<S>(ds, ds.test, [&](const Tensor<S>& x) { return st.predict_teacher(x); });
      emit(teacher_row);
      rec.ensemble_teacher_top1 = teacher_row.top1;
    }
    rec.student_top1 = test_row.top1;
    rec.train_top1 = train_row.top1;
    rec.epochs_completed = epoch + 1;
    if (obs.on_epoch_end) obs.on_epoch_end(st, epoch);
  }

  rec.teacher_top1.clear();
  for (std::size_t i = 0; i < st.teachers.size(); ++i)
    rec.teacher_top1.push_back(evaluate_teacher(st.teachers[i], st.classifiers[i], ds, ds.test));
  return rec;
}

// ---------------------------------------------------------------------------------------------
// Teacher pretraining.

struct PretrainConfig {
  DatasetSpec dataset;
  EncoderSpec model;
  OptimConfig optim;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool deterministic = false;

  void validate() const {
    dataset.validate();
    optim.validate();
    model.validate();
  }
};

template <class S>
struct PretrainResult {
  Encoder<S> encoder;
  SharedClassifier<S> classifier;
  std::vector<MetricRow> rows;
  double test_top1 = 0.0;
};

/// Supervised CE training of a teacher encoder plus its classifier.
template <class S>
PretrainResult<S> pretrain_teacher(const PretrainConfig& cfg, const Dataset<S>& ds,
                                   const std::function<void(const MetricRow&)>& on_row = {}) {
  cfg.validate();
  PretrainResult<S> res;
  res.encoder = Encoder<S>(cfg.model, Role::teacher);
  auto erng = make_engine(cfg.seed, "pretrain.encoder");
  res.encoder.init(erng);
  res.classifier = SharedClassifier<S>(cfg.model.out_channels(), cfg.dataset.num_classes, "classifier0");
  auto crng = make_engine(cfg.seed, "pretrain.classifier");
  res.classifier.init(crng);

  Sgd<S> opt(cfg.optim.momentum, cfg.optim.weight_decay);
  ParamRefs<S> group = res.encoder.params();
  for (auto* p : res.classifier.params()) group.push_back(p);

  const auto t0 = std::chrono::steady_clock::now();
  const auto predict = [&](const Tensor<S>& x) {
    return softmax(res.classifier.forward(res.encoder.forward(x, false)));
  };
  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.optim);
    const auto batches = iterate_batches(ds.train.size(), static_cast<std::size_t>(cfg.optim.batch_size), cfg.seed, epoch);
    double ce = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto batch = ds.batch(ds.train, batches[bi], true, cfg.seed, epoch, bi);
      const auto l = classify_objective(res.encoder, static_cast<Projector<S>*>(nullptr), res.classifier, batch.x,
                                        batch.y, true, true);
      try {
        check_divergence(l, StepKind::standalone);
      } catch (const DivergenceError& e) {
        throw e.at(epoch, static_cast<int>(bi));
      }
      opt.step(group, lr);
      ce += static_cast<double>(l.total) * static_cast<double>(batch.size());
    }
    const double wall =
        cfg.deterministic ? 0.0 : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MetricRow tr;
    tr.epoch = epoch;
    tr.split = "train";
    tr.top1 = evaluate_split<S>(ds, ds.train, predict);
    tr.ce = ce / static_cast<double>(ds.train.size());
    tr.total = tr.ce;
    tr.lr = lr;
    tr.wall_time_s = wall;
    MetricRow te = tr;
    te.split = "test";
    te.top1 = evaluate_split<S>(ds, ds.test, predict);
    te.ce = te.total = MetricRow::kNone;
    for (const auto& r : {tr, te}) {
      res.rows.push_back(r);
      if (on_row) on_row(r);
    }
  }
  res.test_top1 = evaluate_teacher(res.encoder, res.classifier, ds, ds.test);
  return res;
}

}  // namespace atsc
