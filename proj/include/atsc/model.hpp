#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "atsc/layers.hpp"
#include "atsc/log.hpp"
#include "atsc/rng.hpp"
#include "atsc/tensor.hpp"

namespace atsc {

enum class Role { teacher, student };

inline const char* to_string(Role r) { return r == Role::teacher ? "teacher" : "student"; }

/// Architecture of a feature extractor.
///
/// `mlp`: each entry of `widths` is a bias-free dense layer + BN + ReLU over the flattened input;
/// the output is a (batch, 1, 1, widths.back()) feature map.
/// `cnn`: each entry is a 3x3 conv + BN + ReLU block, optionally followed by 2x2 average pooling
/// (`pool[i]`); spatial extent shrinks by 2 per pooled block.
struct EncoderSpec {
  enum class Kind { mlp, cnn };

  Kind kind = Kind::mlp;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t in_ch = 1;
  std::vector<std::size_t> widths;
  std::vector<bool> pool;

  void validate() const {
    if (widths.empty()) throw ConfigError("encoder spec: widths must be non-empty");
    for (auto w : widths)
      if (w == 0) throw ConfigError("encoder spec: widths must be positive");
    if (in_h == 0 || in_w == 0 || in_ch == 0) throw ConfigError("encoder spec: input dims must be positive");
    if (kind == Kind::mlp && !pool.empty()) throw ConfigError("encoder spec: pool flags apply to cnn encoders only");
    if (kind == Kind::cnn) {
      if (!pool.empty() && pool.size() != widths.size())
        throw ConfigError("encoder spec: pool flags must match widths in length");
      std::size_t h = in_h, w = in_w;
      for (std::size_t i = 0; i < pool.size(); ++i)
        if (pool[i]) {
          if (h % 2 || w % 2) throw ConfigError("encoder spec: pooling requires even spatial dims");
          h /= 2;
          w /= 2;
        }
    }
  }

  std::size_t out_channels() const { return widths.back(); }

  std::array<std::size_t, 2> out_hw() const {
    if (kind == Kind::mlp) return {1, 1};
    std::size_t h = in_h, w = in_w;
    for (bool p : pool)
      if (p) {
        h /= 2;
        w /= 2;
      }
    return {h, w};
  }

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

template <class S>
using ParamRefs = std::vector<Param<S>*>;

template <class S>
using ConstParamRefs = std::vector<const Param<S>*>;

namespace detail {

template <class Net>
std::size_t count_scalars(const Net& net) {
  std::size_t n = 0;
  net.for_each_param([&](const auto& p) { n += p.value.size(); });
  return n;
}

}  // namespace detail

template <class S>
class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderSpec spec, Role role) : spec_(std::move(spec)), role_(role) { build(); }

  const EncoderSpec& spec() const noexcept { return spec_; }
  Role role() const noexcept { return role_; }

  void init(Engine& rng) {
    for (auto& l : net_.layers) {
      if (auto* c = std::get_if<layers::Conv2d<S>>(&l)) c->init(rng);
      if (auto* d = std::get_if<layers::Dense<S>>(&l)) d->init_he(rng);
    }
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    if (x.rank() != 4 || x.dim(1) != spec_.in_h || x.dim(2) != spec_.in_w || x.dim(3) != spec_.in_ch)
      throw ContractViolation(std::string(to_string(role_)) + " encoder: input " + shape_str(x.shape) +
                              " does not match spec (batch," + std::to_string(spec_.in_h) + "," +
                              std::to_string(spec_.in_w) + "," + std::to_string(spec_.in_ch) + ")");
    return net_.forward(x, training);
  }

  Tensor<S> backward(const Tensor<S>& dy) { return net_.backward(dy); }

  ParamRefs<S> params() {
    ParamRefs<S> out;
    net_.for_each_param([&](Param<S>& p) { out.push_back(&p); });
    return out;
  }
  ConstParamRefs<S> params() const {
    ConstParamRefs<S> out;
    net_.for_each_param([&](const Param<S>& p) { out.push_back(&p); });
    return out;
  }

  std::size_t param_count() const { return detail::count_scalars(net_); }

  void zero_grad() {
    net_.for_each_param([](Param<S>& p) { p.zero_grad(); });
  }

  layers::Sequential<S>& net() noexcept { return net_; }
  const layers::Sequential<S>& net() const noexcept { return net_; }

 private:
  void build() {
    spec_.validate();
    const std::string prefix = to_string(role_);
    if (spec_.kind == EncoderSpec::Kind::mlp) {
      std::size_t in = spec_.in_h * spec_.in_w * spec_.in_ch;
      for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
        const auto name = prefix + ".fc" + std::to_string(i);
        net_.layers.emplace_back(layers::Dense<S>(name, in, spec_.widths[i], false));
        net_.layers.emplace_back(layers::BatchNorm<S>(name + ".bn", spec_.widths[i]));
        net_.layers.emplace_back(layers::Relu<S>{});
        in = spec_.widths[i];
      }
    } else {
      std::size_t in = spec_.in_ch;
      for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
        const auto name = prefix + ".conv" + std::to_string(i);
        net_.layers.emplace_back(layers::Conv2d<S>(name, 3, in, spec_.widths[i]));
        net_.layers.emplace_back(layers::BatchNorm<S>(name + ".bn", spec_.widths[i]));
        net_.layers.emplace_back(layers::Relu<S>{});
        if (i < spec_.pool.size() && spec_.pool[i]) net_.layers.emplace_back(layers::AvgPool<S>{2, 2, {}});
        in = spec_.widths[i];
      }
    }
  }

  EncoderSpec spec_;
  Role role_ = Role::student;
  layers::Sequential<S> net_;
};

/// One conv stage of the projector: kernel size and channel mapping.
struct ProjectorLayerPlan {
  std::size_t ch_in;
  std::size_t ch_out;
  std::size_t kernel;

  friend bool operator==(const ProjectorLayerPlan&, const ProjectorLayerPlan&) = default;
};

/// Channel plan [ch_s -> ch_t/r (1x1), ch_t/r -> ch_t/r (3x3), ch_t/r -> ch_t (1x1)].
inline std::array<ProjectorLayerPlan, 3> projector_plan(std::size_t ch_s, std::size_t ch_t, std::size_t r) {
  if (ch_s == 0 || ch_t == 0) throw ConfigError("projector: channel counts must be positive");
  if (r == 0) throw ConfigError("projector: reduction factor must be >= 1");
  if (r > ch_t)
    throw ConfigError("projector: reduction factor " + std::to_string(r) + " exceeds teacher channels " +
                      std::to_string(ch_t) + " (hidden width would be zero)");
  const std::size_t hidden = ch_t / r;
  return {{{ch_s, hidden, 1}, {hidden, hidden, 3}, {hidden, ch_t, 1}}};
}

/// Projector parameter count: bias-free convs, BN (gamma, beta) after each.
inline std::size_t projector_param_count(std::size_t ch_s, std::size_t ch_t, std::size_t r) {
  std::size_t n = 0;
  for (const auto& l : projector_plan(ch_s, ch_t, r)) n += l.kernel * l.kernel * l.ch_in * l.ch_out + 2 * l.ch_out;
  return n;
}

/// Maps student features (Ch_S) onto the teacher's channel space (Ch_T); spatial dims preserved.
template <class S>
class Projector {
 public:
  Projector() = default;
  Projector(std::size_t ch_s, std::size_t ch_t, std::size_t r, const std::string& name = "projector")
      : ch_in_(ch_s), ch_out_(ch_t), r_(r) {
    const auto plan = projector_plan(ch_s, ch_t, r);
    if (ch_t % r != 0)
      warn("projector: reduction factor " + std::to_string(r) + " does not divide " + std::to_string(ch_t) +
           "; hidden width floored to " + std::to_string(plan[0].ch_out));
    for (std::size_t i = 0; i < plan.size(); ++i) {
      const auto lname = name + ".conv" + std::to_string(i);
      net_.layers.emplace_back(layers::Conv2d<S>(lname, plan[i].kernel, plan[i].ch_in, plan[i].ch_out));
      net_.layers.emplace_back(layers::BatchNorm<S>(lname + ".bn", plan[i].ch_out));
      net_.layers.emplace_back(layers::Relu<S>{});
    }
  }

  std::size_t ch_in() const noexcept { return ch_in_; }
  std::size_t ch_out() const noexcept { return ch_out_; }
  std::size_t reduction() const noexcept { return r_; }
  std::size_t hidden() const noexcept { return ch_out_ / r_; }

  std::array<ProjectorLayerPlan, 3> plan() const { return projector_plan(ch_in_, ch_out_, r_); }

  void init(Engine& rng) {
    for (auto& l : net_.layers)
      if (auto* c = std::get_if<layers::Conv2d<S>>(&l)) c->init(rng);
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    require_feature_map(x.shape, "projector");
    if (x.dim(3) != ch_in_)
      throw ConfigError("projector expects " + std::to_string(ch_in_) + " student channels, got " +
                        std::to_string(x.dim(3)));
    return net_.forward(x, training);
  }
  Tensor<S> backward(const Tensor<S>& dy) { return net_.backward(dy); }

  ParamRefs<S> params() {
    ParamRefs<S> out;
    net_.for_each_param([&](Param<S>& p) { out.push_back(&p); });
    return out;
  }
  ConstParamRefs<S> params() const {
    ConstParamRefs<S> out;
    net_.for_each_param([&](const Param<S>& p) { out.push_back(&p); });
    return out;
  }
  std::size_t param_count() const { return detail::count_scalars(net_); }
  void zero_grad() {
    net_.for_each_param([](Param<S>& p) { p.zero_grad(); });
  }

  layers::Sequential<S>& net() noexcept { return net_; }
  const layers::Sequential<S>& net() const noexcept { return net_; }

 private:
  std::size_t ch_in_ = 1, ch_out_ = 1, r_ = 1;
  layers::Sequential<S> net_;
};

/// Global average pooling followed by one affine map to K logits. Logits are shaped (batch, K).
template <class S>
class SharedClassifier {
 public:
  SharedClassifier() = default;
  SharedClassifier(std::size_t ch_in, std::size_t num_classes, const std::string& name = "classifier")
      : ch_in_(ch_in), k_(num_classes), fc_(name + ".fc", ch_in, num_classes, true) {
    if (ch_in == 0 || num_classes < 2) throw ConfigError("classifier: need ch_in >= 1 and K >= 2");
  }

  std::size_t ch_in() const noexcept { return ch_in_; }
  std::size_t num_classes() const noexcept { return k_; }

  void init(Engine& rng) { fc_.init_uniform(rng); }

  Tensor<S> forward(const Tensor<S>& feat, bool training = false) {
    require_feature_map(feat.shape, "classifier");
    if (feat.dim(3) != ch_in_)
      throw ConfigError("classifier expects " + std::to_string(ch_in_) + " feature channels, got " +
                        std::to_string(feat.dim(3)));
    auto pooled = pool_.forward(feat, training);
    auto y = fc_.forward(pooled, training);
    y.shape = {feat.dim(0), k_};
    return y;
  }

  /// `dlogits` is (batch, K); returns the gradient w.r.t. the input feature map.
  Tensor<S> backward(const Tensor<S>& dlogits) {
    Tensor<S> g = dlogits;
    g.shape = {dlogits.dim(0), 1, 1, k_};
    return pool_.backward(fc_.backward(g));
  }

  ParamRefs<S> params() { return {&fc_.weight, &fc_.bias}; }
  ConstParamRefs<S> params() const { return {&fc_.weight, &fc_.bias}; }
  std::size_t param_count() const { return ch_in_ * k_ + k_; }
  void zero_grad() {
    fc_.weight.zero_grad();
    fc_.bias.zero_grad();
  }

 private:
  std::size_t ch_in_ = 1, k_ = 2;
  layers::GlobalAvgPool<S> pool_;
  layers::Dense<S> fc_;
};

/// Frozen flattened copy of an encoder's trainable parameters (BN running statistics excluded).
template <class S>
class ParameterSnapshot {
 public:
  ParameterSnapshot() = default;
  explicit ParameterSnapshot(std::vector<S> values) : values_(std::move(values)) {
    fingerprint_ = fnv1a(values_.data(), values_.size() * sizeof(S));
  }

  const std::vector<S>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }

 private:
  std::vector<S> values_;
  std::uint64_t fingerprint_ = 0;
};

template <class S, class Model>
std::vector<S> flatten_params(const Model& m) {
  std::vector<S> out;
  out.reserve(m.param_count());
  for (const auto* p : m.params()) out.insert(out.end(), p->value.data.begin(), p->value.data.end());
  return out;
}

template <class S, class Model>
void unflatten_params(Model& m, const std::vector<S>& values) {
  if (values.size() != m.param_count())
    throw ContractViolation("parameter vector length " + std::to_string(values.size()) + " != model count " +
                            std::to_string(m.param_count()));
  std::size_t off = 0;
  for (auto* p : m.params()) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p->value.size(), p->value.data.begin());
    off += p->value.size();
  }
}

template <class S>
ParameterSnapshot<S> snapshot_params(const Encoder<S>& e) {
  return ParameterSnapshot<S>(flatten_params<S>(e));
}

/// Writes the snapshot back into `e`; `e` must share the snapshot's source spec.
template <class S>
void restore_params(const ParameterSnapshot<S>& snap, Encoder<S>& e) {
  unflatten_params(e, snap.values());
}

/// Content hash over a model's trainable parameters in declared order.
template <class S, class Model>
std::uint64_t param_fingerprint(const Model& m) {
  const auto v = flatten_params<S>(m);
  return fnv1a(v.data(), v.size() * sizeof(S));
}

/// Pooling window that maps a teacher feature map onto the student's (H, W).
inline std::array<std::size_t, 2> alignment_window(const Shape& teacher, std::size_t h, std::size_t w) {
  require_feature_map(teacher, "align_spatial");
  if (h == 0 || w == 0) throw ContractViolation("align_spatial: target dims must be positive");
  const std::size_t th = teacher[1], tw = teacher[2];
  if (th < h || tw < w)
    throw UnsupportedShape("align_spatial: teacher spatial dims " + shape_str(teacher) + " smaller than student (" +
                           std::to_string(h) + "," + std::to_string(w) + ")");
  if (th % h || tw % w)
    throw UnsupportedShape("align_spatial: teacher spatial dims " + shape_str(teacher) +
                           " are not integer multiples of student (" + std::to_string(h) + "," +
                           std::to_string(w) + ")");
  return {th / h, tw / w};
}

template <class S>
Tensor<S> align_spatial(const Tensor<S>& teacher_feat, std::array<std::size_t, 2> student_hw) {
  const auto win = alignment_window(teacher_feat.shape, student_hw[0], student_hw[1]);
  if (win[0] == 1 && win[1] == 1) return teacher_feat;
  layers::AvgPool<S> pool{win[0], win[1], {}};
  return pool.forward(teacher_feat, false);
}

/// Row-wise softmax of (batch, K) logits, max-subtracted.
template <class S>
Tensor<S> softmax(const Tensor<S>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<S> p(logits.shape);
  for (std::size_t b = 0; b < n; ++b) {
    const S* z = logits.data.data() + b * k;
    S* out = p.data.data() + b * k;
    const S mx = *std::max_element(z, z + k);
    S sum = S(0);
    for (std::size_t j = 0; j < k; ++j) sum += (out[j] = std::exp(z[j] - mx));
    for (std::size_t j = 0; j < k; ++j) out[j] /= sum;
  }
  return p;
}

template <class S>
void check_student_path(const Encoder<S>& student, const Projector<S>& proj, const SharedClassifier<S>& clf) {
  if (student.spec().out_channels() != proj.ch_in())
    throw ConfigError("student emits " + std::to_string(student.spec().out_channels()) +
                      " channels but projector expects " + std::to_string(proj.ch_in()));
  if (proj.ch_out() != clf.ch_in())
    throw ConfigError("projector emits " + std::to_string(proj.ch_out()) + " channels but classifier expects " +
                      std::to_string(clf.ch_in()));
}

/// Inference path sigma(C(P(E_S(x)))) in evaluation mode. Returns (batch, K) probabilities.
template <class S>
Tensor<S> student_predict(const Tensor<S>& x, Encoder<S>& student, Projector<S>& proj, SharedClassifier<S>& clf) {
  check_student_path(student, proj, clf);
  return softmax(clf.forward(proj.forward(student.forward(x, false), false), false));
}

/// sigma((1/N) sum_i C_i(P_i(E_S(x)))): logits are averaged before the softmax.
template <class S>
Tensor<S> mt_student_predict(const Tensor<S>& x, Encoder<S>& student, std::vector<Projector<S>>& projs,
                             std::vector<SharedClassifier<S>>& clfs) {
  if (projs.empty() || projs.size() != clfs.size())
    throw ConfigError("multi-teacher prediction needs N >= 1 matching projectors and classifiers");
  const auto feat = student.forward(x, false);
  Tensor<S> avg;
  for (std::size_t i = 0; i < projs.size(); ++i) {
    check_student_path(student, projs[i], clfs[i]);
    auto z = clfs[i].forward(projs[i].forward(feat, false), false);
    if (i == 0)
      avg = std::move(z);
    else
      for (std::size_t j = 0; j < avg.size(); ++j) avg[j] += z[j];
  }
  const S inv_n = S(1) / static_cast<S>(projs.size());
  for (auto& v : avg.data) v *= inv_n;
  return softmax(avg);
}

/// Trainable parameter counts of the parts that were supplied, and the projector overhead
/// relative to the full teacher network (encoder + classifier) in percent.
struct ParamReport {
  std::size_t teacher = 0;
  std::size_t classifier = 0;
  std::size_t student = 0;
  std::size_t projector = 0;
  double increase_percent = 0.0;

  std::size_t teacher_total() const { return teacher + classifier; }
};

struct PartCounts {
  std::optional<std::size_t> teacher;
  std::optional<std::size_t> classifier;
  std::optional<std::size_t> student;
  std::optional<std::size_t> projector;
};

inline ParamReport count_params(const PartCounts& parts) {
  ParamReport r;
  r.teacher = parts.teacher.value_or(0);
  r.classifier = parts.classifier.value_or(0);
  r.student = parts.student.value_or(0);
  r.projector = parts.projector.value_or(0);
  if (r.teacher_total() > 0)
    r.increase_percent = 100.0 * static_cast<double>(r.projector) / static_cast<double>(r.teacher_total());
  return r;
}

}  // namespace atsc
