#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "atsc/model.hpp"
#include "atsc/tensor.hpp"

namespace atsc {

/// Scalar objective value with its named parts (feat_mse, anchor, ce, ...).
template <class S>
struct LossValue {
  S total = S(0);
  std::map<std::string, S> components;

  S component(const std::string& name) const {
    auto it = components.find(name);
    return it == components.end() ? S(0) : it->second;
  }

  bool finite() const {
    if (!std::isfinite(total)) return false;
    for (const auto& [_, v] : components)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

struct BalancingConfig {
  double alpha = 1.0;

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite value >= 0");
  }
};

/// Mean of squared element-wise differences over every element, batch included.
template <class S>
LossValue<S> feature_mse(const Tensor<S>& t_feat, const Tensor<S>& s_feat) {
  if (t_feat.shape != s_feat.shape)
    throw ContractViolation("feature_mse: shape mismatch " + shape_str(t_feat.shape) + " vs " +
                            shape_str(s_feat.shape));
  if (t_feat.size() == 0) throw ContractViolation("feature_mse: empty tensors");
  S acc = S(0);
  for (std::size_t i = 0; i < t_feat.size(); ++i) {
    const S d = t_feat[i] - s_feat[i];
    acc += d * d;
  }
  const S v = acc / static_cast<S>(t_feat.size());
  return {v, {{"feat_mse", v}}};
}

/// d feature_mse / d s_feat; the teacher-side gradient is its negation.
template <class S>
Tensor<S> feature_mse_grad(const Tensor<S>& t_feat, const Tensor<S>& s_feat) {
  Tensor<S> g(s_feat.shape);
  const S scale = S(2) / static_cast<S>(s_feat.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * (s_feat[i] - t_feat[i]);
  return g;
}

/// (1/n) sum_i (theta_i - theta*_i)^2 over the encoder's flattened trainable parameters.
template <class S>
LossValue<S> anchor_penalty(const ParameterSnapshot<S>& snap, const Encoder<S>& current) {
  if (snap.size() != current.param_count())
    throw ContractViolation("anchor_penalty: snapshot holds " + std::to_string(snap.size()) +
                            " values, encoder has " + std::to_string(current.param_count()));
  if (snap.size() == 0) return {S(0), {{"anchor", S(0)}}};
  const auto& ref = snap.values();
  S acc = S(0);
  std::size_t off = 0;
  for (const auto* p : current.params())
    for (std::size_t i = 0; i < p->value.size(); ++i, ++off) {
      const S d = p->value[i] - ref[off];
      acc += d * d;
    }
  const S v = acc / static_cast<S>(snap.size());
  return {v, {{"anchor", v}}};
}

/// Adds scale * d anchor / d theta = scale * 2 (theta - theta*) / n to the encoder's gradients.
template <class S>
void accumulate_anchor_grad(const ParameterSnapshot<S>& snap, Encoder<S>& current, S scale) {
  if (snap.size() != current.param_count())
    throw ContractViolation("anchor_penalty: snapshot/encoder length mismatch");
  if (snap.size() == 0) return;
  const auto& ref = snap.values();
  const S c = scale * S(2) / static_cast<S>(snap.size());
  std::size_t off = 0;
  for (auto* p : current.params())
    for (std::size_t i = 0; i < p->value.size(); ++i, ++off) p->grad[i] += c * (p->value[i] - ref[off]);
}

template <class S>
void check_labels(const std::vector<int>& labels, std::size_t n, std::size_t k) {
  if (labels.size() != n)
    throw ContractViolation("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                            " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw ContractViolation("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(k) +
                              ")");
}

/// Batch-mean of -log softmax(logits)[label], via max-subtracted log-sum-exp.
template <class S>
LossValue<S> cross_entropy(const std::vector<int>& labels, const Tensor<S>& logits) {
  if (logits.rank() != 2 || logits.dim(0) == 0) throw ContractViolation("cross_entropy: logits must be (batch, K)");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  check_labels<S>(labels, n, k);
  S acc = S(0);
  for (std::size_t b = 0; b < n; ++b) {
    const S* z = logits.data.data() + b * k;
    const S mx = *std::max_element(z, z + k);
    S sum = S(0);
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
    acc += std::log(sum) + mx - z[labels[b]];
  }
  const S v = acc / static_cast<S>(n);
  return {v, {{"ce", v}}};
}

/// d cross_entropy / d logits = (softmax - onehot) / batch.
template <class S>
Tensor<S> cross_entropy_grad(const std::vector<int>& labels, const Tensor<S>& logits) {
  auto g = softmax(logits);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const S inv_n = S(1) / static_cast<S>(n);
  for (std::size_t b = 0; b < n; ++b) {
    g[b * k + static_cast<std::size_t>(labels[b])] -= S(1);
    for (std::size_t j = 0; j < k; ++j) g[b * k + j] *= inv_n;
  }
  return g;
}

/// feature_mse + alpha * anchor_penalty.
template <class S>
LossValue<S> step1_loss(const Tensor<S>& t_feat, const Tensor<S>& s_feat_projected, const ParameterSnapshot<S>& snap,
                        const Encoder<S>& teacher, const BalancingConfig& cfg) {
  cfg.validate();
  const auto mse = feature_mse(t_feat, s_feat_projected);
  const auto anc = anchor_penalty(snap, teacher);
  const S a = static_cast<S>(cfg.alpha);
  return {mse.total + a * anc.total, {{"feat_mse", mse.total}, {"anchor", anc.total}}};
}

/// CE of the shared classifier on the (frozen, eval-mode) teacher encoder's features.
template <class S>
LossValue<S> step2_loss_teacher(const std::vector<int>& labels, Encoder<S>& teacher, SharedClassifier<S>& clf,
                                const Tensor<S>& x) {
  return cross_entropy(labels, clf.forward(teacher.forward(x, false), false));
}

/// CE of the shared classifier reached through the student encoder and projector.
template <class S>
LossValue<S> step2_loss_student(const std::vector<int>& labels, Encoder<S>& student, Projector<S>& proj,
                                SharedClassifier<S>& clf, const Tensor<S>& x) {
  check_student_path(student, proj, clf);
  return cross_entropy(labels, clf.forward(proj.forward(student.forward(x, false), false), false));
}

/// sum_i [ feature_mse_i + alpha * anchor_i ]; alpha applies per teacher.
template <class S>
LossValue<S> mt_step1_loss(const std::vector<Tensor<S>>& t_feats, const std::vector<Tensor<S>>& s_feats_projected,
                           const std::vector<ParameterSnapshot<S>>& snaps,
                           const std::vector<const Encoder<S>*>& teachers, const BalancingConfig& cfg) {
  const std::size_t n = t_feats.size();
  if (n == 0) throw ContractViolation("mt_step1_loss: need at least one teacher");
  if (s_feats_projected.size() != n || snaps.size() != n || teachers.size() != n)
    throw ContractViolation("mt_step1_loss: per-teacher argument lists differ in length");
  LossValue<S> out;
  S mse_sum = S(0), anc_sum = S(0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto l = step1_loss(t_feats[i], s_feats_projected[i], snaps[i], *teachers[i], cfg);
    out.total += l.total;
    mse_sum += l.component("feat_mse");
    anc_sum += l.component("anchor");
    out.components["feat_mse[" + std::to_string(i) + "]"] = l.component("feat_mse");
    out.components["anchor[" + std::to_string(i) + "]"] = l.component("anchor");
  }
  out.components["feat_mse"] = mse_sum;
  out.components["anchor"] = anc_sum;
  return out;
}

template <class S>
Tensor<S> average_logits(const std::vector<Tensor<S>>& logits) {
  if (logits.empty()) throw ContractViolation("average_logits: need at least one input");
  Tensor<S> avg = logits.front();
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i].shape != avg.shape) throw ContractViolation("average_logits: shape mismatch");
    for (std::size_t j = 0; j < avg.size(); ++j) avg[j] += logits[i][j];
  }
  const S inv = S(1) / static_cast<S>(logits.size());
  for (auto& v : avg.data) v *= inv;
  return avg;
}

/// CE on softmax((1/N) sum_i C_i(E_Ti(x))); logits averaged before the softmax.
template <class S>
LossValue<S> mt_step2_loss(const std::vector<int>& labels, std::vector<Encoder<S>>& teachers,
                           std::vector<SharedClassifier<S>>& clfs, const Tensor<S>& x) {
  if (teachers.empty() || teachers.size() != clfs.size())
    throw ContractViolation("mt_step2_loss: need N >= 1 matching teachers and classifiers");
  std::vector<Tensor<S>> logits;
  for (std::size_t i = 0; i < teachers.size(); ++i)
    logits.push_back(clfs[i].forward(teachers[i].forward(x, false), false));
  return cross_entropy(labels, average_logits(logits));
}

}  // namespace atsc
