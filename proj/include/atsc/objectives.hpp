#pragma once

#include <vector>

#include "atsc/losses.hpp"
#include "atsc/model.hpp"

// Objectives that evaluate a loss and back-propagate it into parameter gradients.
// Every objective zeroes the gradients of the modules it differentiates before accumulating.

namespace atsc {

/// One teacher branch of the representation-matching objective.
template <class S>
struct TeacherBranch {
  Encoder<S>* encoder = nullptr;
  const ParameterSnapshot<S>* anchor = nullptr;  // null: no anchor penalty (plain feature matching)
  Projector<S>* projector = nullptr;
};

/// sum_i [ feature_mse(align(E_Ti(x)), P_i(E_S(x))) + alpha * anchor_i ].
///
/// With `update_teachers` the teacher encoders run in training mode and receive gradients (feature
/// term plus alpha-weighted anchor term); otherwise they are evaluated frozen in eval mode and only
/// the student encoder and projectors are differentiated.
template <class S>
LossValue<S> distill_objective(std::vector<TeacherBranch<S>>& branches, Encoder<S>& student, const Tensor<S>& x,
                               double alpha, bool update_teachers) {
  if (branches.empty()) throw ContractViolation("distill_objective: need at least one teacher branch");
  student.zero_grad();
  const auto s_feat = student.forward(x, true);
  const std::array<std::size_t, 2> s_hw{s_feat.dim(1), s_feat.dim(2)};
  Tensor<S> ds(s_feat.shape);
  const S a = static_cast<S>(alpha);

  LossValue<S> out;
  S mse_sum = S(0), anc_sum = S(0);
  for (std::size_t i = 0; i < branches.size(); ++i) {
    auto& br = branches[i];
    br.projector->zero_grad();
    if (update_teachers) br.encoder->zero_grad();

    const auto t_raw = br.encoder->forward(x, update_teachers);
    const auto win = alignment_window(t_raw.shape, s_hw[0], s_hw[1]);
    layers::AvgPool<S> align{win[0], win[1], {}};
    const auto t_feat = align.forward(t_raw, false);
    const auto p_feat = br.projector->forward(s_feat, true);

    const auto mse = feature_mse(t_feat, p_feat);
    S anchor = S(0);
    if (br.anchor) anchor = anchor_penalty(*br.anchor, *br.encoder).total;

    const auto dp = feature_mse_grad(t_feat, p_feat);
    const auto ds_i = br.projector->backward(dp);
    for (std::size_t j = 0; j < ds.size(); ++j) ds[j] += ds_i[j];

    if (update_teachers) {
      Tensor<S> dt = dp;
      for (auto& v : dt.data) v = -v;
      br.encoder->backward(align.backward(dt));
      if (br.anchor) accumulate_anchor_grad(*br.anchor, *br.encoder, a);
    }

    out.total += mse.total + a * anchor;
    mse_sum += mse.total;
    anc_sum += anchor;
    if (branches.size() > 1) {
      out.components["feat_mse[" + std::to_string(i) + "]"] = mse.total;
      out.components["anchor[" + std::to_string(i) + "]"] = anchor;
    }
  }
  student.backward(ds);
  out.components["feat_mse"] = mse_sum;
  out.components["anchor"] = anc_sum;
  return out;
}

/// Cross-entropy of clf(projector(encoder(x))) (projector optional).
///
/// The classifier always receives gradients. With `propagate` the projector and encoder are
/// differentiated as well; `encoder_training` selects the BN mode of encoder and projector.
template <class S>
LossValue<S> classify_objective(Encoder<S>& enc, Projector<S>* proj, SharedClassifier<S>& clf, const Tensor<S>& x,
                                const std::vector<int>& labels, bool encoder_training, bool propagate) {
  clf.zero_grad();
  if (propagate) {
    enc.zero_grad();
    if (proj) proj->zero_grad();
  }
  auto feat = enc.forward(x, encoder_training);
  if (proj) feat = proj->forward(feat, encoder_training);
  const auto logits = clf.forward(feat, encoder_training);
  const auto loss = cross_entropy(labels, logits);
  const auto dfeat = clf.backward(cross_entropy_grad(labels, logits));
  if (propagate) {
    auto g = proj ? proj->backward(dfeat) : dfeat;
    enc.backward(g);
  }
  return loss;
}

/// CE on the average of N teacher-path logits; gradients reach every classifier C_i only.
template <class S>
LossValue<S> mt_classify_objective(std::vector<Encoder<S>*>& teachers, std::vector<SharedClassifier<S>*>& clfs,
                                   const Tensor<S>& x, const std::vector<int>& labels) {
  if (teachers.empty() || teachers.size() != clfs.size())
    throw ContractViolation("mt_classify_objective: need N >= 1 matching teachers and classifiers");
  std::vector<Tensor<S>> logits;
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    clfs[i]->zero_grad();
    logits.push_back(clfs[i]->forward(teachers[i]->forward(x, false), false));
  }
  const auto avg = average_logits(logits);
  const auto loss = cross_entropy(labels, avg);
  auto g = cross_entropy_grad(labels, avg);
  const S inv_n = S(1) / static_cast<S>(teachers.size());
  for (auto& v : g.data) v *= inv_n;
  for (auto* c : clfs) c->backward(g);
  return loss;
}

}  // namespace atsc
