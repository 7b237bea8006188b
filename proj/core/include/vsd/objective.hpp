// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <vector>

#include "vsd/graph.hpp"
#include "vsd/model.hpp"
#include "vsd/tensor.hpp"

namespace vsd {

// Loss directions: "a -> b" reads "student view a predicts teacher target b".
enum class LossDirection { lt_to_gt, ls_to_gt, ls_to_lt, gt_to_lt };

const char* direction_name(LossDirection d);
LossDirection direction_from_name(const std::string& name);

struct DistillConfig {
  double tau_student = 0.1;
  double tau_teacher = 0.04;
  std::vector<LossDirection> directions{LossDirection::lt_to_gt, LossDirection::ls_to_gt};
  bool centering_enabled = true;
  double center_momentum = 0.9;
  double ema_momentum_start = 0.996;
  double ema_momentum_end = 1.0;
  void validate() const;
  bool has(LossDirection d) const;
  bool needs_teacher_lt() const;  // targets include teacher l_t views
  bool needs_student_gt() const;  // student must forward its globals
};

struct LossTerms {
  double l_gt_lt = 0;  // student l_t -> teacher g_t
  double l_gt_ls = 0;  // student l_s -> teacher g_t
  double l_lt_ls = 0;  // student l_s -> teacher l_t
  double l_lt_gt = 0;  // student g_t -> teacher l_t
  double total = 0;
  double teacher_entropy = 0;  // nats, mean over teacher target distributions
};

// Rowwise temperature softmax over the last axis; center (length n) is
// subtracted first when given. Works on [n] or [rows, n].
template <typename T>
Tensor<T> sharpen(const Tensor<T>& f, double tau, const Tensor<T>* center = nullptr);

// Mean Shannon entropy in nats over probability rows.
template <typename T>
double entropy_nats(const Tensor<T>& p);

// -sum(target * log(online)) with the log floored at 1e-12. Both arguments
// must be probability vectors of equal length (sums within 1e-5 of 1).
template <typename T>
double cross_view_ce(const Tensor<T>& target, const Tensor<T>& online);

// Mean cross_view_ce over every (teacher, student) pair; the two names track
// which student view family is being pulled toward the teacher globals.
template <typename T>
double inter_teacher_inter_student(const std::vector<Tensor<T>>& teacher_globals,
                                   const std::vector<Tensor<T>>& student_locals_t);
template <typename T>
double inter_teacher_intra_student(const std::vector<Tensor<T>>& teacher_globals,
                                   const std::vector<Tensor<T>>& student_locals_s);

// Per-video sharpened teacher targets (plain tensors: targets carry no
// gradient) and raw student projection rows living in a graph.
template <typename T>
struct TeacherTargets {
  std::vector<Tensor<T>> gt;  // sharpened g_t distributions, each [n]
  std::vector<Tensor<T>> lt;  // sharpened l_t distributions when needed
};

template <typename T>
struct StudentViews {
  std::vector<NodeId> gt;  // raw projected rows [1, n] in the graph
  std::vector<NodeId> lt;
  std::vector<NodeId> ls;
};

template <typename T>
struct LossGraph {
  NodeId total = kNoNode;
  std::map<LossDirection, NodeId> terms;
};

// Builds the enabled direction terms (mean CE over pairs within a video,
// mean over videos) and their unit-weight sum. Student rows are sharpened
// in-graph at tau_student; targets enter as constants.
template <typename T>
LossGraph<T> build_total_loss(Graph<T>& g, const std::vector<TeacherTargets<T>>& targets,
                              const std::vector<StudentViews<T>>& students,
                              const DistillConfig& cfg);

// Reads evaluated term values out of the loss graph.
template <typename T>
LossTerms read_loss_terms(const Graph<T>& g, const LossGraph<T>& lg,
                          const std::vector<TeacherTargets<T>>& targets);

// teacher <- m*teacher + (1-m)*student, elementwise in the native precision.
// m=0 copies the student bit-exactly; m=1 leaves the teacher untouched.
template <typename T>
void ema_update(ModelParams<T>& teacher, const ModelParams<T>& student, double momentum);

// center <- momentum*center + (1-momentum)*mean_row(raw teacher outputs).
template <typename T>
void update_center(Tensor<T>& center, const Tensor<T>& teacher_raw_rows, double momentum);

}  // namespace vsd
