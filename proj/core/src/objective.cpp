// SPDX-License-Identifier: Apache-2.0
#include "vsd/objective.hpp"

#include <algorithm>
#include <cmath>

namespace vsd {

const char* direction_name(LossDirection d) {
  switch (d) {
    case LossDirection::lt_to_gt: return "lt_to_gt";
    case LossDirection::ls_to_gt: return "ls_to_gt";
    case LossDirection::ls_to_lt: return "ls_to_lt";
    case LossDirection::gt_to_lt: return "gt_to_lt";
  }
  throw std::invalid_argument("direction_name: bad enum value");
}

LossDirection direction_from_name(const std::string& name) {
  for (LossDirection d : {LossDirection::lt_to_gt, LossDirection::ls_to_gt,
                          LossDirection::ls_to_lt, LossDirection::gt_to_lt}) {
    if (name == direction_name(d)) return d;
  }
  throw std::invalid_argument("unknown loss direction '" + name + "'");
}

void DistillConfig::validate() const {
  if (!(tau_teacher > 0) || !(tau_student > 0)) {
    throw std::invalid_argument("distill config: temperatures must be positive");
  }
  if (tau_teacher > tau_student) {
    throw std::invalid_argument("distill config: tau_teacher must be <= tau_student");
  }
  if (directions.empty()) throw std::invalid_argument("distill config: no loss directions");
  for (double m : {center_momentum, ema_momentum_start, ema_momentum_end}) {
    if (m < 0.0 || m > 1.0) throw std::invalid_argument("distill config: momentum outside [0,1]");
  }
}

bool DistillConfig::has(LossDirection d) const {
  return std::find(directions.begin(), directions.end(), d) != directions.end();
}

bool DistillConfig::needs_teacher_lt() const {
  return has(LossDirection::ls_to_lt) || has(LossDirection::gt_to_lt);
}

bool DistillConfig::needs_student_gt() const { return has(LossDirection::gt_to_lt); }

template <typename T>
Tensor<T> sharpen(const Tensor<T>& f, double tau, const Tensor<T>* center) {
  if (!(tau > 0)) throw std::invalid_argument("sharpen: tau must be positive");
  const std::size_t n = f.shape().back();
  const std::size_t rows = f.size() / n;
  if (center && center->size() != n) {
    throw std::invalid_argument("sharpen: center length " + std::to_string(center->size()) +
                                " does not match feature length " + std::to_string(n));
  }
  Tensor<T> out(f.shape());
  std::vector<double> shifted(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = f.data() + r * n;
    T* y = out.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const double c = center ? static_cast<double>((*center)[j]) : 0.0;
      shifted[j] = (static_cast<double>(x[j]) - c) / tau;
      mx = std::max(mx, shifted[j]);
    }
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      shifted[j] = std::exp(shifted[j] - mx);
      sum += shifted[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] = static_cast<T>(shifted[j] / sum);
  }
  return out;
}

template Tensor<float> sharpen<float>(const Tensor<float>&, double, const Tensor<float>*);
template Tensor<double> sharpen<double>(const Tensor<double>&, double, const Tensor<double>*);

template <typename T>
double entropy_nats(const Tensor<T>& p) {
  const std::size_t n = p.shape().back();
  const std::size_t rows = p.size() / n;
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = static_cast<double>(p[i]);
    if (v > 0) acc -= v * std::log(v);
  }
  return acc / static_cast<double>(rows);
}

template double entropy_nats<float>(const Tensor<float>&);
template double entropy_nats<double>(const Tensor<double>&);

namespace {

template <typename T>
void require_prob(const Tensor<T>& p, const char* who) {
  double sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += static_cast<double>(p[i]);
  if (std::abs(sum - 1.0) > 1e-5) {
    throw std::invalid_argument(std::string(who) + ": input does not sum to 1 (" +
                                std::to_string(sum) + ")");
  }
}

}  // namespace

template <typename T>
double cross_view_ce(const Tensor<T>& target, const Tensor<T>& online) {
  if (target.shape() != online.shape() || target.rank() != 1) {
    throw std::invalid_argument("cross_view_ce: expected equal-length vectors, got " +
                                shape_str(target.shape()) + " and " + shape_str(online.shape()));
  }
  require_prob(target, "cross_view_ce");
  require_prob(online, "cross_view_ce");
  double acc = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double o = std::max(static_cast<double>(online[i]), 1e-12);
    acc -= static_cast<double>(target[i]) * std::log(o);
  }
  return acc;
}

template double cross_view_ce<float>(const Tensor<float>&, const Tensor<float>&);
template double cross_view_ce<double>(const Tensor<double>&, const Tensor<double>&);

namespace {

template <typename T>
double mean_pairwise_ce(const std::vector<Tensor<T>>& targets,
                        const std::vector<Tensor<T>>& students, const char* who) {
  if (targets.empty() || students.empty()) {
    throw std::invalid_argument(std::string(who) + ": empty view list");
  }
  double acc = 0;
  for (const Tensor<T>& t : targets) {
    for (const Tensor<T>& s : students) acc += cross_view_ce(t, s);
  }
  return acc / static_cast<double>(targets.size() * students.size());
}

}  // namespace

template <typename T>
double inter_teacher_inter_student(const std::vector<Tensor<T>>& teacher_globals,
                                   const std::vector<Tensor<T>>& student_locals_t) {
  return mean_pairwise_ce(teacher_globals, student_locals_t, "inter_teacher_inter_student");
}

template <typename T>
double inter_teacher_intra_student(const std::vector<Tensor<T>>& teacher_globals,
                                   const std::vector<Tensor<T>>& student_locals_s) {
  return mean_pairwise_ce(teacher_globals, student_locals_s, "inter_teacher_intra_student");
}

template double inter_teacher_inter_student<float>(const std::vector<Tensor<float>>&,
                                                   const std::vector<Tensor<float>>&);
template double inter_teacher_inter_student<double>(const std::vector<Tensor<double>>&,
                                                    const std::vector<Tensor<double>>&);
template double inter_teacher_intra_student<float>(const std::vector<Tensor<float>>&,
                                                   const std::vector<Tensor<float>>&);
template double inter_teacher_intra_student<double>(const std::vector<Tensor<double>>&,
                                                    const std::vector<Tensor<double>>&);

namespace {

// Per-direction view selectors on one video.
template <typename T>
const std::vector<Tensor<T>>* targets_of(const TeacherTargets<T>& t, LossDirection d) {
  switch (d) {
    case LossDirection::lt_to_gt:
    case LossDirection::ls_to_gt: return &t.gt;
    case LossDirection::ls_to_lt:
    case LossDirection::gt_to_lt: return &t.lt;
  }
  return nullptr;
}

template <typename T>
const std::vector<NodeId>* students_of(const StudentViews<T>& s, LossDirection d) {
  switch (d) {
    case LossDirection::lt_to_gt: return &s.lt;
    case LossDirection::ls_to_gt:
    case LossDirection::ls_to_lt: return &s.ls;
    case LossDirection::gt_to_lt: return &s.gt;
  }
  return nullptr;
}

}  // namespace

template <typename T>
LossGraph<T> build_total_loss(Graph<T>& g, const std::vector<TeacherTargets<T>>& targets,
                              const std::vector<StudentViews<T>>& students,
                              const DistillConfig& cfg) {
  cfg.validate();
  if (targets.size() != students.size() || targets.empty()) {
    throw std::invalid_argument("build_total_loss: teacher/student video counts disagree");
  }
  const std::size_t videos = targets.size();
  const T inv_tau = static_cast<T>(1.0 / cfg.tau_student);

  // log(sharpen(row)) is shared across every pair that consumes the row.
  std::map<NodeId, NodeId> log_prob_of_row;
  auto log_prob = [&](NodeId raw_row) {
    auto it = log_prob_of_row.find(raw_row);
    if (it != log_prob_of_row.end()) return it->second;
    NodeId lp = g.log_floor(g.softmax_last(g.scale(raw_row, inv_tau)), static_cast<T>(1e-12));
    log_prob_of_row.emplace(raw_row, lp);
    return lp;
  };

  LossGraph<T> lg;
  std::vector<NodeId> direction_terms;
  for (LossDirection d : cfg.directions) {
    std::vector<NodeId> per_video;
    for (std::size_t v = 0; v < videos; ++v) {
      const std::vector<Tensor<T>>* tv = targets_of(targets[v], d);
      const std::vector<NodeId>* sv = students_of(students[v], d);
      if (tv->empty() || sv->empty()) {
        throw std::invalid_argument(std::string("build_total_loss: direction ") +
                                    direction_name(d) + " enabled but views are missing");
      }
      std::vector<NodeId> pair_ces;
      for (const Tensor<T>& target : *tv) {
        NodeId target_node = g.constant(target, "target");
        for (NodeId raw_row : *sv) {
          pair_ces.push_back(g.neg(g.sum_all(g.mul(target_node, log_prob(raw_row)))));
        }
      }
      NodeId sum = pair_ces[0];
      for (std::size_t i = 1; i < pair_ces.size(); ++i) sum = g.add(sum, pair_ces[i]);
      per_video.push_back(g.scale(sum, static_cast<T>(1.0 / pair_ces.size())));
    }
    NodeId sum = per_video[0];
    for (std::size_t i = 1; i < per_video.size(); ++i) sum = g.add(sum, per_video[i]);
    NodeId term = g.scale(sum, static_cast<T>(1.0 / per_video.size()));
    lg.terms.emplace(d, term);
    direction_terms.push_back(term);
  }

  NodeId total = direction_terms[0];
  for (std::size_t i = 1; i < direction_terms.size(); ++i) {
    total = g.add(total, direction_terms[i]);
  }
  lg.total = total;
  return lg;
}

template LossGraph<float> build_total_loss<float>(Graph<float>&,
                                                  const std::vector<TeacherTargets<float>>&,
                                                  const std::vector<StudentViews<float>>&,
                                                  const DistillConfig&);
template LossGraph<double> build_total_loss<double>(Graph<double>&,
                                                    const std::vector<TeacherTargets<double>>&,
                                                    const std::vector<StudentViews<double>>&,
                                                    const DistillConfig&);

template <typename T>
LossTerms read_loss_terms(const Graph<T>& g, const LossGraph<T>& lg,
                          const std::vector<TeacherTargets<T>>& targets) {
  LossTerms out;
  auto term = [&](LossDirection d) -> double {
    auto it = lg.terms.find(d);
    return it == lg.terms.end() ? 0.0 : static_cast<double>(g.value(it->second)[0]);
  };
  out.l_gt_lt = term(LossDirection::lt_to_gt);
  out.l_gt_ls = term(LossDirection::ls_to_gt);
  out.l_lt_ls = term(LossDirection::ls_to_lt);
  out.l_lt_gt = term(LossDirection::gt_to_lt);
  out.total = static_cast<double>(g.value(lg.total)[0]);

  double ent = 0;
  std::size_t rows = 0;
  for (const TeacherTargets<T>& t : targets) {
    for (const Tensor<T>& p : t.gt) {
      ent += entropy_nats(p);
      ++rows;
    }
    for (const Tensor<T>& p : t.lt) {
      ent += entropy_nats(p);
      ++rows;
    }
  }
  out.teacher_entropy = rows ? ent / static_cast<double>(rows) : 0.0;
  return out;
}

template LossTerms read_loss_terms<float>(const Graph<float>&, const LossGraph<float>&,
                                          const std::vector<TeacherTargets<float>>&);
template LossTerms read_loss_terms<double>(const Graph<double>&, const LossGraph<double>&,
                                           const std::vector<TeacherTargets<double>>&);

template <typename T>
void ema_update(ModelParams<T>& teacher, const ModelParams<T>& student, double momentum) {
  if (momentum < 0.0 || momentum > 1.0) {
    throw std::invalid_argument("ema_update: momentum outside [0,1]");
  }
  if (!teacher.same_names(student)) {
    throw std::invalid_argument("ema_update: parameter name sets differ");
  }
  if (momentum == 1.0) return;  // exact no-op endpoint
  const T m = static_cast<T>(momentum);
  const T one_minus = static_cast<T>(1.0 - momentum);
  auto ti = teacher.tensors.begin();
  auto si = student.tensors.begin();
  for (; ti != teacher.tensors.end(); ++ti, ++si) {
    T* t = ti->second.data();
    const T* s = si->second.data();
    if (momentum == 0.0) {
      std::copy(s, s + ti->second.size(), t);  // exact copy endpoint
      continue;
    }
    for (std::size_t i = 0; i < ti->second.size(); ++i) {
      t[i] = m * t[i] + one_minus * s[i];
    }
  }
}

template void ema_update<float>(ModelParams<float>&, const ModelParams<float>&, double);
template void ema_update<double>(ModelParams<double>&, const ModelParams<double>&, double);

template <typename T>
void update_center(Tensor<T>& center, const Tensor<T>& teacher_raw_rows, double momentum) {
  const std::size_t n = center.size();
  if (teacher_raw_rows.shape().back() != n || teacher_raw_rows.size() % n != 0) {
    throw std::invalid_argument("update_center: rows do not match center length");
  }
  if (momentum == 1.0) return;  // exact no-op endpoint
  const std::size_t rows = teacher_raw_rows.size() / n;
  const T m = static_cast<T>(momentum);
  const T one_minus = static_cast<T>(1.0 - momentum);
  for (std::size_t j = 0; j < n; ++j) {
    double mean = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      mean += static_cast<double>(teacher_raw_rows[r * n + j]);
    }
    mean /= static_cast<double>(rows);
    center[j] = m * center[j] + one_minus * static_cast<T>(mean);
  }
}

template void update_center<float>(Tensor<float>&, const Tensor<float>&, double);
template void update_center<double>(Tensor<double>&, const Tensor<double>&, double);

}  // namespace vsd
