// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vsd/graph.hpp"
#include "vsd/model.hpp"
#include "vsd/objective.hpp"
#include "vsd/rng.hpp"
#include "vsd/tensor.hpp"

using namespace vsd;

namespace {

Tensor<double> random_logits(std::size_t n, Rng& rng, double scale = 2.0) {
  Tensor<double> t = Tensor<double>::uninitialized({n});
  for (std::size_t i = 0; i < n; ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

std::size_t argmax(const Tensor<double>& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] > t[best]) best = i;
  }
  return best;
}

}  // namespace

TEST_CASE("sharpen: two-logit closed form") {
  // Logit gap 0.2 at tau 0.1 is a gap of 2 after scaling: sigmoid(2).
  Tensor<double> f({2}, {0.3, 0.1});
  Tensor<double> p = sharpen(f, 0.1);
  CHECK(p[0] == doctest::Approx(0.88079707797788243).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.11920292202211757).epsilon(1e-12));
}

TEST_CASE("sharpen: probability simplex, argmax, and monotone entropy in tau") {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor<double> f = random_logits(16, rng);
    double prev_entropy = -1.0;
    for (double tau : {0.04, 0.07, 0.1, 1.0}) {
      Tensor<double> p = sharpen(f, tau);
      double sum = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        REQUIRE(p[i] > 0.0);
        sum += p[i];
      }
      REQUIRE(sum == doctest::Approx(1.0).epsilon(1e-6));
      REQUIRE(argmax(p) == argmax(f));
      const double h = entropy_nats(p);
      REQUIRE(h > prev_entropy);  // sharper temperature, lower entropy
      prev_entropy = h;
    }
  }
}

TEST_CASE("sharpen: center subtraction shifts logits before the softmax") {
  Tensor<double> f({3}, {1.0, 2.0, 3.0});
  Tensor<double> center({3}, {1.0, 2.0, 3.0});
  Tensor<double> p = sharpen(f, 0.5, &center);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // Centering with zeros is the plain softmax.
  Tensor<double> zero({3});
  Tensor<double> a = sharpen(f, 0.5, &zero);
  Tensor<double> b = sharpen(f, 0.5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("sharpen: rowwise over matrices") {
  Tensor<double> f({2, 2}, {0.3, 0.1, -1.0, 1.0});
  Tensor<double> p = sharpen(f, 0.1);
  REQUIRE(p.shape() == Shape{2, 2});
  CHECK(p[0] == doctest::Approx(0.88079707797788243).epsilon(1e-12));
  double row1 = p[2] + p[3];
  CHECK(row1 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p[3] > p[2]);
}

TEST_CASE("entropy: uniform distribution gives ln(n)") {
  Tensor<double> u = Tensor<double>::full({4}, 0.25);
  CHECK(entropy_nats(u) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  Tensor<double> two = Tensor<double>::full({2}, 0.5);
  CHECK(entropy_nats(two) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // A one-hot row has zero entropy (0 log 0 = 0).
  Tensor<double> hot({2}, {1.0, 0.0});
  CHECK(entropy_nats(hot) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross entropy: CE(p, p) = H(p) and the Gibbs inequality") {
  Rng rng(13);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor<double> p = sharpen(random_logits(12, rng), 0.5);
    Tensor<double> q = sharpen(random_logits(12, rng), 0.5);
    const double self_ce = cross_view_ce(p, p);
    CHECK(self_ce == doctest::Approx(entropy_nats(p)).epsilon(1e-9));
    // Gibbs: cross entropy is minimized by the target itself.
    CHECK(cross_view_ce(p, q) >= self_ce - 1e-12);
  }
}

TEST_CASE("cross entropy: rejects non-distributions") {
  Tensor<double> p({2}, {0.5, 0.5});
  Tensor<double> bad({2}, {0.9, 0.4});
  CHECK_THROWS_AS(cross_view_ce(p, bad), std::invalid_argument);
  CHECK_THROWS_AS(cross_view_ce(bad, p), std::invalid_argument);
  Tensor<double> other({3}, {0.2, 0.3, 0.5});
  CHECK_THROWS_AS(cross_view_ce(p, other), std::invalid_argument);
}

TEST_CASE("pair means: every (teacher, student) pair contributes equally") {
  Rng rng(14);
  std::vector<Tensor<double>> teachers{sharpen(random_logits(8, rng), 0.3),
                                       sharpen(random_logits(8, rng), 0.3)};
  std::vector<Tensor<double>> students{sharpen(random_logits(8, rng), 0.3),
                                       sharpen(random_logits(8, rng), 0.3),
                                       sharpen(random_logits(8, rng), 0.3)};
  double manual = 0;
  for (const Tensor<double>& t : teachers) {
    for (const Tensor<double>& s : students) manual += cross_view_ce(t, s);
  }
  manual /= 6.0;
  CHECK(inter_teacher_inter_student(teachers, students) == doctest::Approx(manual).epsilon(1e-12));
  CHECK(inter_teacher_intra_student(teachers, students) == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("loss directions: names round-trip") {
  for (LossDirection d : {LossDirection::lt_to_gt, LossDirection::ls_to_gt,
                          LossDirection::ls_to_lt, LossDirection::gt_to_lt}) {
    CHECK(direction_from_name(direction_name(d)) == d);
  }
  CHECK(std::string(direction_name(LossDirection::lt_to_gt)) == "lt_to_gt");
  CHECK_THROWS_AS(direction_from_name("sideways"), std::invalid_argument);
}

TEST_CASE("distill config: defaults validate; broken settings do not") {
  DistillConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.has(LossDirection::lt_to_gt));
  CHECK(cfg.has(LossDirection::ls_to_gt));
  CHECK_FALSE(cfg.has(LossDirection::ls_to_lt));
  CHECK_FALSE(cfg.needs_teacher_lt());
  CHECK(cfg.needs_student_gt() == cfg.has(LossDirection::gt_to_lt));

  DistillConfig bad = cfg;
  bad.tau_teacher = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.directions.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.center_momentum = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.ema_momentum_start = 1.2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  DistillConfig lt = cfg;
  lt.directions = {LossDirection::ls_to_lt, LossDirection::gt_to_lt};
  CHECK(lt.needs_teacher_lt());
  CHECK(lt.needs_student_gt());
}

TEST_CASE("ema: momentum endpoints are exact") {
  ModelConfig mc;
  mc.patch_size = 8;
  mc.embed_dim = 16;
  mc.depth = 1;
  mc.heads = 2;
  mc.proj_hidden = 8;
  mc.proj_bottleneck = 8;
  mc.proj_out = 8;
  ModelParams<float> student = init_params(mc, 1, false);
  ModelParams<float> teacher = init_params(mc, 2, false);

  // m = 1: teacher bits frozen.
  ModelParams<float> frozen = teacher;
  ema_update(frozen, student, 1.0);
  for (const auto& [name, t] : teacher.tensors) {
    const Tensor<float>& u = frozen.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(t[i] == u[i]);
  }

  // m = 0: teacher becomes the student bit-exactly.
  ModelParams<float> copied = teacher;
  ema_update(copied, student, 0.0);
  for (const auto& [name, t] : student.tensors) {
    const Tensor<float>& u = copied.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(t[i] == u[i]);
  }

  CHECK_THROWS_AS(ema_update(teacher, student, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(ema_update(teacher, student, 1.1), std::invalid_argument);
}

TEST_CASE("ema: the scalar update is IEEE-exact at the default momentum") {
  // 0.996*1 + 0.004*0: both products and the sum are exact in f64.
  const double m = 0.996;
  const double t = m * 1.0 + (1.0 - m) * 0.0;
  CHECK(t == 0.996);

  Tensor<double> teacher_t = Tensor<double>::ones({1});
  Tensor<double> student_t({1});
  ModelParams<double> teacher;
  teacher.tensors.emplace("w", teacher_t);
  ModelParams<double> student;
  student.tensors.emplace("w", student_t);
  ema_update(teacher, student, 0.996);
  CHECK(teacher.at("w")[0] == 0.996);
}

TEST_CASE("ema: mismatched name sets are rejected") {
  ModelParams<float> a;
  a.tensors.emplace("w", Tensor<float>::ones({2}));
  ModelParams<float> b;
  b.tensors.emplace("v", Tensor<float>::ones({2}));
  CHECK_THROWS_AS(ema_update(a, b, 0.5), std::invalid_argument);
  CHECK_FALSE(a.same_names(b));
}

TEST_CASE("center update: convex blend toward the mean teacher row") {
  Tensor<double> center({2}, {1.0, -1.0});
  Tensor<double> rows({3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});  // mean row (3, 4)
  update_center(center, rows, 0.5);
  CHECK(center[0] == doctest::Approx(0.5 * 1.0 + 0.5 * 3.0).epsilon(1e-12));
  CHECK(center[1] == doctest::Approx(0.5 * -1.0 + 0.5 * 4.0).epsilon(1e-12));

  // Momentum 1 freezes the center.
  Tensor<double> frozen({2}, {0.25, 0.75});
  update_center(frozen, rows, 1.0);
  CHECK(frozen[0] == 0.25);
  CHECK(frozen[1] == 0.75);
}

TEST_CASE("total loss: term values equal hand-computed pair means") {
  Rng rng(15);
  const std::size_t n = 8;
  DistillConfig cfg;  // lt_to_gt + ls_to_gt

  // Two videos, two teacher globals, two student lt, three student ls each.
  Graph<double> g;
  std::vector<TeacherTargets<double>> targets(2);
  std::vector<StudentViews<double>> students(2);
  std::vector<std::vector<Tensor<double>>> raw_lt(2), raw_ls(2);
  for (std::size_t v = 0; v < 2; ++v) {
    for (int i = 0; i < 2; ++i) targets[v].gt.push_back(sharpen(random_logits(n, rng), 0.04));
    for (int i = 0; i < 2; ++i) {
      Tensor<double> row = random_logits(n, rng);
      raw_lt[v].push_back(row);
      students[v].lt.push_back(g.constant(Tensor<double>({1, n}, row.vec()), "lt"));
    }
    for (int i = 0; i < 3; ++i) {
      Tensor<double> row = random_logits(n, rng);
      raw_ls[v].push_back(row);
      students[v].ls.push_back(g.constant(Tensor<double>({1, n}, row.vec()), "ls"));
    }
  }

  LossGraph<double> lg = build_total_loss(g, targets, students, cfg);
  REQUIRE(lg.total != kNoNode);
  REQUIRE(lg.terms.size() == 2);

  auto pair_mean = [&](const std::vector<std::vector<Tensor<double>>>& raw) {
    double acc = 0;
    for (std::size_t v = 0; v < 2; ++v) {
      double video = 0;
      for (const Tensor<double>& t : targets[v].gt) {
        for (const Tensor<double>& s : raw[v]) video += cross_view_ce(t, sharpen(s, cfg.tau_student));
      }
      acc += video / static_cast<double>(targets[v].gt.size() * raw[v].size());
    }
    return acc / 2.0;
  };

  LossTerms terms = read_loss_terms(g, lg, targets);
  CHECK(terms.l_gt_lt == doctest::Approx(pair_mean(raw_lt)).epsilon(1e-9));
  CHECK(terms.l_gt_ls == doctest::Approx(pair_mean(raw_ls)).epsilon(1e-9));
  CHECK(terms.l_lt_ls == 0.0);
  CHECK(terms.l_lt_gt == 0.0);
  // Unit weights: the total is the plain sum of enabled terms.
  CHECK(terms.total == doctest::Approx(terms.l_gt_lt + terms.l_gt_ls).epsilon(1e-9));
  CHECK(g.value(lg.total).size() == 1);
  CHECK(terms.total == doctest::Approx(g.value(lg.total)[0]).epsilon(1e-12));
  // Teacher entropy averages the sharpened target entropies.
  double h = 0;
  for (std::size_t v = 0; v < 2; ++v) {
    for (const Tensor<double>& t : targets[v].gt) h += entropy_nats(t);
  }
  CHECK(terms.teacher_entropy == doctest::Approx(h / 4.0).epsilon(1e-9));
}

TEST_CASE("total loss: identical teacher and student meet at the entropy floor") {
  // With tau_t = tau_s and the same logits on both sides, CE(p, p) = H(p).
  Rng rng(16);
  const std::size_t n = 8;
  DistillConfig cfg;
  cfg.tau_teacher = 0.1;
  cfg.tau_student = 0.1;

  Graph<double> g;
  std::vector<TeacherTargets<double>> targets(1);
  std::vector<StudentViews<double>> students(1);
  Tensor<double> logits = random_logits(n, rng);
  targets[0].gt.push_back(sharpen(logits, cfg.tau_teacher));
  students[0].lt.push_back(g.constant(Tensor<double>({1, n}, logits.vec()), "lt"));
  students[0].ls.push_back(g.constant(Tensor<double>({1, n}, logits.vec()), "ls"));

  LossGraph<double> lg = build_total_loss(g, targets, students, cfg);
  LossTerms terms = read_loss_terms(g, lg, targets);
  const double h = entropy_nats(targets[0].gt[0]);
  CHECK(terms.l_gt_lt == doctest::Approx(h).epsilon(1e-5));
  CHECK(terms.l_gt_ls == doctest::Approx(h).epsilon(1e-5));
  CHECK(terms.teacher_entropy == doctest::Approx(h).epsilon(1e-12));
}

TEST_CASE("total loss: gradient flows to student rows only") {
  Rng rng(17);
  const std::size_t n = 6;
  DistillConfig cfg;
  Graph<double> g;
  std::vector<TeacherTargets<double>> targets(1);
  std::vector<StudentViews<double>> students(1);
  targets[0].gt.push_back(sharpen(random_logits(n, rng), 0.04));
  NodeId lt = g.parameter("lt", Tensor<double>({1, n}, random_logits(n, rng).vec()));
  NodeId ls = g.parameter("ls", Tensor<double>({1, n}, random_logits(n, rng).vec()));
  students[0].lt.push_back(lt);
  students[0].ls.push_back(ls);

  LossGraph<double> lg = build_total_loss(g, targets, students, cfg);
  GradCheckReport rep = finite_difference_check(g, lg.total, 1e-5);
  CAPTURE(rep.max_rel_err);
  CHECK(rep.passed(1e-4));
}
