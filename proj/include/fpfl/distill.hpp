#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "fpfl/common.hpp"
#include "fpfl/losses.hpp"
#include "fpfl/nn.hpp"

namespace fpfl {

// Soft-label cross entropy of the student against the teacher probability:
// -t log p - (1-t) log(1-p). Minimized (at the teacher's binary entropy)
// when the student matches the teacher.
inline double distill_loss(double p_student, double p_teacher) {
  return -p_teacher * std::log(p_student) -
         (1.0 - p_teacher) * std::log(1.0 - p_student);
}

inline double distill_grad_student(double p_student, double p_teacher) {
  return (p_student - p_teacher) / (p_student * (1.0 - p_student));
}

// Checks l_ce(student, y) <= l_ce(student, teacher) * exp(l_ce(teacher, y)),
// the bound that lets a faithful student inherit the teacher's label loss.
struct TransferBound {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

inline TransferBound transfer_bound_check(double p_student, double p_teacher,
                                          int y) {
  TransferBound tb;
  tb.lhs = bce_loss(p_student, y);
  tb.rhs = distill_loss(p_student, p_teacher) *
           std::exp(bce_loss(p_teacher, y));
  tb.holds = tb.lhs <= tb.rhs + 1e-12;
  return tb;
}

// Frozen Phase-1 model together with its cached predictions on a shard.
// The cache is valid for the whole of Phase 2 because the teacher never
// changes after Phase 1.
struct TeacherSnapshot {
  Mlp model;
  std::vector<double> cached_probs;

  static TeacherSnapshot make(Mlp frozen, const FeatureMatrix& shard) {
    TeacherSnapshot t{std::move(frozen), {}};
    t.cached_probs = forward_batch(t.model, shard);
    return t;
  }
};

}  // namespace fpfl
