#pragma once

#include <vector>

#include "amalgam/nn/losses.hpp"

namespace amalgam {

namespace detail {
inline void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
}
}  // namespace detail

// (1 - alpha) CE(p_S, y) + alpha ||z_S - z_T||^2
inline double ataka_student_loss(std::span<const double> student_probs, std::span<const double> student_logits,
                                 std::size_t y, std::span<const double> target_logits, double alpha) {
  detail::check_alpha(alpha);
  if (student_probs.size() != student_logits.size())
    throw InvalidArgument("ataka_student_loss: probs/logits length mismatch");
  return (1.0 - alpha) * cross_entropy(student_probs, y) + alpha * mse_logits(student_logits, target_logits);
}

// (1 - alpha) CE(p_S, y) + alpha KL(p_S || p_T)
inline double pareto_student_loss(std::span<const double> student_probs, std::size_t y,
                                  std::span<const double> target_probs, double alpha) {
  detail::check_alpha(alpha);
  return (1.0 - alpha) * cross_entropy(student_probs, y) + alpha * kl_div(student_probs, target_probs);
}

struct StudentOutput {
  Vector probs;
  Vector logits;
};

struct CollaborativeLoss {
  double total = 0.0;
  Vector per_student;  // each student's own term
};

// sum_i [(1 - alpha) CE(p_i, y) + alpha ||z_i - z_S||^2] with z_S held constant.
inline CollaborativeLoss cataka_loss(const std::vector<StudentOutput>& students, std::size_t y,
                                     std::span<const double> amalgamated_logits, double alpha) {
  detail::check_alpha(alpha);
  if (students.empty()) throw InvalidArgument("cataka_loss: no students");
  CollaborativeLoss out;
  for (const auto& s : students) {
    if (s.logits.size() != amalgamated_logits.size() || s.probs.size() != s.logits.size())
      throw InvalidArgument("cataka_loss: class count mismatch");
    const double term = ataka_student_loss(s.probs, s.logits, y, amalgamated_logits, alpha);
    out.per_student.push_back(term);
    out.total += term;
  }
  return out;
}

}  // namespace amalgam
