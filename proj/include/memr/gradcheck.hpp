#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace memr {

struct GradCheckEntry {
  std::string component;
  double max_rel_error = 0.0;
};

// Finite-difference checks (central differences, eps 1e-5) of every tape op,
// an LSTM cell, the teacher-forcing, scheduled-sampling, policy-gradient and
// critic losses on random small instances.
std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed);

inline constexpr double kGradCheckTolerance = 1e-4;

}  // namespace memr
