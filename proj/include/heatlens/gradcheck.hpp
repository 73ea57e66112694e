#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heatlens/model.hpp"

namespace heatlens {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  bool all_pass = true;

  void add(std::string name, double err, double tol) {
    GradCheckEntry e{std::move(name), err, err < tol};
    worst = std::max(worst, err);
    all_pass = all_pass && e.pass;
    entries.push_back(std::move(e));
  }
};

// Central-difference checks (h = 1e-3, f64) of every differentiable
// primitive against its tape gradient. Relative error uses a 1e-2 magnitude
// floor so near-zero gradients are compared absolutely. corrupt_op, when
// non-empty, scales that op's analytic gradient by 1.01 so the checker's own
// failure path can be exercised.
GradCheckReport gradcheck_ops(std::uint64_t seed, const std::string& corrupt_op = "");

// one full encoder block, gradients w.r.t. every field and the input
GradCheckReport gradcheck_block(std::uint64_t seed);

// full pipeline loss on one synthetic masked pair; `probes` randomly chosen
// parameter entries
GradCheckReport gradcheck_model(std::uint64_t seed, const ModelConfig& cfg,
                                std::size_t probes = 10);

inline constexpr double kGradCheckTol = 1e-4;

}  // namespace heatlens
