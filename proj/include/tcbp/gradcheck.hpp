#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tcbp/grad.hpp"
#include "tcbp/random.hpp"

// Central finite-difference checks for every differentiable operation used
// by the encoder and the ordering losses.
namespace tcbp::gradcheck {

// One random instance: leaf tensors and a function recording the op on a tape.
struct Case {
  std::vector<ad::Tensor> inputs;
  std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)> build;
};

struct OpCheck {
  std::string name;
  std::function<Case(Rng&)> make;
};

struct Options {
  std::size_t instances = 10;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Lower clamp of the relative-error denominator.
  double denominator_floor = 1e-8;
  std::uint64_t seed = 20190617;
};

struct Result {
  std::string op;
  std::size_t instances = 0;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

// The output is contracted with a random cotangent r; compares the tape's
// gradient of <r, f(inputs)> to central differences, entry by entry.
double max_relative_error(const Case& c, const Options& options, Rng& rng);

Result run(const OpCheck& check, const Options& options);

// matmul, add_bias, add, scale, relu, abs, signed_sqrt, l2_normalize,
// sum_pool, flatten_columns, count_sketch, circular_convolve, tcbp, cbp,
// pair_loss, margin_hinge and the full encoder + loss per encoding method.
std::vector<OpCheck> registered_ops();

// An op whose backward is deliberately wrong; used to prove the checker
// can fail.
OpCheck faulty_op();

}  // namespace tcbp::gradcheck
