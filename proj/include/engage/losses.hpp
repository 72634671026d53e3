#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace engage {

// Numerically stable log(sum(exp(x))) via max shift.
double log_sum_exp(std::span<const double> logits);

std::vector<double> softmax(std::span<const double> logits);

// Cross entropy against a sparse soft target (class index -> weight).
// Weights must be positive, in range, and sum to 1 within 1e-9.
double soft_cross_entropy(std::span<const double> logits,
                          const std::map<std::uint32_t, double>& target);

// Hard-label cross entropy; exactly the soft path with a one-hot target.
double cross_entropy(std::span<const double> logits, std::uint32_t label);

}  // namespace engage
