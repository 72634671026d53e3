#include "engage/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "engage/errors.hpp"

namespace engage {

double log_sum_exp(std::span<const double> logits) {
    if (logits.empty()) throw InputError("log_sum_exp over empty logits");
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double x : logits) sum += std::exp(x - m);
    return m + std::log(sum);
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw InputError("softmax over empty logits");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

double soft_cross_entropy(std::span<const double> logits,
                          const std::map<std::uint32_t, double>& target) {
    if (logits.empty()) throw InputError("soft_cross_entropy over empty logits");
    if (target.empty()) throw InputError("soft target has no entries");
    double weight_sum = 0.0;
    for (const auto& [cls, w] : target) {
        if (cls >= logits.size())
            throw InputError("soft target class " + std::to_string(cls) + " out of range for " +
                             std::to_string(logits.size()) + " logits");
        if (!(w > 0.0))
            throw InputError("soft target weight for class " + std::to_string(cls) +
                             " must be positive");
        weight_sum += w;
    }
    if (std::abs(weight_sum - 1.0) > 1e-9)
        throw InputError("soft target weights sum to " + std::to_string(weight_sum) +
                         ", expected 1");

    // lse(x) - sum_c t_c * x_c; with a one-hot target this reduces bitwise
    // to the hard-label path below.
    const double lse = log_sum_exp(logits);
    double dot = 0.0;
    for (const auto& [cls, w] : target) dot += w * logits[cls];
    return lse - dot;
}

double cross_entropy(std::span<const double> logits, std::uint32_t label) {
    if (logits.empty()) throw InputError("cross_entropy over empty logits");
    if (label >= logits.size())
        throw InputError("label " + std::to_string(label) + " out of range for " +
                         std::to_string(logits.size()) + " logits");
    return log_sum_exp(logits) - logits[label];
}

}  // namespace engage
