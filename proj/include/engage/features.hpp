#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace engage {

enum class FeatureKind { Comment, Reaction };

// Fixed-dimension numeric representation of one engagement signal.
// Comment vectors live in vocabulary space (or the projected space),
// reaction vectors are always 5-dimensional and unit length.
struct EngagementVector {
    FeatureKind kind = FeatureKind::Comment;
    std::vector<double> values;
};

inline double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline bool zero_embedding(const EngagementVector& v) {
    for (double x : v.values)
        if (x != 0.0) return false;
    return true;
}

// Raw counts over the five reaction buttons, in this fixed order.
struct ReactionCounts {
    std::array<std::uint64_t, 5> counts{};  // haha, sorry, angry, wow, love

    bool all_zero() const {
        for (auto c : counts)
            if (c != 0) return false;
        return true;
    }
};

inline constexpr std::array<const char*, 5> kReactionNames = {"haha", "sorry", "angry", "wow",
                                                              "love"};

// L2-normalized reaction distribution; absent when the post has no reactions.
// Normalization removes the follower-count / popularity scale of the post.
inline std::optional<EngagementVector> normalize_reactions(const ReactionCounts& rc) {
    if (rc.all_zero()) return std::nullopt;
    double norm = 0.0;
    for (auto c : rc.counts) norm += static_cast<double>(c) * static_cast<double>(c);
    norm = std::sqrt(norm);
    EngagementVector out;
    out.kind = FeatureKind::Reaction;
    out.values.resize(5);
    for (std::size_t i = 0; i < 5; ++i) out.values[i] = static_cast<double>(rc.counts[i]) / norm;
    return out;
}

}  // namespace engage
