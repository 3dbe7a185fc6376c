#pragma once

#include <cmath>
#include <vector>

#include "dede/errors.hpp"
#include "dede/rng.hpp"

namespace dede {

// Patchwise mask: which of the P patches stay visible. The visible count is
// k = round((1 - ratio) * P), so ratio 1 hides everything.
struct MaskSpec {
    float ratio = 0.9f;
    int patch_count = 0;
    std::vector<int> visible; // distinct, ascending, < patch_count

    int visible_count() const { return static_cast<int>(visible.size()); }

    bool is_visible(int patch_index) const {
        for (int v : visible)
            if (v == patch_index) return true;
        return false;
    }
};

inline int mask_visible_count(float ratio, int patch_count) {
    if (ratio < 0.0f || ratio > 1.0f)
        throw ContractError("mask: ratio " + std::to_string(ratio) + " outside [0,1]");
    int k = static_cast<int>(std::lround((1.0 - static_cast<double>(ratio)) * patch_count));
    return std::max(0, std::min(patch_count, k));
}

inline MaskSpec sample_mask(float ratio, int patch_count, Rng& rng) {
    if (patch_count <= 0) throw ContractError("mask: nonpositive patch count");
    MaskSpec m;
    m.ratio = ratio;
    m.patch_count = patch_count;
    m.visible = rng.subset(patch_count, mask_visible_count(ratio, patch_count));
    return m;
}

} // namespace dede
