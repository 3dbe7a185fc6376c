#pragma once

#include <span>
#include <vector>

#include "dede/errors.hpp"

namespace dede {

// Square-patch tokenisation geometry. Patches are ordered row-major over the
// grid; within a patch, values are laid out channel-major as (c, y, x).
struct PatchGrid {
    int channels = 3;
    int height = 16;
    int width = 16;
    int patch = 4;

    void validate() const {
        if (channels <= 0 || height <= 0 || width <= 0 || patch <= 0)
            throw ContractError("patch grid: nonpositive extent");
        if (height % patch != 0 || width % patch != 0)
            throw ContractError("patch grid: patch size " + std::to_string(patch) +
                                " does not divide " + std::to_string(height) + "x" + std::to_string(width));
    }

    int patches_y() const { return height / patch; }
    int patches_x() const { return width / patch; }
    int count() const { return patches_y() * patches_x(); }
    int patch_dim() const { return patch * patch * channels; }
    int pixels() const { return channels * height * width; }

    bool operator==(const PatchGrid&) const = default;
};

// Image (C,H,W row-major) -> [count, patch_dim] patch vectors.
template <class S>
std::vector<S> patchify(std::span<const S> image, const PatchGrid& g) {
    g.validate();
    if (static_cast<int>(image.size()) != g.pixels())
        throw ContractError("patchify: image size " + std::to_string(image.size()) +
                            " does not match grid (" + std::to_string(g.pixels()) + " pixels)");
    std::vector<S> out(static_cast<size_t>(g.count()) * g.patch_dim());
    const int py = g.patches_y(), px = g.patches_x(), p = g.patch;
    size_t w = 0;
    for (int gy = 0; gy < py; ++gy)
        for (int gx = 0; gx < px; ++gx)
            for (int c = 0; c < g.channels; ++c)
                for (int y = 0; y < p; ++y)
                    for (int x = 0; x < p; ++x)
                        out[w++] = image[static_cast<size_t>(c) * g.height * g.width +
                                         static_cast<size_t>(gy * p + y) * g.width + (gx * p + x)];
    return out;
}

// Exact inverse of patchify.
template <class S>
std::vector<S> unpatchify(std::span<const S> patches, const PatchGrid& g) {
    g.validate();
    if (static_cast<int>(patches.size()) != g.count() * g.patch_dim())
        throw ContractError("unpatchify: patch data size " + std::to_string(patches.size()) +
                            " does not match grid");
    std::vector<S> out(static_cast<size_t>(g.pixels()));
    const int py = g.patches_y(), px = g.patches_x(), p = g.patch;
    size_t r = 0;
    for (int gy = 0; gy < py; ++gy)
        for (int gx = 0; gx < px; ++gx)
            for (int c = 0; c < g.channels; ++c)
                for (int y = 0; y < p; ++y)
                    for (int x = 0; x < p; ++x)
                        out[static_cast<size_t>(c) * g.height * g.width +
                            static_cast<size_t>(gy * p + y) * g.width + (gx * p + x)] = patches[r++];
    return out;
}

} // namespace dede
