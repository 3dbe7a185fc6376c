#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dede/embedding.hpp"
#include "dede/errors.hpp"
#include "dede/mask.hpp"
#include "dede/patch.hpp"
#include "dede/rng.hpp"

namespace dede {

enum class Split : uint8_t { pretrain = 0, dede_train = 1, downstream_train = 2, test = 3 };

// Pixel block in [0,1] with labels and ground-truth poison flags. Flags exist
// for evaluation only; nothing in training reads them.
struct ImageBatch {
    int count = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> pixels;       // count * channels * height * width
    std::vector<uint16_t> labels;    // count
    std::vector<uint8_t> poison_flags; // count
    Split provenance = Split::pretrain;

    int pixel_count() const { return channels * height * width; }

    std::span<const float> image(int i) const {
        return {pixels.data() + static_cast<size_t>(i) * pixel_count(),
                static_cast<size_t>(pixel_count())};
    }
    std::span<float> image(int i) {
        return {pixels.data() + static_cast<size_t>(i) * pixel_count(),
                static_cast<size_t>(pixel_count())};
    }

    void validate() const;

    // New batch containing the given rows, in order.
    ImageBatch subset_rows(const std::vector<int>& rows) const;
};

// ---------------------------------------------------------------------------
// Triggers

struct Trigger {
    enum class Kind : uint8_t { patch = 0, spectral = 1 };
    Kind kind = Kind::patch;

    // patch kind: square block of side `size` whose bottom-right corner sits
    // `offset_*` pixels in from the image's bottom-right corner; `pattern`
    // holds size*size*channels values that overwrite the region.
    int size = 3;
    int offset_y = 0;
    int offset_x = 0;
    std::vector<float> pattern;

    // spectral kind: additive sinusoid a*sin(2*pi*(u*y/H + v*x/W)) on every
    // channel, clamped afterwards. Amplitude capped at 0.1 to stay
    // imperceptible.
    float amplitude = 0.05f;
    int freq_u = 6;
    int freq_v = 6;

    void validate(int channels, int height, int width) const;

    static Trigger white_square(int size = 3);
    static Trigger sinusoid(float amplitude = 0.05f, int freq_u = 6, int freq_v = 6);
};

// x -> x (+) t. Patch kind overwrites, spectral kind adds then clamps.
void apply_trigger(std::span<float> image, const Trigger& t, int channels, int height, int width);

// Copy of `batch` with floor(rate*N) uniformly chosen samples triggered and
// flagged. Labels never change. With exclude_target, target-class rows are
// not eligible (evaluation hygiene) and the count is capped at the eligible
// rows.
ImageBatch poison_dataset(const ImageBatch& batch, const Trigger& t, float rate, int target_class,
                          Rng& rng, bool exclude_target = false);

// ---------------------------------------------------------------------------
// Masking in image space

// Zeroes every pixel of non-visible patches; visible patches are copied
// bit-exactly. Idempotent for a fixed mask.
std::vector<float> apply_mask(std::span<const float> image, const PatchGrid& grid, const MaskSpec& m);

// ---------------------------------------------------------------------------
// Synthetic class-structured data

struct SyntheticDatasetSpec {
    int classes = 4;
    int channels = 3;
    int height = 16;
    int width = 16;
    float noise_sigma = 0.02f;
    int jitter = 1;         // max |translation| in pixels, circular
    int template_cells = 4; // low-frequency template resolution

    int pretrain_count = 2048;
    int dede_train_count = 1024;
    int downstream_train_count = 1024;
    int test_count = 1024;

    void validate() const;
};

struct DatasetBundle {
    std::vector<std::vector<float>> templates; // classes * (C*H*W)
    ImageBatch pretrain;
    ImageBatch dede_train;
    ImageBatch downstream_train;
    ImageBatch test;
};

// Per-class smooth random templates, fixed per seed.
std::vector<std::vector<float>> class_templates(const SyntheticDatasetSpec& spec, Rng& rng);

// Sample = class template, circularly shifted by a jitter offset, plus pixel
// noise, clamped to [0,1]. Deterministic per (spec, seed).
DatasetBundle generate_dataset(const SyntheticDatasetSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Out-of-distribution noise images

using EmbedFn = std::function<EmbeddingMatrix(const ImageBatch&)>;

// Uniform-noise images in [0,1]. When an embedder is supplied, images whose
// embeddings fall inside the `quantile` radius of the reference distribution
// (distance to the reference centroid) are resampled, bounded at a few
// rounds, so the batch lands outside the in-distribution ball.
ImageBatch ood_noise_images(int count, int channels, int height, int width,
                            const EmbeddingMatrix& reference, float q, Rng& rng,
                            const EmbedFn& embed = nullptr);

} // namespace dede
