#include "dede/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dede {

void ImageBatch::validate() const {
    if (count < 0 || channels <= 0 || height <= 0 || width <= 0)
        throw ContractError("image batch: bad geometry");
    if (pixels.size() != static_cast<size_t>(count) * pixel_count())
        throw ContractError("image batch: pixel buffer size mismatch");
    if (labels.size() != static_cast<size_t>(count) || poison_flags.size() != static_cast<size_t>(count))
        throw ContractError("image batch: label/flag length mismatch");
    for (float v : pixels)
        if (!(v >= 0.0f && v <= 1.0f))
            throw ContractError("image batch: pixel outside [0,1]");
}

ImageBatch ImageBatch::subset_rows(const std::vector<int>& rows) const {
    ImageBatch out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.provenance = provenance;
    out.count = static_cast<int>(rows.size());
    out.pixels.reserve(rows.size() * static_cast<size_t>(pixel_count()));
    for (int r : rows) {
        if (r < 0 || r >= count) throw ContractError("image batch: row index out of range");
        auto img = image(r);
        out.pixels.insert(out.pixels.end(), img.begin(), img.end());
        out.labels.push_back(labels[static_cast<size_t>(r)]);
        out.poison_flags.push_back(poison_flags[static_cast<size_t>(r)]);
    }
    return out;
}

// ---------------------------------------------------------------------------

void Trigger::validate(int channels, int height, int width) const {
    if (kind == Kind::patch) {
        if (size <= 0 || offset_y < 0 || offset_x < 0)
            throw ContractError("trigger: bad patch geometry");
        if (size + offset_y > height || size + offset_x > width)
            throw ContractError("trigger: patch exceeds image bounds");
        if (pattern.size() != static_cast<size_t>(size) * size * channels)
            throw ContractError("trigger: pattern size does not match patch geometry");
        for (float v : pattern)
            if (!(v >= 0.0f && v <= 1.0f)) throw ContractError("trigger: pattern pixel outside [0,1]");
    } else {
        if (!(amplitude >= 0.0f && amplitude <= 0.1f))
            throw ContractError("trigger: spectral amplitude must be in [0, 0.1]");
        if (freq_u <= 0 || freq_v <= 0) throw ContractError("trigger: nonpositive frequency");
    }
}

Trigger Trigger::white_square(int size) {
    Trigger t;
    t.kind = Kind::patch;
    t.size = size;
    t.pattern.assign(static_cast<size_t>(size) * size * 3, 1.0f);
    return t;
}

Trigger Trigger::sinusoid(float amplitude, int freq_u, int freq_v) {
    Trigger t;
    t.kind = Kind::spectral;
    t.amplitude = amplitude;
    t.freq_u = freq_u;
    t.freq_v = freq_v;
    return t;
}

void apply_trigger(std::span<float> image, const Trigger& t, int channels, int height, int width) {
    Trigger checked = t;
    if (t.kind == Trigger::Kind::patch && t.pattern.size() != static_cast<size_t>(t.size) * t.size * channels) {
        // patterns built for 3 channels adapt to grayscale by replication
        checked.pattern.resize(static_cast<size_t>(t.size) * t.size * channels);
        for (int c = 0; c < channels; ++c)
            for (int i = 0; i < t.size * t.size; ++i)
                checked.pattern[static_cast<size_t>(c) * t.size * t.size + i] =
                    t.pattern[static_cast<size_t>(i) % t.pattern.size()];
    }
    checked.validate(channels, height, width);
    if (checked.kind == Trigger::Kind::patch) {
        const int y0 = height - checked.size - checked.offset_y;
        const int x0 = width - checked.size - checked.offset_x;
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < checked.size; ++y)
                for (int x = 0; x < checked.size; ++x)
                    image[static_cast<size_t>(c) * height * width +
                          static_cast<size_t>(y0 + y) * width + (x0 + x)] =
                        checked.pattern[(static_cast<size_t>(c) * checked.size + y) * checked.size + x];
    } else {
        const double tau = 2.0 * std::numbers::pi;
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x) {
                    size_t i = static_cast<size_t>(c) * height * width + static_cast<size_t>(y) * width + x;
                    double delta = static_cast<double>(checked.amplitude) *
                                   std::sin(tau * (static_cast<double>(checked.freq_u) * y / height +
                                                   static_cast<double>(checked.freq_v) * x / width));
                    image[i] = std::clamp(image[i] + static_cast<float>(delta), 0.0f, 1.0f);
                }
    }
}

ImageBatch poison_dataset(const ImageBatch& batch, const Trigger& t, float rate, int target_class,
                          Rng& rng, bool exclude_target) {
    if (rate < 0.0f || rate > 1.0f) throw ContractError("poison: rate outside [0,1]");
    ImageBatch out = batch;
    std::vector<int> eligible;
    for (int i = 0; i < batch.count; ++i)
        if (!exclude_target || batch.labels[static_cast<size_t>(i)] != target_class)
            eligible.push_back(i);
    int want = static_cast<int>(std::floor(static_cast<double>(rate) * batch.count + 1e-9));
    want = std::min(want, static_cast<int>(eligible.size()));
    if (want > 0) {
        auto pick = rng.subset(static_cast<int>(eligible.size()), want);
        for (int idx : pick) {
            int row = eligible[static_cast<size_t>(idx)];
            apply_trigger(out.image(row), t, out.channels, out.height, out.width);
            out.poison_flags[static_cast<size_t>(row)] = 1;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<float> apply_mask(std::span<const float> image, const PatchGrid& grid, const MaskSpec& m) {
    grid.validate();
    if (m.patch_count != grid.count())
        throw ContractError("apply_mask: mask patch count does not match grid");
    std::vector<float> out(image.size(), 0.0f);
    const int p = grid.patch;
    const int px = grid.patches_x();
    for (int v : m.visible) {
        if (v < 0 || v >= grid.count()) throw ContractError("apply_mask: visible index out of range");
        const int gy = v / px, gx = v % px;
        for (int c = 0; c < grid.channels; ++c)
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x) {
                    size_t i = static_cast<size_t>(c) * grid.height * grid.width +
                               static_cast<size_t>(gy * p + y) * grid.width + (gx * p + x);
                    out[i] = image[i];
                }
    }
    return out;
}

// ---------------------------------------------------------------------------

void SyntheticDatasetSpec::validate() const {
    if (classes < 2) throw ContractError("dataset spec: needs at least 2 classes");
    if (channels <= 0 || height <= 0 || width <= 0) throw ContractError("dataset spec: bad geometry");
    if (template_cells < 2 || template_cells > std::min(height, width))
        throw ContractError("dataset spec: template cells out of range");
    if (noise_sigma < 0.0f || jitter < 0) throw ContractError("dataset spec: negative noise/jitter");
    if (pretrain_count <= 0 || dede_train_count <= 0 || downstream_train_count <= 0 || test_count <= 0)
        throw ContractError("dataset spec: empty split");
}

namespace {

// Bilinear upsample of a cells*cells field to height*width, edges clamped.
std::vector<float> upsample_field(const std::vector<float>& cells, int n, int height, int width) {
    std::vector<float> out(static_cast<size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
        double fy = (static_cast<double>(y) + 0.5) / height * n - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y1 = std::clamp(y0 + 1, 0, n - 1);
        y0 = std::clamp(y0, 0, n - 1);
        for (int x = 0; x < width; ++x) {
            double fx = (static_cast<double>(x) + 0.5) / width * n - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x1 = std::clamp(x0 + 1, 0, n - 1);
            x0 = std::clamp(x0, 0, n - 1);
            double v = (1 - wy) * ((1 - wx) * cells[static_cast<size_t>(y0) * n + x0] +
                                   wx * cells[static_cast<size_t>(y0) * n + x1]) +
                       wy * ((1 - wx) * cells[static_cast<size_t>(y1) * n + x0] +
                             wx * cells[static_cast<size_t>(y1) * n + x1]);
            out[static_cast<size_t>(y) * width + x] = static_cast<float>(v);
        }
    }
    return out;
}

ImageBatch make_split(const SyntheticDatasetSpec& spec, const std::vector<std::vector<float>>& templates,
                      int count, Split tag, Rng rng) {
    ImageBatch out;
    out.count = count;
    out.channels = spec.channels;
    out.height = spec.height;
    out.width = spec.width;
    out.provenance = tag;
    out.pixels.resize(static_cast<size_t>(count) * out.pixel_count());
    out.labels.resize(static_cast<size_t>(count));
    out.poison_flags.assign(static_cast<size_t>(count), 0);
    auto order = rng.permutation(count);
    for (int i = 0; i < count; ++i) {
        int cls = order[static_cast<size_t>(i)] % spec.classes;
        out.labels[static_cast<size_t>(i)] = static_cast<uint16_t>(cls);
        int dy = spec.jitter > 0 ? static_cast<int>(rng.below(2 * static_cast<uint64_t>(spec.jitter) + 1)) - spec.jitter : 0;
        int dx = spec.jitter > 0 ? static_cast<int>(rng.below(2 * static_cast<uint64_t>(spec.jitter) + 1)) - spec.jitter : 0;
        const auto& tpl = templates[static_cast<size_t>(cls)];
        auto img = out.image(i);
        for (int c = 0; c < spec.channels; ++c)
            for (int y = 0; y < spec.height; ++y)
                for (int x = 0; x < spec.width; ++x) {
                    int sy = ((y - dy) % spec.height + spec.height) % spec.height;
                    int sx = ((x - dx) % spec.width + spec.width) % spec.width;
                    float v = tpl[static_cast<size_t>(c) * spec.height * spec.width +
                                  static_cast<size_t>(sy) * spec.width + sx];
                    if (spec.noise_sigma > 0.0f)
                        v += spec.noise_sigma * static_cast<float>(rng.normal());
                    img[static_cast<size_t>(c) * spec.height * spec.width +
                        static_cast<size_t>(y) * spec.width + x] = std::clamp(v, 0.0f, 1.0f);
                }
    }
    return out;
}

} // namespace

std::vector<std::vector<float>> class_templates(const SyntheticDatasetSpec& spec, Rng& rng) {
    spec.validate();
    auto trng = rng.stream(0x7E11);
    std::vector<std::vector<float>> out;
    out.reserve(static_cast<size_t>(spec.classes));
    for (int k = 0; k < spec.classes; ++k) {
        std::vector<float> tpl(static_cast<size_t>(spec.channels) * spec.height * spec.width);
        for (int c = 0; c < spec.channels; ++c) {
            std::vector<float> cells(static_cast<size_t>(spec.template_cells) * spec.template_cells);
            for (auto& v : cells) v = static_cast<float>(trng.uniform01());
            auto field = upsample_field(cells, spec.template_cells, spec.height, spec.width);
            std::copy(field.begin(), field.end(),
                      tpl.begin() + static_cast<size_t>(c) * spec.height * spec.width);
        }
        out.push_back(std::move(tpl));
    }
    return out;
}

DatasetBundle generate_dataset(const SyntheticDatasetSpec& spec, Rng& rng) {
    spec.validate();
    DatasetBundle b;
    b.templates = class_templates(spec, rng);
    b.pretrain = make_split(spec, b.templates, spec.pretrain_count, Split::pretrain, rng.stream(1));
    b.dede_train = make_split(spec, b.templates, spec.dede_train_count, Split::dede_train, rng.stream(2));
    b.downstream_train =
        make_split(spec, b.templates, spec.downstream_train_count, Split::downstream_train, rng.stream(3));
    b.test = make_split(spec, b.templates, spec.test_count, Split::test, rng.stream(4));
    return b;
}

// ---------------------------------------------------------------------------

ImageBatch ood_noise_images(int count, int channels, int height, int width,
                            const EmbeddingMatrix& reference, float q, Rng& rng,
                            const EmbedFn& embed) {
    if (count < 0) throw ContractError("ood noise: negative count");
    ImageBatch out;
    out.count = count;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.provenance = Split::dede_train;
    out.pixels.resize(static_cast<size_t>(count) * out.pixel_count());
    out.labels.assign(static_cast<size_t>(count), 0);
    out.poison_flags.assign(static_cast<size_t>(count), 0);
    if (count == 0) return out;

    auto fill = [&](ImageBatch& batch) {
        for (auto& v : batch.pixels) v = static_cast<float>(rng.uniform01());
    };
    fill(out);
    if (!embed) return out;

    reference.validate();
    auto centroid = embedding_centroid(reference);
    float radius = quantile(distances_to(reference, centroid), q);
    for (int round = 0; round < 20; ++round) {
        auto emb = embed(out);
        std::vector<int> inside;
        for (int i = 0; i < count; ++i)
            if (l2_distance(emb.row(i), centroid) <= radius) inside.push_back(i);
        if (inside.empty()) break;
        for (int i : inside) {
            auto img = out.image(i);
            for (auto& v : img) v = static_cast<float>(rng.uniform01());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<float> embedding_centroid(const EmbeddingMatrix& m) {
    m.validate();
    if (m.count == 0) throw ContractError("centroid: empty matrix");
    std::vector<float> c(static_cast<size_t>(m.dim), 0.0f);
    for (int i = 0; i < m.count; ++i) {
        auto r = m.row(i);
        for (int j = 0; j < m.dim; ++j) c[static_cast<size_t>(j)] += r[static_cast<size_t>(j)];
    }
    for (auto& v : c) v /= static_cast<float>(m.count);
    return c;
}

std::vector<float> distances_to(const EmbeddingMatrix& m, std::span<const float> point) {
    std::vector<float> out(static_cast<size_t>(m.count));
    for (int i = 0; i < m.count; ++i) out[static_cast<size_t>(i)] = l2_distance(m.row(i), point);
    return out;
}

float quantile(std::vector<float> values, float q) {
    if (values.empty()) throw ContractError("quantile: empty sample");
    if (q < 0.0f || q > 1.0f) throw ContractError("quantile: q outside [0,1]");
    std::sort(values.begin(), values.end());
    double pos = static_cast<double>(q) * (values.size() - 1);
    size_t lo = static_cast<size_t>(std::floor(pos));
    size_t hi = std::min(lo + 1, values.size() - 1);
    double w = pos - lo;
    return static_cast<float>((1.0 - w) * values[lo] + w * values[hi]);
}

} // namespace dede
