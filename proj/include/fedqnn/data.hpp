#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedqnn/errors.hpp"
#include "fedqnn/qnn.hpp"
#include "fedqnn/rng.hpp"

namespace fedqnn {

inline constexpr std::size_t patch_width = 7;
inline constexpr std::size_t patch_height = 6;
inline constexpr std::size_t patch_features = patch_width * patch_height * 3; // 126

struct RasterImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels; // row-major RGB triples

    std::uint8_t channel(std::size_t x, std::size_t y, std::size_t c) const {
        return pixels[(y * width + x) * 3 + c];
    }
};

struct LesionMask {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> flags; // 1 = lesion

    bool at(std::size_t x, std::size_t y) const { return flags[y * width + x] != 0; }
};

enum class PatchLabel { Healthy = 0, Affected = 1 };

/// File encoding is {0,1}; the classifier consumes {-1,+1}. The two maps
/// below are exact inverses.
inline int signed_label(PatchLabel label) {
    return label == PatchLabel::Affected ? +1 : -1;
}

inline PatchLabel label_from_signed(int y) {
    if (y != -1 && y != +1) {
        throw MalformedRow("signed label must be -1 or +1, got " + std::to_string(y));
    }
    return y > 0 ? PatchLabel::Affected : PatchLabel::Healthy;
}

struct Patch {
    std::vector<double> features; // 126 values in [0,1]; rows top-to-bottom, channels fastest
    PatchLabel label = PatchLabel::Healthy;
    std::string source_image; // provenance, not serialized
    std::size_t top_left_x = 0;
    std::size_t top_left_y = 0;
};

struct PatchDataset {
    std::string id;
    std::vector<Patch> patches;

    std::size_t size() const { return patches.size(); }
    bool empty() const { return patches.empty(); }

    std::size_t count_of(PatchLabel label) const {
        std::size_t n = 0;
        for (const Patch &p : patches) {
            if (p.label == label) ++n;
        }
        return n;
    }

    std::size_t healthy_count() const { return count_of(PatchLabel::Healthy); }
    std::size_t affected_count() const { return count_of(PatchLabel::Affected); }
    bool balanced() const { return healthy_count() == affected_count(); }
};

inline std::vector<LabeledExample> to_examples(const PatchDataset &dataset) {
    std::vector<LabeledExample> out;
    out.reserve(dataset.size());
    for (const Patch &p : dataset.patches) {
        out.push_back({p.features, signed_label(p.label)});
    }
    return out;
}

// --- portable raster input (binary pixmap P6, graymap P5) ---

namespace detail {

inline std::string next_pnm_token(std::istream &in) {
    std::string token;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            if (!token.empty()) return token;
        } else {
            token.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    if (token.empty()) throw Error("truncated pnm header");
    return token;
}

inline std::size_t pnm_number(std::istream &in) {
    const std::string token = next_pnm_token(in);
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size()) {
        throw Error("bad pnm header number: " + token);
    }
    return value;
}

inline std::vector<std::uint8_t> pnm_payload(std::istream &in, const std::filesystem::path &path,
                                             std::size_t count) {
    std::vector<std::uint8_t> bytes(count);
    in.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count) {
        throw Error("truncated pixel data in " + path.string());
    }
    return bytes;
}

} // namespace detail

inline RasterImage read_image_p6(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open image " + path.string());
    if (detail::next_pnm_token(in) != "P6") throw Error("not a binary pixmap: " + path.string());
    RasterImage image;
    image.width = detail::pnm_number(in);
    image.height = detail::pnm_number(in);
    if (image.width == 0 || image.height == 0) throw Error("empty image " + path.string());
    if (detail::pnm_number(in) != 255) throw Error("maxval must be 255 in " + path.string());
    image.pixels = detail::pnm_payload(in, path, image.width * image.height * 3);
    return image;
}

inline LesionMask read_mask_p5(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open mask " + path.string());
    if (detail::next_pnm_token(in) != "P5") throw Error("not a binary graymap: " + path.string());
    LesionMask mask;
    mask.width = detail::pnm_number(in);
    mask.height = detail::pnm_number(in);
    if (mask.width == 0 || mask.height == 0) throw Error("empty mask " + path.string());
    if (detail::pnm_number(in) != 255) throw Error("maxval must be 255 in " + path.string());
    const auto bytes = detail::pnm_payload(in, path, mask.width * mask.height);
    mask.flags.resize(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) mask.flags[i] = bytes[i] != 0 ? 1 : 0;
    return mask;
}

inline void write_image_p6(const std::filesystem::path &path, const RasterImage &image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write image " + path.string());
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char *>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
}

inline void write_mask_p5(const std::filesystem::path &path, const LesionMask &mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write mask " + path.string());
    out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
    std::vector<std::uint8_t> bytes(mask.flags.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.flags[i] ? 255 : 0;
    out.write(reinterpret_cast<const char *>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

// --- patch extraction ---

namespace detail {

/// Centroids of 8-connected lesion components, in row-major discovery
/// order. Fractional means floor to pixel coordinates.
inline std::vector<std::pair<std::size_t, std::size_t>> component_centroids(const LesionMask &mask) {
    std::vector<std::pair<std::size_t, std::size_t>> centroids;
    std::vector<std::uint8_t> seen(mask.flags.size(), 0);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < mask.flags.size(); ++start) {
        if (!mask.flags[start] || seen[start]) continue;
        std::size_t sum_x = 0;
        std::size_t sum_y = 0;
        std::size_t count = 0;
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t idx = stack.back();
            stack.pop_back();
            const std::size_t x = idx % mask.width;
            const std::size_t y = idx / mask.width;
            sum_x += x;
            sum_y += y;
            ++count;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const auto nx = static_cast<std::ptrdiff_t>(x) + dx;
                    const auto ny = static_cast<std::ptrdiff_t>(y) + dy;
                    if (nx < 0 || ny < 0 || nx >= static_cast<std::ptrdiff_t>(mask.width) ||
                        ny >= static_cast<std::ptrdiff_t>(mask.height)) {
                        continue;
                    }
                    const std::size_t nidx =
                        static_cast<std::size_t>(ny) * mask.width + static_cast<std::size_t>(nx);
                    if (mask.flags[nidx] && !seen[nidx]) {
                        seen[nidx] = 1;
                        stack.push_back(nidx);
                    }
                }
            }
        }
        centroids.emplace_back(sum_x / count, sum_y / count);
    }
    return centroids;
}

inline std::size_t clamp_top_left(std::ptrdiff_t desired, std::size_t limit) {
    if (desired < 0) return 0;
    if (static_cast<std::size_t>(desired) > limit) return limit;
    return static_cast<std::size_t>(desired);
}

inline Patch cut_patch(const RasterImage &image, std::size_t tx, std::size_t ty, PatchLabel label,
                       std::string_view source) {
    Patch patch;
    patch.features.reserve(patch_features);
    for (std::size_t row = 0; row < patch_height; ++row) {
        for (std::size_t col = 0; col < patch_width; ++col) {
            for (std::size_t c = 0; c < 3; ++c) {
                patch.features.push_back(image.channel(tx + col, ty + row, c) / 255.0);
            }
        }
    }
    patch.label = label;
    patch.source_image = std::string(source);
    patch.top_left_x = tx;
    patch.top_left_y = ty;
    return patch;
}

/// Keep `want` entries chosen uniformly without replacement, preserving
/// draw order.
template <typename T>
void subsample(std::vector<T> &items, std::size_t want, std::mt19937_64 &rng) {
    for (std::size_t i = 0; i < want; ++i) {
        const std::size_t j = i + uniform_below(rng, items.size() - i);
        std::swap(items[i], items[j]);
    }
    items.resize(want);
}

} // namespace detail

/// Cuts per_class affected and per_class healthy 7x6 windows. Affected
/// windows sit on lesion-component centroids (window center = floor
/// midpoint, clamped to bounds); healthy windows are drawn uniformly among
/// positions whose window contains no lesion pixel. Channel values are
/// scaled to [0,1].
inline PatchDataset extract_patches(const RasterImage &image, const LesionMask &mask,
                                    std::size_t per_class, std::uint64_t rng_seed,
                                    std::string_view image_id = "") {
    if (image.width != mask.width || image.height != mask.height) {
        throw DimensionMismatch("image " + std::to_string(image.width) + "x" +
                                std::to_string(image.height) + " vs mask " +
                                std::to_string(mask.width) + "x" + std::to_string(mask.height));
    }
    if (per_class == 0) throw Error("per_class must be positive");
    if (image.width < patch_width || image.height < patch_height) {
        throw Error("image smaller than one patch window");
    }

    std::mt19937_64 rng(rng_seed);
    const std::size_t max_tx = image.width - patch_width;
    const std::size_t max_ty = image.height - patch_height;

    auto centroids = detail::component_centroids(mask);
    if (centroids.size() < per_class) {
        throw InsufficientLesions("found " + std::to_string(centroids.size()) +
                                  " lesion components, need " + std::to_string(per_class));
    }
    if (centroids.size() > per_class) detail::subsample(centroids, per_class, rng);

    // Prefix sums over the mask make the zero-overlap test O(1) per window.
    std::vector<std::uint64_t> prefix((image.width + 1) * (image.height + 1), 0);
    const std::size_t stride = image.width + 1;
    for (std::size_t y = 0; y < image.height; ++y) {
        for (std::size_t x = 0; x < image.width; ++x) {
            prefix[(y + 1) * stride + (x + 1)] = prefix[y * stride + (x + 1)] +
                                                 prefix[(y + 1) * stride + x] -
                                                 prefix[y * stride + x] + mask.flags[y * image.width + x];
        }
    }
    auto window_lesions = [&](std::size_t tx, std::size_t ty) {
        return prefix[(ty + patch_height) * stride + (tx + patch_width)] -
               prefix[ty * stride + (tx + patch_width)] -
               prefix[(ty + patch_height) * stride + tx] + prefix[ty * stride + tx];
    };

    std::vector<std::pair<std::size_t, std::size_t>> clean;
    for (std::size_t ty = 0; ty <= max_ty; ++ty) {
        for (std::size_t tx = 0; tx <= max_tx; ++tx) {
            if (window_lesions(tx, ty) == 0) clean.emplace_back(tx, ty);
        }
    }
    if (clean.size() < per_class) {
        throw InsufficientHealthyArea("only " + std::to_string(clean.size()) +
                                      " lesion-free windows, need " + std::to_string(per_class));
    }
    detail::subsample(clean, per_class, rng);

    PatchDataset dataset;
    dataset.id = std::string(image_id);
    dataset.patches.reserve(2 * per_class);
    for (const auto &[cx, cy] : centroids) {
        const std::size_t tx = detail::clamp_top_left(
            static_cast<std::ptrdiff_t>(cx) - static_cast<std::ptrdiff_t>(patch_width / 2), max_tx);
        const std::size_t ty = detail::clamp_top_left(
            static_cast<std::ptrdiff_t>(cy) - static_cast<std::ptrdiff_t>((patch_height - 1) / 2),
            max_ty);
        dataset.patches.push_back(detail::cut_patch(image, tx, ty, PatchLabel::Affected, image_id));
    }
    for (const auto &[tx, ty] : clean) {
        dataset.patches.push_back(detail::cut_patch(image, tx, ty, PatchLabel::Healthy, image_id));
    }
    return dataset;
}

// --- stratified split and client partitioning ---

namespace detail {

inline std::array<std::vector<std::size_t>, 2> indices_by_class(const PatchDataset &dataset) {
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < dataset.patches.size(); ++i) {
        by_class[dataset.patches[i].label == PatchLabel::Affected ? 1 : 0].push_back(i);
    }
    return by_class;
}

} // namespace detail

/// Stratified split. Each class contributes floor(count*fraction) to the
/// train side; the shortfall against floor(total*fraction) is topped up one
/// patch at a time by largest fractional remainder (healthy first on ties),
/// so 314 balanced patches at 0.75 land at 235 train / 79 test.
inline std::pair<PatchDataset, PatchDataset> split(const PatchDataset &dataset,
                                                   double train_fraction, std::uint64_t rng_seed) {
    if (dataset.empty()) throw DegenerateSplit("cannot split an empty dataset");
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0)) {
        throw DegenerateSplit("train_fraction must lie in (0,1)");
    }

    std::mt19937_64 rng(rng_seed);
    auto by_class = detail::indices_by_class(dataset);
    for (auto &indices : by_class) deterministic_shuffle(indices, rng);

    const auto total_train =
        static_cast<std::size_t>(static_cast<double>(dataset.size()) * train_fraction);
    std::array<std::size_t, 2> take{};
    std::array<double, 2> remainder{};
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < 2; ++c) {
        const double exact = static_cast<double>(by_class[c].size()) * train_fraction;
        take[c] = static_cast<std::size_t>(exact);
        remainder[c] = exact - static_cast<double>(take[c]);
        assigned += take[c];
    }
    while (assigned < total_train) {
        std::size_t best = remainder[0] >= remainder[1] ? 0 : 1;
        if (take[best] >= by_class[best].size()) best = 1 - best;
        ++take[best];
        remainder[best] = -1.0;
        ++assigned;
    }

    PatchDataset train;
    PatchDataset test;
    train.id = dataset.id + "-train";
    test.id = dataset.id + "-test";
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t i = 0; i < by_class[c].size(); ++i) {
            (i < take[c] ? train : test).patches.push_back(dataset.patches[by_class[c][i]]);
        }
    }
    if (train.empty() || test.empty()) {
        throw DegenerateSplit("split left one side empty at fraction " +
                              std::to_string(train_fraction));
    }
    return {std::move(train), std::move(test)};
}

/// Disjoint stratified shares; per class, the first (count mod k) clients
/// receive one extra patch. Deterministic under the seed.
inline std::vector<PatchDataset> partition_clients(const PatchDataset &dataset, std::size_t k,
                                                   std::uint64_t rng_seed) {
    if (k == 0) throw TooFewPatches("client count must be positive");
    auto by_class = detail::indices_by_class(dataset);
    for (const auto &indices : by_class) {
        if (indices.size() < k) {
            throw TooFewPatches("class with " + std::to_string(indices.size()) +
                                " patches cannot cover " + std::to_string(k) + " clients");
        }
    }

    std::mt19937_64 rng(rng_seed);
    for (auto &indices : by_class) deterministic_shuffle(indices, rng);

    std::vector<PatchDataset> shares(k);
    for (std::size_t i = 0; i < k; ++i) shares[i].id = dataset.id + "-client" + std::to_string(i);
    for (auto &indices : by_class) {
        const std::size_t base = indices.size() / k;
        const std::size_t extra = indices.size() % k;
        std::size_t cursor = 0;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t share = base + (i < extra ? 1 : 0);
            for (std::size_t j = 0; j < share; ++j) {
                shares[i].patches.push_back(dataset.patches[indices[cursor++]]);
            }
        }
    }
    return shares;
}

// --- patch file format: CSV with header f000..f125,label ---

inline std::string patch_file_header() {
    std::string header;
    header.reserve(patch_features * 5 + 6);
    for (std::size_t i = 0; i < patch_features; ++i) {
        header.push_back('f');
        header.push_back(static_cast<char>('0' + i / 100));
        header.push_back(static_cast<char>('0' + i / 10 % 10));
        header.push_back(static_cast<char>('0' + i % 10));
        header.push_back(',');
    }
    header += "label";
    return header;
}

inline void write_patch_file(const std::filesystem::path &path, const PatchDataset &dataset) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << patch_file_header() << '\n';
    char buf[32];
    for (const Patch &p : dataset.patches) {
        if (p.features.size() != patch_features) {
            throw MalformedRow("patch with " + std::to_string(p.features.size()) + " features");
        }
        for (double v : p.features) {
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
            out.write(buf, end - buf);
            out.put(',');
        }
        out.put(p.label == PatchLabel::Affected ? '1' : '0');
        out.put('\n');
    }
    if (!out) throw Error("write failed for " + path.string());
}

inline PatchDataset read_patch_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw MissingHeader("empty file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != patch_file_header()) throw MissingHeader("bad header in " + path.string());

    PatchDataset dataset;
    dataset.id = path.stem().string();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        Patch patch;
        patch.features.reserve(patch_features);
        patch.source_image = path.string();
        const char *cursor = line.data();
        const char *line_end = line.data() + line.size();
        auto fail = [&](const std::string &what) {
            throw MalformedRow(path.string() + ":" + std::to_string(line_no) + ": " + what);
        };
        for (std::size_t i = 0; i < patch_features; ++i) {
            double value = 0.0;
            auto [ptr, ec] = std::from_chars(cursor, line_end, value);
            if (ec != std::errc{} || ptr == line_end || *ptr != ',') fail("bad feature column");
            if (!(value >= 0.0 && value <= 1.0)) fail("feature outside [0,1]");
            patch.features.push_back(value);
            cursor = ptr + 1;
        }
        if (line_end - cursor != 1 || (*cursor != '0' && *cursor != '1')) {
            fail("label must be 0 or 1");
        }
        patch.label = *cursor == '1' ? PatchLabel::Affected : PatchLabel::Healthy;
        dataset.patches.push_back(std::move(patch));
    }
    return dataset;
}

} // namespace fedqnn
