// SPDX-License-Identifier: Apache-2.0
#include "inpad/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "inpad/image_io.hpp"
#include "inpad/rng.hpp"
#include "inpad/synthesis.hpp"

namespace fs = std::filesystem;

namespace inpad {

int64_t CategoryIndex::test_normal_count() const {
    int64_t n = 0;
    for (const auto& t : test_items) n += !t.anomalous;
    return n;
}

int64_t CategoryIndex::test_anomalous_count() const {
    int64_t n = 0;
    for (const auto& t : test_items) n += t.anomalous;
    return n;
}

const CategoryIndex& DatasetIndex::category(const std::string& name) const {
    for (const auto& c : categories) {
        if (c.name == name) return c;
    }
    throw std::out_of_range("DatasetIndex: no category '" + name + "'");
}

DatasetIndex DatasetIndex::filter(const std::string& name) const {
    DatasetIndex out;
    out.root = root;
    out.categories.push_back(category(name));
    return out;
}

namespace {

std::vector<std::string> sorted_files(const fs::path& dir) {
    std::vector<std::string> files;
    if (!fs::exists(dir)) return files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<std::string> sorted_subdirs(const fs::path& dir) {
    std::vector<std::string> dirs;
    if (!fs::exists(dir)) return dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory()) dirs.push_back(entry.path().filename().string());
    }
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

std::string find_mask(const fs::path& gt_dir, const std::string& stem) {
    const fs::path with_suffix = gt_dir / (stem + "_mask.pgm");
    if (fs::exists(with_suffix)) return with_suffix.string();
    const fs::path plain = gt_dir / (stem + ".pgm");
    if (fs::exists(plain)) return plain.string();
    return {};
}

} // namespace

DatasetIndex ingest_dataset(const std::string& root) {
    if (!fs::exists(root)) throw IngestError("ingest_dataset: root '" + root + "' does not exist");
    DatasetIndex index;
    index.root = root;
    for (const std::string& cat : sorted_subdirs(root)) {
        if (cat == "textures") continue; // synthesis source folder, not a category
        const fs::path cat_dir = fs::path(root) / cat;
        if (!fs::exists(cat_dir / "train") && !fs::exists(cat_dir / "test")) continue;
        CategoryIndex ci;
        ci.name = cat;
        ci.train_normal = sorted_files(cat_dir / "train" / "good");
        if (ci.train_normal.empty()) {
            throw IngestError("ingest_dataset: empty train split for category '" + cat + "'");
        }
        for (const std::string& defect : sorted_subdirs(cat_dir / "test")) {
            const bool is_good = defect == "good";
            for (const std::string& img : sorted_files(cat_dir / "test" / defect)) {
                TestItem item;
                item.image_path = img;
                item.anomalous = !is_good;
                item.defect = defect;
                if (!is_good) {
                    const std::string stem = fs::path(img).stem().string();
                    item.mask_path = find_mask(cat_dir / "ground_truth" / defect, stem);
                    if (item.mask_path.empty()) {
                        throw IngestError("ingest_dataset: missing ground-truth mask for '" + img + "'");
                    }
                }
                ci.test_items.push_back(std::move(item));
            }
        }
        index.categories.push_back(std::move(ci));
    }
    if (index.categories.empty()) throw IngestError("ingest_dataset: no categories found under '" + root + "'");
    return index;
}

void carve_semi_supervised_pool(DatasetIndex& index, int64_t per_category, uint64_t seed) {
    for (auto& cat : index.categories) {
        std::vector<size_t> anomalous_idx;
        for (size_t i = 0; i < cat.test_items.size(); ++i) {
            if (cat.test_items[i].anomalous) anomalous_idx.push_back(i);
        }
        if (per_category > static_cast<int64_t>(anomalous_idx.size())) {
            throw std::invalid_argument("carve_semi_supervised_pool: category '" + cat.name + "' has only " +
                                        std::to_string(anomalous_idx.size()) + " anomalous test images");
        }
        Rng rng(seed ^ std::hash<std::string>{}(cat.name));
        rng.shuffle(anomalous_idx.begin(), anomalous_idx.end());
        anomalous_idx.resize(static_cast<size_t>(per_category));
        std::sort(anomalous_idx.begin(), anomalous_idx.end(), std::greater<size_t>());
        for (size_t idx : anomalous_idx) {
            cat.anomaly_pool.push_back({cat.test_items[idx].image_path, cat.test_items[idx].mask_path});
            cat.test_items.erase(cat.test_items.begin() + static_cast<std::ptrdiff_t>(idx));
        }
    }
    verify_pool_isolation(index);
}

void verify_pool_isolation(const DatasetIndex& index) {
    for (const auto& cat : index.categories) {
        for (const auto& pool_item : cat.anomaly_pool) {
            for (const auto& test_item : cat.test_items) {
                if (test_item.image_path == pool_item.image_path) {
                    throw std::logic_error("semi-supervised pool image '" + pool_item.image_path +
                                           "' still present in the test split");
                }
            }
        }
    }
}

ImageTensor resize_bilinear(const ImageTensor& img, int64_t out_h, int64_t out_w) {
    if (img.height == out_h && img.width == out_w) return img;
    ImageTensor out(out_h, out_w);
    for (int64_t y = 0; y < out_h; ++y) {
        const double sy = (static_cast<double>(y) + 0.5) * static_cast<double>(img.height) /
                              static_cast<double>(out_h) -
                          0.5;
        const double cy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
        const int64_t y0 = static_cast<int64_t>(std::floor(cy));
        const int64_t y1 = std::min(y0 + 1, img.height - 1);
        const double fy = cy - static_cast<double>(y0);
        for (int64_t x = 0; x < out_w; ++x) {
            const double sx = (static_cast<double>(x) + 0.5) * static_cast<double>(img.width) /
                                  static_cast<double>(out_w) -
                              0.5;
            const double cx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
            const int64_t x0 = static_cast<int64_t>(std::floor(cx));
            const int64_t x1 = std::min(x0 + 1, img.width - 1);
            const double fx = cx - static_cast<double>(x0);
            for (int64_t c = 0; c < 3; ++c) {
                const double v = (1.0 - fy) * ((1.0 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c)) +
                                 fy * ((1.0 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c));
                out.at(y, x, c) = v;
            }
        }
    }
    return out;
}

Mask resize_mask_nearest(const Mask& mask, int64_t out_h, int64_t out_w) {
    if (mask.height == out_h && mask.width == out_w) return mask;
    Mask out(out_h, out_w);
    for (int64_t y = 0; y < out_h; ++y) {
        const int64_t sy = std::min(mask.height - 1, y * mask.height / out_h);
        for (int64_t x = 0; x < out_w; ++x) {
            const int64_t sx = std::min(mask.width - 1, x * mask.width / out_w);
            out.at(y, x) = mask.at(sy, sx);
        }
    }
    return out;
}

ImageTensor preprocess_image(const ImageTensor& img, int64_t resize, int64_t crop) {
    ImageTensor resized = resize_bilinear(img, resize, resize);
    if (crop == resize) return resized;
    const int64_t off = (resize - crop) / 2;
    ImageTensor out(crop, crop);
    for (int64_t y = 0; y < crop; ++y)
        for (int64_t x = 0; x < crop; ++x)
            for (int64_t c = 0; c < 3; ++c) out.at(y, x, c) = resized.at(y + off, x + off, c);
    return out;
}

Mask center_crop(const Mask& mask, int64_t crop) {
    if (mask.height == crop && mask.width == crop) return mask;
    const int64_t off_y = (mask.height - crop) / 2;
    const int64_t off_x = (mask.width - crop) / 2;
    Mask out(crop, crop);
    for (int64_t y = 0; y < crop; ++y)
        for (int64_t x = 0; x < crop; ++x) out.at(y, x) = mask.at(y + off_y, x + off_x);
    return out;
}

namespace {

ImageTensor perlin_color_field(int64_t size, int64_t scale, const double lo[3], const double hi[3], Rng& rng) {
    ImageTensor img(size, size);
    for (int64_t c = 0; c < 3; ++c) {
        const NoiseField f = perlin_noise(size, size, scale, rng.next_u64());
        for (int64_t y = 0; y < size; ++y) {
            for (int64_t x = 0; x < size; ++x) {
                const double t = 0.5 * (f.values(y, x) + 1.0);
                img.at(y, x, c) = lo[c] + t * (hi[c] - lo[c]);
            }
        }
    }
    return img;
}

void stamp_disk(ImageTensor& img, Mask& mask, int64_t cy, int64_t cx, double radius, const double color[3],
                Rng& rng) {
    const int64_t r = static_cast<int64_t>(std::ceil(radius));
    for (int64_t y = std::max<int64_t>(0, cy - r); y <= std::min(img.height - 1, cy + r); ++y) {
        for (int64_t x = std::max<int64_t>(0, cx - r); x <= std::min(img.width - 1, cx + r); ++x) {
            const double dy = static_cast<double>(y - cy), dx = static_cast<double>(x - cx);
            if (dy * dy + dx * dx > radius * radius) continue;
            for (int64_t c = 0; c < 3; ++c) {
                img.at(y, x, c) = std::clamp(color[c] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
            }
            mask.at(y, x) = 1;
        }
    }
}

void draw_scratch(ImageTensor& img, Mask& mask, Rng& rng) {
    const int64_t size = img.height;
    const double color[3] = {rng.uniform(0.0, 0.12), rng.uniform(0.0, 0.12), rng.uniform(0.0, 0.12)};
    const double y0 = rng.uniform(0.15, 0.85) * size;
    const double x0 = rng.uniform(0.15, 0.85) * size;
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    const double length = rng.uniform(0.3, 0.6) * size;
    const double thickness = rng.uniform(1.8, 3.0);
    const int64_t steps = static_cast<int64_t>(length * 2.0);
    for (int64_t s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / static_cast<double>(steps);
        const int64_t y = static_cast<int64_t>(std::llround(y0 + t * length * std::sin(angle)));
        const int64_t x = static_cast<int64_t>(std::llround(x0 + t * length * std::cos(angle)));
        if (y < 1 || y >= size - 1 || x < 1 || x >= size - 1) continue;
        stamp_disk(img, mask, y, x, thickness, color, rng);
    }
}

void draw_blob(ImageTensor& img, Mask& mask, Rng& rng) {
    const int64_t size = img.height;
    const double color[3] = {rng.uniform(0.85, 1.0), rng.uniform(0.75, 1.0), rng.uniform(0.0, 0.2)};
    const int64_t cy = static_cast<int64_t>(rng.uniform(0.25, 0.75) * size);
    const int64_t cx = static_cast<int64_t>(rng.uniform(0.25, 0.75) * size);
    const double radius = rng.uniform(0.10, 0.18) * size;
    stamp_disk(img, mask, cy, cx, radius, color, rng);
}

std::string zero_pad(int64_t n, int width) {
    std::string s = std::to_string(n);
    while (static_cast<int>(s.size()) < width) s = "0" + s;
    return s;
}

} // namespace

void generate_desk_dataset(const std::string& out_dir, const DeskDatasetSpec& spec) {
    Rng master(spec.seed);
    nlohmann::ordered_json manifest;
    manifest["seed"] = spec.seed;
    manifest["image_size"] = spec.image_size;
    manifest["categories"] = nlohmann::json::array();

    for (int64_t cat = 0; cat < spec.num_categories; ++cat) {
        const std::string cat_name = "tile" + zero_pad(cat, 2);
        const fs::path cat_dir = fs::path(out_dir) / cat_name;
        fs::create_directories(cat_dir / "train" / "good");
        fs::create_directories(cat_dir / "test" / "good");
        fs::create_directories(cat_dir / "test" / "scratch");
        fs::create_directories(cat_dir / "test" / "blob");
        fs::create_directories(cat_dir / "ground_truth" / "scratch");
        fs::create_directories(cat_dir / "ground_truth" / "blob");

        Rng cat_rng = master.fork(static_cast<uint64_t>(cat) + 100);
        // category palette: mid-tone smooth field so defects contrast strongly
        double lo[3], hi[3];
        for (int c = 0; c < 3; ++c) {
            lo[c] = cat_rng.uniform(0.30, 0.45);
            hi[c] = lo[c] + cat_rng.uniform(0.18, 0.30);
        }
        int64_t base_scale = 1;
        for (int64_t s = 2; s <= 4; s *= 2) {
            if (spec.image_size % s == 0) base_scale = s;
        }
        auto make_normal = [&](Rng& rng) {
            return perlin_color_field(spec.image_size, base_scale, lo, hi, rng);
        };

        for (int64_t i = 0; i < spec.train_normal; ++i) {
            Rng rng = cat_rng.fork(1000 + static_cast<uint64_t>(i));
            write_ppm((cat_dir / "train" / "good" / (zero_pad(i, 3) + ".ppm")).string(), make_normal(rng));
        }
        for (int64_t i = 0; i < spec.test_normal; ++i) {
            Rng rng = cat_rng.fork(2000 + static_cast<uint64_t>(i));
            write_ppm((cat_dir / "test" / "good" / (zero_pad(i, 3) + ".ppm")).string(), make_normal(rng));
        }
        const int64_t n_scratch = spec.test_anomalous / 2;
        const int64_t n_blob = spec.test_anomalous - n_scratch;
        for (int64_t i = 0; i < n_scratch; ++i) {
            Rng rng = cat_rng.fork(3000 + static_cast<uint64_t>(i));
            ImageTensor img = make_normal(rng);
            Mask mask(spec.image_size, spec.image_size);
            draw_scratch(img, mask, rng);
            write_ppm((cat_dir / "test" / "scratch" / (zero_pad(i, 3) + ".ppm")).string(), img);
            write_pgm_mask((cat_dir / "ground_truth" / "scratch" / (zero_pad(i, 3) + "_mask.pgm")).string(), mask);
        }
        for (int64_t i = 0; i < n_blob; ++i) {
            Rng rng = cat_rng.fork(4000 + static_cast<uint64_t>(i));
            ImageTensor img = make_normal(rng);
            Mask mask(spec.image_size, spec.image_size);
            draw_blob(img, mask, rng);
            write_ppm((cat_dir / "test" / "blob" / (zero_pad(i, 3) + ".ppm")).string(), img);
            write_pgm_mask((cat_dir / "ground_truth" / "blob" / (zero_pad(i, 3) + "_mask.pgm")).string(), mask);
        }
        nlohmann::ordered_json cj;
        cj["name"] = cat_name;
        cj["train_normal"] = spec.train_normal;
        cj["test_normal"] = spec.test_normal;
        cj["test_anomalous"] = spec.test_anomalous;
        manifest["categories"].push_back(cj);
    }

    // texture pool for pseudo-anomaly synthesis
    std::vector<int64_t> texture_scales;
    for (int64_t s = 2; s <= 32; s *= 2) {
        if (spec.image_size % s == 0) texture_scales.push_back(s);
    }
    if (texture_scales.empty()) texture_scales.push_back(1);
    fs::create_directories(fs::path(out_dir) / "textures");
    for (int64_t i = 0; i < spec.num_textures; ++i) {
        Rng rng = master.fork(9000 + static_cast<uint64_t>(i));
        // saturated palettes, clearly outside the mid-tone normal range
        double lo[3], hi[3];
        for (int c = 0; c < 3; ++c) {
            if (rng.uniform() < 0.5) {
                lo[c] = rng.uniform(0.0, 0.08);
                hi[c] = lo[c] + rng.uniform(0.10, 0.22);
            } else {
                hi[c] = rng.uniform(0.90, 1.0);
                lo[c] = hi[c] - rng.uniform(0.10, 0.22);
            }
        }
        const int64_t scale = texture_scales[static_cast<size_t>(i) % texture_scales.size()];
        write_ppm((fs::path(out_dir) / "textures" / (zero_pad(i, 3) + ".ppm")).string(),
                  perlin_color_field(spec.image_size, scale, lo, hi, rng));
    }

    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
}

} // namespace inpad
