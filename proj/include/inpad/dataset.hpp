// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "inpad/types.hpp"

namespace inpad {

struct TestItem {
    std::string image_path;
    std::string mask_path; // empty for normal images
    bool anomalous = false;
    std::string defect;
};

struct AnomalyPoolItem {
    std::string image_path;
    std::string mask_path;
};

struct CategoryIndex {
    std::string name;
    std::vector<std::string> train_normal;
    std::vector<TestItem> test_items;
    std::vector<AnomalyPoolItem> anomaly_pool;

    int64_t test_normal_count() const;
    int64_t test_anomalous_count() const;
};

struct DatasetIndex {
    std::string root;
    std::vector<CategoryIndex> categories;

    const CategoryIndex& category(const std::string& name) const;
    /// Index restricted to one category (single-class runs).
    DatasetIndex filter(const std::string& name) const;
};

class IngestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// MVTec-style tree: <root>/<category>/{train/good, test/<defect>,
/// ground_truth/<defect>}. Every anomalous test image must have a mask named
/// <stem>_mask.pgm or <stem>.pgm under ground_truth/<defect>/.
DatasetIndex ingest_dataset(const std::string& root);

/// Moves `per_category` seeded anomalous test images into the semi-supervised
/// pool, removing them from the evaluation split.
void carve_semi_supervised_pool(DatasetIndex& index, int64_t per_category, uint64_t seed);

/// Throws if any pool image still appears in a test split.
void verify_pool_isolation(const DatasetIndex& index);

/// Bilinear resize then center crop, the standard input sizing.
ImageTensor preprocess_image(const ImageTensor& img, int64_t resize, int64_t crop);
ImageTensor resize_bilinear(const ImageTensor& img, int64_t out_h, int64_t out_w);
Mask resize_mask_nearest(const Mask& mask, int64_t out_h, int64_t out_w);
Mask center_crop(const Mask& mask, int64_t crop);

struct DeskDatasetSpec {
    int64_t image_size = 56;
    int64_t num_categories = 1;
    int64_t train_normal = 60;
    int64_t test_normal = 20;
    int64_t test_anomalous = 20; // split evenly between scratch and blob defects
    int64_t num_textures = 12;
    uint64_t seed = 1;
};

/// Writes a self-contained MVTec-style synthetic dataset with seeded scratch
/// and blob defects, a texture folder for pseudo-anomaly synthesis, and a
/// manifest.json recording the generated counts.
void generate_desk_dataset(const std::string& out_dir, const DeskDatasetSpec& spec);

} // namespace inpad
