// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "inpad/types.hpp"

namespace inpad {

class UndefinedMetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Probability that a positive outranks a negative; ties count one half.
/// Requires at least one positive and one negative label.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Area under precision-recall with step interpolation over the distinct
/// score thresholds. Requires at least one positive.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

/// Maximum F1 over all thresholds of the form (score >= t).
double f1_max(const std::vector<double>& scores, const std::vector<int>& labels);

/// Per-region-overlap curve integrated over false-positive rate up to
/// fpr_limit and normalized. Ground-truth regions are 8-connected
/// components; requires at least one region and one normal pixel.
double aupro(const std::vector<Tensor>& maps, const std::vector<Mask>& gt_masks, double fpr_limit = 0.3);

/// 8-connected component labels; -1 for background. Returns component count.
int64_t connected_components(const Mask& mask, std::vector<int64_t>& labels_out);

struct MetricReport {
    double i_auroc = std::numeric_limits<double>::quiet_NaN();
    double i_ap = std::numeric_limits<double>::quiet_NaN();
    double i_f1max = std::numeric_limits<double>::quiet_NaN();
    double p_auroc = std::numeric_limits<double>::quiet_NaN();
    double p_ap = std::numeric_limits<double>::quiet_NaN();
    double p_f1max = std::numeric_limits<double>::quiet_NaN();
    double aupro = std::numeric_limits<double>::quiet_NaN();
    int64_t image_count = 0;
    int64_t pixel_count = 0;
    std::vector<std::string> warnings;

    /// Mean of the seven metrics; NaN entries are skipped.
    double mad() const;
    std::string to_key_value(const std::string& prefix) const;
};

} // namespace inpad
