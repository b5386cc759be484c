// SPDX-License-Identifier: Apache-2.0
#include "inpad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <sstream>

namespace inpad {

namespace {

void require_scores_labels(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw std::invalid_argument("metric: scores/labels size mismatch or empty");
    }
}

} // namespace

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    require_scores_labels(scores, labels);
    int64_t pos = 0, neg = 0;
    for (int l : labels) (l != 0 ? pos : neg)++;
    if (pos == 0 || neg == 0) {
        throw UndefinedMetricError("auroc: needs at least one positive and one negative label");
    }
    // Mann-Whitney U via average ranks; tie groups share the mean rank.
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j)); // 1-based
        for (size_t k = i; k < j; ++k) {
            if (labels[order[k]] != 0) pos_rank_sum += avg_rank;
        }
        i = j;
    }
    const double u = pos_rank_sum - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    require_scores_labels(scores, labels);
    int64_t total_pos = 0;
    for (int l : labels) total_pos += (l != 0);
    if (total_pos == 0) throw UndefinedMetricError("average_precision: needs at least one positive label");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    double prev_recall = 0.0;
    int64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        for (size_t k = i; k < j; ++k) (labels[order[k]] != 0 ? tp : fp)++;
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

double f1_max(const std::vector<double>& scores, const std::vector<int>& labels) {
    require_scores_labels(scores, labels);
    int64_t total_pos = 0;
    for (int l : labels) total_pos += (l != 0);
    if (total_pos == 0) throw UndefinedMetricError("f1_max: needs at least one positive label");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    double best = 0.0;
    int64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        for (size_t k = i; k < j; ++k) (labels[order[k]] != 0 ? tp : fp)++;
        const int64_t fn = total_pos - tp;
        const double denom = static_cast<double>(2 * tp + fp + fn);
        if (denom > 0.0) best = std::max(best, 2.0 * static_cast<double>(tp) / denom);
        i = j;
    }
    return best;
}

int64_t connected_components(const Mask& mask, std::vector<int64_t>& labels_out) {
    const int64_t h = mask.height, w = mask.width;
    labels_out.assign(static_cast<size_t>(h * w), -1);
    int64_t next = 0;
    std::deque<int64_t> queue;
    for (int64_t start = 0; start < h * w; ++start) {
        if (!mask.values[static_cast<size_t>(start)] || labels_out[static_cast<size_t>(start)] >= 0) continue;
        labels_out[static_cast<size_t>(start)] = next;
        queue.push_back(start);
        while (!queue.empty()) {
            const int64_t cur = queue.front();
            queue.pop_front();
            const int64_t cy = cur / w, cx = cur % w;
            for (int64_t dy = -1; dy <= 1; ++dy) {
                for (int64_t dx = -1; dx <= 1; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const int64_t ny = cy + dy, nx = cx + dx;
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    const int64_t idx = ny * w + nx;
                    if (mask.values[static_cast<size_t>(idx)] && labels_out[static_cast<size_t>(idx)] < 0) {
                        labels_out[static_cast<size_t>(idx)] = next;
                        queue.push_back(idx);
                    }
                }
            }
        }
        ++next;
    }
    return next;
}

double aupro(const std::vector<Tensor>& maps, const std::vector<Mask>& gt_masks, double fpr_limit) {
    if (maps.empty() || maps.size() != gt_masks.size()) {
        throw std::invalid_argument("aupro: map/mask count mismatch");
    }
    if (fpr_limit <= 0.0 || fpr_limit > 1.0) throw std::invalid_argument("aupro: fpr_limit outside (0,1]");

    struct Pixel {
        double score;
        int64_t component; // -1 = normal pixel
    };
    std::vector<Pixel> pixels;
    std::vector<int64_t> component_sizes;
    int64_t total_neg = 0;
    for (size_t img = 0; img < maps.size(); ++img) {
        const Tensor& map = maps[img];
        const Mask& gt = gt_masks[img];
        if (map.rows() != gt.height || map.cols() != gt.width) {
            throw std::invalid_argument("aupro: map/mask shape mismatch");
        }
        std::vector<int64_t> labels;
        const int64_t n_comp = connected_components(gt, labels);
        const int64_t base = static_cast<int64_t>(component_sizes.size());
        component_sizes.resize(static_cast<size_t>(base + n_comp), 0);
        for (int64_t i = 0; i < map.size(); ++i) {
            Pixel px;
            px.score = map[i];
            px.component = labels[static_cast<size_t>(i)] >= 0 ? base + labels[static_cast<size_t>(i)] : -1;
            if (px.component >= 0) {
                component_sizes[static_cast<size_t>(px.component)]++;
            } else {
                ++total_neg;
            }
            pixels.push_back(px);
        }
    }
    if (component_sizes.empty()) throw UndefinedMetricError("aupro: no anomalous regions in ground truth");
    if (total_neg == 0) throw UndefinedMetricError("aupro: no normal pixels to measure false positives");

    std::sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) { return a.score > b.score; });

    // Threshold sweep over distinct scores; each point is (fpr, mean PRO).
    std::vector<std::pair<double, double>> curve;
    curve.emplace_back(0.0, 0.0);
    std::vector<int64_t> hit(component_sizes.size(), 0);
    int64_t fp = 0;
    size_t i = 0;
    const double inv_comp = 1.0 / static_cast<double>(component_sizes.size());
    while (i < pixels.size()) {
        size_t j = i;
        while (j < pixels.size() && pixels[j].score == pixels[i].score) ++j;
        for (size_t k = i; k < j; ++k) {
            if (pixels[k].component >= 0) {
                hit[static_cast<size_t>(pixels[k].component)]++;
            } else {
                ++fp;
            }
        }
        double pro = 0.0;
        for (size_t cidx = 0; cidx < hit.size(); ++cidx) {
            pro += static_cast<double>(hit[cidx]) / static_cast<double>(component_sizes[cidx]);
        }
        pro *= inv_comp;
        curve.emplace_back(static_cast<double>(fp) / static_cast<double>(total_neg), pro);
        i = j;
    }

    // Trapezoid area over fpr in [0, fpr_limit], linear cut at the limit.
    double area = 0.0;
    for (size_t k = 1; k < curve.size(); ++k) {
        double x0 = curve[k - 1].first, y0 = curve[k - 1].second;
        double x1 = curve[k].first, y1 = curve[k].second;
        if (x0 >= fpr_limit) break;
        if (x1 > fpr_limit) {
            const double t = (fpr_limit - x0) / (x1 - x0);
            y1 = y0 + t * (y1 - y0);
            x1 = fpr_limit;
        }
        area += 0.5 * (y0 + y1) * (x1 - x0);
    }
    return area / fpr_limit;
}

double MetricReport::mad() const {
    const double vals[] = {i_auroc, i_ap, i_f1max, p_auroc, p_ap, p_f1max, aupro};
    double s = 0.0;
    int n = 0;
    for (double v : vals) {
        if (!std::isnan(v)) {
            s += v;
            ++n;
        }
    }
    return n > 0 ? s / n : std::numeric_limits<double>::quiet_NaN();
}

std::string MetricReport::to_key_value(const std::string& prefix) const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    auto emit = [&](const char* key, double v) {
        os << prefix << key << "=";
        if (std::isnan(v)) {
            os << "nan";
        } else {
            os << v;
        }
        os << "\n";
    };
    emit("i_auroc", i_auroc);
    emit("i_ap", i_ap);
    emit("i_f1max", i_f1max);
    emit("p_auroc", p_auroc);
    emit("p_ap", p_ap);
    emit("p_f1max", p_f1max);
    emit("aupro", aupro);
    emit("mad", mad());
    os << prefix << "image_count=" << image_count << "\n";
    os << prefix << "pixel_count=" << pixel_count << "\n";
    return os.str();
}

} // namespace inpad
