// SPDX-License-Identifier: Apache-2.0
#include "inpad/synthesis.hpp"

#include <algorithm>
#include <cmath>

namespace inpad {

namespace {

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double lerp(double t, double a, double b) { return a + t * (b - a); }

} // namespace

NoiseField perlin_noise(int64_t height, int64_t width, int64_t scale, uint64_t seed) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("perlin_noise: non-positive dimensions");
    if (scale <= 0 || height % scale != 0 || width % scale != 0) {
        throw std::invalid_argument("perlin_noise: scale must divide both dimensions");
    }
    const int64_t cell_h = height / scale;
    const int64_t cell_w = width / scale;

    // Unit gradients on the (scale+1)^2 lattice.
    Rng rng(seed);
    std::vector<double> gx(static_cast<size_t>((scale + 1) * (scale + 1)));
    std::vector<double> gy(gx.size());
    for (size_t i = 0; i < gx.size(); ++i) {
        const double angle = rng.uniform(0.0, 2.0 * M_PI);
        gx[i] = std::cos(angle);
        gy[i] = std::sin(angle);
    }
    auto grad = [&](int64_t ly, int64_t lx) -> std::pair<double, double> {
        const size_t idx = static_cast<size_t>(ly * (scale + 1) + lx);
        return {gx[idx], gy[idx]};
    };

    NoiseField field;
    field.scale = scale;
    field.seed = seed;
    field.values = Tensor(height, width);
    // sqrt(2) rescale maps the theoretical 2-D range onto [-1, 1].
    const double norm = M_SQRT2;
    for (int64_t y = 0; y < height; ++y) {
        const int64_t ly = y / cell_h;
        const double fy = static_cast<double>(y % cell_h) / static_cast<double>(cell_h);
        for (int64_t x = 0; x < width; ++x) {
            const int64_t lx = x / cell_w;
            const double fx = static_cast<double>(x % cell_w) / static_cast<double>(cell_w);
            const auto [g00x, g00y] = grad(ly, lx);
            const auto [g01x, g01y] = grad(ly, lx + 1);
            const auto [g10x, g10y] = grad(ly + 1, lx);
            const auto [g11x, g11y] = grad(ly + 1, lx + 1);
            const double n00 = g00x * fx + g00y * fy;
            const double n01 = g01x * (fx - 1.0) + g01y * fy;
            const double n10 = g10x * fx + g10y * (fy - 1.0);
            const double n11 = g11x * (fx - 1.0) + g11y * (fy - 1.0);
            const double u = fade(fx);
            const double v = fade(fy);
            field.values(y, x) = norm * lerp(v, lerp(u, n00, n01), lerp(u, n10, n11));
        }
    }
    return field;
}

Mask threshold_mask(const NoiseField& noise, double threshold) {
    Mask m(noise.values.rows(), noise.values.cols());
    for (int64_t i = 0; i < noise.values.size(); ++i) {
        m.values[static_cast<size_t>(i)] = noise.values[i] > threshold ? 1 : 0;
    }
    return m;
}

bool mask_area_ok(const Mask& mask, const MaskBounds& bounds) {
    const double frac = static_cast<double>(mask.area()) / static_cast<double>(mask.height * mask.width);
    return frac >= bounds.min_area_fraction && frac <= bounds.max_area_fraction;
}

Mask sample_perlin_mask(int64_t height, int64_t width, const PerlinMaskConfig& cfg, Rng& rng) {
    std::vector<int64_t> usable;
    for (int64_t s : cfg.scales) {
        if (s > 0 && height % s == 0 && width % s == 0) usable.push_back(s);
    }
    if (usable.empty()) throw std::invalid_argument("sample_perlin_mask: no lattice scale divides the image");
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        const int64_t scale = usable[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(usable.size()) - 1))];
        const uint64_t seed = rng.next_u64();
        Mask m = threshold_mask(perlin_noise(height, width, scale, seed), cfg.threshold);
        if (mask_area_ok(m, cfg.bounds)) return m;
    }
    throw ResampleBudgetError("sample_perlin_mask: no mask within area bounds after " +
                              std::to_string(cfg.max_attempts) + " attempts");
}

PseudoAnomalySample synthesize_pseudo_anomaly(const ImageTensor& normal, const ImageTensor& texture,
                                              const Mask& mask, double beta) {
    if (normal.height != texture.height || normal.width != texture.width || normal.height != mask.height ||
        normal.width != mask.width) {
        throw std::invalid_argument("synthesize_pseudo_anomaly: shape mismatch");
    }
    if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("synthesize_pseudo_anomaly: beta outside [0,1]");
    PseudoAnomalySample s;
    s.image = normal;
    s.mask = mask;
    s.provenance = SynthesisProvenance::Perlin;
    s.beta = beta;
    for (int64_t y = 0; y < normal.height; ++y) {
        for (int64_t x = 0; x < normal.width; ++x) {
            if (!mask.at(y, x)) continue;
            for (int64_t c = 0; c < 3; ++c) {
                s.image.at(y, x, c) = (1.0 - beta) * normal.at(y, x, c) + beta * texture.at(y, x, c);
            }
        }
    }
    return s;
}

namespace {

struct Patch {
    int64_t h = 0, w = 0;
    std::vector<double> rgb;   // h*w*3
    std::vector<uint8_t> mask; // h*w
};

Patch crop_bbox(const ImageTensor& img, const Mask& mask) {
    int64_t y0 = mask.height, y1 = -1, x0 = mask.width, x1 = -1;
    for (int64_t y = 0; y < mask.height; ++y) {
        for (int64_t x = 0; x < mask.width; ++x) {
            if (mask.at(y, x)) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
        }
    }
    if (y1 < 0) throw std::invalid_argument("embed_real_anomaly: donor mask is empty");
    Patch p;
    p.h = y1 - y0 + 1;
    p.w = x1 - x0 + 1;
    p.rgb.resize(static_cast<size_t>(p.h * p.w * 3));
    p.mask.resize(static_cast<size_t>(p.h * p.w));
    for (int64_t y = 0; y < p.h; ++y) {
        for (int64_t x = 0; x < p.w; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                p.rgb[static_cast<size_t>((y * p.w + x) * 3 + c)] = img.at(y0 + y, x0 + x, c);
            }
            p.mask[static_cast<size_t>(y * p.w + x)] = mask.at(y0 + y, x0 + x);
        }
    }
    return p;
}

Patch rotate90(const Patch& p, int quarter_turns) {
    Patch out = p;
    for (int t = 0; t < (quarter_turns % 4 + 4) % 4; ++t) {
        Patch r;
        r.h = out.w;
        r.w = out.h;
        r.rgb.resize(out.rgb.size());
        r.mask.resize(out.mask.size());
        for (int64_t y = 0; y < out.h; ++y) {
            for (int64_t x = 0; x < out.w; ++x) {
                // (y, x) -> (x, h-1-y)
                const int64_t ny = x, nx = out.h - 1 - y;
                for (int64_t c = 0; c < 3; ++c) {
                    r.rgb[static_cast<size_t>((ny * r.w + nx) * 3 + c)] =
                        out.rgb[static_cast<size_t>((y * out.w + x) * 3 + c)];
                }
                r.mask[static_cast<size_t>(ny * r.w + nx)] = out.mask[static_cast<size_t>(y * out.w + x)];
            }
        }
        out = std::move(r);
    }
    return out;
}

Patch flip(const Patch& p, bool horizontal, bool vertical) {
    Patch out = p;
    for (int64_t y = 0; y < p.h; ++y) {
        for (int64_t x = 0; x < p.w; ++x) {
            const int64_t sy = vertical ? p.h - 1 - y : y;
            const int64_t sx = horizontal ? p.w - 1 - x : x;
            for (int64_t c = 0; c < 3; ++c) {
                out.rgb[static_cast<size_t>((y * p.w + x) * 3 + c)] =
                    p.rgb[static_cast<size_t>((sy * p.w + sx) * 3 + c)];
            }
            out.mask[static_cast<size_t>(y * p.w + x)] = p.mask[static_cast<size_t>(sy * p.w + sx)];
        }
    }
    return out;
}

Patch rescale_nn(const Patch& p, double factor) {
    const int64_t nh = std::max<int64_t>(1, static_cast<int64_t>(std::llround(static_cast<double>(p.h) * factor)));
    const int64_t nw = std::max<int64_t>(1, static_cast<int64_t>(std::llround(static_cast<double>(p.w) * factor)));
    if (nh == p.h && nw == p.w) return p;
    Patch out;
    out.h = nh;
    out.w = nw;
    out.rgb.resize(static_cast<size_t>(nh * nw * 3));
    out.mask.resize(static_cast<size_t>(nh * nw));
    for (int64_t y = 0; y < nh; ++y) {
        const int64_t sy = std::min(p.h - 1, static_cast<int64_t>(static_cast<double>(y) * p.h / nh));
        for (int64_t x = 0; x < nw; ++x) {
            const int64_t sx = std::min(p.w - 1, static_cast<int64_t>(static_cast<double>(x) * p.w / nw));
            for (int64_t c = 0; c < 3; ++c) {
                out.rgb[static_cast<size_t>((y * nw + x) * 3 + c)] =
                    p.rgb[static_cast<size_t>((sy * p.w + sx) * 3 + c)];
            }
            out.mask[static_cast<size_t>(y * nw + x)] = p.mask[static_cast<size_t>(sy * p.w + sx)];
        }
    }
    return out;
}

} // namespace

PseudoAnomalySample embed_real_anomaly(const ImageTensor& normal, const ImageTensor& donor_image,
                                       const Mask& donor_mask, uint64_t transform_seed, const EmbedConfig& cfg) {
    if (donor_image.height != donor_mask.height || donor_image.width != donor_mask.width) {
        throw std::invalid_argument("embed_real_anomaly: donor image/mask mismatch");
    }
    if (donor_mask.empty_mask()) throw std::invalid_argument("embed_real_anomaly: donor mask is empty");

    const Patch base = crop_bbox(donor_image, donor_mask);
    Rng rng(transform_seed);
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        Patch p = base;
        if (!cfg.identity_transform) {
            p = rotate90(p, static_cast<int>(rng.uniform_int(0, 3)));
            p = flip(p, rng.uniform() < 0.5, rng.uniform() < 0.5);
            p = rescale_nn(p, rng.uniform(cfg.scale_min, cfg.scale_max));
        }
        if (p.h > normal.height || p.w > normal.width) continue; // too big after scaling, retry
        int64_t py, px;
        if (cfg.use_fixed_position) {
            py = cfg.fixed_y;
            px = cfg.fixed_x;
            if (py < 0 || px < 0 || py + p.h > normal.height || px + p.w > normal.width) {
                throw std::invalid_argument("embed_real_anomaly: fixed position out of bounds");
            }
        } else {
            py = rng.uniform_int(0, normal.height - p.h);
            px = rng.uniform_int(0, normal.width - p.w);
        }

        PseudoAnomalySample s;
        s.image = normal;
        s.mask = Mask(normal.height, normal.width);
        s.provenance = SynthesisProvenance::RealEmbed;
        s.beta = 1.0;
        for (int64_t y = 0; y < p.h; ++y) {
            for (int64_t x = 0; x < p.w; ++x) {
                if (!p.mask[static_cast<size_t>(y * p.w + x)]) continue;
                for (int64_t c = 0; c < 3; ++c) {
                    s.image.at(py + y, px + x, c) = p.rgb[static_cast<size_t>((y * p.w + x) * 3 + c)];
                }
                s.mask.at(py + y, px + x) = 1;
            }
        }
        return s;
    }
    throw ResampleBudgetError("embed_real_anomaly: could not place donor region after " +
                              std::to_string(cfg.max_attempts) + " attempts");
}

Mask changed_pixels(const ImageTensor& a, const ImageTensor& b) {
    if (a.height != b.height || a.width != b.width) throw std::invalid_argument("changed_pixels: shape mismatch");
    Mask m(a.height, a.width);
    for (int64_t y = 0; y < a.height; ++y) {
        for (int64_t x = 0; x < a.width; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                if (a.at(y, x, c) != b.at(y, x, c)) {
                    m.at(y, x) = 1;
                    break;
                }
            }
        }
    }
    return m;
}

bool mask_subset(const Mask& inner, const Mask& outer) {
    if (inner.height != outer.height || inner.width != outer.width) return false;
    for (size_t i = 0; i < inner.values.size(); ++i) {
        if (inner.values[i] && !outer.values[i]) return false;
    }
    return true;
}

} // namespace inpad
