#include "sspnet/localization.hpp"

#include <algorithm>
#include <cmath>

#include "sspnet/image.hpp"

namespace sspnet::loc {

namespace {

void check_cam_shapes(const Tensor& a, const Tensor& g) {
    if (a.rank() != 3 || !a.same_shape(g))
        throw ShapeError("gradcam: activations and gradients must both be (C,h,w)");
}

}  // namespace

Tensor gradcam_pixel_raw(const Tensor& activations, const Tensor& gradients) {
    check_cam_shapes(activations, gradients);
    const int c = activations.dim(0), h = activations.dim(1), w = activations.dim(2);
    Tensor out({h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int k = 0; k < c; ++k) acc += gradients.at(k, i, j) * activations.at(k, i, j);
            out.at(i, j) = acc > 0.0 ? acc : 0.0;
        }
    return out;
}

Tensor gradcam_channel_raw(const Tensor& activations, const Tensor& gradients) {
    check_cam_shapes(activations, gradients);
    const int c = activations.dim(0), h = activations.dim(1), w = activations.dim(2);
    Tensor out({h, w});
    for (int k = 0; k < c; ++k) {
        double alpha = 0.0;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) alpha += gradients.at(k, i, j);
        alpha /= static_cast<double>(h) * w;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) out.at(i, j) += alpha * activations.at(k, i, j);
    }
    for (int64_t i = 0; i < out.numel(); ++i)
        if (out[i] < 0.0) out[i] = 0.0;
    return out;
}

Tensor minmax_normalize(const Tensor& map) {
    Tensor out = map;
    double lo = map[0], hi = map[0];
    for (int64_t i = 0; i < map.numel(); ++i) {
        lo = std::min(lo, map[i]);
        hi = std::max(hi, map[i]);
    }
    if (hi > lo) {
        const double inv = 1.0 / (hi - lo);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = (out[i] - lo) * inv;
    } else if (hi > 0.0) {
        out.fill(1.0);
    } else {
        out.fill(0.0);
    }
    return out;
}

AttributeHeatmap gradcam_p(const CamSource& source, const Sample& sample, int attribute,
                           int out_height, int out_width) {
    const auto data = source.evaluate(sample, {attribute});
    AttributeHeatmap hm;
    hm.attribute = attribute;
    hm.map = minmax_normalize(gradcam_pixel_raw(data[0].activations, data[0].gradients));
    const int h = hm.map.dim(0), w = hm.map.dim(1);
    std::vector<double> plane(hm.map.data(), hm.map.data() + hm.map.numel());
    auto up = resize_bilinear_plane(plane, h, w, out_height, out_width);
    hm.upsampled = Tensor({out_height, out_width}, std::move(up));
    return hm;
}

BinaryMask binarize(const Tensor& normalized_map, double tau) {
    if (normalized_map.rank() != 2) throw ShapeError("binarize: (h,w) heatmap required");
    for (int64_t i = 0; i < normalized_map.numel(); ++i)
        if (normalized_map[i] < 0.0 || normalized_map[i] > 1.0)
            throw ValidationError("binarize: heatmap must be normalized to [0,1]");
    BinaryMask m;
    m.height = normalized_map.dim(0);
    m.width = normalized_map.dim(1);
    m.tau = tau;
    m.mask.resize(static_cast<size_t>(m.height) * m.width);
    for (int64_t i = 0; i < normalized_map.numel(); ++i)
        m.mask[static_cast<size_t>(i)] = normalized_map[i] >= tau ? 1 : 0;
    return m;
}

std::optional<Box> external_rect(const BinaryMask& mask) {
    int y_min = mask.height, y_max = -1, x_min = mask.width, x_max = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x)) {
                y_min = std::min(y_min, y);
                y_max = std::max(y_max, y);
                x_min = std::min(x_min, x);
                x_max = std::max(x_max, x);
            }
    if (y_max < 0) return std::nullopt;
    return Box{static_cast<double>(x_min), static_cast<double>(y_min),
               static_cast<double>(x_max + 1), static_cast<double>(y_max + 1)};
}

std::map<int, LocalizationResult> localize(const CamSource& source, const Sample& sample,
                                           const std::vector<int>& attributes, double tau,
                                           int out_height, int out_width) {
    const auto data = source.evaluate(sample, attributes);
    std::map<int, LocalizationResult> out;
    for (size_t i = 0; i < attributes.size(); ++i) {
        const auto& d = data[i];
        Tensor norm = minmax_normalize(gradcam_pixel_raw(d.activations, d.gradients));
        std::vector<double> plane(norm.data(), norm.data() + norm.numel());
        auto up = resize_bilinear_plane(plane, norm.dim(0), norm.dim(1), out_height, out_width);
        Tensor up_t({out_height, out_width}, std::move(up));
        // Resampling can overshoot the unit interval by rounding; clamp.
        for (int64_t k = 0; k < up_t.numel(); ++k) up_t[k] = std::clamp(up_t[k], 0.0, 1.0);
        LocalizationResult res;
        res.box = external_rect(binarize(up_t, tau));
        const double a = d.logit;
        res.confidence = a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
        out[attributes[i]] = res;
    }
    return out;
}

}  // namespace sspnet::loc
