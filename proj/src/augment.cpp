#include "ssdd/augment.hpp"

#include <cmath>
#include <numbers>

namespace ssdd {

namespace {

constexpr std::string_view kModule = "augment";

double sinc(double x) {
    if (x == 0.0) return 1.0;
    const double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

double lanczos3(double x) {
    return std::abs(x) < 3.0 ? sinc(x) * sinc(x / 3.0) : 0.0;
}

struct Tap {
    int index;
    double weight;
};

// Per-output-sample taps of a separable filter with support `radius`
// (in input pixels at scale 1), stretched by 1/scale when shrinking.
std::vector<std::vector<Tap>> filter_taps(int in, int out, double radius, double (*kernel)(double)) {
    const double scale   = static_cast<double>(out) / in;
    const double stretch = scale < 1.0 ? 1.0 / scale : 1.0;
    const double support = radius * stretch;
    std::vector<std::vector<Tap>> taps(out);
    for (int o = 0; o < out; ++o) {
        const double center = (o + 0.5) / scale - 0.5;
        const int lo        = static_cast<int>(std::floor(center - support));
        const int hi        = static_cast<int>(std::ceil(center + support));
        double total        = 0;
        for (int i = lo; i <= hi; ++i) {
            const double w = kernel((i - center) / stretch);
            if (w == 0.0) continue;
            taps[o].push_back({std::clamp(i, 0, in - 1), w});
            total += w;
        }
        for (auto& t : taps[o]) t.weight /= total;
    }
    return taps;
}

double triangle(double x) {
    return std::max(0.0, 1.0 - std::abs(x));
}

template <class T>
Tensor<T> separable_resize(const Tensor<T>& image, int height, int width, double radius, double (*kernel)(double),
                           bool stretch_when_shrinking) {
    require(image.rank() == 3, kModule, "expected a [C, H, W] image, got " + shape_str(image.shape()));
    require(height > 0 && width > 0, kModule, "resize target must be positive");
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h == height && w == width) return image;

    auto taps_for = [&](int in, int out) {
        if (stretch_when_shrinking || out >= in) return filter_taps(in, out, radius, kernel);
        // Plain bilinear sampling without area averaging.
        std::vector<std::vector<Tap>> taps(out);
        const double scale = static_cast<double>(out) / in;
        for (int o = 0; o < out; ++o) {
            const double center = std::clamp((o + 0.5) / scale - 0.5, 0.0, static_cast<double>(in - 1));
            const int i0        = static_cast<int>(std::floor(center));
            const int i1        = std::min(i0 + 1, in - 1);
            const double frac   = center - i0;
            taps[o]             = {{i0, 1.0 - frac}, {i1, frac}};
        }
        return taps;
    };
    const auto ty = taps_for(h, height);
    const auto tx = taps_for(w, width);

    std::vector<double> rows(static_cast<std::size_t>(c) * h * width);
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            const T* src = image.data() + (static_cast<std::size_t>(ch) * h + y) * w;
            double* dst  = rows.data() + (static_cast<std::size_t>(ch) * h + y) * width;
            for (int x = 0; x < width; ++x) {
                double s = 0;
                for (const auto& t : tx[x]) s += t.weight * src[t.index];
                dst[x] = s;
            }
        }
    }
    Tensor<T> out({c, height, width});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                double s = 0;
                for (const auto& t : ty[y]) s += t.weight * rows[(static_cast<std::size_t>(ch) * h + t.index) * width + x];
                out[(static_cast<std::size_t>(ch) * height + y) * width + x] = static_cast<T>(s);
            }
        }
    }
    return out;
}

}  // namespace

template <class T>
Tensor<T> resize_lanczos(const Tensor<T>& image, int height, int width) {
    return separable_resize(image, height, width, 3.0, lanczos3, true);
}

template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& image, int height, int width) {
    return separable_resize(image, height, width, 1.0, triangle, false);
}

template <class T>
Tensor<T> resize_short_side(const Tensor<T>& image, int side, bool lanczos) {
    require(image.rank() == 3, kModule, "expected a [C, H, W] image, got " + shape_str(image.shape()));
    const int h = image.dim(1), w = image.dim(2);
    int oh = side, ow = side;
    if (h < w) {
        ow = static_cast<int>(std::lround(static_cast<double>(w) * side / h));
    } else if (w < h) {
        oh = static_cast<int>(std::lround(static_cast<double>(h) * side / w));
    }
    return lanczos ? resize_lanczos(image, oh, ow) : resize_bilinear(image, oh, ow);
}

template <class T>
Tensor<T> crop(const Tensor<T>& image, int top, int left, int height, int width) {
    require(image.rank() == 3, kModule, "expected a [C, H, W] image, got " + shape_str(image.shape()));
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    require(top >= 0 && left >= 0 && top + height <= h && left + width <= w, kModule,
            "crop " + std::to_string(height) + "x" + std::to_string(width) + " at (" + std::to_string(top) + "," +
                std::to_string(left) + ") exceeds image " + shape_str(image.shape()));
    Tensor<T> out({c, height, width});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < height; ++y) {
            const T* src = image.data() + (static_cast<std::size_t>(ch) * h + top + y) * w + left;
            std::copy(src, src + width, out.data() + (static_cast<std::size_t>(ch) * height + y) * width);
        }
    }
    return out;
}

template <class T>
Tensor<T> flip_horizontal(const Tensor<T>& image) {
    require(image.rank() == 3, kModule, "expected a [C, H, W] image, got " + shape_str(image.shape()));
    Tensor<T> out    = image;
    const int w      = image.dim(2);
    const auto lines = image.size() / static_cast<std::size_t>(w);
    for (std::size_t r = 0; r < lines; ++r) std::reverse(out.data() + r * w, out.data() + (r + 1) * w);
    return out;
}

template <class T>
Tensor<T> multiscale_augment(const Tensor<T>& image, Rng& rng, const TrainSpec& spec, CropWindow* window) {
    require(image.rank() == 3, kModule, "expected a [C, H, W] image, got " + shape_str(image.shape()));
    const int target = spec.target_resolution;
    require(std::min(image.dim(1), image.dim(2)) >= target, kModule,
            "image " + shape_str(image.shape()) + " is smaller than the " + std::to_string(target) + " crop");
    const int side = spec.stage == Stage::pretrain_multiscale
                         ? rng.uniform_int(std::max(spec.resize_min, target), std::max(spec.resize_max, target))
                         : target;
    auto resized = resize_short_side(image, side, true);
    CropWindow win;
    win.resized_h = resized.dim(1);
    win.resized_w = resized.dim(2);
    win.top       = rng.uniform_int(0, win.resized_h - target);
    win.left      = rng.uniform_int(0, win.resized_w - target);
    win.flipped   = rng.coin();
    auto out      = crop(resized, win.top, win.left, target, target);
    if (win.flipped) out = flip_horizontal(out);
    if (window) *window = win;
    return out;
}

#define SSDD_INSTANTIATE_AUGMENT(T)                                                              \
    template Tensor<T> resize_lanczos(const Tensor<T>&, int, int);                               \
    template Tensor<T> resize_bilinear(const Tensor<T>&, int, int);                              \
    template Tensor<T> resize_short_side(const Tensor<T>&, int, bool);                           \
    template Tensor<T> crop(const Tensor<T>&, int, int, int, int);                               \
    template Tensor<T> flip_horizontal(const Tensor<T>&);                                        \
    template Tensor<T> multiscale_augment(const Tensor<T>&, Rng&, const TrainSpec&, CropWindow*);

SSDD_INSTANTIATE_AUGMENT(float)
SSDD_INSTANTIATE_AUGMENT(double)

}  // namespace ssdd
