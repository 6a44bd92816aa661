#pragma once

// Resampling and the two-stage training augmentation.
//
// Images here are single [C, H, W] tensors. Training resizes with a Lanczos-3
// filter (widened when downsampling), evaluation with bilinear
// interpolation.

#include "ssdd/config.hpp"
#include "ssdd/rng.hpp"
#include "ssdd/tensor.hpp"

namespace ssdd {

template <class T>
Tensor<T> resize_lanczos(const Tensor<T>& image, int height, int width);
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& image, int height, int width);

// Scales so the shorter side equals `side`, keeping the aspect ratio.
template <class T>
Tensor<T> resize_short_side(const Tensor<T>& image, int side, bool lanczos = true);

template <class T>
Tensor<T> crop(const Tensor<T>& image, int top, int left, int height, int width);
template <class T>
Tensor<T> flip_horizontal(const Tensor<T>& image);

struct CropWindow {
    int top       = 0;
    int left      = 0;
    bool flipped  = false;
    int resized_h = 0;
    int resized_w = 0;
};

// Stage pretrain_multiscale: resize the short side to a random size in
// [resize_min, resize_max], then a random target_resolution crop and a coin
// flip. Stage finetune_fixed: resize the short side to target_resolution,
// then crop and flip. Throws if the input is smaller than the crop.
template <class T>
Tensor<T> multiscale_augment(const Tensor<T>& image, Rng& rng, const TrainSpec& spec, CropWindow* window = nullptr);

}  // namespace ssdd
