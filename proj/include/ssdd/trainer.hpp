#pragma once

// GAN-free training: flow matching plus perceptual, alignment and KL terms,
// AdamW with global-norm clipping, EMA shadows, and bit-exact checkpoints.

#include "ssdd/augment.hpp"
#include "ssdd/decoder.hpp"
#include "ssdd/encoder.hpp"
#include "ssdd/features.hpp"
#include "ssdd/io.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>

namespace ssdd {

struct LossBreakdown {
    double fm    = 0;
    double lpips = 0;
    double repa  = 0;
    double kl    = 0;
    double total = 0;
};

struct LossWeights {
    double lpips = 0.5;
    double repa  = 0.25;
    double kl    = 1e-6;
};

// total = fm + w.lpips * lpips + w.repa * repa + w.kl * kl, in double.
LossBreakdown compose_losses(double fm, double lpips, double repa, double kl, const LossWeights& w);
bool finite(const LossBreakdown& l);
std::string describe(const LossBreakdown& l);

template <class T>
struct EMAState {
    std::map<std::string, Tensor<T>> shadow;
    double decay    = 0.999;
    long start_step = 0;
};

template <class T>
EMAState<T> ema_init(const nn::ParamStore<T>& live, double decay, long start_step);
// shadow <- d shadow + (1 - d) live
template <class T>
void ema_update(EMAState<T>& state, const nn::ParamStore<T>& live);
// Copies live into the shadow before start_step, blends from then on.
template <class T>
void ema_track(EMAState<T>& state, const nn::ParamStore<T>& live, long step);
template <class T>
void ema_apply(const EMAState<T>& state, nn::ParamStore<T>& target);

// Encoder, decoder and alignment head sharing one seed. Weight names are
// prefixed encoder/, decoder/ and repa_head/.
struct Autoencoder {
    Encoder<float> encoder;
    Decoder<float> decoder;
    AlignmentHead<float> head;

    Autoencoder(const ModelSizeSpec& model, const EncoderSpec& enc, int resolution, std::uint64_t seed, int feature_dim);

    std::vector<nn::ParamStore<float>*> stores();
    std::vector<const nn::ParamStore<float>*> stores() const;
    WeightMap weights() const;
    // Every stored name must exist in the model with a matching shape;
    // missing names are an error unless allow_partial.
    void load(const WeightMap& weights, bool allow_partial = false);
    std::string hash() const;
};

// Copies encoder weights from an external archive into `encoder`. Names in
// the archive start with `source_prefix` in place of "encoder/"; every encoder
// parameter must be present with a matching shape. Other entries are ignored.
// Returns the number of tensors copied.
std::size_t import_encoder(Encoder<float>& encoder, const WeightMap& archive, const std::string& source_prefix = "encoder/");

// Draws one batch [B, 3, R, R] from [3, H, W] images: indices via a partial
// shuffle, then augmentation (or a plain resize to R when augment is off).
Tensor<float> draw_batch(const std::vector<Tensor<float>>& images, int batch_size, const TrainSpec& spec, Rng& rng);

class Trainer {
public:
    Trainer(Autoencoder& model, const FeatureExtractor<float>& extractor, const TrainSpec& spec);

    // One optimization step on a fresh batch drawn from `images`.
    LossBreakdown step(const std::vector<Tensor<float>>& images);
    // One optimization step on a given batch [B, 3, R, R].
    LossBreakdown train_step(const Tensor<float>& batch);
    // Loss components without touching weights or optimizer state; the
    // noise is drawn from `rng`.
    LossBreakdown evaluate(const Tensor<float>& batch, Rng& rng) const;

    long step_count() const { return step_; }
    const TrainSpec& spec() const { return spec_; }
    Rng& rng() { return rng_; }
    const EMAState<float>& ema(const std::string& store) const { return ema_.at(store); }
    double last_grad_norm() const { return last_grad_norm_; }

    // Writes weights.bin, ema.bin, optim.bin and state.json into dir.
    void save(const std::filesystem::path& dir) const;
    // Restores weights, EMA, optimizer moments, step and RNG state.
    void restore(const std::filesystem::path& dir);

private:
    struct Forward {
        ag::Var<float> fm, lpips, repa, kl;
    };
    Forward forward(const Tensor<float>& batch, Rng& rng, bool need_graph) const;
    nn::ParamStore<float>& store(const std::string& key);

    Autoencoder& model_;
    const FeatureExtractor<float>& extractor_;
    TrainSpec spec_;
    LossWeights weights_;
    Rng rng_;
    long step_ = 0;
    double last_grad_norm_ = 0;
    std::map<std::string, nn::AdamW<float>> optim_;
    std::map<std::string, EMAState<float>> ema_;
};

// Deepest extractor tap width, the REPA target dimension.
int repa_feature_dim(const FeatureExtractor<float>& extractor, int resolution);

}  // namespace ssdd
