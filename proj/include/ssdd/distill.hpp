#pragma once

// Single-step distillation. A frozen copy of the decoder (the teacher) is
// sampled with a few Euler steps from eps; the student is trained at t = 1 to
// reach the teacher's reconstruction in one evaluation, from the same eps and
// z.

#include "ssdd/sampler.hpp"
#include "ssdd/trainer.hpp"

namespace ssdd {

template <class T>
struct DistillPair {
    Decoder<T> teacher;
    Decoder<T>* student = nullptr;
    int teacher_steps   = 7;
    double teacher_rho  = 2.0;
    std::string teacher_hash;  // taken at construction

    SampleSchedule schedule() const { return make_schedule(teacher_steps, teacher_rho); }
    // Throws if the teacher weights changed since construction.
    void verify_teacher() const;
};

// The teacher starts as an exact copy of `student` and is frozen.
template <class T>
DistillPair<T> make_distill_pair(Decoder<T>& student, int teacher_steps, double teacher_rho);

template <class T>
Tensor<T> teacher_reconstruct(const DistillPair<T>& pair, const Tensor<T>& epsilon, const Tensor<T>& z);

template <class T>
struct DistillTerms {
    ag::Var<T> fm;     // mean((x_ref - eps - v)^2)
    ag::Var<T> lpips;  // perceptual(target, eps + v), target = x or x_ref
};

// student_velocity is D(eps | 1, z). Pass extractor = nullptr to skip the
// perceptual term (it is then a zero constant).
template <class T>
DistillTerms<T> distill_losses(const ag::Var<T>& student_velocity, const Tensor<T>& x_ref, const Tensor<T>& x,
                               const Tensor<T>& epsilon, const FeatureExtractor<T>* extractor, LpipsTarget target);

class Distiller {
public:
    // The student is model.decoder; the encoder must already be frozen or is
    // frozen here. `base` provides loss weights, weight decay, clipping,
    // augmentation and the seed.
    Distiller(Autoencoder& model, const FeatureExtractor<float>& extractor, const DistillSpec& spec, const TrainSpec& base);

    LossBreakdown step(const std::vector<Tensor<float>>& images);

    // Mean squared distance between the student's single-step output and the
    // teacher's multi-step output on `images` ([3, R, R] each), eps drawn
    // from noise_seed, z = posterior mean.
    double student_teacher_mse(const std::vector<Tensor<float>>& images, std::uint64_t noise_seed) const;

    const DistillPair<float>& pair() const { return pair_; }
    long step_count() const { return step_; }
    long sync_checks() const { return sync_checks_; }
    std::size_t pool_size() const { return pool_.size(); }

    void save(const std::filesystem::path& dir) const;

private:
    struct PoolEntry {
        Tensor<float> x, z, eps, x_ref;
        std::string teacher_noise;
    };
    void build_pool(const std::vector<Tensor<float>>& images);

    Autoencoder& model_;
    const FeatureExtractor<float>& extractor_;
    DistillSpec spec_;
    TrainSpec base_;
    LossWeights weights_;
    DistillPair<float> pair_;
    Rng rng_;
    nn::AdamW<float> dec_opt_, head_opt_;
    long step_        = 0;
    long sync_checks_ = 0;
    std::vector<PoolEntry> pool_;
};

}  // namespace ssdd
