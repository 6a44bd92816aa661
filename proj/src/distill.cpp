#include "ssdd/distill.hpp"

#include "ssdd/flow.hpp"
#include "ssdd/hash.hpp"

namespace ssdd {

namespace {

constexpr std::string_view kModule = "distill";

template <class T>
std::string tensor_hash(const Tensor<T>& t) {
    Fnv1a h;
    h.update(t.span());
    return h.hex();
}

}  // namespace

template <class T>
void DistillPair<T>::verify_teacher() const {
    require(teacher.params().hash() == teacher_hash, kModule, "teacher weights were modified during distillation");
}

template <class T>
DistillPair<T> make_distill_pair(Decoder<T>& student, int teacher_steps, double teacher_rho) {
    require(teacher_steps >= 1, kModule, "teacher needs at least one step");
    DistillPair<T> pair{student.clone(), &student, teacher_steps, teacher_rho, {}};
    pair.teacher.params().set_trainable(false);
    pair.teacher_hash = pair.teacher.params().hash();
    return pair;
}

template <class T>
Tensor<T> teacher_reconstruct(const DistillPair<T>& pair, const Tensor<T>& epsilon, const Tensor<T>& z) {
    return sample(pair.teacher, epsilon, z, pair.schedule());
}

template <class T>
DistillTerms<T> distill_losses(const ag::Var<T>& student_velocity, const Tensor<T>& x_ref, const Tensor<T>& x,
                               const Tensor<T>& epsilon, const FeatureExtractor<T>* extractor, LpipsTarget target) {
    require(student_velocity.shape() == epsilon.shape() && x_ref.shape() == epsilon.shape() && x.shape() == epsilon.shape(),
            kModule, "distillation tensors have mismatched shapes");
    DistillTerms<T> terms;
    terms.fm = fm_loss(student_velocity, x_ref, epsilon);
    if (extractor) {
        std::vector<T> ones(epsilon.dim(0), T(1));
        const auto x0 = one_step_prediction<T>(epsilon, ones, student_velocity);
        terms.lpips   = perceptual_loss(ag::constant(target == LpipsTarget::original ? x : x_ref), x0, *extractor);
    } else {
        terms.lpips = ag::constant(Tensor<T>({}, T(0)));
    }
    return terms;
}

Distiller::Distiller(Autoencoder& model, const FeatureExtractor<float>& extractor, const DistillSpec& spec,
                     const TrainSpec& base)
    : model_(model),
      extractor_(extractor),
      spec_(spec),
      base_(base),
      pair_(make_distill_pair(model.decoder, spec.teacher_steps, spec.teacher_rho)),
      rng_(Rng(base.seed).fork(0x6469)) {
    spec_.validate();
    model_.encoder.freeze();
    weights_ = {base_.lambda_lpips, base_.lambda_repa, 0.0};
    nn::AdamW<float>::Options o;
    o.lr           = spec_.learning_rate;
    o.weight_decay = base_.weight_decay;
    dec_opt_       = nn::AdamW<float>(o);
    head_opt_      = nn::AdamW<float>(o);
}

void Distiller::build_pool(const std::vector<Tensor<float>>& images) {
    constexpr int kChunk = 8;
    pool_.reserve(static_cast<std::size_t>(spec_.teacher_pool));
    for (int start = 0; start < spec_.teacher_pool; start += kChunk) {
        const int n      = std::min(kChunk, spec_.teacher_pool - start);
        const auto batch = draw_batch(images, n, base_, rng_);
        Tensor<float> z;
        {
            ag::NoGradGuard off;
            z = sample_latent(model_.encoder.encode(batch), rng_, model_.encoder.spec()).values.value();
        }
        const auto eps = randn<float>(batch.shape(), rng_);
        Tensor<float> consumed;
        const auto teacher_field = [&](const Tensor<float>& x_t, double t, const Tensor<float>& zz) {
            if (t == 1.0) consumed = x_t;
            return pair_.teacher.velocity(x_t, static_cast<float>(t), zz);
        };
        const auto x_ref = sample<float>(teacher_field, eps, z, pair_.schedule());
        require(consumed.size() == eps.size(), kModule, "teacher never evaluated at t = 1");
        for (int k = 0; k < n; ++k)
            pool_.push_back({batch.batch_slice(k, 1), z.batch_slice(k, 1), eps.batch_slice(k, 1), x_ref.batch_slice(k, 1),
                             tensor_hash(consumed.batch_slice(k, 1))});
    }
}

LossBreakdown Distiller::step(const std::vector<Tensor<float>>& images) {
    Tensor<float> batch, z, eps, x_ref;
    // Hashes of the states the teacher actually consumed at t = 1, compared
    // with the student's input below.
    std::vector<std::string> teacher_noise;
    if (spec_.teacher_pool > 0) {
        if (pool_.empty()) build_pool(images);
        std::vector<Tensor<float>> xs, zs, es, rs;
        for (int k = 0; k < spec_.batch_size; ++k) {
            const auto& e = pool_[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<int>(pool_.size()) - 1))];
            xs.push_back(e.x);
            zs.push_back(e.z);
            es.push_back(e.eps);
            rs.push_back(e.x_ref);
            teacher_noise.push_back(e.teacher_noise);
        }
        batch = stack_batch(xs);
        z     = stack_batch(zs);
        eps   = stack_batch(es);
        x_ref = stack_batch(rs);
    } else {
        batch = draw_batch(images, spec_.batch_size, base_, rng_);
        {
            ag::NoGradGuard off;
            z = sample_latent(model_.encoder.encode(batch), rng_, model_.encoder.spec()).values.value();
        }
        eps = randn<float>(batch.shape(), rng_);
        const auto teacher_field = [&](const Tensor<float>& x_t, double t, const Tensor<float>& zz) {
            if (t == 1.0)
                for (int k = 0; k < x_t.dim(0); ++k) teacher_noise.push_back(tensor_hash(x_t.batch_slice(k, 1)));
            return pair_.teacher.velocity(x_t, static_cast<float>(t), zz);
        };
        x_ref = sample<float>(teacher_field, eps, z, pair_.schedule());
    }
    const int r = batch.dim(2);

    for (auto* s : model_.stores()) s->zero_grad();
    const float t1[1] = {1.0f};
    const auto out    = model_.decoder.forward(eps, std::span<const float>(t1, 1), ag::constant(z));
    bool synced       = teacher_noise.size() == static_cast<std::size_t>(eps.dim(0));
    for (int k = 0; synced && k < eps.dim(0); ++k) synced = tensor_hash(eps.batch_slice(k, 1)) == teacher_noise[static_cast<std::size_t>(k)];
    require(synced, kModule, "teacher and student noise differ at step " + std::to_string(step_));
    ++sync_checks_;

    const bool want_lpips = weights_.lpips != 0.0;
    auto terms = distill_losses<float>(out.velocity, x_ref, batch, eps, want_lpips ? &extractor_ : nullptr, spec_.lpips_target);
    ag::Var<float> reference;
    {
        ag::NoGradGuard off;
        reference = extractor_.features(ag::constant(batch)).back();
    }
    auto repa = repa_loss(out.hidden_tokens, reference, model_.head, r / kPatchSize, r / kPatchSize);

    const auto l = compose_losses(terms.fm.item(), terms.lpips.item(), repa.item(), 0.0, weights_);
    if (!finite(l)) fail(kModule, "non-finite loss at step " + std::to_string(step_) + ": " + describe(l));
    auto total = terms.fm;
    if (want_lpips) total = ag::add(total, ag::scale(terms.lpips, static_cast<float>(weights_.lpips)));
    if (weights_.repa != 0.0) total = ag::add(total, ag::scale(repa, static_cast<float>(weights_.repa)));
    total.backward();
    nn::clip_grad_norm<float>({&model_.decoder.params(), &model_.head.params()}, base_.grad_clip);
    dec_opt_.step(model_.decoder.params());
    head_opt_.step(model_.head.params());
    ++step_;
    return l;
}

double Distiller::student_teacher_mse(const std::vector<Tensor<float>>& images, std::uint64_t noise_seed) const {
    require(!images.empty(), kModule, "empty held-out set");
    Rng rng(noise_seed);
    double total = 0;
    for (const auto& img : images) {
        const auto x = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
        Tensor<float> z;
        {
            ag::NoGradGuard off;
            z = model_.encoder.encode(x).mean.value();
        }
        const auto eps     = randn<float>(x.shape(), rng);
        const auto teacher = teacher_reconstruct(pair_, eps, z);
        const auto student = single_step(model_.decoder, eps, z);
        double s           = 0;
        for (std::size_t i = 0; i < teacher.size(); ++i) s += static_cast<double>(teacher[i] - student[i]) * (teacher[i] - student[i]);
        total += s / static_cast<double>(teacher.size());
    }
    return total / static_cast<double>(images.size());
}

void Distiller::save(const std::filesystem::path& dir) const {
    pair_.verify_teacher();
    std::filesystem::create_directories(dir);
    save_archive(dir / "weights.bin", model_.weights());
    nlohmann::json state = {{"step", step_},
                            {"rng", rng_.state()},
                            {"teacher_hash", pair_.teacher_hash},
                            {"teacher_steps", pair_.teacher_steps},
                            {"teacher_rho", pair_.teacher_rho},
                            {"noise_sync_checks", sync_checks_},
                            {"teacher_pool", pool_.size()},
                            {"weights_hash", model_.hash()}};
    write_json(dir / "state.json", state);
}

template struct DistillPair<float>;
template struct DistillPair<double>;
template DistillPair<float> make_distill_pair(Decoder<float>&, int, double);
template DistillPair<double> make_distill_pair(Decoder<double>&, int, double);
template Tensor<float> teacher_reconstruct(const DistillPair<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> teacher_reconstruct(const DistillPair<double>&, const Tensor<double>&, const Tensor<double>&);
template DistillTerms<float> distill_losses(const ag::Var<float>&, const Tensor<float>&, const Tensor<float>&,
                                            const Tensor<float>&, const FeatureExtractor<float>*, LpipsTarget);
template DistillTerms<double> distill_losses(const ag::Var<double>&, const Tensor<double>&, const Tensor<double>&,
                                             const Tensor<double>&, const FeatureExtractor<double>*, LpipsTarget);

}  // namespace ssdd
