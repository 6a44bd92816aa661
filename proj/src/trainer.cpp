#include "ssdd/trainer.hpp"

#include "ssdd/flow.hpp"
#include "ssdd/hash.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace ssdd {

namespace {

constexpr std::string_view kModule = "train";

const std::array<const char*, 3> kStoreKeys = {"encoder", "decoder", "repa_head"};

}  // namespace

LossBreakdown compose_losses(double fm, double lpips, double repa, double kl, const LossWeights& w) {
    LossBreakdown l{fm, lpips, repa, kl, 0.0};
    l.total = fm + w.lpips * lpips + w.repa * repa + w.kl * kl;
    return l;
}

bool finite(const LossBreakdown& l) {
    return std::isfinite(l.fm) && std::isfinite(l.lpips) && std::isfinite(l.repa) && std::isfinite(l.kl) &&
           std::isfinite(l.total);
}

std::string describe(const LossBreakdown& l) {
    std::ostringstream os;
    os << "fm=" << l.fm << " lpips=" << l.lpips << " repa=" << l.repa << " kl=" << l.kl << " total=" << l.total;
    return os.str();
}

template <class T>
EMAState<T> ema_init(const nn::ParamStore<T>& live, double decay, long start_step) {
    require(decay >= 0.0 && decay <= 1.0, kModule, "EMA decay must lie in [0, 1]");
    EMAState<T> s;
    s.decay      = decay;
    s.start_step = start_step;
    for (const auto& [name, v] : live.entries()) s.shadow.emplace(name, v.value());
    return s;
}

template <class T>
void ema_update(EMAState<T>& state, const nn::ParamStore<T>& live) {
    require(state.shadow.size() == live.entries().size(), kModule, "EMA layout does not match the live weights");
    const T d = static_cast<T>(state.decay);
    for (const auto& [name, v] : live.entries()) {
        auto it = state.shadow.find(name);
        require(it != state.shadow.end() && it->second.shape() == v.shape(), kModule, "EMA layout mismatch at " + name);
        auto& s       = it->second;
        const auto& w = v.value();
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = d * s[i] + (T(1) - d) * w[i];
    }
}

template <class T>
void ema_track(EMAState<T>& state, const nn::ParamStore<T>& live, long step) {
    if (step < state.start_step) {
        for (const auto& [name, v] : live.entries()) state.shadow[name] = v.value();
    } else {
        ema_update(state, live);
    }
}

template <class T>
void ema_apply(const EMAState<T>& state, nn::ParamStore<T>& target) {
    for (const auto& [name, value] : state.shadow) target.load(name, value);
}

template EMAState<float> ema_init(const nn::ParamStore<float>&, double, long);
template EMAState<double> ema_init(const nn::ParamStore<double>&, double, long);
template void ema_update(EMAState<float>&, const nn::ParamStore<float>&);
template void ema_update(EMAState<double>&, const nn::ParamStore<double>&);
template void ema_track(EMAState<float>&, const nn::ParamStore<float>&, long);
template void ema_track(EMAState<double>&, const nn::ParamStore<double>&, long);
template void ema_apply(const EMAState<float>&, nn::ParamStore<float>&);
template void ema_apply(const EMAState<double>&, nn::ParamStore<double>&);

Autoencoder::Autoencoder(const ModelSizeSpec& model, const EncoderSpec& enc, int resolution, std::uint64_t seed,
                         int feature_dim)
    : encoder(model, enc, seed),
      decoder(model, enc, resolution, seed + 1),
      head(decoder_layout(model, enc, resolution).token_width, feature_dim, seed + 2) {}

std::vector<nn::ParamStore<float>*> Autoencoder::stores() {
    return {&encoder.params(), &decoder.params(), &head.params()};
}

std::vector<const nn::ParamStore<float>*> Autoencoder::stores() const {
    return {&encoder.params(), &decoder.params(), &head.params()};
}

WeightMap Autoencoder::weights() const {
    WeightMap out;
    for (const auto* s : stores()) {
        for (const auto& [name, v] : s->entries()) out.emplace(name, v.value());
    }
    return out;
}

void Autoencoder::load(const WeightMap& weights, bool allow_partial) {
    std::size_t used = 0;
    for (auto* s : stores()) {
        for (const auto& name : s->names()) {
            auto it = weights.find(name);
            if (it == weights.end()) {
                require(allow_partial, kModule, "checkpoint is missing " + name);
                continue;
            }
            s->load(name, it->second);
            ++used;
        }
    }
    require(used == weights.size(), kModule, "checkpoint holds weights that the model does not have");
}

std::string Autoencoder::hash() const {
    Fnv1a h;
    for (const auto* s : stores()) h.update(s->hash());
    return h.hex();
}

std::size_t import_encoder(Encoder<float>& encoder, const WeightMap& archive, const std::string& source_prefix) {
    auto& store       = encoder.params();
    std::size_t count = 0;
    for (const auto& name : store.names()) {
        const std::string source = source_prefix + name.substr(std::string("encoder/").size());
        auto it                  = archive.find(source);
        require(it != archive.end(), kModule, "encoder archive is missing " + source);
        require(it->second.shape() == store.get(name).shape(), kModule,
                "encoder archive entry " + source + " has shape " + shape_str(it->second.shape()) + ", expected " +
                    shape_str(store.get(name).shape()));
        store.load(name, it->second);
        ++count;
    }
    return count;
}

Tensor<float> draw_batch(const std::vector<Tensor<float>>& images, int batch_size, const TrainSpec& spec, Rng& rng) {
    require(!images.empty(), kModule, "empty training set");
    const int n = static_cast<int>(images.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> picked;
    while (static_cast<int>(picked.size()) < batch_size) {
        const int take = std::min(n, batch_size - static_cast<int>(picked.size()));
        for (int i = 0; i < take; ++i) std::swap(order[i], order[rng.uniform_int(i, n - 1)]);
        picked.insert(picked.end(), order.begin(), order.begin() + take);
    }
    std::vector<Tensor<float>> items;
    const int r = spec.target_resolution;
    for (int idx : picked) {
        const auto& img = images[idx];
        Tensor<float> x;
        if (spec.augment) {
            x = multiscale_augment(img, rng, spec);
        } else {
            x = img.dim(1) == r && img.dim(2) == r ? img : resize_lanczos(img, r, r);
        }
        items.push_back(x.reshaped({1, 3, r, r}));
    }
    return stack_batch(items);
}

int repa_feature_dim(const FeatureExtractor<float>& extractor, int resolution) {
    return extractor.output_shapes(resolution, resolution).back()[0];
}

Trainer::Trainer(Autoencoder& model, const FeatureExtractor<float>& extractor, const TrainSpec& spec)
    : model_(model), extractor_(extractor), spec_(spec), rng_(Rng(spec.seed).fork(0x7472)) {
    spec_.validate();
    weights_ = {spec_.lambda_lpips, spec_.lambda_repa, spec_.lambda_kl};
    if (spec_.joint_encoder) {
        require(!model_.encoder.frozen(), kModule, "joint encoder training requested on a frozen encoder");
    } else {
        model_.encoder.freeze();
    }
    for (const char* key : kStoreKeys) {
        nn::AdamW<float>::Options o;
        o.lr           = spec_.learning_rate;
        o.weight_decay = spec_.weight_decay;
        optim_.emplace(key, nn::AdamW<float>(o));
        ema_.emplace(key, ema_init(store(key), spec_.ema_decay, spec_.ema_start_step));
    }
}

nn::ParamStore<float>& Trainer::store(const std::string& key) {
    if (key == "encoder") return model_.encoder.params();
    if (key == "decoder") return model_.decoder.params();
    return model_.head.params();
}

Trainer::Forward Trainer::forward(const Tensor<float>& batch, Rng& rng, bool need_graph) const {
    require(batch.rank() == 4 && batch.dim(1) == 3 && batch.dim(2) == batch.dim(3), kModule,
            "training batch must be [B, 3, R, R], got " + shape_str(batch.shape()));
    const int b = batch.dim(0), r = batch.dim(2);
    std::unique_ptr<ag::NoGradGuard> guard;
    if (!need_graph) guard = std::make_unique<ag::NoGradGuard>();

    const auto post = model_.encoder.encode(batch);
    const auto z    = sample_latent(post, rng, model_.encoder.spec()).values;
    std::vector<float> t(b);
    for (auto& v : t) v = static_cast<float>(sample_timestep(rng, spec_.timestep_loc, spec_.timestep_scale));
    const auto eps = randn<float>(batch.shape(), rng);
    const auto x_t = interpolate<float>(batch, eps, std::span<const float>(t));

    const auto out = model_.decoder.forward(x_t, t, z);
    Forward f;
    f.fm            = fm_loss(out.velocity, batch, eps);
    const auto x0   = one_step_prediction<float>(x_t, t, out.velocity);
    const auto x    = ag::constant(batch);
    {
        std::unique_ptr<ag::NoGradGuard> off;
        if (spec_.lambda_lpips == 0.0) off = std::make_unique<ag::NoGradGuard>();
        f.lpips = perceptual_loss(x, x0, extractor_);
    }
    ag::Var<float> reference;
    {
        ag::NoGradGuard off;
        reference = extractor_.features(x).back();
    }
    {
        std::unique_ptr<ag::NoGradGuard> off;
        if (spec_.lambda_repa == 0.0) off = std::make_unique<ag::NoGradGuard>();
        f.repa = repa_loss(out.hidden_tokens, reference, model_.head, r / kPatchSize, r / kPatchSize);
    }
    f.kl = kl_loss(post);
    return f;
}

LossBreakdown Trainer::evaluate(const Tensor<float>& batch, Rng& rng) const {
    const auto f = forward(batch, rng, false);
    return compose_losses(f.fm.item(), f.lpips.item(), f.repa.item(), f.kl.item(), weights_);
}

LossBreakdown Trainer::step(const std::vector<Tensor<float>>& images) {
    return train_step(draw_batch(images, spec_.batch_size, spec_, rng_));
}

LossBreakdown Trainer::train_step(const Tensor<float>& batch) {
    for (auto* s : model_.stores()) s->zero_grad();
    const auto f = forward(batch, rng_, true);
    const auto l = compose_losses(f.fm.item(), f.lpips.item(), f.repa.item(), f.kl.item(), weights_);
    if (!finite(l)) fail(kModule, "non-finite loss at step " + std::to_string(step_) + ": " + describe(l));

    ag::Var<float> total = f.fm;
    auto add_term        = [&](const ag::Var<float>& v, double w) {
        if (w != 0.0 && v.requires_grad()) total = ag::add(total, ag::scale(v, static_cast<float>(w)));
    };
    add_term(f.lpips, weights_.lpips);
    add_term(f.repa, weights_.repa);
    add_term(f.kl, weights_.kl);
    total.backward();

    std::vector<nn::ParamStore<float>*> trainable;
    for (auto* s : model_.stores()) {
        if (s->trainable()) trainable.push_back(s);
    }
    last_grad_norm_ = nn::clip_grad_norm(trainable, spec_.grad_clip);
    optim_.at("decoder").step(model_.decoder.params());
    optim_.at("repa_head").step(model_.head.params());
    optim_.at("encoder").step(model_.encoder.params(), spec_.encoder_lr_scale);
    ++step_;
    for (const char* key : kStoreKeys) ema_track(ema_.at(key), store(key), step_);
    return l;
}

void Trainer::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    save_archive(dir / "weights.bin", model_.weights());
    WeightMap ema, moments;
    nlohmann::json steps = nlohmann::json::object();
    for (const auto& [key, state] : ema_) {
        for (const auto& [name, t] : state.shadow) ema.emplace(name, t);
    }
    for (const auto& [key, opt] : optim_) {
        for (const auto& [name, t] : opt.first_moments()) moments.emplace("m/" + name, t);
        for (const auto& [name, t] : opt.second_moments()) moments.emplace("v/" + name, t);
        for (const auto& [name, n] : opt.step_counts()) steps[name] = n;
    }
    save_archive(dir / "ema.bin", ema);
    save_archive(dir / "optim.bin", moments);
    nlohmann::json state = {{"step", step_},
                            {"rng", rng_.state()},
                            {"adam_steps", steps},
                            {"stage", stage_name(spec_.stage)},
                            {"weights_hash", model_.hash()}};
    write_json(dir / "state.json", state);
}

void Trainer::restore(const std::filesystem::path& dir) {
    model_.load(load_archive(dir / "weights.bin"));
    const auto ema     = load_archive(dir / "ema.bin");
    const auto moments = load_archive(dir / "optim.bin");
    const auto state   = read_json(dir / "state.json");
    for (auto& [key, s] : ema_) {
        for (auto& [name, t] : s.shadow) {
            auto it = ema.find(name);
            require(it != ema.end(), kModule, "EMA archive is missing " + name);
            t = it->second;
        }
    }
    const auto& steps = state.at("adam_steps");
    for (auto& [key, opt] : optim_) {
        opt.first_moments().clear();
        opt.second_moments().clear();
        opt.step_counts().clear();
        for (const auto& name : store(key).names()) {
            if (!steps.contains(name)) continue;
            opt.first_moments()[name]  = moments.at("m/" + name);
            opt.second_moments()[name] = moments.at("v/" + name);
            opt.step_counts()[name]    = steps.at(name).get<long>();
        }
    }
    step_ = state.at("step").get<long>();
    rng_.restore(state.at("rng").get<std::string>());
}

}  // namespace ssdd
