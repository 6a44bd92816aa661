#include "ssdd/corpus.hpp"

#include "ssdd/augment.hpp"
#include "ssdd/hash.hpp"
#include "ssdd/io.hpp"
#include "ssdd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>

namespace ssdd {

namespace {

constexpr std::string_view kModule = "corpus";

bool is_png(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png";
}

Tensor<float> apply_policy(const Tensor<float>& img, const ResolutionPolicy& policy) {
    if (policy.resolution <= 0) return img;
    auto out = resize_short_side(img, policy.resolution, policy.training);
    if (policy.center_crop) {
        const int top  = (out.dim(1) - policy.resolution) / 2;
        const int left = (out.dim(2) - policy.resolution) / 2;
        out            = crop(out, top, left, policy.resolution, policy.resolution);
    }
    return out;
}

}  // namespace

ImageCorpus ingest(const std::filesystem::path& root, const ResolutionPolicy& policy) {
    require(std::filesystem::is_directory(root), kModule, root.string() + " is not a directory");
    std::vector<std::filesystem::path> candidates;
    for (const auto& e : std::filesystem::directory_iterator(root)) {
        if (e.is_regular_file() && is_png(e.path())) candidates.push_back(e.path());
    }
    std::sort(candidates.begin(), candidates.end());
    require(!candidates.empty(), kModule, "no PNG images under " + root.string());

    ImageCorpus c;
    c.root   = root;
    c.policy = policy;
    Fnv1a h;
    for (const auto& p : candidates) {
        Tensor<float> img;
        try {
            img = load_png(p);
        } catch (const Error& e) {
            c.skipped.push_back(p.filename().string());
            std::cerr << "warning: skipping " << p.string() << " (" << e.what() << ")\n";
            continue;
        }
        c.files.push_back(p);
        c.images.push_back(apply_policy(img, policy));
        h.update(p.filename().string());
        h.update("\n");
        const std::string dims = shape_str(img.shape());
        h.update(dims);
    }
    require(!c.images.empty(), kModule, "no decodable images under " + root.string());
    c.index_hash = h.hex();
    return c;
}

CorpusSplit split_corpus(const ImageCorpus& corpus, int eval_count) {
    const int n = static_cast<int>(corpus.size());
    require(eval_count >= 0 && eval_count < n, kModule,
            "eval split of " + std::to_string(eval_count) + " leaves no training images out of " + std::to_string(n));
    CorpusSplit s;
    for (int i = 0; i < n; ++i) {
        const bool eval = i >= n - eval_count;
        (eval ? s.eval : s.train).push_back(corpus.images[i]);
        (eval ? s.eval_files : s.train_files).push_back(corpus.files[i]);
    }
    return s;
}

std::vector<Tensor<float>> toy_images(int n, int size, std::uint64_t seed) {
    require(n > 0 && size >= 8, kModule, "toy corpus needs n > 0 and size >= 8");
    Rng rng(seed);
    std::vector<Tensor<float>> out;
    for (int k = 0; k < n; ++k) {
        Tensor<float> img({3, size, size});
        double base[3], gx[3], gy[3];
        for (int c = 0; c < 3; ++c) {
            base[c] = rng.uniform(-0.6, 0.6);
            gx[c]   = rng.uniform(-0.8, 0.8);
            gy[c]   = rng.uniform(-0.8, 0.8);
        }
        struct Disk {
            double cx, cy, r, col[3];
        };
        std::vector<Disk> disks(static_cast<std::size_t>(rng.uniform_int(1, 3)));
        for (auto& d : disks) {
            d.cx = rng.uniform(0.15, 0.85);
            d.cy = rng.uniform(0.15, 0.85);
            d.r  = rng.uniform(0.08, 0.25);
            for (double& v : d.col) v = rng.uniform(-0.9, 0.9);
        }
        const double freq  = rng.uniform(2.0, 6.0);
        const double angle = rng.uniform(0.0, 3.14159265358979);
        const double amp   = rng.uniform(0.05, 0.25);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double u = (x + 0.5) / size, v = (y + 0.5) / size;
                const double stripe = amp * std::sin(2 * 3.14159265358979 * freq * (u * std::cos(angle) + v * std::sin(angle)));
                for (int c = 0; c < 3; ++c) {
                    double val = base[c] + gx[c] * (u - 0.5) + gy[c] * (v - 0.5) + stripe;
                    for (const auto& d : disks) {
                        const double dist = std::hypot(u - d.cx, v - d.cy);
                        const double edge = std::clamp((d.r - dist) * size * 0.5, 0.0, 1.0);
                        val               = val * (1 - edge) + d.col[c] * edge;
                    }
                    img[(static_cast<std::size_t>(c) * size + y) * size + x] = static_cast<float>(std::clamp(val, -1.0, 1.0));
                }
            }
        }
        out.push_back(std::move(img));
    }
    return out;
}

void make_toy_corpus(const std::filesystem::path& dir, int n, int size, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    const auto images = toy_images(n, size, seed);
    for (int k = 0; k < n; ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%03d.png", k);
        save_png(dir / name, images[k]);
    }
}

}  // namespace ssdd
