#pragma once

// Directory-of-PNG image corpora with deterministic ordering and a disjoint
// train/eval split, plus a synthetic corpus generator for demos and tests.

#include "ssdd/tensor.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ssdd {

struct ResolutionPolicy {
    int resolution = 0;      // 0 keeps native size
    bool training  = true;   // Lanczos when true, bilinear otherwise
    bool center_crop = true; // square crop after resizing the short side
};

struct ImageCorpus {
    std::filesystem::path root;
    std::vector<std::filesystem::path> files;  // sorted, decodable only
    std::vector<Tensor<float>> images;         // [3, H, W] in [-1, 1]
    std::vector<std::string> skipped;          // undecodable files
    ResolutionPolicy policy;
    std::string index_hash;                    // over relative paths and sizes

    std::size_t size() const { return images.size(); }
};

ImageCorpus ingest(const std::filesystem::path& root, const ResolutionPolicy& policy = {});

struct CorpusSplit {
    std::vector<Tensor<float>> train;
    std::vector<Tensor<float>> eval;
    std::vector<std::filesystem::path> train_files;
    std::vector<std::filesystem::path> eval_files;
};

// The last `eval_count` images (in sorted order) form the eval split.
CorpusSplit split_corpus(const ImageCorpus& corpus, int eval_count);

// Writes n synthetic size x size PNGs (smooth color fields with a few disks
// and stripes) named img_000.png ... under dir.
void make_toy_corpus(const std::filesystem::path& dir, int n, int size, std::uint64_t seed);
std::vector<Tensor<float>> toy_images(int n, int size, std::uint64_t seed);

}  // namespace ssdd
