#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ifmatch/tensor.hpp"

namespace ifm::data {

struct Sample {
    std::int64_t id = 0;
    Tensor image;   // [C,H,W], values in [0,1]
    int label = 0;  // for unlabeled samples: the true class, diagnostics only
};

/// A pool of training candidates plus a held-out test set.
struct Source {
    std::vector<Sample> train;
    std::vector<Sample> test;
    int num_classes = 0;
    int channels = 1, height = 1, width = 1;
};

struct DatasetSplit {
    std::vector<Sample> labeled;
    std::vector<Sample> unlabeled;
    std::vector<Sample> test;
    int num_classes = 0;
    int channels = 1, height = 1, width = 1;
};

struct SyntheticConfig {
    int classes = 4;
    int per_class = 1010;
    int test_per_class = 250;
    int channels = 1;
    int image_size = 12;
    double difficulty = 0.9;  // 0: one fixed template per class
    std::uint64_t seed = 0;
};

/// Class-conditional stripe textures: even classes horizontal, odd classes
/// vertical, with the spatial frequency rising every two classes. Train ids
/// are 0.., test ids follow.
Source gen_synthetic(const SyntheticConfig& cfg);

struct IdxImages {
    int count = 0, rows = 0, cols = 0;
    std::vector<double> pixels;  // count * rows * cols, scaled to [0,1]
};

IdxImages load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);

/// MNIST-style train (and optional test) files. Throws DataError on a magic
/// mismatch, truncation, or image/label count mismatch.
Source load_idx(const std::string& train_images, const std::string& train_labels, const std::string& test_images = "",
                const std::string& test_labels = "");

/// CSV with header "id,class,p0,p1,..." and C*H*W row-major pixels per row.
std::vector<Sample> load_csv_samples(const std::string& path, int channels, int height, int width);

DatasetSplit split_balanced(const Source& src, int num_labels, std::uint64_t seed, bool exclude_labeled = true);

struct LongTailConfig {
    int n1 = 1500;
    int m1 = 3000;
    double gamma = 100.0;
    int classes = 10;

    // int(n1 * gamma^(-(c-1)/(C-1))) for c = 1..C.
    std::vector<int> labeled_counts() const;
    std::vector<int> unlabeled_counts() const;
};

// Count for class index c (0-based) of a head count, truncated toward zero.
int longtail_count(int head, double gamma, int c, int classes);

DatasetSplit split_longtail(const Source& src, const LongTailConfig& cfg, std::uint64_t seed);

/// Manifest CSV "id,role,class" with role labeled|unlabeled|test; the class is
/// blank for unlabeled rows.
void write_manifest(const DatasetSplit& split, std::ostream& os);

std::vector<double> channel_means(const std::vector<Sample>& samples);
// Empirical class prior of the labeled set.
std::vector<double> labeled_prior(const DatasetSplit& split);

}  // namespace ifm::data
