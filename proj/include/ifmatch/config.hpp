#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ifmatch/datahub.hpp"
#include "ifmatch/imgperturb.hpp"
#include "ifmatch/nets.hpp"
#include "ifmatch/trainer.hpp"

namespace ifm {

struct DataConfig {
    std::string source = "synthetic";  // synthetic | idx | csv
    int classes = 4;
    int per_class = 1010;
    int test_per_class = 250;
    int channels = 1;
    int image_size = 12;
    double difficulty = 0.9;
    std::uint64_t seed = 0;  // synthetic generation; the split uses the master seed
    int num_labels = 40;
    std::string split = "balanced";  // balanced | longtail
    int longtail_n1 = 1500;
    int longtail_m1 = 3000;
    double longtail_gamma = 100.0;
    bool exclude_labeled = true;
    std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
    std::string csv_train, csv_test;
};

struct MetricsConfig {
    bool record_wall_ms = false;
};

struct CompareConfig {
    std::vector<Paradigm> paradigms{Paradigm::FixmatchBaseline, Paradigm::Ifmatch};
    std::vector<sched::ThresholdKind> thresholds{sched::ThresholdKind::Constant};
    std::vector<Branch1Threshold> branch1{Branch1Threshold::Constant};
    std::vector<Identification> identifications{Identification::Cbi};
    int seeds = 3;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    ModelSpec model;
    TrainConfig trainer;
    img::ImageAugPolicy aug;
    MetricsConfig metrics;
    CompareConfig compare;
};

/// `key = value` lines, `#` comments, dotted keys. Unknown keys, malformed
/// values and out-of-range values throw ConfigError with the line number.
ExperimentConfig parse_config_text(std::string_view text, std::string_view origin = "<config>");
ExperimentConfig parse_config(const std::string& path);

// Every key with its current value, one per line, in a fixed order.
std::string to_text(const ExperimentConfig& cfg);
std::vector<std::string> known_keys();
// Nearest known key by edit distance.
std::string suggest_key(std::string_view key);

/// Builds the configured data split (DataError on I/O problems).
data::DatasetSplit build_split(const ExperimentConfig& cfg);
// Model spec with input shape and class count taken from the data.
ModelSpec model_spec_for(const ExperimentConfig& cfg, const data::DatasetSplit& split);
// Trainer config with the master seed and long-tail DA prior applied.
TrainConfig train_config_for(const ExperimentConfig& cfg);

}  // namespace ifm
