#include "ifmatch/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace ifm {

namespace {

// A value error without location; the parser adds origin and line.
struct ValueError {
    std::string message;
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    for (std::string item; std::getline(ss, item, ',');) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

long long to_int(const std::string& v) {
    long long x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw ValueError{"expected an integer, got '" + v + "'"};
    return x;
}

double to_double(const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(x)) {
        throw ValueError{"expected a finite number, got '" + v + "'"};
    }
    return x;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ValueError{"expected true or false, got '" + v + "'"};
}

int int_at_least(const std::string& v, long long lo) {
    const long long x = to_int(v);
    if (x < lo || x > 1'000'000'000) throw ValueError{"value " + v + " must be at least " + std::to_string(lo)};
    return static_cast<int>(x);
}

double double_in(const std::string& v, double lo, double hi, bool lo_open = false) {
    const double x = to_double(v);
    if (x < lo || x > hi || (lo_open && x == lo)) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "value %s outside %c%g, %g]", v.c_str(), lo_open ? '(' : '[', lo, hi);
        throw ValueError{buf};
    }
    return x;
}

template <typename F>
auto wrap(F parse, const std::string& v) {
    try {
        return parse(v);
    } catch (const std::invalid_argument& e) {
        throw ValueError{e.what()};
    }
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F name) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::string(name(v[i]));
    }
    return out;
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& v, F parse) {
    std::vector<T> out;
    for (const auto& item : split_list(v)) out.push_back(wrap(parse, item));
    if (out.empty()) throw ValueError{"list must not be empty"};
    return out;
}

struct Key {
    std::string name;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Key>& registry() {
    using C = ExperimentConfig;
    using S = const std::string&;
    static const std::vector<Key> keys = {
        {"seed", [](C& c, S v) { c.seed = static_cast<std::uint64_t>(int_at_least(v, 0)); },
         [](const C& c) { return std::to_string(c.seed); }},

        {"data.source",
         [](C& c, S v) {
             if (v != "synthetic" && v != "idx" && v != "csv") throw ValueError{"expected synthetic, idx or csv"};
             c.data.source = v;
         },
         [](const C& c) { return c.data.source; }},
        {"data.classes", [](C& c, S v) { c.data.classes = int_at_least(v, 2); },
         [](const C& c) { return std::to_string(c.data.classes); }},
        {"data.per_class", [](C& c, S v) { c.data.per_class = int_at_least(v, 1); },
         [](const C& c) { return std::to_string(c.data.per_class); }},
        {"data.test_per_class", [](C& c, S v) { c.data.test_per_class = int_at_least(v, 1); },
         [](const C& c) { return std::to_string(c.data.test_per_class); }},
        {"data.channels", [](C& c, S v) { c.data.channels = int_at_least(v, 1); },
         [](const C& c) { return std::to_string(c.data.channels); }},
        {"data.image_size", [](C& c, S v) { c.data.image_size = int_at_least(v, 2); },
         [](const C& c) { return std::to_string(c.data.image_size); }},
        {"data.difficulty", [](C& c, S v) { c.data.difficulty = double_in(v, 0.0, 1.0); },
         [](const C& c) { return fmt(c.data.difficulty); }},
        {"data.seed", [](C& c, S v) { c.data.seed = static_cast<std::uint64_t>(int_at_least(v, 0)); },
         [](const C& c) { return std::to_string(c.data.seed); }},
        {"data.num_labels", [](C& c, S v) { c.data.num_labels = int_at_least(v, 1); },
         [](const C& c) { return std::to_string(c.data.num_labels); }},
        {"data.split",
         [](C& c, S v) {
             if (v != "balanced" && v != "longtail") throw ValueError{"expected balanced or longtail"};
             c.data.split = v;
         },
         [](const C& c) { return c.data.split; }},
        {"data.longtail_n1", [](C& c, S v) { c.data.longtail_n1 = int_at_least(v, 1); },
         [](const C& c) { return std::to_string(c.data.longtail_n1); }},
        {"data.longtail_m1", [](C& c, S v) { c.data.longtail_m1 = int_at_least(v, 1); },
         [](const C& c) { return std::to_string(c.data.longtail_m1); }},
        {"data.longtail_gamma", [](C& c, S v) { c.data.longtail_gamma = double_in(v, 1.0, 1e6); },
         [](const C& c) { return fmt(c.data.longtail_gamma); }},
        {"data.exclude_labeled", [](C& c, S v) { c.data.exclude_labeled = to_bool(v); },
         [](const C& c) { return std::string(c.data.exclude_labeled ? "true" : "false"); }},
        {"data.idx_train_images", [](C& c, S v) { c.data.idx_train_images = v; },
         [](const C& c) { return c.data.idx_train_images; }},
        {"data.idx_train_labels", [](C& c, S v) { c.data.idx_train_labels = v; },
         [](const C& c) { return c.data.idx_train_labels; }},
        {"data.idx_test_images", [](C& c, S v) { c.data.idx_test_images = v; },
         [](const C& c) { return c.data.idx_test_images; }},
        {"data.idx_test_labels", [](C& c, S v) { c.data.idx_test_labels = v; },
         [](const C& c) { return c.data.idx_test_labels; }},
        {"data.csv_train", [](C& c, S v) { c.data.csv_train = v; }, [](const C& c) { return c.data.csv_train; }},
        {"data.csv_test", [](C& c, S v) { c.data.csv_test = v; }, [](const C& c) { return c.data.csv_test; }},

        {"model.kind",
         [](C& c, S v) {
             if (v == "residual_cnn") {
                 c.model.kind = ModelKind::ResidualCnn;
             } else if (v == "mlp") {
                 c.model.kind = ModelKind::Mlp;
             } else {
                 throw ValueError{"expected residual_cnn or mlp"};
             }
         },
         [](const C& c) { return std::string(c.model.kind == ModelKind::Mlp ? "mlp" : "residual_cnn"); }},
        {"model.widths",
         [](C& c, S v) { c.model.stage_widths = parse_list<int>(v, [](S s) { return int_at_least(s, 1); }); },
         [](const C& c) { return join(c.model.stage_widths, [](int w) { return std::to_string(w); }); }},
        {"model.blocks_per_stage", [](C& c, S v) { c.model.blocks_per_stage = int_at_least(v, 1); },
         [](const C& c) { return std::to_string(c.model.blocks_per_stage); }},
        {"model.norm",
         [](C& c, S v) {
             if (v == "sample") {
                 c.model.norm = NormMode::Sample;
             } else if (v == "batch") {
                 c.model.norm = NormMode::Batch;
             } else {
                 throw ValueError{"expected sample or batch"};
             }
         },
         [](const C& c) { return std::string(c.model.norm == NormMode::Batch ? "batch" : "sample"); }},

        {"trainer.paradigm", [](C& c, S v) { c.trainer.paradigm = wrap(parse_paradigm, v); },
         [](const C& c) { return std::string(to_string(c.trainer.paradigm)); }},
        {"trainer.batch_labeled", [](C& c, S v) { c.trainer.batch_labeled = int_at_least(v, 1); },
         [](const C& c) { return std::to_string(c.trainer.batch_labeled); }},
        {"trainer.batch_unlabeled", [](C& c, S v) { c.trainer.batch_unlabeled = int_at_least(v, 1); },
         [](const C& c) { return std::to_string(c.trainer.batch_unlabeled); }},
        {"trainer.lambda_u", [](C& c, S v) { c.trainer.lambda_u = double_in(v, 0.0, 1e6); },
         [](const C& c) { return fmt(c.trainer.lambda_u); }},
        {"trainer.tau", [](C& c, S v) { c.trainer.tau = double_in(v, 0.0, 1.0, true); },
         [](const C& c) { return fmt(c.trainer.tau); }},
        {"trainer.threshold", [](C& c, S v) { c.trainer.threshold = wrap(sched::parse_threshold_kind, v); },
         [](const C& c) { return std::string(sched::to_string(c.trainer.threshold)); }},
        {"trainer.threshold_clamp",
         [](C& c, S v) {
             if (v == "none") {
                 c.trainer.threshold_clamp.reset();
                 return;
             }
             const auto parts = split_list(v);
             if (parts.size() != 2) throw ValueError{"expected 'none' or 'lo,hi'"};
             const double lo = double_in(parts[0], 0.0, 1.0), hi = double_in(parts[1], 0.0, 1.0);
             if (lo > hi) throw ValueError{"clamp lower bound exceeds upper bound"};
             c.trainer.threshold_clamp = sched::Clamp{lo, hi};
         },
         [](const C& c) {
             return c.trainer.threshold_clamp ? fmt(c.trainer.threshold_clamp->lo) + "," + fmt(c.trainer.threshold_clamp->hi)
                                              : std::string("none");
         }},
        {"trainer.branch1_threshold", [](C& c, S v) { c.trainer.branch1 = wrap(parse_branch1, v); },
         [](const C& c) { return std::string(to_string(c.trainer.branch1)); }},
        {"trainer.identification", [](C& c, S v) { c.trainer.identification = wrap(parse_identification, v); },
         [](const C& c) { return std::string(to_string(c.trainer.identification)); }},
        {"trainer.steps", [](C& c, S v) { c.trainer.steps = int_at_least(v, 0); },
         [](const C& c) { return std::to_string(c.trainer.steps); }},
        {"trainer.lr", [](C& c, S v) { c.trainer.lr = double_in(v, 0.0, 10.0, true); },
         [](const C& c) { return fmt(c.trainer.lr); }},
        {"trainer.weight_decay", [](C& c, S v) { c.trainer.weight_decay = double_in(v, 0.0, 1.0); },
         [](const C& c) { return fmt(c.trainer.weight_decay); }},
        {"trainer.momentum",
         [](C& c, S v) {
             c.trainer.momentum = double_in(v, 0.0, 1.0);
             if (c.trainer.momentum == 1.0) throw ValueError{"momentum must be below 1"};
         },
         [](const C& c) { return fmt(c.trainer.momentum); }},
        {"trainer.ema_decay", [](C& c, S v) { c.trainer.ema_decay = double_in(v, 0.0, 1.0); },
         [](const C& c) { return fmt(c.trainer.ema_decay); }},
        {"trainer.da", [](C& c, S v) { c.trainer.da = to_bool(v); },
         [](const C& c) { return std::string(c.trainer.da ? "true" : "false"); }},
        {"trainer.eval_every", [](C& c, S v) { c.trainer.eval_every = int_at_least(v, 0); },
         [](const C& c) { return std::to_string(c.trainer.eval_every); }},
        {"trainer.feat_pool",
         [](C& c, S v) { c.trainer.feat_pool = parse_list<feat::Strategy>(v, feat::parse_strategy); },
         [](const C& c) { return join(c.trainer.feat_pool, [](feat::Strategy s) { return feat::to_string(s); }); }},

        {"aug.pad", [](C& c, S v) { c.aug.pad = int_at_least(v, -1); }, [](const C& c) { return std::to_string(c.aug.pad); }},
        {"aug.flip_prob", [](C& c, S v) { c.aug.flip_prob = double_in(v, 0.0, 1.0); },
         [](const C& c) { return fmt(c.aug.flip_prob); }},
        {"aug.strong_ops", [](C& c, S v) { c.aug.n_ops = int_at_least(v, 0); },
         [](const C& c) { return std::to_string(c.aug.n_ops); }},
        {"aug.strong_pool", [](C& c, S v) { c.aug.pool = parse_list<img::Op>(v, img::parse_op); },
         [](const C& c) { return join(c.aug.pool, [](img::Op o) { return img::to_string(o); }); }},
        {"aug.max_magnitude", [](C& c, S v) { c.aug.max_magnitude = double_in(v, 0.0, 1.0); },
         [](const C& c) { return fmt(c.aug.max_magnitude); }},
        {"aug.cutout", [](C& c, S v) { c.aug.cutout = double_in(v, 0.0, 1.0); },
         [](const C& c) { return fmt(c.aug.cutout); }},
        {"aug.strong_base_weak", [](C& c, S v) { c.aug.strong_base_weak = to_bool(v); },
         [](const C& c) { return std::string(c.aug.strong_base_weak ? "true" : "false"); }},

        {"metrics.record_wall_ms", [](C& c, S v) { c.metrics.record_wall_ms = to_bool(v); },
         [](const C& c) { return std::string(c.metrics.record_wall_ms ? "true" : "false"); }},

        {"compare.paradigms", [](C& c, S v) { c.compare.paradigms = parse_list<Paradigm>(v, parse_paradigm); },
         [](const C& c) { return join(c.compare.paradigms, [](Paradigm p) { return to_string(p); }); }},
        {"compare.thresholds",
         [](C& c, S v) { c.compare.thresholds = parse_list<sched::ThresholdKind>(v, sched::parse_threshold_kind); },
         [](const C& c) { return join(c.compare.thresholds, [](sched::ThresholdKind k) { return sched::to_string(k); }); }},
        {"compare.branch1", [](C& c, S v) { c.compare.branch1 = parse_list<Branch1Threshold>(v, parse_branch1); },
         [](const C& c) { return join(c.compare.branch1, [](Branch1Threshold b) { return to_string(b); }); }},
        {"compare.identifications",
         [](C& c, S v) { c.compare.identifications = parse_list<Identification>(v, parse_identification); },
         [](const C& c) { return join(c.compare.identifications, [](Identification i) { return to_string(i); }); }},
        {"compare.seeds", [](C& c, S v) { c.compare.seeds = int_at_least(v, 1); },
         [](const C& c) { return std::to_string(c.compare.seeds); }},
    };
    return keys;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

std::vector<std::string> known_keys() {
    std::vector<std::string> out;
    for (const auto& k : registry()) out.push_back(k.name);
    return out;
}

std::string suggest_key(std::string_view key) {
    std::string best;
    std::size_t best_d = static_cast<std::size_t>(-1);
    for (const auto& k : registry()) {
        const std::size_t d = edit_distance(key, k.name);
        if (d < best_d) {
            best_d = d;
            best = k.name;
        }
    }
    return best;
}

ExperimentConfig parse_config_text(std::string_view text, std::string_view origin) {
    ExperimentConfig cfg;
    std::istringstream is{std::string(text)};
    int lineno = 0;
    auto where = [&] { return std::string(origin) + ":" + std::to_string(lineno) + ": "; };
    std::vector<std::string> seen;
    for (std::string raw; std::getline(is, raw);) {
        ++lineno;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where() + "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(where() + "missing key before '='");
        const auto& keys = registry();
        auto it = std::find_if(keys.begin(), keys.end(), [&](const Key& k) { return k.name == key; });
        if (it == keys.end()) {
            throw ConfigError(where() + "unknown key '" + key + "' (did you mean '" + suggest_key(key) + "'?)");
        }
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
            throw ConfigError(where() + "key '" + key + "' is set twice");
        }
        seen.push_back(key);
        try {
            it->set(cfg, value);
        } catch (const ValueError& e) {
            throw ConfigError(where() + key + ": " + e.message);
        }
    }
    cfg.trainer.seed = cfg.seed;
    cfg.trainer.validate();
    if (cfg.data.split == "balanced" && cfg.data.num_labels % cfg.data.classes != 0 && cfg.data.source == "synthetic") {
        throw ConfigError(std::string(origin) + ": data.num_labels must be a multiple of data.classes");
    }
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str(), path);
}

std::string to_text(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& k : registry()) out += k.name + " = " + k.get(cfg) + "\n";
    return out;
}

data::DatasetSplit build_split(const ExperimentConfig& cfg) {
    const DataConfig& d = cfg.data;
    data::Source src;
    if (d.source == "synthetic") {
        src = data::gen_synthetic({d.classes, d.per_class, d.test_per_class, d.channels, d.image_size, d.difficulty, d.seed});
    } else if (d.source == "idx") {
        if (d.idx_train_images.empty() || d.idx_train_labels.empty()) {
            throw ConfigError("data.source = idx needs data.idx_train_images and data.idx_train_labels");
        }
        src = data::load_idx(d.idx_train_images, d.idx_train_labels, d.idx_test_images, d.idx_test_labels);
    } else {
        if (d.csv_train.empty()) throw ConfigError("data.source = csv needs data.csv_train");
        src.channels = d.channels;
        src.height = src.width = d.image_size;
        src.train = data::load_csv_samples(d.csv_train, d.channels, d.image_size, d.image_size);
        if (!d.csv_test.empty()) src.test = data::load_csv_samples(d.csv_test, d.channels, d.image_size, d.image_size);
        int top = -1;
        for (const auto& s : src.train) top = std::max(top, s.label);
        for (const auto& s : src.test) top = std::max(top, s.label);
        src.num_classes = top + 1;
    }
    if (d.split == "longtail") {
        return data::split_longtail(src, {d.longtail_n1, d.longtail_m1, d.longtail_gamma, src.num_classes}, cfg.seed);
    }
    return data::split_balanced(src, d.num_labels, cfg.seed, d.exclude_labeled);
}

ModelSpec model_spec_for(const ExperimentConfig& cfg, const data::DatasetSplit& split) {
    ModelSpec spec = cfg.model;
    spec.num_classes = split.num_classes;
    spec.in_channels = split.channels;
    spec.height = split.height;
    spec.width = split.width;
    return spec;
}

TrainConfig train_config_for(const ExperimentConfig& cfg) {
    TrainConfig t = cfg.trainer;
    t.seed = cfg.seed;
    t.da_labeled_prior = cfg.data.split == "longtail";
    return t;
}

}  // namespace ifm
