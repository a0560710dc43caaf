// ifmatch: split | train | eval | perturb-demo | compare

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ifmatch/cbi.hpp"
#include "ifmatch/checkpoint.hpp"
#include "ifmatch/compare.hpp"
#include "ifmatch/config.hpp"
#include "ifmatch/errors.hpp"
#include "ifmatch/featperturb.hpp"
#include "ifmatch/metrics.hpp"
#include "ifmatch/rng.hpp"
#include "ifmatch/trainer.hpp"

namespace fs = std::filesystem;
using namespace ifm;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;  // "key=value"
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("-c,--config", args.path, "config file (key = value lines); defaults apply when omitted");
    cmd->add_option("-s,--set", args.overrides, "override one key, e.g. --set trainer.steps=200")->allow_extra_args(false);
}

std::string key_of(const std::string& line) {
    const auto hash = line.find('#');
    const std::string body = line.substr(0, hash);
    const auto eq = body.find('=');
    if (eq == std::string::npos) return {};
    std::string key = body.substr(0, eq);
    const auto b = key.find_first_not_of(" \t\r");
    const auto e = key.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : key.substr(b, e - b + 1);
}

// Command-line overrides replace matching lines of the file rather than
// duplicating them (the parser rejects a key set twice).
ExperimentConfig load_config(const ConfigArgs& args) {
    std::string text;
    std::string origin = "<defaults>";
    if (!args.path.empty()) {
        std::ifstream is(args.path);
        if (!is) throw ConfigError("cannot open config '" + args.path + "'");
        std::stringstream ss;
        ss << is.rdbuf();
        text = ss.str();
        origin = args.path;
    }
    if (args.overrides.empty()) return parse_config_text(text, origin);

    std::vector<std::string> keys;
    for (const auto& o : args.overrides) {
        if (o.find('=') == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
        keys.push_back(key_of(o));
    }
    std::istringstream is(text);
    std::string merged;
    for (std::string line; std::getline(is, line);) {
        const std::string k = key_of(line);
        bool replaced = false;
        for (const auto& key : keys) replaced = replaced || (!k.empty() && k == key);
        merged += (replaced ? "# (overridden) " + line : line) + "\n";
    }
    for (const auto& o : args.overrides) merged += o + "\n";
    return parse_config_text(merged, origin + " + --set");
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write '" + path.string() + "'");
    os << text;
    if (!os) throw DataError("write failed for '" + path.string() + "'");
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
}

// ---- split ----

int run_split(const ConfigArgs& cargs, const std::string& out) {
    const ExperimentConfig cfg = load_config(cargs);
    const data::DatasetSplit split = build_split(cfg);
    std::ofstream os(out, std::ios::binary);
    if (!os) throw DataError("cannot write manifest '" + out + "'");
    data::write_manifest(split, os);
    std::printf("labeled %zu, unlabeled %zu, test %zu, classes %d -> %s\n", split.labeled.size(),
                split.unlabeled.size(), split.test.size(), split.num_classes, out.c_str());
    return 0;
}

// ---- train ----

void print_saa_summary(const Trainer& trainer, const ExperimentRecord& record) {
    std::vector<double> losses;
    for (const auto& [id, entry] : trainer.ledger().entries()) {
        if (entry.loss) losses.push_back(*entry.loss);
    }
    const auto L = cbi::otsu_threshold(losses);
    if (!L) {
        std::printf("SAA: no loss split available yet (%zu recorded losses)\n", losses.size());
        return;
    }
    std::printf("%s\n", cbi::saa_report(*L, record.mean_naive_ratio).c_str());
}

int run_train(const ConfigArgs& cargs, const std::string& out_dir, bool quiet) {
    const ExperimentConfig cfg = load_config(cargs);
    const data::DatasetSplit split = build_split(cfg);
    const ModelSpec spec = model_spec_for(cfg, split);
    const TrainConfig tc = train_config_for(cfg);
    ensure_dir(out_dir);

    Trainer trainer(tc, spec, cfg.aug, split);
    ExperimentRecord record = train(trainer, [&](const MetricsRow& row) {
        if (!quiet) {
            std::printf("step %6ld  lr %.4g  loss_s %.4f  loss_u1 %.4f  loss_u2 %.4f  acc %.4f  ema_acc %.4f\n",
                        row.step, row.lr, row.loss_s, row.loss_u1, row.loss_u2, row.acc, row.ema_acc);
            std::fflush(stdout);
        }
    });
    record.config_snapshot = to_text(cfg);

    const fs::path dir(out_dir);
    emit_metrics(record, (dir / "metrics.csv").string(), cfg.metrics.record_wall_ms);
    save_container((dir / "checkpoint.ifm").string(), trainer.checkpoint());
    write_text(dir / "config.txt", record.config_snapshot);
    {
        std::ofstream os(dir / "ledger.csv", std::ios::binary);
        if (!os) throw DataError("cannot write ledger CSV");
        trainer.ledger().write_csv(os);
    }
    std::printf("final ema_acc %.4f (best %.4f), mean naive ratio %.4f\n", record.last_ema_acc, record.best_ema_acc,
                record.mean_naive_ratio);
    if (tc.paradigm == Paradigm::Ifmatch && tc.identification == Identification::Saa) print_saa_summary(trainer, record);
    std::printf("wrote %s/{metrics.csv,checkpoint.ifm,config.txt,ledger.csv}\n", out_dir.c_str());
    return 0;
}

// ---- eval ----

int run_eval(const ConfigArgs& cargs, const std::string& checkpoint, const std::string& which) {
    const ExperimentConfig cfg = load_config(cargs);
    const data::DatasetSplit split = build_split(cfg);
    const ModelSpec spec = model_spec_for(cfg, split);
    if (which != "ema" && which != "live") throw ConfigError("--model must be 'ema' or 'live'");
    const auto tensors = load_container(checkpoint);
    Model model = Model::build(spec, cfg.seed);
    load_model_parameters(model, tensors, which == "ema" ? "ema/" : "model/");
    if (split.test.empty()) throw DataError("the configured data has no test set");
    const EvalResult r = evaluate(model, split.test);
    std::printf("%s accuracy %.4f on %zu test samples\n", which.c_str(), r.accuracy, r.count);
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        if (r.per_class[c]) std::printf("  class %zu: %.4f\n", c, *r.per_class[c]);
    }
    return 0;
}

// ---- perturb-demo ----

struct DemoArgs {
    std::string strategy;
    std::string intensity = "strong";
    std::vector<int> shape{1, 2, 6, 6};
    std::uint64_t seed = 0;
    std::optional<int> length;
    std::optional<std::string> direction;
    std::optional<int> kernel;
    std::optional<double> alpha;
    std::optional<std::string> keep;     // e.g. "1010"
    std::optional<std::vector<int>> rect;  // x,y,h,w
    std::string out_dir = ".";
};

void write_feature_csv(const fs::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write '" + path.string() + "'");
    const Shape& s = t.shape();
    os << "n,c,h,w,value\n";
    char buf[64];
    std::size_t i = 0;
    for (int n = 0; n < s[0]; ++n)
        for (int c = 0; c < s[1]; ++c)
            for (int h = 0; h < s[2]; ++h)
                for (int w = 0; w < s[3]; ++w) {
                    std::snprintf(buf, sizeof buf, "%.17g", t.data()[i++]);
                    os << n << ',' << c << ',' << h << ',' << w << ',' << buf << '\n';
                }
}

int run_perturb_demo(const DemoArgs& a) {
    if (a.shape.size() != 4) throw ConfigError("--shape expects N,C,H,W");
    for (int d : a.shape) {
        if (d < 1) throw ConfigError("--shape extents must be positive");
    }
    feat::Strategy strategy;
    feat::Intensity intensity;
    try {
        strategy = feat::parse_strategy(a.strategy);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (a.intensity == "strong") {
        intensity = feat::Intensity::Strong;
    } else if (a.intensity == "weak") {
        intensity = feat::Intensity::Weak;
    } else {
        throw ConfigError("--intensity must be 'weak' or 'strong'");
    }

    const feat::FeatureShape fs_shape{a.shape[1], a.shape[2], a.shape[3]};
    Tensor fixture(Shape{a.shape[0], a.shape[1], a.shape[2], a.shape[3]});
    RngStream fixture_rng(a.seed, "fixture");
    for (double& v : fixture.data()) v = fixture_rng.uniform();

    RngStream rng(a.seed, "feat");
    const feat::Strategy pool[] = {strategy};
    feat::PerturbDraw draw = feat::sample_draw(pool, fs_shape, intensity, rng);

    // Explicit parameters override the sampled ones.
    auto dir_override = [&](feat::Direction& d) {
        if (a.direction) {
            try {
                d = feat::parse_direction(*a.direction);
            } catch (const std::exception& e) {
                throw ConfigError(e.what());
            }
        }
    };
    std::visit(
        [&](auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, feat::ChannelDropParams>) {
                if (a.keep) {
                    p.keep.clear();
                    for (char ch : *a.keep) {
                        if (ch != '0' && ch != '1') throw ConfigError("--keep expects a string of 0/1 flags");
                        p.keep.push_back(static_cast<std::uint8_t>(ch - '0'));
                    }
                }
            } else if constexpr (std::is_same_v<P, feat::SpatialDropParams>) {
                if (a.rect) {
                    if (a.rect->size() != 4) throw ConfigError("--rect expects x,y,h,w");
                    p = {(*a.rect)[0], (*a.rect)[1], (*a.rect)[2], (*a.rect)[3]};
                }
            } else if constexpr (std::is_same_v<P, feat::TranslateParams>) {
                dir_override(p.direction);
                if (a.length) p.length = *a.length;
            } else if constexpr (std::is_same_v<P, feat::ShearParams>) {
                dir_override(p.direction);
                if (a.length) p.length = *a.length;
                const int lines = feat::horizontal(p.direction) ? fs_shape.height : fs_shape.width;
                p.offsets = feat::shear_offsets(p.length, lines);
            } else {
                if (a.kernel) p.kernel = *a.kernel;
                if (a.alpha) p.alpha = *a.alpha;
            }
        },
        draw.params);
    try {
        feat::validate(draw, fs_shape);
    } catch (const ShapeError& e) {
        throw ConfigError(std::string("perturbation parameters do not fit the fixture: ") + e.what());
    }

    const Tensor after = feat::apply(fixture, draw);
    ensure_dir(a.out_dir);
    write_feature_csv(fs::path(a.out_dir) / "before.csv", fixture);
    write_feature_csv(fs::path(a.out_dir) / "after.csv", after);
    std::printf("%s (%s) on %s -> %s/{before,after}.csv\n", std::string(feat::to_string(strategy)).c_str(),
                a.intensity.c_str(), fixture.shape().str().c_str(), a.out_dir.c_str());
    return 0;
}

// ---- compare ----

std::string file_label(const CompareCell& cell) {
    std::string s = cell.label();
    for (char& c : s) {
        if (c == '/' || c == ' ' || c == ',') c = '_';
    }
    return s;
}

int run_compare_cmd(const ConfigArgs& cargs, const std::string& out_dir, int workers) {
    const ExperimentConfig cfg = load_config(cargs);
    ensure_dir(fs::path(out_dir) / "runs");
    if (workers <= 0) workers = worker_count();
    const auto cells = compare_cells(cfg.compare);
    std::printf("compare: %zu cells x %d seeds, %d worker(s)\n", cells.size(), cfg.compare.seeds, workers);
    std::fflush(stdout);

    const CompareResult result = run_compare(cfg, workers, [&](const CompareRun& run) {
        // Each run owns its file; invoked from worker threads.
        const fs::path path = fs::path(out_dir) / "runs" / (file_label(run.cell) + "_seed" + std::to_string(run.seed) + ".csv");
        emit_metrics(run.record, path.string(), cfg.metrics.record_wall_ms);
    });
    for (const auto& run : result.runs) {
        std::printf("  %-40s seed %llu  final ema_acc %.4f\n", run.cell.label().c_str(),
                    static_cast<unsigned long long>(run.seed), run.record.last_ema_acc);
    }
    std::printf("%s", format_compare_table(result).c_str());
    std::ofstream os(fs::path(out_dir) / "summary.csv", std::ios::binary);
    if (!os) throw DataError("cannot write summary CSV");
    write_compare_csv(result, os);
    write_text(fs::path(out_dir) / "config.txt", to_text(cfg));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ifmatch: semi-supervised training with image- and feature-level perturbations"};
    app.require_subcommand(1);

    ConfigArgs split_cfg, train_cfg, eval_cfg, compare_cfg;
    std::string manifest = "manifest.csv";
    auto* split = app.add_subcommand("split", "write the labeled/unlabeled/test manifest");
    add_config_options(split, split_cfg);
    split->add_option("-o,--out", manifest, "manifest CSV path");

    std::string train_out = "run";
    bool quiet = false;
    auto* trainc = app.add_subcommand("train", "train and write metrics, checkpoint and config snapshot");
    add_config_options(trainc, train_cfg);
    trainc->add_option("-o,--out", train_out, "output directory");
    trainc->add_flag("-q,--quiet", quiet, "no per-evaluation progress lines");

    std::string checkpoint, which = "ema";
    auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on the configured test set");
    add_config_options(evalc, eval_cfg);
    evalc->add_option("--checkpoint", checkpoint, "checkpoint written by train")->required();
    evalc->add_option("--model", which, "ema or live");

    DemoArgs demo;
    auto* democ = app.add_subcommand("perturb-demo", "apply one feature perturbation to a fixture tensor");
    democ->add_option("strategy", demo.strategy, "channel_drop | spatial_drop | translate | shear | value_smooth")
        ->required();
    democ->add_option("--intensity", demo.intensity, "weak or strong");
    democ->add_option("--shape", demo.shape, "N,C,H,W")->delimiter(',');
    democ->add_option("--seed", demo.seed, "fixture and draw seed");
    democ->add_option("--length,-l", demo.length, "translate/shear length");
    democ->add_option("--direction", demo.direction, "up | down | left | right");
    democ->add_option("--kernel", demo.kernel, "value_smooth window size");
    democ->add_option("--alpha", demo.alpha, "value_smooth blend");
    democ->add_option("--keep", demo.keep, "channel_drop flags, e.g. 1011");
    democ->add_option("--rect", demo.rect, "spatial_drop x,y,h,w")->delimiter(',');
    democ->add_option("-o,--out", demo.out_dir, "output directory for before.csv / after.csv");

    std::string compare_out = "compare";
    int workers = 0;
    auto* comparec = app.add_subcommand("compare", "run the paradigm x threshold matrix over shared seeds");
    add_config_options(comparec, compare_cfg);
    comparec->add_option("-o,--out", compare_out, "output directory");
    comparec->add_option("-j,--workers", workers, "concurrent runs (default: IFMATCH_THREADS or core count)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*split) return run_split(split_cfg, manifest);
        if (*trainc) return run_train(train_cfg, train_out, quiet);
        if (*evalc) return run_eval(eval_cfg, checkpoint, which);
        if (*democ) return run_perturb_demo(demo);
        if (*comparec) return run_compare_cmd(compare_cfg, compare_out, workers);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
