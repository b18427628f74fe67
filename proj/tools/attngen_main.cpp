#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "attngen/analysis.hpp"
#include "attngen/checkpoint.hpp"
#include "attngen/data.hpp"
#include "attngen/errors.hpp"
#include "attngen/model.hpp"
#include "attngen/runconfig.hpp"
#include "attngen/textio.hpp"
#include "attngen/trainer.hpp"

namespace {

using namespace attngen;

std::string flag_name(const std::string& key) {
    std::string out = "--";
    for (char c : key) out.push_back(c == '_' ? '-' : c);
    return out;
}

// Progress-line formatting only; artifacts keep full round-trip precision.
std::string fixed2(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", value);
    return std::string(buf);
}

std::string pct(double fraction) { return fixed2(fraction * 100.0) + "%"; }

std::size_t thread_cap() {
    const char* env = std::getenv("ATTNGEN_THREADS");
    if (env == nullptr || *env == '\0') return 1;
    const auto n = parse_number<std::size_t>(env, "ATTNGEN_THREADS");
    return n == 0 ? 1 : n;
}

const std::string& require_key(const RunConfig& cfg, const std::string& key,
                               const std::string& command) {
    const std::string& value = cfg.get(key);
    if (value.empty()) throw ConfigError(command + " requires " + key + "=<path>");
    return value;
}

// Inputs are loaded before this runs, so a bad corpus or checkpoint leaves
// the output directory untouched.
std::filesystem::path prepare_out_dir(const RunConfig& cfg) {
    const std::filesystem::path dir = cfg.get("out_dir");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
    cfg.write_snapshot((dir / "resolved_config.txt").string());
    return dir;
}

Corpus select_part(const RunConfig& cfg, Corpus&& corpus) {
    const std::string& split = cfg.get("split");
    if (split == "none") return std::move(corpus);
    auto parts = split_corpus(corpus, cfg.get_double("train_fraction"), cfg.get_u64("seed"));
    if (split == "validation") return std::move(parts.validation);
    if (split == "train") return std::move(parts.train);
    throw ConfigError("config split: expected none, train, or validation, got '" + split + "'");
}

template <typename T>
void cmd_train(const RunConfig& cfg) {
    const TrainConfig train_cfg = cfg.train_config();
    const AttnGenConfig model_cfg = cfg.model_config();
    const std::string& corpus_path = require_key(cfg, "corpus", "train");
    Corpus corpus = load_csv_corpus(corpus_path, model_cfg.sequence_length);
    DatasetSplit split = split_corpus(corpus, cfg.get_double("train_fraction"), train_cfg.seed);
    const auto dir = prepare_out_dir(cfg);

    auto model = init_model<T>(model_cfg, train_cfg.seed);
    const MetricsSink sink = [&](const EpochMetrics& m) {
        std::cout << "epoch " << m.epoch << '/' << train_cfg.max_epochs << "  loss "
                  << fixed2(m.train_loss) << "  train_acc " << pct(m.train_acc) << "  val_acc "
                  << pct(m.val_acc) << '\n';
        if (m.stability_warning)
            std::cerr << "attngen: warning: validation loss rose " << kStabilityRunLength
                      << " epochs in a row (epoch " << m.epoch << ")\n";
    };
    TrainResult result = train(model, split, train_cfg, sink);

    write_metrics_csv((dir / "metrics.csv").string(), result.history);
    save_checkpoint(result.best, (dir / "model.ckpt").string());
    std::cout << "best val_acc " << pct(result.best_val_acc) << " at epoch "
              << result.best_epoch << " (" << result.epochs_run << " epochs run); wrote "
              << (dir / "model.ckpt").string() << '\n';
}

template <typename T>
void cmd_eval(const RunConfig& cfg) {
    const std::string& ckpt_path = require_key(cfg, "checkpoint", "eval");
    const std::string& corpus_path = require_key(cfg, "corpus", "eval");
    auto model = model_from_checkpoint<T>(load_checkpoint(ckpt_path));
    Corpus part = select_part(cfg, load_csv_corpus(corpus_path, model.config.sequence_length));
    const EvalResult r = evaluate(model, part, cfg.get_size("batch"));
    const auto dir = prepare_out_dir(cfg);

    const std::string path = (dir / "eval.csv").string();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << "sequences,accuracy,loss,mean_prob_0,mean_prob_1\n"
        << part.size() << ',' << fmt_float(r.accuracy) << ',' << fmt_float(r.loss) << ','
        << fmt_float(r.mean_probs[0]) << ',' << fmt_float(r.mean_probs[1]) << '\n';
    if (!out) throw DataError("write failed: " + path);
    std::cout << "accuracy " << pct(r.accuracy) << " over " << part.size()
              << " sequences\n";
}

template <typename T>
void cmd_perturb(const RunConfig& cfg) {
    const std::string& ckpt_path = require_key(cfg, "checkpoint", "perturb");
    const std::string& corpus_path = require_key(cfg, "corpus", "perturb");
    const OcclusionOrder order = parse_order(cfg.get("order"));
    const std::vector<std::size_t> schedule = cfg.get_size_list("schedule");
    auto model = model_from_checkpoint<T>(load_checkpoint(ckpt_path));
    Corpus part = select_part(cfg, load_csv_corpus(corpus_path, model.config.sequence_length));
    const std::size_t cap = cfg.get_size("eval_count");
    if (cap > 0 && part.size() > cap) part.resize(cap);

    const PerturbationCurve curve =
        perturbation_curve(model, part, schedule, order, cfg.get_u64("seed"));
    const auto dir = prepare_out_dir(cfg);
    const std::string stem = "curve_" + order_name(order);
    write_curve_csv((dir / (stem + ".csv")).string(), curve);
    render_accuracy_curve((dir / (stem + ".svg")).string(), curve);
    std::cout << curve.rows.size() << " rows over " << part.size() << " sequences; wrote "
              << (dir / (stem + ".csv")).string() << " and " << (dir / (stem + ".svg")).string()
              << '\n';
}

template <typename T>
void cmd_ablate(const RunConfig& cfg) {
    const TrainConfig base = cfg.train_config();
    const AttnGenConfig model_cfg = cfg.model_config();
    const std::string& corpus_path = require_key(cfg, "corpus", "ablate");
    Corpus corpus = load_csv_corpus(corpus_path, model_cfg.sequence_length);
    DatasetSplit split = split_corpus(corpus, cfg.get_double("train_fraction"), base.seed);
    const auto dir = prepare_out_dir(cfg);

    const auto arms = ablation_suite<T>(model_cfg, split, base, base.seed, thread_cap());
    write_ablation_csv((dir / "ablation.csv").string(), arms);
    static const char* const kSlugs[] = {"full", "random_kl", "attention_no_kl", "baseline"};
    for (std::size_t i = 0; i < arms.size(); ++i) {
        if (!arms[i].ok) continue;
        write_metrics_csv((dir / ("metrics_" + std::string(kSlugs[i]) + ".csv")).string(),
                          arms[i].result.history);
        std::cout << arms[i].label << ": val_acc " << pct(arms[i].result.best_val_acc)
                  << " (best epoch "
                  << arms[i].result.best_epoch << ")\n";
    }
    // Config and data problems surface before the suite starts, so a failed
    // arm means training itself aborted.
    for (const auto& arm : arms)
        if (!arm.ok) throw NumericalError("ablation arm '" + arm.label + "' failed: " + arm.error);
}

template <typename T>
void cmd_viz(const RunConfig& cfg) {
    const std::string& ckpt_path = require_key(cfg, "checkpoint", "viz");
    const std::string& corpus_path = require_key(cfg, "corpus", "viz");
    const std::vector<double> alphas = cfg.get_double_list("alphas");
    auto model = model_from_checkpoint<T>(load_checkpoint(ckpt_path));
    Corpus part = select_part(cfg, load_csv_corpus(corpus_path, model.config.sequence_length));
    const std::size_t cap = cfg.get_size("viz_count");
    if (cap > 0 && part.size() > cap) part.resize(cap);

    const auto dir = prepare_out_dir(cfg);
    render_mask_patterns(model, part, alphas, (dir / "mask_patterns.ppm").string(),
                         (dir / "mask_patterns.csv").string());
    std::cout << part.size() << " sequences x " << alphas.size() << " alphas; wrote "
              << (dir / "mask_patterns.ppm").string() << " and "
              << (dir / "mask_patterns.csv").string() << '\n';
}

void cmd_gen_synthetic(const RunConfig& cfg) {
    const SyntheticCorpus synth = generate_synthetic(cfg.synthetic_spec());
    const auto dir = prepare_out_dir(cfg);
    write_csv_corpus((dir / "synthetic.csv").string(), synth.sequences);
    write_truth_csv((dir / "synthetic_truth.csv").string(), synth.sequences, synth.truth);
    std::cout << synth.sequences.size() << " sequences; wrote "
              << (dir / "synthetic.csv").string() << " and "
              << (dir / "synthetic_truth.csv").string() << '\n';
}

void run_command(const std::string& name, const RunConfig& cfg) {
    const std::string& precision = cfg.get("precision");
    if (precision != "f32" && precision != "f64")
        throw ConfigError("config precision: expected f32 or f64, got '" + precision + "'");
    const bool wide = precision == "f64";
    if (name == "train") {
        wide ? cmd_train<double>(cfg) : cmd_train<float>(cfg);
    } else if (name == "eval") {
        wide ? cmd_eval<double>(cfg) : cmd_eval<float>(cfg);
    } else if (name == "perturb") {
        wide ? cmd_perturb<double>(cfg) : cmd_perturb<float>(cfg);
    } else if (name == "ablate") {
        wide ? cmd_ablate<double>(cfg) : cmd_ablate<float>(cfg);
    } else if (name == "viz") {
        wide ? cmd_viz<double>(cfg) : cmd_viz<float>(cfg);
    } else {
        cmd_gen_synthetic(cfg);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"AttnGen: attention-guided masking for genomic sequence classifiers"};
    app.require_subcommand(1);

    struct Command {
        CLI::App* sub = nullptr;
        std::string name;
        std::string config_path;
        std::vector<std::pair<std::string, std::string>> overrides;
    };
    static const std::pair<const char*, const char*> kCommands[] = {
        {"train", "split a corpus, train, and write metrics plus the best checkpoint"},
        {"eval", "score a checkpoint on a corpus part"},
        {"perturb", "occlusion accuracy curve for a trained checkpoint"},
        {"ablate", "four-arm masking ablation on one corpus"},
        {"viz", "mask-pattern pixmap and CSV for selected sequences"},
        {"gen-synthetic", "generate a planted-motif corpus with ground truth"},
    };
    std::array<Command, 6> commands;
    for (std::size_t i = 0; i < commands.size(); ++i) {
        Command& cmd = commands[i];
        cmd.name = kCommands[i].first;
        cmd.sub = app.add_subcommand(kCommands[i].first, kCommands[i].second);
        cmd.sub->add_option("--config", cmd.config_path, "flat key = value settings file");
        for (const auto& spec : attngen::RunConfig::registry()) {
            cmd.sub->add_option_function<std::string>(
                flag_name(spec.key),
                [&cmd, key = std::string(spec.key)](const std::string& value) {
                    cmd.overrides.emplace_back(key, value);
                },
                spec.help);
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "attngen: " << e.what() << '\n';
        return 1;
    }

    try {
        for (const Command& cmd : commands) {
            if (!cmd.sub->parsed()) continue;
            attngen::RunConfig cfg;
            if (!cmd.config_path.empty()) cfg.load_file(cmd.config_path);
            for (const auto& [key, value] : cmd.overrides) cfg.set(key, value);
            run_command(cmd.name, cfg);
            return 0;
        }
        std::cerr << "attngen: no command given\n";
        return 1;
    } catch (const attngen::NumericalError& e) {
        std::cerr << "attngen: " << e.what() << '\n';
        return 3;
    } catch (const attngen::DataError& e) {
        std::cerr << "attngen: " << e.what() << '\n';
        return 2;
    } catch (const attngen::ConfigError& e) {
        std::cerr << "attngen: " << e.what() << '\n';
        return 1;
    } catch (const attngen::UsageError& e) {
        std::cerr << "attngen: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "attngen: " << e.what() << '\n';
        return 1;
    }
}
