#include "svdkl/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "svdkl/errors.hpp"
#include "svdkl/io.hpp"
#include "svdkl/random.hpp"
#include "svdkl/trainer.hpp"
#include "svdkl/vc_pipeline.hpp"

namespace svdkl::cli {

namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<Eigen::Index> batch_size;
    std::optional<Eigen::Index> inducing;
    std::vector<Eigen::Index> layers;
    std::optional<double> alpha;
    bool verbose = false;

    void attach(CLI::App* cmd, bool with_alpha) {
        cmd->add_option("--config", config, "training configuration file");
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_option("--epochs", epochs, "number of epochs")->check(CLI::PositiveNumber);
        cmd->add_option("--batch-size", batch_size, "minibatch size")->check(CLI::PositiveNumber);
        cmd->add_option("--inducing", inducing, "inducing variables per head")->check(CLI::PositiveNumber);
        cmd->add_option("--layers", layers, "hidden and output layer sizes, comma separated")->delimiter(',');
        if (with_alpha) cmd->add_option("--alpha", alpha, "frequency warping coefficient");
    }

    TrainConfig resolve() const {
        TrainConfig cfg = config.empty() ? TrainConfig{} : io::load_config(config);
        if (seed) cfg.seed = *seed;
        if (epochs) cfg.epochs = *epochs;
        if (batch_size) cfg.batch_size = *batch_size;
        if (inducing) cfg.inducing_count = *inducing;
        if (!layers.empty()) cfg.layer_sizes = layers;
        if (alpha) cfg.warping_alpha = *alpha;
        try {
            cfg.validate();
        } catch (const InputError& e) {
            throw ConfigError(e.what());
        }
        return cfg;
    }
};

std::vector<vc::UtterancePair> load_pair_directory(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
    const std::string src_suffix = ".src.vcfeat";
    const std::string tgt_suffix = ".tgt.vcfeat";
    std::map<std::string, fs::path> sources;
    std::map<std::string, fs::path> targets;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        auto ends_with = [&](const std::string& suf) {
            return name.size() > suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
        };
        if (ends_with(src_suffix)) sources[name.substr(0, name.size() - src_suffix.size())] = entry.path();
        if (ends_with(tgt_suffix)) targets[name.substr(0, name.size() - tgt_suffix.size())] = entry.path();
    }
    std::vector<vc::UtterancePair> pairs;
    for (const auto& [id, src] : sources) {
        auto it = targets.find(id);
        if (it == targets.end()) throw DataError("utterance '" + id + "' has no matching .tgt.vcfeat file");
        pairs.push_back({id, io::load_utterance(src), io::load_utterance(it->second)});
    }
    for (const auto& [id, _] : targets) {
        if (!sources.count(id)) throw DataError("utterance '" + id + "' has no matching .src.vcfeat file");
    }
    if (pairs.empty()) throw DataError("no <id>.src.vcfeat / <id>.tgt.vcfeat pairs found in " + dir.string());
    return pairs;
}

std::string log_row(const TrainingLogRow& row) {
    return std::to_string(row.epoch) + "\t" + io::format_decimal(row.mean_objective) + "\t" +
           (row.full_elbo ? io::format_decimal(*row.full_elbo) : std::string("nan")) + "\t" +
           std::to_string(row.jitter_escalations);
}

constexpr const char* kLogHeader = "epoch\tmean_neg_elbo\tfull_elbo\tjitter_escalations";

int cmd_align(const std::string& src, const std::string& tgt, const std::string& out_path) {
    std::vector<vc::UtterancePair> pairs{
        {fs::path(src).stem().string(), io::load_utterance(src), io::load_utterance(tgt)}};
    io::save_corpus(vc::build_training_set(pairs), out_path);
    return kOk;
}

int cmd_train(const std::string& input, const std::string& out_path, const Overrides& ov, std::ostream& out,
              std::ostream& err) {
    const TrainConfig cfg = ov.resolve();
    AlignedCorpus corpus = fs::is_directory(input) ? vc::build_training_set(load_pair_directory(input))
                                                   : io::load_corpus(input);
    if (ov.verbose) out << kLogHeader << "\n";
    const auto on_epoch = [&](const TrainingLogRow& row) {
        if (ov.verbose) out << log_row(row) << "\n" << std::flush;
    };
    const TrainResult result = train(corpus, cfg, on_epoch);
    for (const auto& w : result.log.warnings) err << "warning: " << w << "\n";

    std::string log_text = std::string(kLogHeader) + "\n";
    for (const auto& row : result.log.rows) log_text += log_row(row) + "\n";
    io::save_checkpoint(result.model, out_path, cfg);
    io::write_atomic(out_path + ".log.tsv", log_text);
    return kOk;
}

int cmd_gradcheck(const Overrides& ov, std::ostream& out) {
    TrainConfig cfg = ov.resolve();
    // Small synthetic regression problem with the configured architecture.
    constexpr Eigen::Index kPoints = 16;
    constexpr Eigen::Index kInputs = 3;
    constexpr Eigen::Index kOutputs = 2;
    Rng rng(derive_seed(cfg.seed, 77));
    AlignedCorpus corpus;
    corpus.x.resize(kPoints, kInputs);
    for (Eigen::Index i = 0; i < corpus.x.size(); ++i) corpus.x.data()[i] = rng.normal();
    corpus.y.resize(kPoints, kOutputs);
    for (Eigen::Index i = 0; i < kPoints; ++i) {
        corpus.y(i, 0) = std::sin(corpus.x(i, 0)) + 0.1 * rng.normal();
        corpus.y(i, 1) = corpus.x(i, 1) * corpus.x(i, 2) + 0.1 * rng.normal();
    }
    cfg.inducing_count = std::min<Eigen::Index>(cfg.inducing_count, 6);
    TrainingLog log;
    SvdklModel model = initialize_model(corpus, cfg, &log);
    // Move away from the symmetric initial state so every group has a nonzero gradient.
    for (auto& h : model.heads) {
        for (Eigen::Index i = 0; i < h.state.mean.size(); ++i) h.state.mean[i] = 0.5 * rng.normal();
    }
    const GradCheckReport report = grad_check(model, corpus.x, corpus.y, 1e-4, 1e-5, compute_gradients, 200);
    out << "group\tchecked\tworst_relative_error\tstatus\n";
    for (const auto& g : report.groups) {
        out << group_name(g.group) << "\t" << g.checked << "\t" << io::format_decimal(g.worst_relative_error)
            << "\t" << (g.passed ? "ok" : "FAIL") << "\n";
    }
    return report.passed ? kOk : kNumericalError;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Deep-kernel sparse GP voice conversion toolkit", "svdkl"};
    app.require_subcommand(1);

    std::string a_path, b_path, out_path;
    Overrides ov;

    auto* align = app.add_subcommand("align", "DTW-align two utterances into a training corpus file");
    align->add_option("source", a_path, "source utterance")->required();
    align->add_option("target", b_path, "target utterance")->required();
    align->add_option("--out", out_path, "aligned corpus output")->required();

    auto* train_cmd = app.add_subcommand("train", "train a model from paired utterances or an aligned corpus");
    train_cmd->add_option("input", a_path, "directory of <id>.src.vcfeat/<id>.tgt.vcfeat pairs, or corpus file")
        ->required();
    train_cmd->add_option("--out", out_path, "checkpoint output")->required();
    train_cmd->add_flag("--verbose", ov.verbose, "print the training log");
    ov.attach(train_cmd, true);

    auto* convert = app.add_subcommand("convert", "convert a source utterance with a trained model");
    convert->add_option("checkpoint", a_path, "model checkpoint")->required();
    convert->add_option("source", b_path, "source utterance")->required();
    convert->add_option("--out", out_path, "converted utterance output")->required();

    auto* evaluate = app.add_subcommand("evaluate", "mel-cepstral distortion between two utterances in dB");
    evaluate->add_option("first", a_path, "utterance")->required();
    evaluate->add_option("second", b_path, "utterance")->required();

    Eigen::Index frame = 0;
    Eigen::Index bins = 513;
    double alpha = 0.41;
    auto* spectrum = app.add_subcommand("spectrum", "log magnitude spectrum of one frame");
    spectrum->add_option("utterance", a_path, "utterance")->required();
    spectrum->add_option("--frame", frame, "frame index")->required()->check(CLI::NonNegativeNumber);
    spectrum->add_option("--bins", bins, "number of frequency bins")->check(CLI::Range(2, 1 << 20));
    spectrum->add_option("--alpha", alpha, "frequency warping coefficient");

    auto* gradcheck = app.add_subcommand("gradcheck", "compare gradients with finite differences");
    ov.attach(gradcheck, false);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return kUsage;
    }

    try {
        if (align->parsed()) return cmd_align(a_path, b_path, out_path);
        if (train_cmd->parsed()) return cmd_train(a_path, out_path, ov, out, err);
        if (convert->parsed()) {
            const SvdklModel model = io::load_checkpoint(a_path);
            io::save_utterance(vc::convert_utterance(model, io::load_utterance(b_path)), out_path);
            return kOk;
        }
        if (evaluate->parsed()) {
            out << io::format_decimal(vc::mcd(io::load_utterance(a_path), io::load_utterance(b_path))) << "\n";
            return kOk;
        }
        if (spectrum->parsed()) {
            const vc::Utterance u = io::load_utterance(a_path);
            if (frame >= u.frames()) {
                throw InputError("frame " + std::to_string(frame) + " is out of range; utterance has " +
                                 std::to_string(u.frames()) + " frames");
            }
            const vc::WarpingConfig wc{alpha, 0.0, bins};
            const Vector omega = vc::spectrum_frequencies(bins);
            const Vector logmag = vc::mcc_to_log_spectrum(u.mcc.row(frame).transpose(), wc);
            for (Eigen::Index k = 0; k < bins; ++k) {
                out << io::format_decimal(omega[k]) << "\t" << io::format_decimal(logmag[k]) << "\n";
            }
            return kOk;
        }
        if (gradcheck->parsed()) return cmd_gradcheck(ov, out);
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kNumericalError;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    }
    err << "error: no subcommand\n";
    return kUsage;
}

}  // namespace svdkl::cli
