// Command-line driver: cv, sweep, embed, synth, importance.
// Exit codes: 0 success, 2 bad input, 3 aborted (non-finite loss) runs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "wpfs/data.hpp"
#include "wpfs/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitAborted = 3;

std::uint64_t default_seed() {
    if (const char* env = std::getenv("WPFS_SEED")) {
        try {
            return std::stoull(env);
        } catch (...) {
            throw wpfs::InputError(std::string("WPFS_SEED is not an integer: '") + env + "'");
        }
    }
    return 42;
}

// Flat JSON config mirroring the RunConfig field names; command-line flags
// override file values.
void apply_config_file(const std::string& path, wpfs::ExperimentConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw wpfs::InputError("cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw wpfs::InputError("config file '" + path + "': " + e.what());
    }
    wpfs::RunConfig& r = cfg.run;
    for (auto& [key, value] : j.items()) {
        try {
            if (key == "lambda") r.lambda = value.get<double>();
            else if (key == "embed_method")
                r.embed_method = wpfs::embed_method_from_string(value.get<std::string>());
            else if (key == "embed_size") r.embed_size = value.get<std::size_t>();
            else if (key == "embed_preprocessing")
                r.embed_preprocessing =
                    wpfs::embed_preprocessing_from_string(value.get<std::string>());
            else if (key == "nmf_iters") r.nmf_iters = value.get<std::size_t>();
            else if (key == "batch_size") r.batch_size = value.get<std::size_t>();
            else if (key == "max_iterations") r.max_iterations = value.get<long>();
            else if (key == "patience") r.patience = value.get<long>();
            else if (key == "clip_norm") r.clip_norm = value.get<double>();
            else if (key == "lr_start") r.schedule.lr_start = value.get<double>();
            else if (key == "lr_end") r.schedule.lr_end = value.get<double>();
            else if (key == "decay_epochs") r.schedule.decay_epochs = value.get<long>();
            else if (key == "adam_beta1") r.adamw.beta1 = value.get<double>();
            else if (key == "adam_beta2") r.adamw.beta2 = value.get<double>();
            else if (key == "adam_eps") r.adamw.eps = value.get<double>();
            else if (key == "weight_decay") r.adamw.weight_decay = value.get<double>();
            else if (key == "dropout") r.dropout = value.get<double>();
            else if (key == "bn_momentum") r.bn_momentum = value.get<double>();
            else if (key == "tau") r.tau = value.get<double>();
            else if (key == "first_hidden") r.first_hidden = value.get<std::size_t>();
            else if (key == "classifier_tail")
                r.classifier_tail = value.get<std::vector<std::size_t>>();
            else if (key == "aux_hidden") r.aux_hidden = value.get<std::vector<std::size_t>>();
            else if (key == "seed") r.seed = value.get<std::uint64_t>();
            else if (key == "folds") cfg.folds = value.get<std::size_t>();
            else if (key == "repeats") cfg.repeats = value.get<std::size_t>();
            else if (key == "val_fraction") cfg.val_fraction = value.get<double>();
            else if (key == "method") cfg.method = value.get<std::string>();
            else
                throw wpfs::InputError("config file '" + path + "': unknown key '" + key + "'");
        } catch (const json::exception& e) {
            throw wpfs::InputError("config file '" + path + "', key '" + key + "': " + e.what());
        }
    }
}

std::vector<double> parse_lambda_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t pos = 0;
            const double v = std::stod(item, &pos);
            if (pos != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (...) {
            throw wpfs::InputError("bad lambda value '" + item + "'");
        }
    }
    if (out.empty()) throw wpfs::InputError("lambda list is empty");
    return out;
}

struct CvFlags {
    std::string data_path;
    std::string label_col = "label";
    std::string config_path;
    std::string out_dir;
    std::optional<std::string> method;
    std::optional<std::uint64_t> seed;
    std::optional<double> lambda;
    std::size_t jobs = 1;
    bool save_models = false;
};

void add_cv_flags(CLI::App* cmd, CvFlags& f, bool with_method) {
    cmd->add_option("--data", f.data_path, "dataset CSV")->required();
    cmd->add_option("--label-col", f.label_col, "name of the label column");
    cmd->add_option("--config", f.config_path, "JSON config file (flat RunConfig keys)");
    cmd->add_option("--out", f.out_dir, "output directory")->required();
    if (with_method)
        cmd->add_option("--method", f.method,
                        "wpfs | mlp | wpfs-nospn | wpfs-nowpn (default wpfs)");
    cmd->add_option("--seed", f.seed, "master seed (default: WPFS_SEED or 42)");
    cmd->add_option("--lambda", f.lambda, "sparsity loss weight");
    cmd->add_option("--jobs", f.jobs, "parallel (fold, repeat) runs");
    cmd->add_flag("--save-models", f.save_models, "keep every run's model file");
}

// Precedence: explicit flags > config file > WPFS_SEED/built-in defaults.
wpfs::ExperimentConfig build_experiment_config(const CvFlags& f) {
    wpfs::ExperimentConfig cfg;
    cfg.run.seed = default_seed();
    if (!f.config_path.empty()) apply_config_file(f.config_path, cfg);
    if (f.method) cfg.method = *f.method;
    cfg.jobs = f.jobs;
    cfg.save_models = f.save_models;
    if (f.seed) cfg.run.seed = *f.seed;
    if (f.lambda) cfg.run.lambda = *f.lambda;
    return cfg;
}

int cmd_cv(const CvFlags& flags) {
    wpfs::ExperimentConfig cfg = build_experiment_config(flags);
    const wpfs::Dataset data = wpfs::load_dataset_csv(flags.data_path, flags.label_col);
    const std::uint64_t digest = wpfs::file_digest(flags.data_path);
    const wpfs::ExperimentOutcome outcome =
        wpfs::run_cv_experiment(data, cfg, digest, flags.out_dir);
    const auto& agg = outcome.manifest["aggregate"];
    if (agg.contains("mean_bacc")) {
        std::cout << "method " << cfg.method << ": mean balanced accuracy "
                  << agg["mean_bacc"].get<double>() << " +/- " << agg["std_bacc"].get<double>()
                  << " over " << agg["runs_completed"].get<std::size_t>() << " runs\n";
    }
    if (outcome.any_aborted) {
        std::cerr << "warning: some runs aborted on non-finite loss; partial outputs are "
                     "flagged in the manifest\n";
        return kExitAborted;
    }
    return kExitOk;
}

int cmd_sweep(const CvFlags& flags, const std::string& lambdas_text) {
    wpfs::ExperimentConfig cfg = build_experiment_config(flags);
    const std::vector<double> lambdas =
        lambdas_text.empty() ? std::vector<double>{0.0, 3e-6, 3e-5, 3e-4, 3e-3, 1e-2}
                             : parse_lambda_list(lambdas_text);
    const wpfs::Dataset data = wpfs::load_dataset_csv(flags.data_path, flags.label_col);
    const std::uint64_t digest = wpfs::file_digest(flags.data_path);
    const wpfs::ExperimentOutcome outcome =
        wpfs::run_sweep(data, cfg, lambdas, digest, flags.out_dir);
    std::cout << "sweep over " << lambdas.size() << " lambda values written to " << flags.out_dir
              << "/sweep_summary.csv\n";
    return outcome.any_aborted ? kExitAborted : kExitOk;
}

int cmd_embed(const std::string& data_path, const std::string& label_col,
              const std::string& method_name, std::size_t size,
              const std::string& preprocessing_name, std::size_t nmf_iters, std::uint64_t seed,
              const std::string& out_path) {
    const wpfs::EmbedMethod method = wpfs::embed_method_from_string(method_name);
    const wpfs::EmbedPreprocessing prep =
        wpfs::embed_preprocessing_from_string(preprocessing_name);
    auto [x, feature_names] = wpfs::load_matrix_csv(data_path, label_col);
    x.ensure_finite("embedding input");
    wpfs::Rng rng(seed, 0xE0BED);
    const wpfs::EmbeddingMatrix emb =
        wpfs::compute_embedding(x, method, size, prep, nmf_iters, rng);

    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw wpfs::InputError("cannot open '" + out_path + "' for writing");
    out << "feature";
    for (std::size_t c = 0; c < emb.e.cols(); ++c)
        out << ',' << wpfs::to_string(emb.method) << emb.size << "_e" << c;
    out << '\n';
    out.precision(17);
    for (std::size_t j = 0; j < emb.e.rows(); ++j) {
        out << (j < feature_names.size() ? feature_names[j] : "f" + std::to_string(j));
        for (std::size_t c = 0; c < emb.e.cols(); ++c) out << ',' << emb.e(j, c);
        out << '\n';
    }
    std::cout << "wrote " << emb.e.rows() << "x" << emb.e.cols() << " " << method_name
              << " embedding to " << out_path << "\n";
    return kExitOk;
}

int cmd_synth(const wpfs::SynthSpec& spec, std::uint64_t seed, const std::string& out_dir) {
    const wpfs::Dataset data = wpfs::synth_dataset(spec, seed);
    fs::create_directories(out_dir);
    wpfs::write_dataset_csv(data, out_dir + "/data.csv");
    std::ofstream info(out_dir + "/informative.csv", std::ios::trunc);
    info << "feature_index,feature_name\n";
    for (std::size_t j : data.informative) info << j << ',' << data.feature_names[j] << '\n';
    std::cout << "wrote " << data.x.rows() << "x" << data.x.cols() << " synthetic dataset ("
              << data.informative.size() << " informative features) to " << out_dir << "\n";
    return kExitOk;
}

int cmd_importance(const std::string& model_path, double threshold,
                   const std::string& out_path) {
    wpfs::WpfsModel model = wpfs::WpfsModel::load(model_path);
    const wpfs::ImportanceVector imp = model.feature_importance(threshold);
    if (!imp.available)
        throw wpfs::InputError("model '" + model_path +
                               "' has no sparsity network; importance is unavailable");
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw wpfs::InputError("cannot open '" + out_path + "' for writing");
    out << "feature_index,feature_name,score,selected\n";
    out.precision(17);
    std::vector<char> selected(imp.s.size(), 0);
    for (std::size_t j : imp.selected) selected[j] = 1;
    for (std::size_t j = 0; j < imp.s.size(); ++j)
        out << j << ",f" << j << ',' << imp.s[j] << ',' << int(selected[j]) << '\n';
    std::cout << imp.selected.size() << " of " << imp.s.size() << " features selected at s > "
              << threshold << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"WPFS: feed-forward classifier with generated first-layer weights and "
                 "embedding-based feature selection"};
    app.require_subcommand(1);

    CvFlags cv_flags;
    CLI::App* cv = app.add_subcommand("cv", "repeated stratified cross-validation");
    add_cv_flags(cv, cv_flags, true);

    CvFlags sweep_flags;
    std::string lambdas_text;
    CLI::App* sweep = app.add_subcommand("sweep", "cv once per lambda value");
    add_cv_flags(sweep, sweep_flags, true);
    sweep->add_option("--lambdas", lambdas_text,
                      "comma-separated lambda grid (default 0,3e-6,3e-5,3e-4,3e-3,1e-2)");

    std::string embed_data, embed_label = "label", embed_method = "nmf",
                embed_prep = "minmax", embed_out;
    std::size_t embed_size = 50, embed_nmf_iters = 1000;
    std::optional<std::uint64_t> embed_seed;
    CLI::App* embed = app.add_subcommand("embed", "write per-feature embeddings as CSV");
    embed->add_option("--data", embed_data, "dataset CSV")->required();
    embed->add_option("--label-col", embed_label, "label column to exclude");
    embed->add_option("--method", embed_method, "nmf | svd | dot_histogram | feature_values");
    embed->add_option("--size", embed_size, "embedding size M (bins for dot_histogram)");
    embed->add_option("--preprocessing", embed_prep, "minmax | zscore | raw");
    embed->add_option("--nmf-iters", embed_nmf_iters, "NMF iterations");
    embed->add_option("--seed", embed_seed, "seed (default: WPFS_SEED or 42)");
    embed->add_option("--out", embed_out, "output CSV")->required();

    wpfs::SynthSpec synth_spec;
    std::string synth_out, synth_preset;
    std::optional<std::uint64_t> synth_seed;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--preset", synth_preset, "named preset: default");
    synth->add_option("--samples", synth_spec.samples, "sample count");
    synth->add_option("--features", synth_spec.features, "feature count");
    synth->add_option("--informative", synth_spec.informative, "informative feature count");
    synth->add_option("--classes", synth_spec.classes, "class count");
    synth->add_option("--noise", synth_spec.noise, "noise sigma on informative coordinates");
    synth->add_option("--seed", synth_seed, "seed (default: WPFS_SEED or 42)");
    synth->add_option("--out", synth_out, "output directory")->required();

    std::string imp_model, imp_out;
    double imp_threshold = 0.95;
    CLI::App* importance = app.add_subcommand("importance",
                                              "export feature importance from a saved model");
    importance->add_option("--model", imp_model, "model file (.wpfs)")->required();
    importance->add_option("--threshold", imp_threshold, "selection threshold tau");
    importance->add_option("--out", imp_out, "output CSV")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(cv)) return cmd_cv(cv_flags);
        if (app.got_subcommand(sweep)) return cmd_sweep(sweep_flags, lambdas_text);
        if (app.got_subcommand(embed))
            return cmd_embed(embed_data, embed_label, embed_method, embed_size, embed_prep,
                             embed_nmf_iters, embed_seed ? *embed_seed : default_seed(),
                             embed_out);
        if (app.got_subcommand(synth)) {
            if (!synth_preset.empty() && synth_preset != "default")
                throw wpfs::InputError("unknown preset '" + synth_preset +
                                       "' (valid: default)");
            // --preset default keeps the SynthSpec defaults (150x2000, 10
            // informative, 2 classes, sigma 1); explicit flags override.
            return cmd_synth(synth_spec, synth_seed ? *synth_seed : default_seed(), synth_out);
        }
        if (app.got_subcommand(importance))
            return cmd_importance(imp_model, imp_threshold, imp_out);
    } catch (const wpfs::DivergenceError& e) {
        std::cerr << "aborted: " << e.what() << "\n";
        return kExitAborted;
    } catch (const wpfs::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const wpfs::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const wpfs::ValueError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
