#include "wpfs/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <thread>

#include "wpfs/metrics.hpp"

namespace wpfs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void write_curves_csv(const std::string& path,
                      const std::vector<DivergenceError::CurvePoint>& curves) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    out << "iteration,train_loss,val_loss\n";
    out.precision(17);
    for (const auto& p : curves)
        out << p.iteration << ',' << p.train_loss << ',' << p.val_loss << '\n';
}

void write_importance_csv(const std::string& path, const ImportanceVector& imp,
                          const std::vector<std::string>& feature_names) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    out << "feature_index,feature_name,score,selected\n";
    out.precision(17);
    std::vector<char> selected(imp.s.size(), 0);
    for (std::size_t j : imp.selected) selected[j] = 1;
    for (std::size_t j = 0; j < imp.s.size(); ++j) {
        out << j << ',' << (j < feature_names.size() ? feature_names[j] : "") << ',' << imp.s[j]
            << ',' << int(selected[j]) << '\n';
    }
}

json config_to_json(const ExperimentConfig& cfg) {
    const RunConfig& r = cfg.run;
    json j;
    j["method"] = cfg.method;
    j["folds"] = cfg.folds;
    j["repeats"] = cfg.repeats;
    j["val_fraction"] = cfg.val_fraction;
    j["lambda"] = r.lambda;
    j["embed_method"] = to_string(r.embed_method);
    j["embed_size"] = r.embed_size;
    j["embed_preprocessing"] = to_string(r.embed_preprocessing);
    j["nmf_iters"] = r.nmf_iters;
    j["batch_size"] = r.batch_size;
    j["max_iterations"] = r.max_iterations;
    j["patience"] = r.patience;
    j["clip_norm"] = r.clip_norm;
    j["lr_start"] = r.schedule.lr_start;
    j["lr_end"] = r.schedule.lr_end;
    j["decay_epochs"] = r.schedule.decay_epochs;
    j["adam_beta1"] = r.adamw.beta1;
    j["adam_beta2"] = r.adamw.beta2;
    j["adam_eps"] = r.adamw.eps;
    j["weight_decay"] = r.adamw.weight_decay;
    j["dropout"] = r.dropout;
    j["bn_momentum"] = r.bn_momentum;
    j["tau"] = r.tau;
    j["use_wpn"] = r.use_wpn;
    j["use_spn"] = r.use_spn;
    j["first_hidden"] = r.first_hidden;
    j["classifier_tail"] = r.classifier_tail;
    j["aux_hidden"] = r.aux_hidden;
    return j;
}

}  // namespace

MethodFlags method_flags(const std::string& method) {
    if (method == "wpfs") return {true, true, false};
    if (method == "mlp") return {false, false, true};
    if (method == "wpfs-nospn") return {true, false, true};
    if (method == "wpfs-nowpn") return {false, true, false};
    throw InputError("unknown method '" + method +
                     "' (valid: wpfs, mlp, wpfs-nospn, wpfs-nowpn)");
}

std::string format_lambda(double lambda) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", lambda);
    return buf;
}

ExperimentOutcome run_cv_experiment(const Dataset& data, const ExperimentConfig& cfg,
                                    std::uint64_t dataset_digest_value,
                                    const std::string& out_dir) {
    const auto started = std::chrono::steady_clock::now();
    const std::string started_at = iso_timestamp();

    const MethodFlags flags = method_flags(cfg.method);
    RunConfig base = cfg.run;
    base.use_wpn = flags.use_wpn;
    base.use_spn = flags.use_spn;
    if (flags.force_lambda_zero) base.lambda = 0.0;
    base.validate();

    const FoldPlan plan = stratified_cv(data.y, data.class_count, cfg.folds, cfg.repeats,
                                        cfg.val_fraction, base.seed);

    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/curves");
    if (flags.use_spn) fs::create_directories(out_dir + "/importance");
    fs::create_directories(out_dir + "/models");

    const std::size_t total_runs = cfg.folds * cfg.repeats;
    struct RunState {
        RunResult result;
        bool aborted = false;
        std::string abort_reason;
        std::vector<DivergenceError::CurvePoint> abort_curves;
    };
    std::vector<RunState> states(total_runs);

    auto model_path = [&](std::size_t r, std::size_t f) {
        return out_dir + "/models/run_r" + std::to_string(r) + "_f" + std::to_string(f) +
               ".wpfs";
    };

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= total_runs) return;
            const std::size_t r = idx / cfg.folds;
            const std::size_t f = idx % cfg.folds;
            RunConfig run_cfg = base;
            run_cfg.seed = Rng::mix(base.seed, r * cfg.folds + f);
            try {
                states[idx].result =
                    train_run(data, plan.split(r, f), run_cfg, model_path(r, f));
            } catch (const DivergenceError& e) {
                states[idx].aborted = true;
                states[idx].abort_reason = e.what();
                states[idx].abort_curves = e.curves();
            }
        }
    };

    const std::size_t jobs = std::max<std::size_t>(1, cfg.jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(jobs, total_runs); ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    // Single collector writes all outputs after the completion barrier.
    ExperimentOutcome outcome;
    std::vector<double> baccs, val_losses, selected_fractions, ratios;
    json runs = json::array();
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_idx = total_runs;
    for (std::size_t idx = 0; idx < total_runs; ++idx) {
        const std::size_t r = idx / cfg.folds;
        const std::size_t f = idx % cfg.folds;
        RunState& st = states[idx];
        const std::string tag = "run_r" + std::to_string(r) + "_f" + std::to_string(f);

        json run;
        run["repeat"] = r;
        run["fold"] = f;
        run["seed"] = Rng::mix(base.seed, r * cfg.folds + f);
        run["aborted"] = st.aborted;
        if (st.aborted) {
            outcome.any_aborted = true;
            run["abort_reason"] = st.abort_reason;
            write_curves_csv(out_dir + "/curves/" + tag + ".csv", st.abort_curves);
            runs.push_back(std::move(run));
            continue;
        }
        const RunResult& res = st.result;
        outcome.runs.push_back(res);
        run["test_bacc"] = res.test_bacc;
        run["best_val_loss"] = res.best_val_loss;
        run["best_epoch"] = res.best_epoch;
        run["epochs"] = res.epochs;
        run["iterations"] = res.iterations;
        run["train_ce"] = res.train_ce;
        if (flags.use_spn) {
            run["sparsity_sum"] = res.sparsity_sum;
            run["selected_count"] = res.importance.selected.size();
            const double frac = static_cast<double>(res.importance.selected.size()) /
                                static_cast<double>(res.importance.s.size());
            run["selected_fraction"] = frac;
            selected_fractions.push_back(frac);
            if (base.lambda > 0.0 && res.train_ce > 0.0)
                ratios.push_back(base.lambda * res.sparsity_sum / res.train_ce);
            write_importance_csv(out_dir + "/importance/" + tag + ".csv", res.importance,
                                 data.feature_names);
        }
        run["wall_seconds"] = res.wall_seconds;
        write_curves_csv(out_dir + "/curves/" + tag + ".csv", res.curves);
        baccs.push_back(res.test_bacc);
        val_losses.push_back(res.best_val_loss);
        if (res.best_val_loss < best_val) {
            best_val = res.best_val_loss;
            best_idx = idx;
        }
        runs.push_back(std::move(run));
    }

    // Keep the best run's model as model_best.wpfs; drop the rest unless asked.
    if (best_idx < total_runs) {
        const std::size_t r = best_idx / cfg.folds;
        const std::size_t f = best_idx % cfg.folds;
        fs::copy_file(model_path(r, f), out_dir + "/model_best.wpfs",
                      fs::copy_options::overwrite_existing);
    }
    if (!cfg.save_models) fs::remove_all(out_dir + "/models");

    json manifest;
    manifest["tool_version"] = "wpfs 1.0.0";
    manifest["seed"] = base.seed;
    manifest["config"] = config_to_json(cfg);
    manifest["config"]["lambda"] = base.lambda;
    manifest["config"]["use_wpn"] = base.use_wpn;
    manifest["config"]["use_spn"] = base.use_spn;
    {
        const std::string dumped = manifest["config"].dump();
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char ch : dumped) {
            h ^= ch;
            h *= 1099511628211ULL;
        }
        manifest["config_digest"] = h;
    }
    json ds;
    ds["digest"] = dataset_digest_value;
    ds["samples"] = data.x.rows();
    ds["features"] = data.x.cols();
    ds["classes"] = data.class_count;
    ds["label_mapping"] = data.label_names;
    manifest["dataset"] = ds;
    manifest["fold_plan_digest"] = plan.digest();
    manifest["runs"] = runs;

    json agg;
    if (!baccs.empty()) {
        agg["runs_completed"] = baccs.size();
        agg["mean_bacc"] = mean(baccs);
        agg["std_bacc"] = population_std(baccs);
        agg["mean_best_val_loss"] = mean(val_losses);
        if (!selected_fractions.empty()) {
            agg["mean_selected_fraction"] = mean(selected_fractions);
            if (!ratios.empty()) agg["mean_sparsity_ce_ratio"] = mean(ratios);
        }
    } else {
        agg["runs_completed"] = 0;
    }
    manifest["aggregate"] = agg;
    manifest["timestamps"] = {{"started", started_at}, {"finished", iso_timestamp()}};
    manifest["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    std::ofstream out(out_dir + "/manifest.json", std::ios::trunc);
    if (!out) throw InputError("cannot open '" + out_dir + "/manifest.json' for writing");
    out << manifest.dump(2) << '\n';

    outcome.manifest = std::move(manifest);
    return outcome;
}

ExperimentOutcome run_sweep(const Dataset& data, const ExperimentConfig& base,
                            const std::vector<double>& lambdas,
                            std::uint64_t dataset_digest_value, const std::string& out_dir) {
    if (lambdas.empty()) throw InputError("sweep: lambda list is empty");
    for (double l : lambdas)
        if (l < 0.0) throw InputError("sweep: lambdas must be non-negative");

    fs::create_directories(out_dir);
    ExperimentOutcome last;
    std::ofstream summary(out_dir + "/sweep_summary.csv", std::ios::trunc);
    if (!summary) throw InputError("cannot open sweep_summary.csv for writing");
    summary << "lambda,mean_bacc,std_bacc,mean_selected_fraction,mean_train_ce,"
               "mean_sparsity_loss,sparsity_ce_ratio\n";
    summary.precision(17);

    constexpr std::size_t kHistogramBins = 20;

    for (double lambda : lambdas) {
        ExperimentConfig cfg = base;
        cfg.run.lambda = lambda;
        const std::string sub = out_dir + "/lambda_" + format_lambda(lambda);
        ExperimentOutcome outcome = run_cv_experiment(data, cfg, dataset_digest_value, sub);

        std::vector<double> baccs, fractions, ces, sparsity_losses;
        std::vector<std::size_t> hist(kHistogramBins, 0);
        for (const RunResult& res : outcome.runs) {
            baccs.push_back(res.test_bacc);
            ces.push_back(res.train_ce);
            if (!res.importance.available) continue;
            fractions.push_back(static_cast<double>(res.importance.selected.size()) /
                                static_cast<double>(res.importance.s.size()));
            sparsity_losses.push_back(lambda * res.sparsity_sum);
            for (double s : res.importance.s) {
                auto bin = static_cast<std::size_t>(s * kHistogramBins);
                hist[std::min(bin, kHistogramBins - 1)] += 1;
            }
        }

        const double mean_bacc = baccs.empty() ? 0.0 : mean(baccs);
        const double std_bacc = baccs.empty() ? 0.0 : population_std(baccs);
        const double mean_fraction = fractions.empty() ? 0.0 : mean(fractions);
        const double mean_ce = ces.empty() ? 0.0 : mean(ces);
        const double mean_sparsity = sparsity_losses.empty() ? 0.0 : mean(sparsity_losses);
        const double ratio = mean_ce > 0.0 ? mean_sparsity / mean_ce : 0.0;
        summary << format_lambda(lambda) << ',' << mean_bacc << ',' << std_bacc << ','
                << mean_fraction << ',' << mean_ce << ',' << mean_sparsity << ',' << ratio
                << '\n';

        std::ofstream hist_out(sub + "/importance_histogram.csv", std::ios::trunc);
        hist_out << "bin_low,bin_high,count\n";
        for (std::size_t b = 0; b < kHistogramBins; ++b)
            hist_out << static_cast<double>(b) / kHistogramBins << ','
                     << static_cast<double>(b + 1) / kHistogramBins << ',' << hist[b] << '\n';

        last = std::move(outcome);
    }
    return last;
}

}  // namespace wpfs
