// Command-line front end: run experiment grids, certify the numerical
// invariants, summarize result tables, and export generated environments.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <rewardtransfer/rewardtransfer.hpp>

namespace {

rt::ExperimentConfig load_with_overrides(const std::string& config_path,
                                         const std::string& profile) {
    rt::ExperimentConfig cfg;
    if (!profile.empty()) rt::apply_profile(cfg, profile);
    if (!config_path.empty()) cfg = rt::load_experiment_config(config_path, std::move(cfg));
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Offline reward transfer between tabular MDPs"};
    app.require_subcommand(1);

    std::string config_path, profile, out_dir, methods_csv, in_csv, out_csv, env_out;
    std::uint64_t root_seed = 0;
    double beta = -1.0;
    bool have_root_seed = false;

    CLI::App* run = app.add_subcommand("run", "Run the experiment grid");
    run->add_option("--config", config_path, "Config file (key = value with sections)");
    run->add_option("--profile", profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    run->add_option("--out-dir", out_dir, "Output directory override");
    run->add_option("--root-seed", root_seed, "Root seed override")
        ->each([&](const std::string&) { have_root_seed = true; });
    run->add_option("--methods", methods_csv, "Comma-separated method list");
    run->add_option("--beta", beta, "Coupled quadratic weight override");

    CLI::App* certify = app.add_subcommand("certify", "Run the certificate suite");
    certify->add_option("--config", config_path, "Config file");
    certify->add_option("--profile", profile, "desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));

    CLI::App* summarize = app.add_subcommand("summarize", "Summarize a results CSV");
    summarize->add_option("--in", in_csv, "Input results.csv")->required();
    summarize->add_option("--out", out_csv, "Output summary.csv")->required();

    CLI::App* gen_env = app.add_subcommand("gen-env", "Generate and export an environment pair");
    gen_env->add_option("--config", config_path, "Config file");
    gen_env->add_option("--profile", profile, "desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    gen_env->add_option("--out", env_out, "Output JSON path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            rt::ExperimentConfig cfg = load_with_overrides(config_path, profile);
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            if (have_root_seed) cfg.root_seed = root_seed;
            if (!methods_csv.empty()) cfg.methods = rt::detail::split_list(methods_csv);
            if (beta >= 0.0) cfg.optim.beta = beta;
            cfg.validate();
            std::filesystem::create_directories(cfg.out_dir);
            std::vector<rt::ResultRow> rows = rt::run_grid(cfg);
            rt::write_results_csv(rows, cfg.out_dir + "/results.csv");
            rt::write_timings_csv(rows, cfg.out_dir + "/timings.csv");
            std::vector<rt::SummaryRow> summary = rt::summarize(rows);
            rt::write_summary_csv(summary, cfg.out_dir + "/summary.csv");
            rt::write_plot_data_csv(summary, cfg.out_dir + "/plot_data.csv");
            std::cout << "wrote " << rows.size() << " rows to " << cfg.out_dir << "/results.csv\n";
            return 0;
        }
        if (certify->parsed()) {
            rt::ExperimentConfig cfg = load_with_overrides(config_path, profile);
            rt::CertificateReport rep = rt::certify(cfg);
            std::cout << rt::to_json(rep).dump(2) << "\n";
            if (!rep.all_pass()) {
                std::cerr << "certificate suite FAILED\n";
                return 1;
            }
            std::cout << "all certificates pass\n";
            return 0;
        }
        if (summarize->parsed()) {
            std::vector<rt::ResultRow> rows = rt::load_results_csv(in_csv);
            rt::write_summary_csv(rt::summarize(rows), out_csv);
            std::cout << "wrote " << out_csv << "\n";
            return 0;
        }
        if (gen_env->parsed()) {
            rt::ExperimentConfig cfg = load_with_overrides(config_path, profile);
            rt::Instance inst = rt::build_instance(cfg, cfg.tau2_list.front());
            std::ofstream out(env_out);
            if (!out.good()) throw std::runtime_error("cannot open " + env_out);
            out << rt::environment_snapshot(inst).dump(2) << "\n";
            std::cout << "wrote " << env_out << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
