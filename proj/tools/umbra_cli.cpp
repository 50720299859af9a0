// umbra command-line interface: train / eval / error-analysis / plot.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>

#include "umbra/agent.hpp"
#include "umbra/config.hpp"
#include "umbra/error_analysis.hpp"
#include "umbra/metrics.hpp"
#include "umbra/svg.hpp"

namespace fs = std::filesystem;
using namespace umbra;

namespace {

std::string default_out_dir() {
    const char* env = std::getenv("UMBRA_OUT");
    return env && *env ? env : "out";
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              std::string out_dir) {
    AgentConfig cfg = cfgio::load_agent_config(config_path);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    fs::create_directories(out_dir);
    cfgio::freeze_agent_config(cfg, out_dir + "/config.json");

    Agent agent(cfg);
    MetricWriter writer(out_dir + "/metrics.csv", out_dir + "/timings.csv", cfg.members);
    std::cout << "training " << cfg.env_name << " for " << cfg.total_steps << " steps (seed "
              << cfg.seed << ")\n";
    const auto rec = agent.run([&](const MetricRow& row) {
        writer.write(row);
        if (row.eval_return)
            std::cout << "episode " << row.episode << " (t=" << row.t
                      << "): eval return " << *row.eval_return << "\n";
    });
    agent.save_checkpoints(out_dir);
    std::cout << "done: " << rec.steps << " steps, " << rec.episodes << " episodes, "
              << rec.model_errors << " model errors, " << rec.skipped_policy_updates
              << " skipped policy updates\n";
    std::cout << "wrote " << out_dir << "/metrics.csv, timings.csv, config.json, checkpoints\n";
    return 0;
}

int cmd_eval(const std::string& policy_path, int episodes, const std::string& env_name,
             std::uint64_t seed) {
    auto env = make_env(env_name);
    const EnvSpec& spec = env->spec();

    // infer the network sizes from the checkpoint
    const ParamSet loaded = ParamSet::load(policy_path);
    std::vector<int> hidden;
    for (int l = 0;; ++l) {
        if (!loaded.has(weight_name(l + 1))) break;
        hidden.push_back(loaded[weight_name(l)].shape()[1]);
    }
    Rng init(0);
    Policy policy(spec.state_dim, spec.action_dim, hidden, Activation::Tanh, spec.action_low,
                  spec.action_high, init);
    policy.params().copy_values_from(loaded);

    Rng rng(seed);
    const EvalResult res = evaluate_policy(*env, policy, episodes, rng);
    std::cout << "mean return over " << episodes << " episodes: " << res.mean_return << " +- "
              << res.std_return << "\n";
    return 0;
}

int cmd_error_analysis(const std::string& config_path, const std::string& horizons_csv,
                       std::string out_dir, ErrorAnalysisOptions opt) {
    AgentConfig cfg = cfgio::load_agent_config(config_path);
    if (!horizons_csv.empty()) {
        opt.horizons.clear();
        std::stringstream ss(horizons_csv);
        std::string cell;
        while (std::getline(ss, cell, ',')) opt.horizons.push_back(std::stoi(cell));
        if (opt.horizons.empty())
            throw std::invalid_argument("error-analysis: empty horizon grid");
    }
    fs::create_directories(out_dir);
    const auto curve = error_analysis(cfg, opt);
    const std::string path = out_dir + "/error_curve.csv";
    write_error_curve_csv(path, curve);
    std::cout << "horizon  one_step_mse  value_mse_mean  value_mse_std\n";
    for (const auto& p : curve)
        std::cout << p.horizon << "  " << p.one_step_mse << "  " << p.value_mse_mean << "  "
                  << p.value_mse_std << "\n";
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_plot(const std::vector<std::string>& metric_files, const std::string& out_path,
             const std::string& column) {
    // gather (t -> values across files) for rows where the column is present
    std::vector<std::vector<std::pair<double, double>>> per_file;
    for (const auto& path : metric_files) {
        const MetricTable table = read_metrics_csv(path);
        const int tcol = table.column("t");
        const int ycol = table.column(column);
        std::vector<std::pair<double, double>> series;
        for (const auto& row : table.rows) {
            if (row[static_cast<std::size_t>(ycol)])
                series.emplace_back(*row[static_cast<std::size_t>(tcol)],
                                    *row[static_cast<std::size_t>(ycol)]);
        }
        if (series.empty())
            throw std::runtime_error("plot: '" + path + "' has no rows with column '" + column +
                                     "'");
        per_file.push_back(std::move(series));
    }

    const std::size_t n = per_file.front().size();
    for (const auto& s : per_file)
        if (s.size() != n)
            throw std::runtime_error("plot: metric files disagree on the number of rows");

    PlotSeries series;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = per_file.front()[i].first;
        double mean = 0;
        for (const auto& s : per_file) mean += s[i].second;
        mean /= static_cast<double>(per_file.size());
        double var = 0;
        for (const auto& s : per_file) var += (s[i].second - mean) * (s[i].second - mean);
        series.x.push_back(t);
        series.mean.push_back(mean);
        if (per_file.size() > 1)
            series.band.push_back(std::sqrt(var / static_cast<double>(per_file.size())));
    }
    write_svg_plot(out_path, series, column + " (mean +- 1 std over " +
                                         std::to_string(per_file.size()) + " runs)",
                   "environment step", column);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"umbra: uncertainty-aware model-based policy optimization"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "online training run");
    std::string train_config;
    std::optional<std::uint64_t> train_seed;
    std::string train_out = default_out_dir();
    train->add_option("--config", train_config, "config file (JSON)")->required();
    train->add_option("--seed", train_seed, "override the config seed");
    train->add_option("--out", train_out, "output directory (default $UMBRA_OUT or ./out)");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a policy checkpoint");
    std::string eval_policy, eval_env = "pendulum";
    int eval_episodes = 20;
    std::uint64_t eval_seed = 0;
    eval->add_option("--policy", eval_policy, "policy checkpoint (.params)")->required();
    eval->add_option("--episodes", eval_episodes, "number of evaluation episodes");
    eval->add_option("--env", eval_env, "environment name");
    eval->add_option("--seed", eval_seed, "evaluation seed");

    // error-analysis
    auto* ea = app.add_subcommand("error-analysis",
                                  "value-estimate error vs planning horizon");
    std::string ea_config, ea_horizons, ea_out = default_out_dir();
    ErrorAnalysisOptions ea_opt;
    ea->add_option("--config", ea_config, "config file (JSON)")->required();
    ea->add_option("--horizons", ea_horizons, "comma-separated horizon grid");
    ea->add_option("--out", ea_out, "output directory");
    ea->add_option("--probes", ea_opt.probes, "probe (state, policy) pairs");
    ea->add_option("--train-transitions", ea_opt.train_transitions,
                   "random-action transitions to collect");
    ea->add_option("--train-rounds", ea_opt.train_rounds, "model update rounds");
    ea->add_option("--seed", ea_opt.seed, "analysis seed");

    // plot
    auto* plot = app.add_subcommand("plot", "standalone SVG learning curve");
    std::vector<std::string> plot_metrics;
    std::string plot_out, plot_column = "eval_return";
    plot->add_option("--metrics", plot_metrics, "metrics.csv files (one per seed)")
        ->required()
        ->expected(-1);
    plot->add_option("--out", plot_out, "output SVG path")->required();
    plot->add_option("--column", plot_column, "metric column to plot");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train) return cmd_train(train_config, train_seed, train_out);
        if (*eval) return cmd_eval(eval_policy, eval_episodes, eval_env, eval_seed);
        if (*ea) return cmd_error_analysis(ea_config, ea_horizons, ea_out, ea_opt);
        if (*plot) return cmd_plot(plot_metrics, plot_out, plot_column);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
