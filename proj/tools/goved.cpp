#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "goved/cli.hpp"

namespace {

struct Flags {
    std::string config_path;
    std::vector<std::string> sets;
    std::map<std::string, std::string> options;
};

void add_common(CLI::App* sub, Flags& f) {
    sub->add_option("-c,--config", f.config_path, "JSON config file");
    sub->add_option("--set", f.sets, "override a config key, key=value (repeatable)");
    for (const char* key : {"problem", "seed", "output_dir", "dataset", "checkpoint", "J", "workers", "steps", "latent_dim",
                            "loss_mode", "eta", "L_sample", "kappa", "mcmc_steps", "beta", "observation", "observation_index",
                            "observation_file", "scenario", "ved_dir", "mcmc_dir", "chain"}) {
        sub->add_option(std::string("--") + key, f.options[key], std::string("config key ") + key);
    }
    sub->add_flag("--resume", "continue training from the checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Variational encoder-decoder surrogates for Bayesian inverse problems"};
    app.require_subcommand(1);
    app.set_version_flag("--version", goved::kToolVersion);
    Flags flags;
    for (const char* name : {"gen-data", "train", "sample", "mcmc", "diagnose", "compare"}) add_common(app.add_subcommand(name), flags);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : goved::cli::kConfigError;
    }
    CLI::App* sub = app.get_subcommands().front();
    try {
        nlohmann::json file = nlohmann::json::object();
        if (!flags.config_path.empty()) file = goved::read_json(flags.config_path);
        nlohmann::json over = nlohmann::json::object();
        for (const auto& [key, value] : flags.options) {
            if (sub->count("--" + key) == 0) continue;
            over[key] = goved::cli::parse_override(key + "=" + value).second;
        }
        for (const auto& kv : flags.sets) {
            auto [k, v] = goved::cli::parse_override(kv);
            over[k] = v;
        }
        if (sub->count("--resume") > 0) over["resume"] = true;
        const auto cfg = goved::cli::merge_config(file, over);
        return goved::cli::run(sub->get_name(), cfg);
    } catch (const std::exception& e) {
        std::cerr << "goved: config error: " << e.what() << '\n';
        return goved::cli::kConfigError;
    }
}
