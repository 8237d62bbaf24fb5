#include "diffrx/error.hpp"
#include "diffrx/harness.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace diffrx;

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// "1/16", "0.0625" -> comb spacing 16
std::size_t parse_density(const std::string& s) {
    double d = 0.0;
    try {
        if (const auto slash = s.find('/'); slash != std::string::npos)
            d = std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
        else
            d = std::stod(s);
    } catch (const std::exception&) {
        throw ConfigError("--densities: cannot parse '" + s + "'");
    }
    if (!(d > 0.0 && d <= 1.0)) throw ConfigError("--densities: '" + s + "' is not in (0, 1]");
    const double inv = 1.0 / d;
    const double r = std::round(inv);
    if (std::abs(inv - r) > 1e-9 * r) throw ConfigError("--densities: '" + s + "' is not 1/N for a comb spacing N");
    return static_cast<std::size_t>(r);
}

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
    bool resume = false;
    bool reproducible = false;
    std::string estimators, densities, steps;
    std::string data, models;
};

harness::RunConfig resolve(const Flags& f) {
    harness::RunConfig cfg = f.config.empty() ? harness::RunConfig{} : harness::load_config(f.config);
    if (f.seed) cfg.seed = *f.seed;
    if (f.reproducible && !cfg.seed) throw ConfigError("--reproducible needs a seed (--seed or config.seed)");
    if (!cfg.seed) {
        cfg.seed = std::random_device{}();
        std::cerr << "note: no seed given, using " << *cfg.seed << '\n';
    }
    if (!f.estimators.empty()) cfg.evaluation.estimators = split_list(f.estimators);
    if (!f.densities.empty()) {
        cfg.spacings.clear();
        for (const auto& d : split_list(f.densities)) cfg.spacings.push_back(parse_density(d));
    }
    if (!f.steps.empty()) {
        cfg.evaluation.steps.clear();
        for (const auto& s : split_list(f.steps)) {
            try {
                cfg.evaluation.steps.push_back(std::stoul(s));
            } catch (const std::exception&) {
                throw ConfigError("--steps: cannot parse '" + s + "'");
            }
        }
    }
    if (f.reproducible) cfg.sampler.reproducible = true;
    cfg.validate();
    return cfg;
}

harness::CommonOptions common(const Flags& f) { return {f.out, f.force, f.reproducible}; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"OFDM channel estimation with a conditional diffusion model"};
    app.require_subcommand(1);
    Flags f;

    auto add_common = [&](CLI::App* sc, bool out_required = true) {
        sc->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
        sc->add_option("--seed", f.seed, "master seed (u64)");
        auto* o = sc->add_option("--out", f.out, "output directory");
        if (out_required) o->required();
        sc->add_flag("--force", f.force, "overwrite a non-empty output directory");
    };

    auto* gen = app.add_subcommand("generate", "simulate train/val/test channel datasets");
    add_common(gen);

    auto* train = app.add_subcommand("train", "train one denoiser per pilot density");
    add_common(train);
    train->add_option("--data", f.data, "dataset directory from generate")->required();
    train->add_flag("--resume", f.resume, "continue from last_d*.ckpt in --out");
    train->add_option("--densities", f.densities, "comma list, e.g. 1/4,1/16");

    auto* eval = app.add_subcommand("evaluate", "NMSE-vs-steps, BER-vs-SNR and baseline tables");
    add_common(eval);
    eval->add_option("--data", f.data, "dataset directory")->required();
    eval->add_option("--models", f.models, "directory holding model_d*.ckpt");
    eval->add_flag("--reproducible", f.reproducible, "require seeded generators everywhere");
    eval->add_option("--estimators", f.estimators, "comma list of estimators");
    eval->add_option("--densities", f.densities, "comma list, e.g. 1/4,1/16");
    eval->add_option("--steps", f.steps, "comma list of inference step counts");

    auto* base = app.add_subcommand("baseline", "LS/linear and LMMSE tables only (no model)");
    add_common(base);
    base->add_option("--data", f.data, "dataset directory")->required();
    base->add_option("--densities", f.densities, "comma list, e.g. 1/4,1/16");
    base->add_option("--estimators", f.estimators, "comma list of estimators");

    std::string plot_in;
    auto* plot = app.add_subcommand("plotdata", "convert a sweep CSV into long format");
    plot->add_option("input", plot_in, "CSV written by evaluate/baseline")->required()->check(CLI::ExistingFile);
    plot->add_option("--out", f.out, "output file (default: stdout)");
    plot->add_flag("--force", f.force, "overwrite an existing output file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error[UsageError]: " << e.what() << '\n';
        return 2;
    }

    try {
        harness::worker_cap();
        if (gen->parsed()) {
            harness::cmd_generate(resolve(f), common(f));
        } else if (train->parsed()) {
            harness::cmd_train(resolve(f), f.data, common(f), f.resume);
        } else if (eval->parsed()) {
            const auto cfg = resolve(f);
            harness::cmd_evaluate(cfg, f.data, f.models.empty() ? fs::path(f.out) : fs::path(f.models), common(f));
        } else if (base->parsed()) {
            harness::cmd_baseline(resolve(f), f.data, common(f));
        } else if (plot->parsed()) {
            std::ifstream in(plot_in);
            if (!in) throw IoError("cannot read '" + plot_in + "'");
            std::stringstream ss;
            ss << in.rdbuf();
            const std::string text = harness::plotdata(ss.str());
            if (f.out.empty()) {
                std::cout << text;
            } else {
                if (fs::exists(f.out) && !f.force)
                    throw UsageError("'" + f.out + "' exists; pass --force to overwrite");
                std::ofstream out(f.out, std::ios::trunc);
                if (!out) throw IoError("cannot write '" + f.out + "'");
                out << text;
            }
        }
    } catch (const Error& e) {
        std::cerr << "error[" << e.kind() << "]: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error[Internal]: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
