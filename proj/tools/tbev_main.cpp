// Pipeline driver: scenario generation -> base pretraining -> embedding
// caching -> temporal training -> evaluation / ablations / plots.

#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "tbev/pipeline/commands.hpp"

namespace {

struct GlobalOpts {
    std::string config_file;
    std::vector<std::string> sets;
    std::string out;
    bool quick = false;
    int seed = -1;
};

tbev::RunConfig resolve_config(const GlobalOpts& g) {
    tbev::RunConfig cfg;
    if (g.quick) cfg.apply_quick_profile();
    if (!g.config_file.empty()) cfg.load_file(g.config_file);
    for (const auto& pair : g.sets) cfg.set_pair(pair);
    if (g.seed >= 0) cfg.set("seed", std::to_string(g.seed));
    return cfg;
}

void add_common(CLI::App* sub, GlobalOpts& g) {
    sub->add_option("-c,--config", g.config_file, "key = value configuration file");
    sub->add_option("-s,--set", g.sets, "override a configuration key (key=value)")
        ->take_all();
    sub->add_option("-o,--out", g.out, "output root (default: $TBEV_OUT or ./runs)");
    sub->add_flag("--quick", g.quick, "scaled-down profile (small world, few epochs)");
    sub->add_option("--seed", g.seed, "master seed (shortcut for -s seed=N)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal BEV fusion pipeline"};
    app.require_subcommand(1);

    GlobalOpts g;
    std::vector<std::string> ablate_axes{"component", "history", "augmentation", "loss", "temporal"};
    bool ablate_no_train = false;

    CLI::App* gen = app.add_subcommand("gen", "generate the synthetic scenario set");
    CLI::App* pretrain = app.add_subcommand("pretrain", "pretrain the cooperative base model");
    CLI::App* cache = app.add_subcommand("cache", "pre-infer and store fused/ego embeddings");
    CLI::App* train = app.add_subcommand("train", "train the temporal module on the cache");
    CLI::App* eval = app.add_subcommand("eval", "evaluate current-frame and failure protocols");
    CLI::App* ablate = app.add_subcommand("ablate", "run the ablation matrix");
    CLI::App* verify = app.add_subcommand("verify", "check embedding store integrity");
    CLI::App* plot = app.add_subcommand("plot", "re-render curves from the eval report");
    for (CLI::App* sub : {gen, pretrain, cache, train, eval, ablate, verify, plot})
        add_common(sub, g);
    ablate->add_option("--axes", ablate_axes,
                       "ablation axes: component history augmentation loss temporal")
        ->take_all();
    ablate->add_flag("--no-train", ablate_no_train, "fail on missing cell checkpoints");

    CLI11_PARSE(app, argc, argv);

    try {
        const tbev::RunConfig cfg = resolve_config(g);
        const tbev::Paths paths{cfg.out_root(g.out)};
        if (gen->parsed()) {
            tbev::cmd_gen(cfg, paths);
            std::cout << "wrote " << paths.scenarios().string() << "\n";
        } else if (pretrain->parsed()) {
            tbev::cmd_pretrain(cfg, paths);
            std::cout << "wrote " << paths.base().string() << "\n";
        } else if (cache->parsed()) {
            tbev::cmd_cache(cfg, paths);
            std::cout << "wrote " << paths.store().string() << "\n";
        } else if (train->parsed()) {
            tbev::cmd_train(cfg, paths);
            std::cout << "wrote " << paths.temporal().string() << "\n";
        } else if (eval->parsed()) {
            tbev::cmd_eval(cfg, paths);
            std::cout << "wrote " << paths.eval().string() << "\n";
        } else if (ablate->parsed()) {
            std::vector<tbev::AblationAxis> axes;
            for (const auto& a : ablate_axes) axes.push_back(tbev::ablation_axis_from_string(a));
            tbev::cmd_ablate(cfg, paths, axes, !ablate_no_train);
            std::cout << "wrote " << paths.ablate().string() << "\n";
        } else if (verify->parsed()) {
            const tbev::VerifyReport rep = tbev::cmd_verify(paths);
            for (const auto& line : rep.lines) std::cout << line << "\n";
            if (!rep.ok) {
                std::cerr << "error: store verification failed\n";
                return 4;
            }
            std::cout << "store verification passed\n";
        } else if (plot->parsed()) {
            tbev::cmd_plot(cfg, paths);
            std::cout << "wrote " << (paths.eval() / "curves.svg").string() << "\n";
        }
    } catch (const tbev::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const tbev::MissingDependencyError& e) {
        std::cerr << "missing dependency: " << e.what() << "\n";
        return 3;
    } catch (const tbev::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 4;
    } catch (const tbev::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 5;
    } catch (const tbev::TrainingError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return 6;
    } catch (const tbev::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
