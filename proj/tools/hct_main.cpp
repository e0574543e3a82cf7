#include <cstdio>
#include <filesystem>

#include <CLI11.hpp>

#include "hct/train.hpp"

namespace {

using namespace hct;

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) kv = parse_kv_file(config_path);
    for (const auto& o : overrides) apply_override(kv, o);
    return RunConfig::from_kv(kv);
}

int run(int argc, char** argv) {
    CLI::App app{"hct: hierarchical multi-task video workflow recognition"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::string gen_out = "data/dataset.hctd";
    GenerateOptions gopt;
    gen->add_option("-o,--out", gen_out, "output dataset path");
    gen->add_option("--clips", gopt.n_clips, "number of clips");
    gen->add_option("--noise", gopt.noise, "render noise sigma");
    gen->add_option("--taxonomy-seed", gopt.taxonomy_seed, "taxonomy seed");
    gen->add_option("--seed", gopt.data_seed, "data seed");
    gen->add_option("--test-fraction", gopt.test_fraction, "test video fraction");
    gen->add_option("--phases", gopt.sizes.phases, "phase classes");
    gen->add_option("--steps", gopt.sizes.steps, "step classes");
    gen->add_option("--actions", gopt.sizes.actions, "action classes");
    gen->add_option("--instruments", gopt.sizes.instruments, "instrument classes");

    // shared train/eval options
    std::string config_path, resume_path, eval_checkpoint;
    std::vector<std::string> overrides;
    bool force = false, quiet = false;

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("-c,--config", config_path, "TOML-style config file");
    train->add_option("--set", overrides, "config override key=value")->take_all();
    train->add_option("--resume", resume_path, "checkpoint to resume from");
    train->add_flag("--force", force, "resume despite a config-hash mismatch");
    train->add_flag("-q,--quiet", quiet, "suppress per-epoch logging");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval->add_option("-c,--config", config_path, "TOML-style config file");
    eval->add_option("--set", overrides, "config override key=value")->take_all();
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate")->required();
    eval->add_flag("--force", force, "evaluate despite a config-hash mismatch");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
    uint64_t gc_seed = 3;
    double gc_tol = 1e-4;
    gc->add_option("--seed", gc_seed, "init seed");
    gc->add_option("--tol", gc_tol, "max relative error tolerance");

    auto* pc = app.add_subcommand("paramcount", "parameter counts per adapter variant");
    pc->add_option("-c,--config", config_path, "TOML-style config file");
    pc->add_option("--set", overrides, "config override key=value")->take_all();

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        Dataset ds = generate_dataset(gopt);
        const auto parent = std::filesystem::path(gen_out).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        write_dataset(ds, gen_out);
        std::printf("wrote %zu clips to %s (+ manifest %s.json)\n", ds.samples.size(),
                    gen_out.c_str(), gen_out.c_str());
        return 0;
    }
    if (train->parsed()) {
        RunConfig cfg = load_run_config(config_path, overrides);
        Dataset ds = read_dataset(cfg.data_path);
        auto result = train_run(cfg, ds, resume_path, force, quiet);
        if (!result.test_metrics.values.empty())
            std::printf("%s", result.test_metrics.to_table().c_str());
        return 0;
    }
    if (eval->parsed()) {
        RunConfig cfg = load_run_config(config_path, overrides);
        Dataset ds = read_dataset(cfg.data_path);
        Model m = Model::create(cfg.model);
        load_checkpoint(eval_checkpoint, m.params, nullptr, config_hash(cfg), force);
        auto report = evaluate(m, ds, ds.split_indices(false));
        std::printf("%s", report.to_table().c_str());
        return 0;
    }
    if (gc->parsed()) {
        const double err = gradcheck_run(gc_seed);
        std::printf("max relative error: %.3e (tolerance %.3e)\n", err, gc_tol);
        if (err > gc_tol) throw NumericError("gradient check failed");
        return 0;
    }
    if (pc->parsed()) {
        RunConfig cfg = load_run_config(config_path, overrides);
        std::printf("%-14s %12s %12s %10s\n", "variant", "total", "tunable", "fraction");
        for (const auto& row : param_count_table(cfg.model))
            std::printf("%-14s %12lld %12lld %10.4f\n", row.variant.c_str(),
                        (long long)row.total, (long long)row.tunable, row.fraction());
        return 0;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const hct::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const hct::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const hct::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const hct::UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
