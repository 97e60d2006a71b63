#include <cstdint>
#include <iostream>
#include <string>

#include "offlang/cli.hpp"

#include "CLI11.hpp"

namespace {

// 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
int run(int argc, char** argv) {
    CLI::App app{"offensive-language identification toolkit"};
    app.require_subcommand(1);

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "apply a preprocessing regime to a TSV");
    std::string prep_input, prep_output, prep_regime = "transformer";
    std::string prep_table = "data/emoji_names.tsv";
    bool prep_no_lowercase = false;
    prep->add_option("input", prep_input, "input TSV")->required();
    prep->add_option("output", prep_output, "output TSV")->required();
    prep->add_option("--regime", prep_regime, "classical or transformer");
    prep->add_option("--emoji-table", prep_table, "emoji table TSV");
    prep->add_flag("--no-lowercase", prep_no_lowercase,
                   "keep ASCII case in the classical regime");

    // train
    auto* train = app.add_subcommand("train", "run a training config");
    std::string train_config;
    offlang::CliOverrides overrides;
    std::uint64_t seed_override = 0;
    std::string output_override;
    train->add_option("--config", train_config, "experiment config JSON")->required();
    auto* seed_opt = train->add_option("--seed", seed_override, "override config seed");
    auto* out_opt =
        train->add_option("--output-dir", output_override, "override output directory");
    train->add_option("--threads", overrides.threads,
                      "worker threads for forests/ensembles (default 1)");
    train->add_flag("--force", overrides.force, "overwrite artifacts from another config");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "evaluate a trained model directory");
    std::string eval_model, eval_data, eval_out, eval_table;
    eval->add_option("model", eval_model, "model directory")->required();
    eval->add_option("data", eval_data, "labeled TSV")->required();
    eval->add_option("--output-dir", eval_out, "where to write eval reports");
    eval->add_option("--emoji-table", eval_table, "override the emoji table path");

    // predict
    auto* pred = app.add_subcommand("predict", "label an unlabeled TSV");
    std::string pred_model, pred_input, pred_output, pred_table;
    pred->add_option("model", pred_model, "model directory")->required();
    pred->add_option("input", pred_input, "input TSV (id, text)")->required();
    pred->add_option("output", pred_output, "output TSV")->required();
    pred->add_option("--emoji-table", pred_table, "override the emoji table path");

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
    std::uint64_t grad_seed = 0;
    double grad_strict = 1e-4;
    grad->add_option("--seed", grad_seed, "RNG seed");
    grad->add_option("--strict", grad_strict, "failure threshold (default 1e-4)");

    // synth
    auto* synth = app.add_subcommand("synth", "generate the synthetic transfer benchmark");
    std::string synth_out = "synth";
    offlang::SynthConfig synth_cfg;
    std::uint64_t synth_seed = 1;
    synth->add_option("--output-dir", synth_out, "directory for source.tsv/target.tsv");
    synth->add_option("--source-size", synth_cfg.source_size, "source documents");
    synth->add_option("--target-size", synth_cfg.target_size, "target documents");
    synth->add_option("--class-ratio", synth_cfg.class_ratio, "fraction labeled OFF");
    synth->add_option("--neutral-vocab", synth_cfg.neutral_vocab, "neutral words per language");
    synth->add_option("--marker-vocab", synth_cfg.marker_vocab, "marker words per language");
    synth->add_option("--seed", synth_seed, "RNG seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Usage problems are exit code 1 regardless of CLI11's own scheme.
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (*prep) {
        offlang::cmd_preprocess(prep_input, prep_regime, prep_output, prep_table,
                                !prep_no_lowercase);
    } else if (*train) {
        if (*seed_opt) overrides.seed = seed_override;
        if (*out_opt) overrides.output_dir = output_override;
        const auto cfg = offlang::load_experiment_config(train_config, overrides);
        offlang::cmd_train(cfg, overrides.threads, overrides.force);
    } else if (*eval) {
        offlang::cmd_evaluate(eval_model, eval_data, eval_out, eval_table);
    } else if (*pred) {
        offlang::cmd_predict(pred_model, pred_input, pred_output, pred_table);
    } else if (*grad) {
        offlang::cmd_gradcheck(grad_seed, grad_strict);
    } else if (*synth) {
        offlang::cmd_synth(synth_out, synth_cfg, synth_seed);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const offlang::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const offlang::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const offlang::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
