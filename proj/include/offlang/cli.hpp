#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "classical.hpp"
#include "corpus.hpp"
#include "encoder.hpp"
#include "features.hpp"
#include "metrics.hpp"
#include "model_io.hpp"
#include "strategies.hpp"
#include "subword.hpp"
#include "textprep.hpp"

#include "json.hpp"

namespace offlang {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Experiment config: one structured file, unknown keys rejected.
// ---------------------------------------------------------------------------

struct PrepOptions {
    std::string regime = "auto"; // auto | classical | transformer
    bool lowercase = true;
    std::string emoji_table = "data/emoji_names.tsv";
};

struct ModelOptions {
    std::string kind = "encoder"; // mnb | svm | rf | encoder
    double mnb_smoothing = 1.0;
    SvmHyper svm;
    int rf_trees = 500;
    std::uint64_t rf_seed = 0;
    int bow_min_frequency = 1;
};

struct StrategyOptions {
    std::string recipe = "base";
    int n_members = 3;
    std::string member_mode = "seed"; // seed | split | both
    std::string source_train;         // TSV for in-run source training
    std::string source_checkpoint;    // existing model dir with vocab.bpe
    int lm_epochs = 3;
    double lm_learning_rate = 0.0; // 0 = follow train.learning_rate
    int lm_batch_size = 0;         // 0 = follow train.batch_size
    double mask_rate = 0.15;
    int bpe_merges = 200;
};

struct ExperimentConfig {
    std::string train_path;
    std::string validation_path;
    std::string test_path; // used by evaluate runs, never by training
    TsvSchema schema;
    PrepOptions prep;
    ModelOptions model;
    EncoderConfig encoder; // vocab_size filled after BPE training
    TrainHyper train_hyper;
    StrategyOptions strategy;
    double validation_fraction = 0.1;
    std::uint64_t seed = 42;
    std::string output_dir;
    std::string config_hash; // canonical hash of the effective config

    std::string effective_regime() const {
        if (prep.regime != "auto") return prep.regime;
        return model.kind == "encoder" ? "transformer" : "classical";
    }
};

namespace detail {

inline void check_keys(const json& obj, const std::set<std::string>& allowed,
                       const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown config key '" + where + "." + it.key() + "'");
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
    return obj.at(key).get<T>();
}

inline std::string config_hash_of(const json& effective) {
    const std::string dump = effective.dump(); // nlohmann::json sorts keys
    return hex64(fnv1a64(dump));
}

} // namespace detail

inline ExperimentConfig parse_experiment_config(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be an object");
    detail::check_keys(j,
                       {"data", "preprocessing", "model", "encoder", "train",
                        "strategy", "seed", "output_dir"},
                       "config");
    ExperimentConfig cfg;
    cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 42);
    cfg.output_dir = detail::get_or<std::string>(j, "output_dir", "");
    if (cfg.output_dir.empty()) throw ConfigError("config: output_dir is required");

    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::check_keys(d,
                           {"train", "validation", "test", "has_header", "id_column",
                            "text_column", "label_column", "label_aliases"},
                           "data");
        cfg.train_path = detail::get_or<std::string>(d, "train", "");
        cfg.validation_path = detail::get_or<std::string>(d, "validation", "");
        cfg.test_path = detail::get_or<std::string>(d, "test", "");
        cfg.schema.has_header = detail::get_or<bool>(d, "has_header", false);
        cfg.schema.id_column = detail::get_or<std::string>(d, "id_column", "0");
        cfg.schema.text_column = detail::get_or<std::string>(d, "text_column", "1");
        cfg.schema.label_column = detail::get_or<std::string>(d, "label_column", "2");
        if (d.contains("label_aliases") && !d.at("label_aliases").is_null()) {
            for (auto it = d.at("label_aliases").begin(); it != d.at("label_aliases").end();
                 ++it) {
                const std::string v = it.value().get<std::string>();
                if (v == "OFF")
                    cfg.schema.label_aliases[it.key()] = BinaryLabel::OFF;
                else if (v == "NOT")
                    cfg.schema.label_aliases[it.key()] = BinaryLabel::NOT;
                else
                    throw ConfigError("label alias '" + it.key() +
                                      "' must map to OFF or NOT");
            }
        }
    }
    if (cfg.train_path.empty()) throw ConfigError("config: data.train is required");

    if (j.contains("preprocessing")) {
        const auto& p = j.at("preprocessing");
        detail::check_keys(p, {"regime", "lowercase", "emoji_table"}, "preprocessing");
        cfg.prep.regime = detail::get_or<std::string>(p, "regime", "auto");
        if (cfg.prep.regime != "auto" && cfg.prep.regime != "classical" &&
            cfg.prep.regime != "transformer")
            throw ConfigError("preprocessing.regime must be auto, classical or transformer");
        cfg.prep.lowercase = detail::get_or<bool>(p, "lowercase", true);
        cfg.prep.emoji_table =
            detail::get_or<std::string>(p, "emoji_table", cfg.prep.emoji_table);
    }

    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::check_keys(m,
                           {"kind", "smoothing", "svm_alpha", "svm_seed", "svm_epochs",
                            "rf_trees", "rf_seed", "bow_min_frequency"},
                           "model");
        cfg.model.kind = detail::get_or<std::string>(m, "kind", "encoder");
        if (cfg.model.kind != "mnb" && cfg.model.kind != "svm" && cfg.model.kind != "rf" &&
            cfg.model.kind != "encoder")
            throw ConfigError("model.kind must be mnb, svm, rf or encoder");
        cfg.model.mnb_smoothing = detail::get_or<double>(m, "smoothing", 1.0);
        cfg.model.svm.alpha = detail::get_or<double>(m, "svm_alpha", 0.001);
        cfg.model.svm.seed = detail::get_or<std::uint64_t>(m, "svm_seed", 5);
        cfg.model.svm.epochs = detail::get_or<int>(m, "svm_epochs", 15);
        cfg.model.rf_trees = detail::get_or<int>(m, "rf_trees", 500);
        cfg.model.rf_seed = detail::get_or<std::uint64_t>(m, "rf_seed", 0);
        cfg.model.bow_min_frequency = detail::get_or<int>(m, "bow_min_frequency", 1);
    }

    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        detail::check_keys(
            e, {"d_model", "heads", "layers", "ff_dim", "max_len", "dropout"}, "encoder");
        cfg.encoder.d_model = detail::get_or<int>(e, "d_model", 64);
        cfg.encoder.heads = detail::get_or<int>(e, "heads", 4);
        cfg.encoder.layers = detail::get_or<int>(e, "layers", 2);
        cfg.encoder.ff_dim = detail::get_or<int>(e, "ff_dim", 128);
        cfg.encoder.max_len = detail::get_or<int>(e, "max_len", 64);
        cfg.encoder.dropout = detail::get_or<double>(e, "dropout", 0.1);
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::check_keys(
            t, {"learning_rate", "epochs", "batch_size", "validation_fraction"}, "train");
        cfg.train_hyper.learning_rate = detail::get_or<double>(t, "learning_rate", 1e-5);
        cfg.train_hyper.epochs = detail::get_or<int>(t, "epochs", 3);
        cfg.train_hyper.batch_size = detail::get_or<int>(t, "batch_size", 16);
        cfg.validation_fraction = detail::get_or<double>(t, "validation_fraction", 0.1);
    }
    cfg.train_hyper.seed = cfg.seed;

    if (j.contains("strategy")) {
        const auto& s = j.at("strategy");
        detail::check_keys(s,
                           {"recipe", "n_members", "member_mode", "source_train",
                            "source_checkpoint", "lm_epochs", "lm_learning_rate",
                            "lm_batch_size", "mask_rate", "bpe_merges"},
                           "strategy");
        cfg.strategy.recipe = detail::get_or<std::string>(s, "recipe", "base");
        cfg.strategy.n_members = detail::get_or<int>(s, "n_members", 3);
        cfg.strategy.member_mode = detail::get_or<std::string>(s, "member_mode", "seed");
        if (cfg.strategy.member_mode != "seed" && cfg.strategy.member_mode != "split" &&
            cfg.strategy.member_mode != "both")
            throw ConfigError("strategy.member_mode must be seed, split or both");
        cfg.strategy.source_train = detail::get_or<std::string>(s, "source_train", "");
        cfg.strategy.source_checkpoint =
            detail::get_or<std::string>(s, "source_checkpoint", "");
        cfg.strategy.lm_epochs = detail::get_or<int>(s, "lm_epochs", 3);
        cfg.strategy.lm_learning_rate = detail::get_or<double>(s, "lm_learning_rate", 0.0);
        cfg.strategy.lm_batch_size = detail::get_or<int>(s, "lm_batch_size", 0);
        cfg.strategy.mask_rate = detail::get_or<double>(s, "mask_rate", 0.15);
        cfg.strategy.bpe_merges = detail::get_or<int>(s, "bpe_merges", 200);
    }

    // Fail invalid compositions before any data is touched.
    const RecipeFlags flags = parse_recipe(cfg.strategy.recipe);
    if (cfg.model.kind != "encoder" && cfg.strategy.recipe != "base")
        throw ConfigError("strategy recipes apply to the encoder model only");
    if (flags.transfer && cfg.strategy.source_train.empty() &&
        cfg.strategy.source_checkpoint.empty())
        throw ConfigError("transfer recipe needs strategy.source_train or "
                          "strategy.source_checkpoint");
    if (!cfg.strategy.source_train.empty() && !cfg.strategy.source_checkpoint.empty())
        throw ConfigError("set only one of strategy.source_train and "
                          "strategy.source_checkpoint");
    return cfg;
}

struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    int threads = 1;
    bool force = false;
};

inline ExperimentConfig load_experiment_config(const std::string& path,
                                               const CliOverrides& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    if (overrides.seed) j["seed"] = *overrides.seed;
    if (overrides.output_dir) j["output_dir"] = *overrides.output_dir;
    auto cfg = parse_experiment_config(j);
    cfg.config_hash = detail::config_hash_of(j);
    return cfg;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace detail {

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("failed writing file: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Peeks the first line to decide whether a TSV carries a label column.
inline std::size_t peek_column_count(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open TSV file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty input file");
    return split_tabs(line).size();
}

inline LabeledDataset preprocessed_copy(const LabeledDataset& ds, const EmojiTable& table) {
    LabeledDataset out = ds;
    for (auto& doc : out.documents) doc.text = transformer_preprocess(doc.text, table);
    return out;
}

} // namespace detail

struct EvalOutcome {
    EvalReport report;
    std::vector<BinaryLabel> golds;
    std::vector<BinaryLabel> preds;
};

template <typename PredictFn>
EvalOutcome evaluate_dataset(const LabeledDataset& ds, PredictFn&& predict) {
    if (!ds.fully_labeled())
        throw DataError("evaluation dataset must be fully labeled");
    EvalOutcome out;
    for (const auto& doc : ds.documents) {
        out.golds.push_back(*doc.label);
        out.preds.push_back(predict(doc));
    }
    out.report = build_report(confusion(out.golds, out.preds));
    return out;
}

// ---------------------------------------------------------------------------
// Loaded model bundle (what evaluate/predict read back from an output dir)
// ---------------------------------------------------------------------------

struct ModelBundle {
    std::string kind;
    ojson manifest;
    // classical
    MnbModel mnb;
    SvmModel svm;
    RfModel rf;
    BowVocabulary bow;
    bool lowercase = true;
    // encoder
    EnsembleModel ensemble;
    SubwordVocabulary subword;
    EmojiTable emoji;

    bool has_probabilities() const { return kind != "svm"; }

    std::pair<BinaryLabel, ProbabilityDistribution> predict(const std::string& text) const {
        if (kind == "encoder") {
            const auto ids =
                encode(subword, transformer_preprocess(text, emoji),
                       ensemble.members.front().config().max_len);
            if (ensemble.aggregation == Aggregation::ASE) {
                const auto r = predict_ase(ensemble, ids);
                return {r.label, r.prob};
            }
            if (ensemble.aggregation == Aggregation::MSE) {
                const auto label = predict_mse(ensemble, ids);
                return {label, predict_ase(ensemble, ids).prob};
            }
            const auto p = predict_member(ensemble.members.front(), ids);
            return {p.argmax(), p};
        }
        const auto tokens = classical_preprocess(text, emoji, lowercase);
        const auto x = vectorize(bow, tokens);
        if (kind == "mnb") {
            const auto p = predict_mnb(mnb, x);
            return {p.argmax(), p};
        }
        if (kind == "svm") {
            const auto r = predict_svm(svm, x);
            ProbabilityDistribution p;
            p.probs[static_cast<int>(r.label)] = 1.0;
            return {r.label, p};
        }
        const auto p = predict_rf(rf, x);
        return {p.argmax(), p};
    }
};

inline ModelBundle load_model_bundle(const std::string& model_dir,
                                     const std::string& emoji_table_override = "") {
    const fs::path dir(model_dir);
    if (!fs::exists(dir / "manifest.json"))
        throw DataError(model_dir + ": no manifest.json; not a model directory");
    ModelBundle b;
    b.manifest = ojson::parse(detail::read_file((dir / "manifest.json").string()));
    b.kind = b.manifest.at("model_kind").get<std::string>();
    const std::string table_path =
        !emoji_table_override.empty()
            ? emoji_table_override
            : b.manifest.at("preprocessing").at("emoji_table").get<std::string>();
    b.emoji = load_emoji_table(table_path);
    b.lowercase = b.manifest.at("preprocessing").at("lowercase").get<bool>();

    if (b.kind == "encoder") {
        b.subword = load_vocabulary((dir / "vocab.bpe").string());
        const std::string agg = b.manifest.at("aggregation").get<std::string>();
        b.ensemble.aggregation = agg == "ase"   ? Aggregation::ASE
                                 : agg == "mse" ? Aggregation::MSE
                                                : Aggregation::None;
        for (const auto& f : b.manifest.at("checkpoints")) {
            auto ck = load_checkpoint((dir / f.get<std::string>()).string());
            if (ck.vocab_fingerprint != b.subword.fingerprint)
                throw DataError("checkpoint fingerprint does not match vocab.bpe; "
                                "model directory is inconsistent");
            b.ensemble.members.push_back(std::move(ck));
        }
        b.ensemble.validate();
    } else {
        b.bow = load_bow_vocabulary((dir / "bow_vocab.tsv").string());
        const std::string model_file =
            (dir / b.manifest.at("checkpoints").at(0).get<std::string>()).string();
        if (b.kind == "mnb")
            b.mnb = load_mnb(model_file);
        else if (b.kind == "svm")
            b.svm = load_svm(model_file);
        else if (b.kind == "rf")
            b.rf = load_rf(model_file);
        else
            throw DataError("manifest has unknown model_kind '" + b.kind + "'");
    }
    return b;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

inline void cmd_preprocess(const std::string& input, const std::string& regime,
                           const std::string& output, const std::string& emoji_table_path,
                           bool lowercase = true) {
    if (regime != "classical" && regime != "transformer")
        throw ConfigError("regime must be classical or transformer");
    const auto table = load_emoji_table(emoji_table_path);
    const std::size_t cols = detail::peek_column_count(input);
    TsvSchema schema;
    schema.has_label = cols >= 3;
    LabeledDataset ds = load_tsv(input, schema);
    if (ds.documents.empty()) throw DataError(input + ": no data rows");

    std::string out;
    for (const auto& doc : ds.documents) {
        std::string text;
        if (regime == "classical") {
            const auto tokens = classical_preprocess(doc.text, table, lowercase);
            for (std::size_t i = 0; i < tokens.size(); ++i) {
                if (i) text += ' ';
                text += tokens[i];
            }
        } else {
            text = transformer_preprocess(doc.text, table);
        }
        out += doc.id + "\t" + text;
        if (doc.label) out += std::string("\t") + label_name(*doc.label);
        out += "\n";
    }
    detail::write_file(output, out);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

inline void cmd_synth(const std::string& out_dir, const SynthConfig& cfg,
                      std::uint64_t seed) {
    const auto bench = synth_codeswitch(cfg, seed);
    fs::create_directories(out_dir);
    auto render = [](const LabeledDataset& ds) {
        std::string out;
        for (const auto& d : ds.documents)
            out += d.id + "\t" + d.text + "\t" + label_name(*d.label) + "\n";
        return out;
    };
    detail::write_file((fs::path(out_dir) / "source.tsv").string(), render(bench.source));
    detail::write_file((fs::path(out_dir) / "target.tsv").string(), render(bench.target));
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

inline double cmd_gradcheck(std::uint64_t seed, double strict = 1e-4) {
    EncoderConfig cfg;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.ff_dim = 16;
    cfg.max_len = 8;
    cfg.vocab_size = 32;
    cfg.dropout = 0.0;
    const double err = grad_check(cfg, seed);
    std::cout << "gradcheck seed=" << seed << " max_relative_error=" << err << "\n";
    if (!(err < strict))
        throw NumericError("gradient check failed: " + std::to_string(err) +
                           " >= " + std::to_string(strict));
    return err;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace detail {

inline void check_manifest_overwrite(const fs::path& dir, const std::string& config_hash,
                                     bool force) {
    const fs::path manifest = dir / "manifest.json";
    if (!fs::exists(manifest)) return;
    const auto j = ojson::parse(read_file(manifest.string()));
    const std::string existing = j.at("config_hash").get<std::string>();
    if (existing != config_hash && !force)
        throw ConfigError(dir.string() +
                          ": existing artifacts came from a different config (" +
                          existing + "); pass --force to overwrite");
}

inline ojson schema_to_json(const TsvSchema& schema) {
    ojson aliases = ojson::object();
    for (const auto& [k, v] : schema.label_aliases) aliases[k] = label_name(v);
    return ojson{{"has_header", schema.has_header},
                 {"id_column", schema.id_column},
                 {"text_column", schema.text_column},
                 {"label_column", schema.label_column},
                 {"label_aliases", aliases}};
}

inline TsvSchema schema_from_json(const ojson& j) {
    TsvSchema s;
    s.has_header = j.at("has_header").get<bool>();
    s.id_column = j.at("id_column").get<std::string>();
    s.text_column = j.at("text_column").get<std::string>();
    s.label_column = j.at("label_column").get<std::string>();
    s.label_aliases.clear();
    for (auto it = j.at("label_aliases").begin(); it != j.at("label_aliases").end(); ++it)
        s.label_aliases[it.key()] =
            it.value().get<std::string>() == "OFF" ? BinaryLabel::OFF : BinaryLabel::NOT;
    return s;
}

struct TrainArtifacts {
    std::vector<std::string> checkpoint_files;
    std::vector<std::uint64_t> member_seeds;
    std::string aggregation = "none";
    std::string train_log;
};

} // namespace detail

inline void cmd_train(const ExperimentConfig& cfg, int threads = 1, bool force = false) {
    const fs::path out_dir(cfg.output_dir);
    fs::create_directories(out_dir);
    detail::check_manifest_overwrite(out_dir, cfg.config_hash, force);

    const auto emoji = load_emoji_table(cfg.prep.emoji_table);
    const auto full_train = load_tsv(cfg.train_path, cfg.schema);
    if (!full_train.fully_labeled())
        throw DataError(cfg.train_path + ": training data must be fully labeled");

    LabeledDataset train_main, val_main;
    std::string validation_source;
    if (!cfg.validation_path.empty()) {
        train_main = full_train;
        val_main = load_tsv(cfg.validation_path, cfg.schema);
        validation_source = "file";
    } else {
        auto split = stratified_split(full_train, cfg.validation_fraction,
                                      derive_seed(cfg.seed, 0xEA71));
        train_main = std::move(split.train);
        val_main = std::move(split.validation);
        validation_source = "split";
    }

    detail::TrainArtifacts art;
    EvalOutcome eval;

    if (cfg.model.kind == "encoder") {
        const RecipeFlags flags = parse_recipe(cfg.strategy.recipe);
        auto train_prep = detail::preprocessed_copy(train_main, emoji);
        auto val_prep = detail::preprocessed_copy(val_main, emoji);

        SubwordVocabulary vocab;
        std::optional<Checkpoint> source;
        LabeledDataset source_prep;
        EncoderConfig enc_cfg = cfg.encoder;

        if (flags.transfer && !cfg.strategy.source_checkpoint.empty()) {
            const fs::path src_dir(cfg.strategy.source_checkpoint);
            vocab = load_vocabulary((src_dir / "vocab.bpe").string());
            source = load_checkpoint((src_dir / "model.bin").string());
            enc_cfg = source->config();
        } else {
            std::vector<std::string> bpe_corpus;
            for (const auto& d : train_prep.documents) bpe_corpus.push_back(d.text);
            if (flags.transfer) {
                auto source_ds = load_tsv(cfg.strategy.source_train, cfg.schema);
                if (!source_ds.fully_labeled())
                    throw DataError(cfg.strategy.source_train +
                                    ": source data must be fully labeled");
                source_prep = detail::preprocessed_copy(source_ds, emoji);
                // Shared vocabulary: BPE sees both languages before training.
                for (const auto& d : source_prep.documents) bpe_corpus.push_back(d.text);
            }
            vocab = train_bpe(bpe_corpus, cfg.strategy.bpe_merges);
            enc_cfg.vocab_size = vocab.size();

            if (flags.transfer) {
                auto src_split = stratified_split(source_prep, cfg.validation_fraction,
                                                  derive_seed(cfg.seed, 0x50C));
                TrainRecipe src_recipe;
                src_recipe.encoder_config = enc_cfg;
                src_recipe.classify_hyper = cfg.train_hyper;
                src_recipe.classify_hyper.seed = derive_seed(cfg.seed, 0x51C);
                src_recipe.n_members = 1;
                src_recipe.validation_fraction = cfg.validation_fraction;
                src_recipe.task_name = "source";
                auto src_result = run_recipe(src_recipe, src_split.train,
                                             &src_split.validation, vocab, nullptr, 1);
                source = std::move(src_result.ensemble.members.front());
                save_checkpoint(*source, (out_dir / "source_model.bin").string());
            }
        }

        TrainRecipe recipe;
        recipe.transfer = flags.transfer;
        recipe.lm_pretrain = flags.lm;
        recipe.aggregation = flags.aggregation;
        recipe.n_members = flags.aggregation == Aggregation::None ? 1 : cfg.strategy.n_members;
        recipe.member_mode = cfg.strategy.member_mode == "split"  ? MemberMode::SplitOnly
                             : cfg.strategy.member_mode == "both" ? MemberMode::Both
                                                                  : MemberMode::SeedOnly;
        recipe.encoder_config = enc_cfg;
        recipe.classify_hyper = cfg.train_hyper;
        recipe.lm_hyper = cfg.train_hyper;
        recipe.lm_hyper.epochs = cfg.strategy.lm_epochs;
        if (cfg.strategy.lm_learning_rate > 0.0)
            recipe.lm_hyper.learning_rate = cfg.strategy.lm_learning_rate;
        if (cfg.strategy.lm_batch_size > 0)
            recipe.lm_hyper.batch_size = cfg.strategy.lm_batch_size;
        recipe.mask_rate = cfg.strategy.mask_rate;
        recipe.validation_fraction = cfg.validation_fraction;
        recipe.split_seed = derive_seed(cfg.seed, 0x511);
        recipe.task_name = train_main.name;
        for (int k = 0; k < recipe.n_members; ++k)
            recipe.member_seeds.push_back(derive_seed(cfg.seed, 100 + k));

        auto result = run_recipe(recipe, train_prep, &val_prep, vocab,
                                 source ? &*source : nullptr, threads);

        save_vocabulary(vocab, (out_dir / "vocab.bpe").string());
        const bool single = result.ensemble.members.size() == 1 &&
                            result.ensemble.aggregation == Aggregation::None;
        for (std::size_t k = 0; k < result.ensemble.members.size(); ++k) {
            const std::string file =
                single ? "model.bin" : "member_" + std::to_string(k) + ".bin";
            save_checkpoint(result.ensemble.members[k], (out_dir / file).string());
            art.checkpoint_files.push_back(file);
        }
        art.member_seeds = recipe.member_seeds;
        art.aggregation = flags.aggregation == Aggregation::ASE   ? "ase"
                          : flags.aggregation == Aggregation::MSE ? "mse"
                                                                  : "none";
        for (const auto& log : result.member_logs) art.train_log += render_train_log(log);

        // Report from the persisted artifacts so evaluate reproduces it.
        EnsembleModel reloaded;
        reloaded.aggregation = result.ensemble.aggregation;
        for (const auto& file : art.checkpoint_files)
            reloaded.members.push_back(load_checkpoint((out_dir / file).string()));
        eval = evaluate_dataset(val_prep, [&](const Document& doc) {
            return predict_ensemble(reloaded, encode(vocab, doc.text, enc_cfg.max_len));
        });
    } else {
        auto tokens_of = [&](const Document& doc) {
            return classical_preprocess(doc.text, emoji, cfg.prep.lowercase);
        };
        std::vector<TokenSequence> train_tokens;
        std::vector<BinaryLabel> y;
        for (const auto& doc : train_main.documents) {
            train_tokens.push_back(tokens_of(doc));
            y.push_back(*doc.label);
        }
        const auto bow = build_vocabulary(train_tokens, cfg.model.bow_min_frequency);
        std::vector<SparseCountVector> X;
        for (const auto& t : train_tokens) X.push_back(vectorize(bow, t));

        const std::string model_file = "model.bin";
        if (cfg.model.kind == "mnb") {
            const auto model = train_mnb(X, y, cfg.model.mnb_smoothing);
            save_mnb(model, (out_dir / model_file).string());
        } else if (cfg.model.kind == "svm") {
            const auto model = train_svm_sgd(X, y, cfg.model.svm);
            save_svm(model, (out_dir / model_file).string());
        } else {
            RfHyper hyper;
            hyper.n_trees = cfg.model.rf_trees;
            hyper.seed = cfg.model.rf_seed;
            const auto model = train_random_forest(X, y, hyper, threads);
            save_rf(model, (out_dir / model_file).string());
        }
        save_bow_vocabulary(bow, (out_dir / "bow_vocab.tsv").string());
        art.checkpoint_files.push_back(model_file);

        // Reload so the report matches what evaluate computes from disk.
        ModelBundle bundle;
        bundle.kind = cfg.model.kind;
        bundle.emoji = emoji;
        bundle.lowercase = cfg.prep.lowercase;
        bundle.bow = bow;
        if (cfg.model.kind == "mnb")
            bundle.mnb = load_mnb((out_dir / model_file).string());
        else if (cfg.model.kind == "svm")
            bundle.svm = load_svm((out_dir / model_file).string());
        else
            bundle.rf = load_rf((out_dir / model_file).string());
        eval = evaluate_dataset(val_main, [&](const Document& doc) {
            return bundle.predict(doc.text).first;
        });
    }

    if (!art.train_log.empty())
        detail::write_file((out_dir / "train_log.tsv").string(), art.train_log);
    detail::write_file((out_dir / "report.txt").string(), render_report_text(eval.report));
    detail::write_file((out_dir / "report.json").string(),
                       render_report_structured(eval.report));

    ojson manifest;
    manifest["format_version"] = 1;
    manifest["config_hash"] = cfg.config_hash;
    manifest["model_kind"] = cfg.model.kind;
    manifest["recipe"] = cfg.strategy.recipe;
    manifest["seed"] = cfg.seed;
    manifest["member_seeds"] = art.member_seeds;
    manifest["aggregation"] = art.aggregation;
    manifest["checkpoints"] = art.checkpoint_files;
    manifest["preprocessing"] = {{"regime", cfg.effective_regime()},
                                 {"lowercase", cfg.prep.lowercase},
                                 {"emoji_table", cfg.prep.emoji_table}};
    manifest["data_schema"] = detail::schema_to_json(cfg.schema);
    manifest["validation"] = validation_source;
    detail::write_file((out_dir / "manifest.json").string(), manifest.dump(2) + "\n");

    std::cout << render_report_text(eval.report);
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

inline EvalReport cmd_evaluate(const std::string& model_dir, const std::string& data_path,
                               const std::string& output_dir = "",
                               const std::string& emoji_table_override = "") {
    const auto bundle = load_model_bundle(model_dir, emoji_table_override);
    TsvSchema schema = detail::schema_from_json(bundle.manifest.at("data_schema"));
    schema.has_label = true;
    const auto ds = load_tsv(data_path, schema);
    if (ds.documents.empty()) throw DataError(data_path + ": no data rows");

    const auto eval = evaluate_dataset(
        ds, [&](const Document& doc) { return bundle.predict(doc.text).first; });

    const fs::path out(output_dir.empty() ? model_dir : output_dir);
    fs::create_directories(out);
    detail::write_file((out / "eval_report.txt").string(),
                       render_report_text(eval.report));
    detail::write_file((out / "eval_report.json").string(),
                       render_report_structured(eval.report));
    std::cout << render_report_text(eval.report);
    return eval.report;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

inline void cmd_predict(const std::string& model_dir, const std::string& input,
                        const std::string& output,
                        const std::string& emoji_table_override = "") {
    const auto bundle = load_model_bundle(model_dir, emoji_table_override);
    const std::size_t cols = detail::peek_column_count(input);
    if (cols > 2)
        std::cerr << "warning: " << input
                  << " has extra columns; treating column 1 as text and ignoring "
                     "the rest (labels are not used)\n";
    TsvSchema schema;
    schema.has_label = false;
    schema.allow_extra_columns = true;
    const auto ds = load_tsv(input, schema);
    if (ds.documents.empty()) throw DataError(input + ": no data rows");

    std::string out;
    char buf[64];
    for (const auto& doc : ds.documents) {
        const auto [label, prob] = bundle.predict(doc.text);
        out += doc.id + "\t" + label_name(label);
        if (bundle.has_probabilities()) {
            std::snprintf(buf, sizeof(buf), "\t%.9f\t%.9f", prob.probs[0], prob.probs[1]);
            out += buf;
        }
        out += "\n";
    }
    detail::write_file(output, out);
}

} // namespace offlang
