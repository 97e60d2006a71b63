#include "offlang/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <sys/wait.h>

#include "catch_amalgamated.hpp"
#include "test_util.hpp"

using namespace offlang;

namespace {

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

// Small labeled corpus where OFF documents carry obvious marker words.
std::string fixture_tsv(int docs) {
    std::string out;
    Rng rng(19);
    for (int i = 0; i < docs; ++i) {
        const bool off = i % 3 == 0;
        std::string text = off ? "you are awful trash" : "have a lovely day";
        text += " filler" + std::to_string(rng.index(4));
        out += "doc" + std::to_string(i) + "\t" + text + "\t" + (off ? "OFF" : "NOT") +
               "\n";
    }
    return out;
}

std::string base_config(const std::string& train_path, const std::string& out_dir,
                        const std::string& kind, const std::string& extra = "") {
    return std::string("{\n") + "  \"data\": {\"train\": " + quoted(train_path) +
           "},\n" + "  \"preprocessing\": {\"emoji_table\": " +
           quoted(testutil::emoji_table_path()) + "},\n" +
           "  \"model\": {\"kind\": " + quoted(kind) + ", \"rf_trees\": 15},\n" +
           "  \"train\": {\"validation_fraction\": 0.25},\n" + extra +
           "  \"seed\": 7,\n" + "  \"output_dir\": " + quoted(out_dir) + "\n}\n";
}

} // namespace

TEST_CASE("config parsing rejects unknown keys and bad recipes") {
    testutil::TempDir dir("cfg");
    testutil::write_file(dir.str("bad_key.json"),
                         "{\"data\": {\"train\": \"x.tsv\"}, \"output_dir\": \"o\", "
                         "\"mystery\": 1}");
    CHECK_THROWS_AS(load_experiment_config(dir.str("bad_key.json")), ConfigError);

    testutil::write_file(dir.str("bad_nested.json"),
                         "{\"data\": {\"train\": \"x.tsv\", \"oops\": true}, "
                         "\"output_dir\": \"o\"}");
    CHECK_THROWS_AS(load_experiment_config(dir.str("bad_nested.json")), ConfigError);

    testutil::write_file(dir.str("bad_recipe.json"),
                         "{\"data\": {\"train\": \"x.tsv\"}, \"output_dir\": \"o\", "
                         "\"strategy\": {\"recipe\": \"mse+ase\"}}");
    CHECK_THROWS_AS(load_experiment_config(dir.str("bad_recipe.json")), ConfigError);

    testutil::write_file(dir.str("classical_recipe.json"),
                         "{\"data\": {\"train\": \"x.tsv\"}, \"output_dir\": \"o\", "
                         "\"model\": {\"kind\": \"rf\"}, "
                         "\"strategy\": {\"recipe\": \"ase\"}}");
    CHECK_THROWS_AS(load_experiment_config(dir.str("classical_recipe.json")), ConfigError);

    testutil::write_file(dir.str("no_out.json"), "{\"data\": {\"train\": \"x.tsv\"}}");
    CHECK_THROWS_AS(load_experiment_config(dir.str("no_out.json")), ConfigError);

    testutil::write_file(dir.str("not_json.json"), "{nope");
    CHECK_THROWS_AS(load_experiment_config(dir.str("not_json.json")), ConfigError);
}

TEST_CASE("cmd_preprocess applies both regimes") {
    testutil::TempDir dir("prep");
    testutil::write_file(dir.str("in.tsv"),
                         "a\tGood day!! \U0001F642\tNOT\n"
                         "b\tWhat, me worry?\tOFF\n");

    cmd_preprocess(dir.str("in.tsv"), "transformer", dir.str("t.tsv"),
                   testutil::emoji_table_path());
    const auto trans = testutil::read_file(dir.str("t.tsv"));
    CHECK(trans.find("slightly smiling face") != std::string::npos);
    CHECK(trans.find("Good day!!") != std::string::npos); // punctuation kept
    CHECK(trans.find("\tNOT") != std::string::npos);      // labels preserved

    cmd_preprocess(dir.str("in.tsv"), "classical", dir.str("c.tsv"),
                   testutil::emoji_table_path());
    const auto classical = testutil::read_file(dir.str("c.tsv"));
    CHECK(classical.find("good day") != std::string::npos);
    CHECK(classical.find("!") == std::string::npos);
    CHECK(classical.find("?") == std::string::npos);
    CHECK(classical.find(",") == std::string::npos);
    CHECK(classical.find("\U0001F642") == std::string::npos);

    testutil::write_file(dir.str("empty.tsv"), "");
    CHECK_THROWS_AS(cmd_preprocess(dir.str("empty.tsv"), "classical", dir.str("e.tsv"),
                                   testutil::emoji_table_path()),
                    DataError);
    CHECK_THROWS_AS(cmd_preprocess(dir.str("in.tsv"), "quantum", dir.str("q.tsv"),
                                   testutil::emoji_table_path()),
                    ConfigError);
}

TEST_CASE("cmd_train / cmd_evaluate / cmd_predict round trip for classical models") {
    testutil::TempDir dir("train");
    testutil::write_file(dir.str("train.tsv"), fixture_tsv(36));
    const auto out_dir = dir.str("out_mnb");
    testutil::write_file(dir.str("mnb.json"),
                         base_config(dir.str("train.tsv"), out_dir, "mnb"));

    const auto cfg = load_experiment_config(dir.str("mnb.json"));
    cmd_train(cfg);
    CHECK(std::filesystem::exists(out_dir + "/model.bin"));
    CHECK(std::filesystem::exists(out_dir + "/bow_vocab.tsv"));
    CHECK(std::filesystem::exists(out_dir + "/report.json"));
    CHECK(std::filesystem::exists(out_dir + "/manifest.json"));
    const auto report1 = testutil::read_file(out_dir + "/report.json");

    // Re-running the identical config reproduces the report byte for byte.
    cmd_train(cfg);
    CHECK(testutil::read_file(out_dir + "/report.json") == report1);

    // Evaluating the model on the training file works end to end.
    const auto report = cmd_evaluate(out_dir, dir.str("train.tsv"), dir.str("eval_out"));
    CHECK(report.total == 36);
    CHECK(report.weighted_f1 > 0.8); // marker words make this easy
    CHECK(std::filesystem::exists(dir.str("eval_out") + "/eval_report.json"));

    // Prediction over an unlabeled file.
    testutil::write_file(dir.str("unlabeled.tsv"), "q1\tyou are awful trash\n"
                                                   "q2\thave a lovely day\n");
    cmd_predict(out_dir, dir.str("unlabeled.tsv"), dir.str("preds.tsv"));
    const auto preds = testutil::read_file(dir.str("preds.tsv"));
    CHECK(preds.find("q1\tOFF") != std::string::npos);
    CHECK(preds.find("q2\tNOT") != std::string::npos);

    // A labeled file triggers the ignored-labels path but still predicts.
    cmd_predict(out_dir, dir.str("train.tsv"), dir.str("preds2.tsv"));
    const auto preds2 = testutil::read_file(dir.str("preds2.tsv"));
    CHECK(preds2.find("doc0\t") != std::string::npos);
}

TEST_CASE("cmd_train refuses to overwrite a different config without force") {
    testutil::TempDir dir("force");
    testutil::write_file(dir.str("train.tsv"), fixture_tsv(24));
    const auto out_dir = dir.str("out");
    testutil::write_file(dir.str("a.json"),
                         base_config(dir.str("train.tsv"), out_dir, "mnb"));
    testutil::write_file(dir.str("b.json"),
                         base_config(dir.str("train.tsv"), out_dir, "svm"));

    cmd_train(load_experiment_config(dir.str("a.json")));
    CHECK_THROWS_AS(cmd_train(load_experiment_config(dir.str("b.json"))), ConfigError);
    cmd_train(load_experiment_config(dir.str("b.json")), 1, /*force=*/true);
    const auto manifest = ojson::parse(testutil::read_file(out_dir + "/manifest.json"));
    CHECK(manifest.at("model_kind") == "svm");
}

TEST_CASE("cmd_train runs the encoder path with artifacts") {
    testutil::TempDir dir("enc");
    testutil::write_file(dir.str("train.tsv"), fixture_tsv(24));
    const auto out_dir = dir.str("out_enc");
    const std::string extra =
        "  \"encoder\": {\"d_model\": 16, \"heads\": 2, \"layers\": 1, \"ff_dim\": 32, "
        "\"max_len\": 16},\n"
        "  \"strategy\": {\"bpe_merges\": 20},\n";
    std::string config = base_config(dir.str("train.tsv"), out_dir, "encoder", extra);
    // Encoder smoke run: 1 epoch to stay fast.
    config.replace(config.find("\"validation_fraction\": 0.25"),
                   std::string("\"validation_fraction\": 0.25").size(),
                   "\"validation_fraction\": 0.25, \"epochs\": 1");
    testutil::write_file(dir.str("enc.json"), config);

    cmd_train(load_experiment_config(dir.str("enc.json")));
    CHECK(std::filesystem::exists(out_dir + "/model.bin"));
    CHECK(std::filesystem::exists(out_dir + "/vocab.bpe"));
    CHECK(std::filesystem::exists(out_dir + "/train_log.tsv"));
    const auto log = testutil::read_file(out_dir + "/train_log.tsv");
    CHECK(log.find("epoch\tsplit\tloss\taccuracy") != std::string::npos);
    CHECK(log.find("validation") != std::string::npos);

    const auto report = cmd_evaluate(out_dir, dir.str("train.tsv"), dir.str("eval"));
    CHECK(report.total == 24);

    cmd_predict(out_dir, dir.str("train.tsv"), dir.str("preds.tsv"));
    const auto preds = testutil::read_file(dir.str("preds.tsv"));
    std::size_t rows = 0;
    for (const char c : preds)
        if (c == '\n') ++rows;
    CHECK(rows == 24);
    // id, label and two probability columns per row.
    const auto first_line = preds.substr(0, preds.find('\n'));
    CHECK(std::count(first_line.begin(), first_line.end(), '\t') == 3);
    const double p0 = std::stod(first_line.substr(first_line.find('\t', first_line.find('\t') + 1) + 1));
    CHECK(p0 >= 0.0);
    CHECK(p0 <= 1.0);
}

TEST_CASE("cmd_gradcheck enforces its threshold") {
    CHECK_NOTHROW(cmd_gradcheck(0, 1e-4));
    CHECK_THROWS_AS(cmd_gradcheck(0, 1e-12), NumericError);
}

TEST_CASE("cmd_synth writes reloadable TSVs") {
    testutil::TempDir dir("synth");
    SynthConfig cfg;
    cfg.source_size = 60;
    cfg.target_size = 30;
    cmd_synth(dir.str("bench"), cfg, 3);
    const auto source = load_tsv(dir.str("bench") + "/source.tsv", TsvSchema{});
    const auto target = load_tsv(dir.str("bench") + "/target.tsv", TsvSchema{});
    CHECK(source.size() == 60);
    CHECK(target.size() == 30);
    CHECK(source.fully_labeled());

    cmd_synth(dir.str("bench2"), cfg, 3);
    CHECK(testutil::read_file(dir.str("bench") + "/source.tsv") ==
          testutil::read_file(dir.str("bench2") + "/source.tsv"));
}

TEST_CASE("the installed binary maps error classes to exit codes") {
    testutil::TempDir dir("exit");
    const std::string cli = OFFLANG_CLI_PATH;
    auto run = [&](const std::string& args) {
        const auto cmd = cli + " " + args + " >/dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        return WEXITSTATUS(status);
    };
    CHECK(run("synth --output-dir " + dir.str("s") + " --source-size 40 --target-size 20") == 0);
    CHECK(run("gradcheck --seed 1") == 0);
    CHECK(run("gradcheck --strict 1e-12") == 3);
    CHECK(run("evaluate " + dir.str("nope") + " " + dir.str("missing.tsv")) == 2);
    CHECK(run("train --config " + dir.str("missing.json")) == 1);
    CHECK(run("definitely-not-a-subcommand") == 1);

    testutil::write_file(dir.str("bad.json"), "{\"output_dir\": \"x\", \"oops\": 1}");
    CHECK(run("train --config " + dir.str("bad.json")) == 1);
}
