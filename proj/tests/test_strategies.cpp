#include "offlang/strategies.hpp"

#include <cmath>
#include <cstring>

#include "catch_amalgamated.hpp"
#include "test_util.hpp"

using namespace offlang;

namespace {

EncoderConfig tiny_config(int vocab_size = 300) {
    EncoderConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.ff_dim = 32;
    cfg.max_len = 12;
    cfg.vocab_size = vocab_size;
    cfg.dropout = 0.1;
    return cfg;
}

Checkpoint random_checkpoint(std::uint64_t seed, const EncoderConfig& cfg) {
    Checkpoint ck;
    ck.encoder = init_encoder(cfg, seed);
    ck.head = init_head(cfg, derive_seed(seed, 1));
    ck.vocab_fingerprint = 0xDEADBEEFCAFEF00DULL;
    ck.provenance.source_task = "fixture";
    ck.provenance.seed = seed;
    ck.provenance.tags = {"tl", "ase"};
    return ck;
}

TokenIdSequence probe_ids(int max_len, std::uint64_t seed, int vocab_size) {
    Rng rng(seed);
    TokenIdSequence seq;
    seq.ids.push_back(SubwordVocabulary::kCls);
    const int n = 1 + static_cast<int>(rng.index(max_len - 2));
    for (int i = 0; i < n; ++i)
        seq.ids.push_back(SubwordVocabulary::kNumSpecials +
                          static_cast<int>(rng.index(vocab_size - 5)));
    seq.ids.push_back(SubwordVocabulary::kSep);
    seq.attention_length = static_cast<int>(seq.ids.size());
    seq.ids.resize(max_len, SubwordVocabulary::kPad);
    return seq;
}

// A member whose prediction is the same fixed distribution for every input:
// zero encoder (its forward collapses to layer-norm biases) plus a head
// bias of log-probabilities.
Checkpoint const_member(double p_not, const EncoderConfig& cfg) {
    Checkpoint ck;
    ck.encoder = EncoderWeights::zeros(cfg);
    for (auto& l : ck.encoder.layers) {
        std::fill(l.ln1_g.begin(), l.ln1_g.end(), 1.0f);
        std::fill(l.ln2_g.begin(), l.ln2_g.end(), 1.0f);
    }
    std::fill(ck.encoder.lnf_g.begin(), ck.encoder.lnf_g.end(), 1.0f);
    ck.head = ClassifierHead::zeros(cfg);
    ck.head.b[0] = static_cast<float>(std::log(p_not));
    ck.head.b[1] = static_cast<float>(std::log(1.0 - p_not));
    ck.vocab_fingerprint = 1;
    return ck;
}

bool checkpoints_bit_identical(Checkpoint& a, Checkpoint& b) {
    auto ra = tensor_refs(a.encoder);
    auto rb = tensor_refs(b.encoder);
    auto ha = tensor_refs(a.head);
    auto hb = tensor_refs(b.head);
    ra.insert(ra.end(), ha.begin(), ha.end());
    rb.insert(rb.end(), hb.begin(), hb.end());
    if (ra.size() != rb.size()) return false;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        if (ra[i].n != rb[i].n) return false;
        if (std::memcmp(ra[i].data, rb[i].data, ra[i].n * sizeof(float)) != 0)
            return false;
    }
    return true;
}

} // namespace

TEST_CASE("checkpoint save/load is bit-identical") {
    testutil::TempDir dir("ckpt");
    const auto cfg = tiny_config();
    auto ck = random_checkpoint(42, cfg);
    save_checkpoint(ck, dir.str("model.bin"));
    auto loaded = load_checkpoint(dir.str("model.bin"));

    CHECK(checkpoints_bit_identical(ck, loaded));
    CHECK(loaded.vocab_fingerprint == ck.vocab_fingerprint);
    CHECK(loaded.provenance.source_task == "fixture");
    CHECK(loaded.provenance.seed == 42);
    CHECK(loaded.provenance.tags == std::vector<std::string>{"tl", "ase"});
    CHECK(loaded.config() == cfg);

    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto ids = probe_ids(cfg.max_len, s, cfg.vocab_size);
        const auto a = predict_member(ck, ids);
        const auto b = predict_member(loaded, ids);
        CHECK(a.probs[0] == b.probs[0]);
        CHECK(a.probs[1] == b.probs[1]);
    }
}

TEST_CASE("corrupted checkpoints fail the checksum") {
    testutil::TempDir dir("ckpt");
    const auto cfg = tiny_config();
    save_checkpoint(random_checkpoint(1, cfg), dir.str("model.bin"));
    auto bytes = testutil::read_file(dir.str("model.bin"));

    auto flipped = bytes;
    flipped[flipped.size() / 2] = static_cast<char>(flipped[flipped.size() / 2] ^ 0x40);
    testutil::write_file(dir.str("bad.bin"), flipped);
    CHECK_THROWS_AS(load_checkpoint(dir.str("bad.bin")), DataError);

    testutil::write_file(dir.str("trunc.bin"), bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(dir.str("trunc.bin")), DataError);

    auto wrong_version = bytes;
    wrong_version[8] = 9; // version field
    testutil::write_file(dir.str("ver.bin"), wrong_version);
    CHECK_THROWS_AS(load_checkpoint(dir.str("ver.bin")), DataError);

    testutil::write_file(dir.str("junk.bin"), "NOTACKPT but long enough to read");
    CHECK_THROWS_AS(load_checkpoint(dir.str("junk.bin")), DataError);
}

TEST_CASE("transfer_init copies weights only under matching fingerprints") {
    const auto cfg = tiny_config();
    auto source = random_checkpoint(7, cfg);
    const auto init = transfer_init(source, source.vocab_fingerprint);
    for (std::uint64_t s = 0; s < 4; ++s) {
        const auto ids = probe_ids(cfg.max_len, s, cfg.vocab_size);
        const auto a = predict_member(source, ids);
        const auto b = forward(init.encoder, init.head, ids).prob;
        CHECK(a.probs[0] == b.probs[0]);
    }
    CHECK_THROWS_AS(transfer_init(source, source.vocab_fingerprint + 1), ConfigError);
}

TEST_CASE("predict_mse takes the vote mode") {
    const auto cfg = tiny_config(64);
    EnsembleModel e;
    e.aggregation = Aggregation::MSE;
    e.members = {const_member(0.2, cfg), const_member(0.3, cfg), const_member(0.8, cfg)};
    const auto ids = probe_ids(cfg.max_len, 3, cfg.vocab_size);
    CHECK(predict_mse(e, ids) == BinaryLabel::OFF); // votes OFF, OFF, NOT

    EnsembleModel n1;
    n1.aggregation = Aggregation::MSE;
    n1.members = {const_member(0.8, cfg)};
    CHECK(predict_mse(n1, ids) == BinaryLabel::NOT);
}

TEST_CASE("predict_mse breaks two-member ties by mean probability") {
    const auto cfg = tiny_config(64);
    const auto ids = probe_ids(cfg.max_len, 4, cfg.vocab_size);
    EnsembleModel e;
    e.aggregation = Aggregation::MSE;
    // Votes (OFF, NOT); mean OFF probability (0.8 + 0.24) / 2 = 0.52.
    e.members = {const_member(0.2, cfg), const_member(0.76, cfg)};
    CHECK(predict_mse(e, ids) == BinaryLabel::OFF);
    // Votes (OFF, NOT); mean OFF probability (0.6 + 0.1) / 2 = 0.35.
    e.members = {const_member(0.4, cfg), const_member(0.9, cfg)};
    CHECK(predict_mse(e, ids) == BinaryLabel::NOT);
}

TEST_CASE("predict_mse matches a counting oracle on random ensembles") {
    const auto cfg = tiny_config(64);
    Rng rng(31);
    const auto ids = probe_ids(cfg.max_len, 5, cfg.vocab_size);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng.index(5));
        EnsembleModel e;
        e.aggregation = Aggregation::MSE;
        std::vector<double> p_nots;
        for (int k = 0; k < n; ++k) {
            const double p = 0.05 + 0.9 * rng.real();
            p_nots.push_back(p);
            e.members.push_back(const_member(p, cfg));
        }
        int votes[2] = {0, 0};
        double mean_not = 0.0;
        for (const double p : p_nots) {
            ++votes[p >= 0.5 ? 0 : 1];
            mean_not += p / n;
        }
        BinaryLabel want;
        if (votes[0] != votes[1])
            want = votes[1] > votes[0] ? BinaryLabel::OFF : BinaryLabel::NOT;
        else
            want = mean_not >= 0.5 ? BinaryLabel::NOT : BinaryLabel::OFF;
        CHECK(predict_mse(e, ids) == want);
        if (n % 2 == 1) CHECK(votes[0] != votes[1]); // odd N cannot tie
    }
}

TEST_CASE("predict_ase averages member distributions exactly") {
    const auto cfg = tiny_config(64);
    const auto ids = probe_ids(cfg.max_len, 6, cfg.vocab_size);
    EnsembleModel e;
    e.aggregation = Aggregation::ASE;
    e.members = {const_member(0.6, cfg), const_member(0.2, cfg)};
    const auto r = predict_ase(e, ids);
    CHECK(r.prob.probs[0] == Catch::Approx(0.4).margin(1e-6));
    CHECK(r.prob.probs[1] == Catch::Approx(0.6).margin(1e-6));
    CHECK(r.label == BinaryLabel::OFF);

    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 1 + static_cast<int>(rng.index(6));
        EnsembleModel ens;
        ens.aggregation = Aggregation::ASE;
        for (int k = 0; k < n; ++k)
            ens.members.push_back(const_member(0.05 + 0.9 * rng.real(), cfg));
        const auto ase = predict_ase(ens, ids);
        double mean[2] = {0.0, 0.0};
        for (const auto& m : ens.members) {
            const auto p = predict_member(m, ids);
            mean[0] += p.probs[0] / n;
            mean[1] += p.probs[1] / n;
        }
        CHECK(std::abs(ase.prob.probs[0] - mean[0]) <= 1e-12);
        CHECK(std::abs(ase.prob.probs[1] - mean[1]) <= 1e-12);
        CHECK(ase.prob.probs[0] + ase.prob.probs[1] == Catch::Approx(1.0).margin(1e-9));

        // Permutation invariance of the argmax.
        Rng shuffler(trial);
        auto shuffled = ens;
        shuffler.shuffle(shuffled.members);
        CHECK(predict_ase(shuffled, ids).label == ase.label);
    }

    EnsembleModel identical;
    identical.aggregation = Aggregation::ASE;
    identical.members = {const_member(0.7, cfg), const_member(0.7, cfg),
                         const_member(0.7, cfg)};
    const auto single = predict_member(identical.members[0], ids);
    const auto agg = predict_ase(identical, ids);
    CHECK(agg.prob.probs[0] == Catch::Approx(single.probs[0]).margin(1e-12));
}

TEST_CASE("parse_recipe understands compositions and rejects bad ones") {
    const auto flags = parse_recipe("tl+ase+lm");
    CHECK(flags.transfer);
    CHECK(flags.lm);
    CHECK(flags.aggregation == Aggregation::ASE);

    const auto base = parse_recipe("base");
    CHECK(!base.transfer);
    CHECK(!base.lm);
    CHECK(base.aggregation == Aggregation::None);

    CHECK(parse_recipe("mse").aggregation == Aggregation::MSE);
    CHECK_THROWS_AS(parse_recipe("mse+ase"), ConfigError);
    CHECK_THROWS_AS(parse_recipe("ase+mse"), ConfigError);
    CHECK_THROWS_AS(parse_recipe("tl+nonsense"), ConfigError);
}

namespace {

LabeledDataset tiny_task(int docs) {
    LabeledDataset ds;
    ds.name = "tiny";
    Rng rng(40);
    for (int i = 0; i < docs; ++i) {
        const bool off = i % 2 == 1;
        Document d;
        d.id = "d" + std::to_string(i);
        d.text = off ? "bad xx yy" : "good yy zz";
        d.label = off ? BinaryLabel::OFF : BinaryLabel::NOT;
        ds.documents.push_back(d);
    }
    return ds;
}

} // namespace

TEST_CASE("run_recipe trains ensembles deterministically with provenance tags") {
    const auto task = tiny_task(24);
    std::vector<std::string> corpus;
    for (const auto& d : task.documents) corpus.push_back(d.text);
    const auto vocab = train_bpe(corpus, 8);

    TrainRecipe recipe;
    recipe.encoder_config = tiny_config(vocab.size());
    recipe.lm_pretrain = true;
    recipe.aggregation = Aggregation::ASE;
    recipe.n_members = 2;
    recipe.member_seeds = {11, 22};
    recipe.classify_hyper.learning_rate = 1e-3;
    recipe.classify_hyper.epochs = 2;
    recipe.classify_hyper.batch_size = 8;
    recipe.lm_hyper = recipe.classify_hyper;
    recipe.lm_hyper.epochs = 1;
    recipe.validation_fraction = 0.25;
    recipe.task_name = "tiny";

    auto split = stratified_split(task, 0.25, 5);
    auto result = run_recipe(recipe, split.train, &split.validation, vocab);
    REQUIRE(result.ensemble.members.size() == 2);
    CHECK(result.ensemble.members[0].provenance.tags ==
          std::vector<std::string>{"lm", "ase"});
    CHECK(result.ensemble.members[0].provenance.seed == 11);
    CHECK(result.ensemble.members[1].provenance.seed == 22);

    auto result2 = run_recipe(recipe, split.train, &split.validation, vocab);
    CHECK(checkpoints_bit_identical(result.ensemble.members[0],
                                    result2.ensemble.members[0]));
    CHECK(checkpoints_bit_identical(result.ensemble.members[1],
                                    result2.ensemble.members[1]));

    // Threaded training must produce the same members.
    auto result4 = run_recipe(recipe, split.train, &split.validation, vocab, nullptr, 4);
    CHECK(checkpoints_bit_identical(result.ensemble.members[0],
                                    result4.ensemble.members[0]));
    CHECK(checkpoints_bit_identical(result.ensemble.members[1],
                                    result4.ensemble.members[1]));

    // Members trained from different seeds should differ somewhere.
    CHECK(!checkpoints_bit_identical(result.ensemble.members[0],
                                     result.ensemble.members[1]));

    // N = 1 without aggregation behaves as a single model.
    TrainRecipe single = recipe;
    single.aggregation = Aggregation::None;
    single.lm_pretrain = false;
    single.n_members = 1;
    single.member_seeds = {11};
    auto sres = run_recipe(single, split.train, &split.validation, vocab);
    CHECK(sres.ensemble.members.size() == 1);
    CHECK(sres.ensemble.members[0].provenance.tags.empty());
    const auto ids = probe_ids(recipe.encoder_config.max_len, 1, vocab.size());
    CHECK(predict_ensemble(sres.ensemble, ids) ==
          predict_member(sres.ensemble.members[0], ids).argmax());
}

TEST_CASE("run_recipe validates composition up front") {
    const auto task = tiny_task(12);
    const auto vocab = train_bpe({"bad xx", "good zz"}, 4);
    TrainRecipe recipe;
    recipe.encoder_config = tiny_config(vocab.size());
    recipe.transfer = true; // but no source checkpoint
    CHECK_THROWS_AS(run_recipe(recipe, task, nullptr, vocab), ConfigError);

    TrainRecipe multi;
    multi.encoder_config = tiny_config(vocab.size());
    multi.n_members = 3; // multiple members need an aggregation
    CHECK_THROWS_AS(run_recipe(multi, task, nullptr, vocab), ConfigError);
}
