#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "encoder.hpp"
#include "error.hpp"
#include "parallel.hpp"

namespace offlang {

// ---------------------------------------------------------------------------
// Checkpoint container: magic + version + metadata text + raw float32 LE
// tensors in declared order + CRC32 trailer. Shared by encoder checkpoints
// and the classical models (model_kind tag in the metadata).
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t crc32(const unsigned char* data, std::size_t len,
                           std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    for (std::size_t i = 0; i < len; ++i)
        crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return ~crc;
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline std::uint32_t get_u32(const std::string& s, std::size_t off) {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + k])) << (8 * k);
    return v;
}

inline std::uint64_t get_u64(const std::string& s, std::size_t off) {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + k])) << (8 * k);
    return v;
}

constexpr char kContainerMagic[8] = {'O', 'F', 'L', 'C', 'K', 'P', 'T', '\n'};
constexpr std::uint32_t kContainerVersion = 1;

} // namespace detail

class ContainerWriter {
public:
    void set(const std::string& key, const std::string& value) {
        meta_.emplace_back(key, value);
    }
    void set(const std::string& key, std::uint64_t value) {
        set(key, std::to_string(value));
    }

    void add_tensor(const std::string& name, const float* data, std::size_t n) {
        tensors_.emplace_back(name, std::vector<float>(data, data + n));
    }

    void write(const std::string& path) const {
        std::string blob(detail::kContainerMagic, 8);
        detail::put_u32(blob, detail::kContainerVersion);
        std::string meta;
        for (const auto& [k, v] : meta_) meta += k + " " + v + "\n";
        for (const auto& [name, data] : tensors_)
            meta += "tensor " + name + " " + std::to_string(data.size()) + "\n";
        detail::put_u64(blob, meta.size());
        blob += meta;
        for (const auto& [name, data] : tensors_)
            for (const float v : data) detail::put_f32(blob, v);
        const std::uint32_t crc =
            detail::crc32(reinterpret_cast<const unsigned char*>(blob.data()), blob.size());
        detail::put_u32(blob, crc);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint: " + path);
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) throw DataError("failed writing checkpoint: " + path);
    }

private:
    std::vector<std::pair<std::string, std::string>> meta_;
    std::vector<std::pair<std::string, std::vector<float>>> tensors_;
};

struct LoadedContainer {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, std::vector<float>>> tensors;

    const std::string& require(const std::string& key) const {
        const auto it = meta.find(key);
        if (it == meta.end())
            throw DataError("checkpoint metadata is missing key '" + key + "'");
        return it->second;
    }
    const std::vector<float>& tensor(const std::string& name) const {
        for (const auto& [n, data] : tensors)
            if (n == name) return data;
        throw DataError("checkpoint is missing tensor '" + name + "'");
    }
};

inline LoadedContainer load_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string blob = buf.str();
    if (blob.size() < 8 + 4 + 8 + 4) throw DataError(path + ": truncated checkpoint");
    if (std::memcmp(blob.data(), detail::kContainerMagic, 8) != 0)
        throw DataError(path + ": not a checkpoint file (bad magic)");
    const std::uint32_t version = detail::get_u32(blob, 8);
    if (version != detail::kContainerVersion)
        throw DataError(path + ": unsupported checkpoint version " +
                        std::to_string(version));
    const std::uint32_t stored_crc = detail::get_u32(blob, blob.size() - 4);
    const std::uint32_t actual_crc = detail::crc32(
        reinterpret_cast<const unsigned char*>(blob.data()), blob.size() - 4);
    if (stored_crc != actual_crc)
        throw DataError(path + ": checksum mismatch, checkpoint is corrupt");

    const std::uint64_t meta_len = detail::get_u64(blob, 12);
    if (20 + meta_len + 4 > blob.size()) throw DataError(path + ": truncated checkpoint");
    LoadedContainer c;
    std::istringstream meta(blob.substr(20, meta_len));
    std::string line;
    std::vector<std::pair<std::string, std::size_t>> declared;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        const std::size_t sp = line.find(' ');
        if (sp == std::string::npos) throw DataError(path + ": malformed metadata line");
        const std::string key = line.substr(0, sp);
        const std::string value = line.substr(sp + 1);
        if (key == "tensor") {
            const std::size_t sp2 = value.rfind(' ');
            if (sp2 == std::string::npos)
                throw DataError(path + ": malformed tensor declaration");
            declared.emplace_back(value.substr(0, sp2),
                                  std::stoull(value.substr(sp2 + 1)));
        } else {
            c.meta[key] = value;
        }
    }
    std::size_t off = 20 + meta_len;
    for (const auto& [name, numel] : declared) {
        if (off + numel * 4 + 4 > blob.size())
            throw DataError(path + ": truncated tensor payload");
        std::vector<float> data(numel);
        for (std::size_t i = 0; i < numel; ++i) {
            const std::uint32_t bits = detail::get_u32(blob, off + i * 4);
            std::memcpy(&data[i], &bits, 4);
        }
        off += numel * 4;
        c.tensors.emplace_back(name, std::move(data));
    }
    if (off + 4 != blob.size())
        throw DataError(path + ": trailing bytes after tensor payload");
    return c;
}

// ---------------------------------------------------------------------------
// Encoder checkpoints
// ---------------------------------------------------------------------------

struct Provenance {
    std::string source_task;
    std::uint64_t seed = 0;
    std::vector<std::string> tags; // subset of {tl, lm, mse, ase}
};

struct Checkpoint {
    EncoderWeights encoder;
    ClassifierHead head;
    std::uint64_t vocab_fingerprint = 0;
    Provenance provenance;

    const EncoderConfig& config() const { return encoder.config; }
};

namespace detail {

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::uint64_t parse_hex64(const std::string& s) {
    return std::stoull(s, nullptr, 16);
}

} // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    ContainerWriter w;
    w.set("model_kind", "encoder");
    w.set("vocab_fingerprint", detail::hex64(c.vocab_fingerprint));
    const auto& cfg = c.encoder.config;
    w.set("config.d_model", static_cast<std::uint64_t>(cfg.d_model));
    w.set("config.heads", static_cast<std::uint64_t>(cfg.heads));
    w.set("config.layers", static_cast<std::uint64_t>(cfg.layers));
    w.set("config.ff_dim", static_cast<std::uint64_t>(cfg.ff_dim));
    w.set("config.max_len", static_cast<std::uint64_t>(cfg.max_len));
    w.set("config.vocab_size", static_cast<std::uint64_t>(cfg.vocab_size));
    w.set("config.dropout", std::to_string(cfg.dropout));
    w.set("provenance.source_task",
          c.provenance.source_task.empty() ? "-" : c.provenance.source_task);
    w.set("provenance.seed", c.provenance.seed);
    std::string tags;
    for (const auto& t : c.provenance.tags) {
        if (!tags.empty()) tags += ",";
        tags += t;
    }
    w.set("provenance.tags", tags.empty() ? "-" : tags);

    auto& mutable_encoder = const_cast<EncoderWeights&>(c.encoder);
    for (const auto& ref : tensor_refs(mutable_encoder))
        w.add_tensor(ref.name, ref.data, ref.n);
    auto& mutable_head = const_cast<ClassifierHead&>(c.head);
    for (const auto& ref : tensor_refs(mutable_head))
        w.add_tensor(ref.name, ref.data, ref.n);
    w.write(path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    const auto c = load_container(path);
    if (c.require("model_kind") != "encoder")
        throw DataError(path + ": expected an encoder checkpoint, found model_kind " +
                        c.require("model_kind"));
    EncoderConfig cfg;
    cfg.d_model = std::stoi(c.require("config.d_model"));
    cfg.heads = std::stoi(c.require("config.heads"));
    cfg.layers = std::stoi(c.require("config.layers"));
    cfg.ff_dim = std::stoi(c.require("config.ff_dim"));
    cfg.max_len = std::stoi(c.require("config.max_len"));
    cfg.vocab_size = std::stoi(c.require("config.vocab_size"));
    cfg.dropout = std::stod(c.require("config.dropout"));

    Checkpoint ck;
    ck.encoder = EncoderWeights::zeros(cfg);
    ck.head = ClassifierHead::zeros(cfg);
    ck.vocab_fingerprint = detail::parse_hex64(c.require("vocab_fingerprint"));
    ck.provenance.source_task = c.require("provenance.source_task");
    if (ck.provenance.source_task == "-") ck.provenance.source_task.clear();
    ck.provenance.seed = std::stoull(c.require("provenance.seed"));
    const std::string tags = c.require("provenance.tags");
    if (tags != "-") {
        std::size_t start = 0;
        while (start <= tags.size()) {
            const std::size_t comma = tags.find(',', start);
            const std::string tag = tags.substr(
                start, comma == std::string::npos ? std::string::npos : comma - start);
            if (!tag.empty()) ck.provenance.tags.push_back(tag);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }

    auto refs = tensor_refs(ck.encoder);
    auto head_refs = tensor_refs(ck.head);
    refs.insert(refs.end(), head_refs.begin(), head_refs.end());
    for (const auto& ref : refs) {
        const auto& data = c.tensor(ref.name);
        if (data.size() != ref.n)
            throw DataError(path + ": tensor '" + ref.name + "' has wrong size");
        std::copy(data.begin(), data.end(), ref.data);
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Transfer learning
// ---------------------------------------------------------------------------

struct TransferInit {
    EncoderWeights encoder;
    ClassifierHead head;
};

// The source and target must share one subword vocabulary; there is no
// silent re-embedding across vocabularies.
inline TransferInit transfer_init(const Checkpoint& source,
                                  std::uint64_t target_vocab_fingerprint) {
    if (source.vocab_fingerprint != target_vocab_fingerprint)
        throw ConfigError(
            "transfer_init: source and target vocabulary fingerprints differ (" +
            detail::hex64(source.vocab_fingerprint) + " vs " +
            detail::hex64(target_vocab_fingerprint) + ")");
    if (source.head.num_classes() != 2)
        throw ConfigError("transfer_init: class count mismatch");
    return {source.encoder, source.head};
}

// ---------------------------------------------------------------------------
// Self-ensembles
// ---------------------------------------------------------------------------

enum class Aggregation { None, MSE, ASE };

struct EnsembleModel {
    std::vector<Checkpoint> members;
    Aggregation aggregation = Aggregation::None;

    void validate() const {
        if (members.empty()) throw ConfigError("ensemble needs at least one member");
        for (const auto& m : members) {
            if (!(m.config() == members.front().config()))
                throw ConfigError("ensemble members disagree on encoder config");
            if (m.vocab_fingerprint != members.front().vocab_fingerprint)
                throw ConfigError("ensemble members disagree on vocabulary");
        }
    }
};

inline ProbabilityDistribution predict_member(const Checkpoint& c,
                                              const TokenIdSequence& ids) {
    return forward(c.encoder, c.head, ids).prob;
}

// Mode of the member argmax votes; ties go to the class with the higher
// mean probability, then to the lower class index.
inline BinaryLabel predict_mse(const EnsembleModel& e, const TokenIdSequence& ids) {
    e.validate();
    std::array<int, 2> votes{0, 0};
    std::array<double, 2> prob_sums{0.0, 0.0};
    for (const auto& m : e.members) {
        const auto p = predict_member(m, ids);
        ++votes[static_cast<int>(p.argmax())];
        prob_sums[0] += p.probs[0];
        prob_sums[1] += p.probs[1];
    }
    if (votes[0] != votes[1])
        return votes[1] > votes[0] ? BinaryLabel::OFF : BinaryLabel::NOT;
    if (prob_sums[0] != prob_sums[1])
        return prob_sums[1] > prob_sums[0] ? BinaryLabel::OFF : BinaryLabel::NOT;
    return BinaryLabel::NOT;
}

struct AsePrediction {
    ProbabilityDistribution prob;
    BinaryLabel label;
};

// Average of the member distributions, class by class.
inline AsePrediction predict_ase(const EnsembleModel& e, const TokenIdSequence& ids) {
    e.validate();
    ProbabilityDistribution avg;
    for (const auto& m : e.members) {
        const auto p = predict_member(m, ids);
        avg.probs[0] += p.probs[0];
        avg.probs[1] += p.probs[1];
    }
    avg.probs[0] /= static_cast<double>(e.members.size());
    avg.probs[1] /= static_cast<double>(e.members.size());
    return {avg, avg.argmax()};
}

inline BinaryLabel predict_ensemble(const EnsembleModel& e, const TokenIdSequence& ids) {
    switch (e.aggregation) {
    case Aggregation::MSE:
        return predict_mse(e, ids);
    case Aggregation::ASE:
        return predict_ase(e, ids).label;
    default:
        return predict_member(e.members.front(), ids).argmax();
    }
}

// ---------------------------------------------------------------------------
// Recipes: [TL init] -> [MLM pretrain] -> classifier fine-tune -> [ensemble]
// ---------------------------------------------------------------------------

enum class MemberMode { SeedOnly, SplitOnly, Both };

struct TrainRecipe {
    bool transfer = false;
    bool lm_pretrain = false;
    Aggregation aggregation = Aggregation::None;
    int n_members = 1;
    std::vector<std::uint64_t> member_seeds; // size n_members; filled if empty
    MemberMode member_mode = MemberMode::SeedOnly;
    EncoderConfig encoder_config;
    TrainHyper classify_hyper;
    TrainHyper lm_hyper;
    double mask_rate = 0.15;
    double validation_fraction = 0.1;
    std::uint64_t split_seed = 17;
    std::string task_name;
};

// Recipe strings look like "base", "tl+ase+lm", "mse". MSE and ASE are
// mutually exclusive; unknown stages are rejected.
struct RecipeFlags {
    bool transfer = false;
    bool lm = false;
    Aggregation aggregation = Aggregation::None;
};

inline RecipeFlags parse_recipe(const std::string& text) {
    RecipeFlags flags;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t plus = text.find('+', start);
        std::string tok = text.substr(
            start, plus == std::string::npos ? std::string::npos : plus - start);
        if (tok == "base" || tok.empty()) {
            // no-op stage
        } else if (tok == "tl") {
            flags.transfer = true;
        } else if (tok == "lm") {
            flags.lm = true;
        } else if (tok == "mse") {
            if (flags.aggregation == Aggregation::ASE)
                throw ConfigError("recipe cannot combine MSE and ASE");
            flags.aggregation = Aggregation::MSE;
        } else if (tok == "ase") {
            if (flags.aggregation == Aggregation::MSE)
                throw ConfigError("recipe cannot combine MSE and ASE");
            flags.aggregation = Aggregation::ASE;
        } else {
            throw ConfigError("unknown recipe stage '" + tok + "'");
        }
        if (plus == std::string::npos) break;
        start = plus + 1;
    }
    return flags;
}

struct RecipeResult {
    EnsembleModel ensemble; // N = 1 for unensembled recipes
    std::vector<TrainLog> member_logs;
};

// Trains the N ensemble members (possibly in parallel). In seed mode every
// member sees (train, validation) as given; in split mode each member
// re-splits `train` with its own seed while `validation` stays held out for
// the caller's report.
inline RecipeResult run_recipe(const TrainRecipe& recipe, const LabeledDataset& train,
                               const LabeledDataset* validation,
                               const SubwordVocabulary& vocab,
                               const Checkpoint* source = nullptr, int threads = 1) {
    if (recipe.n_members < 1) throw ConfigError("recipe needs at least one member");
    if (recipe.transfer && source == nullptr)
        throw ConfigError("transfer recipe needs a source checkpoint");
    if (recipe.aggregation == Aggregation::None && recipe.n_members > 1)
        throw ConfigError("multiple members require an aggregation (mse or ase)");

    std::vector<std::uint64_t> seeds = recipe.member_seeds;
    if (seeds.empty()) {
        for (int k = 0; k < recipe.n_members; ++k)
            seeds.push_back(derive_seed(recipe.classify_hyper.seed, 100 + k));
    }
    if (static_cast<int>(seeds.size()) != recipe.n_members)
        throw ConfigError("recipe seed list length does not match member count");
    {
        std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
        if (unique.size() != seeds.size())
            std::cerr << "warning: duplicate member seeds, members will coincide\n";
    }

    std::vector<std::string> tags;
    if (recipe.transfer) tags.push_back("tl");
    if (recipe.lm_pretrain) tags.push_back("lm");
    if (recipe.aggregation == Aggregation::MSE) tags.push_back("mse");
    if (recipe.aggregation == Aggregation::ASE) tags.push_back("ase");

    RecipeResult result;
    result.ensemble.aggregation = recipe.aggregation;
    result.ensemble.members.resize(recipe.n_members);
    result.member_logs.resize(recipe.n_members);

    parallel_for(recipe.n_members, threads, [&](int k) {
        const std::uint64_t member_seed = seeds[k];
        const bool member_split = recipe.member_mode != MemberMode::SeedOnly;
        LabeledDataset member_train;
        LabeledDataset member_val;
        if (member_split) {
            auto split = stratified_split(train, recipe.validation_fraction,
                                          derive_seed(recipe.split_seed, k));
            member_train = std::move(split.train);
            member_val = std::move(split.validation);
        } else {
            member_train = train;
            if (validation) member_val = *validation;
        }

        EncoderWeights enc;
        ClassifierHead head;
        if (recipe.transfer) {
            auto init = transfer_init(*source, vocab.fingerprint);
            enc = std::move(init.encoder);
            head = std::move(init.head);
        } else {
            enc = init_encoder(recipe.encoder_config, member_seed);
            head = init_head(recipe.encoder_config, derive_seed(member_seed, 7));
        }

        TrainLog log;
        if (recipe.lm_pretrain) {
            TrainHyper lm = recipe.lm_hyper;
            lm.seed = derive_seed(member_seed, 0x11);
            auto mlm = mlm_pretrain(enc, member_train, vocab, lm, recipe.mask_rate);
            enc = std::move(mlm.encoder);
            log.insert(log.end(), mlm.log.begin(), mlm.log.end());
        }

        TrainHyper cls = recipe.classify_hyper;
        cls.seed = member_seed;
        auto trained = train_classifier(enc, head, member_train, vocab, cls,
                                        member_val.size() ? &member_val : nullptr);
        log.insert(log.end(), trained.log.begin(), trained.log.end());

        Checkpoint ck;
        ck.encoder = std::move(trained.encoder);
        ck.head = std::move(trained.head);
        ck.vocab_fingerprint = vocab.fingerprint;
        ck.provenance.source_task =
            recipe.transfer && !source->provenance.source_task.empty()
                ? source->provenance.source_task
                : (recipe.transfer ? "transfer" : recipe.task_name);
        ck.provenance.seed = member_seed;
        ck.provenance.tags = tags;
        result.ensemble.members[k] = std::move(ck);
        result.member_logs[k] = std::move(log);
    });
    result.ensemble.validate();
    return result;
}

} // namespace offlang
