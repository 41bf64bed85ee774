#pragma once

// Encoder + CRF head glued together, and the versioned checkpoint container.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mise/crf.hpp"
#include "mise/encoder.hpp"

namespace mise {

struct LabeledPost {
    Post post;
    TagSequence tags;
};

inline CrfBoundary boundary_of(const ParamSet& params) {
    CrfBoundary bd;
    if (params.contains("crf.start")) bd.start = &params.at("crf.start");
    if (params.contains("crf.end")) bd.end = &params.at("crf.end");
    return bd;
}

/// CRF negative log-likelihood of one labeled post.
inline Var post_nll(Graph& g, const ModelConfig& cfg, const Post& post, const TagSequence& gold, Mode mode,
                    Rng* dropout_rng) {
    if (gold.size() != post.size())
        throw DataError("post has " + std::to_string(post.size()) + " tokens but " + std::to_string(gold.size()) +
                        " tags");
    Var em = emissions(g, cfg, post, mode, dropout_rng);
    std::optional<Var> start, end;
    if (cfg.boundary_terms) {
        start = g.param("crf.start");
        end = g.param("crf.end");
    }
    return crf_nll(em, g.param("crf.trans"), gold, start, end);
}

/// Mean CRF NLL over a set of labeled posts.
inline Var mean_nll(Graph& g, const ModelConfig& cfg, std::span<const LabeledPost* const> posts, Mode mode,
                    Rng* dropout_rng) {
    if (posts.empty()) throw UsageError("task loss over an empty post set");
    std::vector<Var> terms;
    terms.reserve(posts.size());
    for (const LabeledPost* p : posts) terms.push_back(post_nll(g, cfg, p->post, p->tags, mode, dropout_rng));
    return mean(terms);
}

inline ViterbiResult decode_post(const ModelConfig& cfg, const ParamSet& params, const Post& post, bool constrain) {
    const Tensor em = emission_scores(cfg, params, post);
    return viterbi(em, params.at("crf.trans"), constrain, boundary_of(params));
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "MISECKPT" | u32 version | u64 header length | JSON header | tensor payload
//
// Integers and doubles are little-endian; tensors follow the header's "tensors"
// list in order. Loading refuses any other version.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'M', 'I', 'S', 'E', 'C', 'K', 'P', 'T'};

struct Checkpoint {
    ModelConfig model;
    ParamSet params;
    Vocabulary vocab;
    nlohmann::ordered_json train_config = nlohmann::ordered_json::object();
    std::string kind = "init"; // init | meta | scratch | inheritor
    std::uint64_t seed = 0;
    std::uint64_t steps = 0;
};

inline nlohmann::ordered_json model_config_json(const ModelConfig& m) {
    return {{"vocab_size", m.vocab_size},   {"embed_dim", m.embed_dim},         {"hidden_dim", m.hidden_dim},
            {"input_dim", m.input_dim},     {"dropout", m.dropout},             {"boundary_terms", m.boundary_terms},
            {"init_scale", m.init_scale}};
}

inline ModelConfig model_config_from_json(const nlohmann::ordered_json& j) {
    ModelConfig m;
    m.vocab_size = j.at("vocab_size").get<std::size_t>();
    m.embed_dim = j.at("embed_dim").get<std::size_t>();
    m.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    m.input_dim = j.at("input_dim").get<std::size_t>();
    m.dropout = j.at("dropout").get<double>();
    m.boundary_terms = j.at("boundary_terms").get<bool>();
    m.init_scale = j.at("init_scale").get<double>();
    return m;
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t& pos, std::size_t width = 8) {
    if (pos + width > in.size()) throw DataError("checkpoint truncated");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += width;
    return v;
}

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    nlohmann::ordered_json header;
    header["format_version"] = kCheckpointVersion;
    nlohmann::ordered_json mapping = nlohmann::ordered_json::object();
    for (Tag t : kAllTags) mapping[std::string(tag_name(t))] = tag_index(t);
    header["tag_mapping"] = mapping;
    header["model"] = model_config_json(ck.model);
    header["train_config"] = ck.train_config;
    header["provenance"] = {{"kind", ck.kind}, {"seed", ck.seed}, {"steps", ck.steps}};
    header["vocabulary"] = ck.vocab.tokens();
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    for (const auto& [name, t] : ck.params) tensors.push_back({{"name", name}, {"shape", t.shape()}});
    header["tensors"] = tensors;

    const std::string text = header.dump();
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((kCheckpointVersion >> (8 * i)) & 0xFF));
    detail::put_u64(out, text.size());
    out += text;
    for (const auto& [_, t] : ck.params)
        for (double v : t.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
        throw DataError("not a checkpoint file (bad magic)");
    std::size_t pos = 8;
    const auto version = static_cast<std::uint32_t>(detail::get_u64(bytes, pos, 4));
    if (version != kCheckpointVersion)
        throw DataError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    const auto len = detail::get_u64(bytes, pos);
    if (pos + len > bytes.size()) throw DataError("checkpoint truncated");
    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(bytes.substr(pos, len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    }
    pos += len;

    Checkpoint ck;
    try {
        for (Tag t : kAllTags)
            if (header.at("tag_mapping").at(std::string(tag_name(t))).get<std::size_t>() != tag_index(t))
                throw DataError("checkpoint tag mapping differs from O=0,B=1,I=2,E=3,S=4");
        ck.model = model_config_from_json(header.at("model"));
        ck.train_config = header.at("train_config");
        ck.kind = header.at("provenance").at("kind").get<std::string>();
        ck.seed = header.at("provenance").at("seed").get<std::uint64_t>();
        ck.steps = header.at("provenance").at("steps").get<std::uint64_t>();
        ck.vocab = Vocabulary::from_tokens(header.at("vocabulary").get<std::vector<std::string>>());
        for (const auto& entry : header.at("tensors")) {
            const auto shape = entry.at("shape").get<Shape>();
            std::vector<double> values(shape_numel(shape));
            for (double& v : values) v = std::bit_cast<double>(detail::get_u64(bytes, pos));
            ck.params.add(entry.at("name").get<std::string>(), Tensor(shape, std::move(values)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    }
    if (pos != bytes.size()) throw DataError("checkpoint has trailing bytes");
    if (!init_params(ck.model, 0).same_layout(ck.params))
        throw DataError("checkpoint tensors do not match the model configuration");
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    const std::string bytes = serialize_checkpoint(ck);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

} // namespace mise
