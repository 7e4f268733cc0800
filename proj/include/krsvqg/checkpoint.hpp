#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "krsvqg/errors.hpp"
#include "krsvqg/model.hpp"

namespace krsvqg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container is defined little-endian");

inline constexpr char kCheckpointMagic[8] = {'K', 'R', 'S', 'V', 'Q', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline constexpr std::array<const char*, 4> kComponentPrefixes = {
    "image_encoder", "caption_decoder", "text_encoder", "question_decoder"};

// The vision module (trained in the caption pre-training stage) versus the
// language module (trained on the general-domain question stage).
inline constexpr std::array<const char*, 2> kVisionComponents = {"image_encoder",
                                                                 "caption_decoder"};
inline constexpr std::array<const char*, 2> kLanguageComponents = {"text_encoder",
                                                                   "question_decoder"};

inline std::string component_of(const std::string& param_name) {
    for (const char* prefix : kComponentPrefixes) {
        const std::size_t n = std::strlen(prefix);
        if (param_name.size() > n + 1 && param_name.compare(0, n, prefix) == 0 &&
            param_name[n] == '.')
            return prefix;
    }
    throw std::invalid_argument("parameter name has no component prefix: " + param_name);
}

// Architecture plus a named-parameter map, stored as float32 regardless of
// the in-memory scalar type.
template <class Scalar>
struct Checkpoint {
    ModelConfig config;
    std::vector<std::pair<std::string, Matrix<Scalar>>> params;  // registry order

    const Matrix<Scalar>* find(const std::string& name) const {
        for (const auto& [n, m] : params)
            if (n == name) return &m;
        return nullptr;
    }

    static Checkpoint from_model(KrsvqgModel<Scalar>& model) {
        Checkpoint ck;
        ck.config = model.config();
        for (auto* p : model.parameters()) {
            component_of(p->name);  // validates the prefix
            ck.params.emplace_back(p->name, p->value);
        }
        return ck;
    }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t read_u32(std::istream& in, const std::string& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw IoError("truncated checkpoint: " + path);
    return v;
}

// Canonical key=value text block; fixed key order so that load/save
// round-trips are byte-identical.
inline std::string config_text(const ModelConfig& c) {
    std::ostringstream out;
    out << "image_size=" << c.image_size << '\n'
        << "patch_size=" << c.patch_size << '\n'
        << "model_width=" << c.model_width << '\n'
        << "heads=" << c.heads << '\n'
        << "image_blocks=" << c.image_blocks << '\n'
        << "caption_blocks=" << c.caption_blocks << '\n'
        << "text_blocks=" << c.text_blocks << '\n'
        << "question_blocks=" << c.question_blocks << '\n'
        << "vocab_size=" << c.vocab_size << '\n'
        << "caption_max_len=" << c.caption_max_len << '\n'
        << "knowledge_max_len=" << c.knowledge_max_len << '\n'
        << "question_max_len=" << c.question_max_len << '\n';
    return out.str();
}

inline ModelConfig parse_config_text(const std::string& text, const std::string& path) {
    std::map<std::string, int> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("malformed checkpoint config: " + path);
        try {
            kv[line.substr(0, eq)] = std::stoi(line.substr(eq + 1));
        } catch (const std::exception&) {
            throw IoError("malformed checkpoint config value: " + path);
        }
    }
    auto get = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw IoError(std::string("checkpoint config missing ") + key);
        return it->second;
    };
    ModelConfig c;
    c.image_size = get("image_size");
    c.patch_size = get("patch_size");
    c.model_width = get("model_width");
    c.heads = get("heads");
    c.image_blocks = get("image_blocks");
    c.caption_blocks = get("caption_blocks");
    c.text_blocks = get("text_blocks");
    c.question_blocks = get("question_blocks");
    c.vocab_size = get("vocab_size");
    c.caption_max_len = get("caption_max_len");
    c.knowledge_max_len = get("knowledge_max_len");
    c.question_max_len = get("question_max_len");
    return c;
}

}  // namespace detail

template <class Scalar>
void Checkpoint<Scalar>::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::write_u32(out, kCheckpointVersion);

    const std::string cfg = detail::config_text(config);
    detail::write_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    detail::write_u32(out, static_cast<std::uint32_t>(params.size()));
    std::vector<float> buffer;
    for (const auto& [name, m] : params) {
        detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(out, static_cast<std::uint32_t>(m.rows()));
        detail::write_u32(out, static_cast<std::uint32_t>(m.cols()));
        buffer.resize(static_cast<std::size_t>(m.size()));
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < m.rows(); ++r)  // row-major on disk
            for (Eigen::Index c = 0; c < m.cols(); ++c) buffer[k++] = static_cast<float>(m(r, c));
        out.write(reinterpret_cast<const char*>(buffer.data()),
                  static_cast<std::streamsize>(buffer.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

template <class Scalar>
Checkpoint<Scalar> Checkpoint<Scalar>::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint: " + path);
    char magic[8] = {};
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    if (detail::read_u32(in, path) != kCheckpointVersion)
        throw IoError("unsupported checkpoint version: " + path);

    const std::uint32_t cfg_len = detail::read_u32(in, path);
    std::string cfg_text(cfg_len, '\0');
    if (!in.read(cfg_text.data(), cfg_len)) throw IoError("truncated checkpoint: " + path);

    Checkpoint ck;
    ck.config = detail::parse_config_text(cfg_text, path);

    const std::uint32_t n_params = detail::read_u32(in, path);
    std::vector<float> buffer;
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::uint32_t name_len = detail::read_u32(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw IoError("truncated checkpoint: " + path);
        const std::uint32_t rows = detail::read_u32(in, path);
        const std::uint32_t cols = detail::read_u32(in, path);
        component_of(name);
        buffer.resize(static_cast<std::size_t>(rows) * cols);
        if (!in.read(reinterpret_cast<char*>(buffer.data()),
                     static_cast<std::streamsize>(buffer.size() * sizeof(float))))
            throw IoError("truncated checkpoint: " + path);
        Matrix<Scalar> m(rows, cols);
        std::size_t k = 0;
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = static_cast<Scalar>(buffer[k++]);
        ck.params.emplace_back(std::move(name), std::move(m));
    }
    return ck;
}

// Copies every parameter from the checkpoint into the model. Architecture
// configs must match exactly.
template <class Scalar>
void load_into_model(const Checkpoint<Scalar>& ck, KrsvqgModel<Scalar>& model) {
    if (!(ck.config == model.config()))
        throw PreconditionError("checkpoint configuration does not match model");
    if (ck.params.size() != model.parameters().size())
        throw PreconditionError("checkpoint parameter count does not match model");
    for (const auto& [name, m] : ck.params) {
        Parameter<Scalar>* p = model.find_parameter(name);
        if (!p) throw PreconditionError("checkpoint parameter not in model: " + name);
        if (p->value.rows() != m.rows() || p->value.cols() != m.cols())
            throw PreconditionError("checkpoint parameter shape mismatch: " + name);
        p->value = m;
    }
}

// Copies only the parameters belonging to the named components.
template <class Scalar, std::size_t N>
void load_components(const Checkpoint<Scalar>& ck, KrsvqgModel<Scalar>& model,
                     const std::array<const char*, N>& components) {
    if (!(ck.config == model.config()))
        throw PreconditionError("checkpoint configuration does not match model");
    for (const auto& [name, m] : ck.params) {
        const std::string comp = component_of(name);
        bool wanted = false;
        for (const char* c : components) wanted = wanted || comp == c;
        if (!wanted) continue;
        Parameter<Scalar>* p = model.find_parameter(name);
        if (!p) throw PreconditionError("checkpoint parameter not in model: " + name);
        p->value = m;
    }
}

}  // namespace krsvqg
