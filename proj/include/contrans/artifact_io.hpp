#pragma once

// Vector and map files: a tensor container holding the payload plus a JSON
// sidecar (`<file>.json`) with the metadata and the payload's content hash.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "contrans/concept.hpp"
#include "contrans/error.hpp"
#include "contrans/linear_map.hpp"
#include "contrans/tensor_file.hpp"

namespace contrans {

inline constexpr int kArtifactFormatVersion = 1;

namespace detail {

class Sha1 {
public:
    Sha1() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha1(), nullptr) != 1) fail();
    }
    ~Sha1() { EVP_MD_CTX_free(ctx_); }
    Sha1(const Sha1&) = delete;
    Sha1& operator=(const Sha1&) = delete;

    void update(const void* data, std::size_t n) {
        if (EVP_DigestUpdate(ctx_, data, n) != 1) fail();
    }

    std::string hex() {
        unsigned char digest[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, digest, &len) != 1) fail();
        static const char* digits = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(digits[digest[i] >> 4]);
            out.push_back(digits[digest[i] & 0xF]);
        }
        return out;
    }

private:
    [[noreturn]] static void fail() { throw Error(ErrorCategory::runtime, "SHA-1 computation failed"); }
    EVP_MD_CTX* ctx_;
};

inline void blob_prefix(Sha1& h, std::uintmax_t size) {
    const std::string prefix = "blob " + std::to_string(size) + std::string(1, '\0');
    h.update(prefix.data(), prefix.size());
}

}  // namespace detail

/// Git-style blob hash: SHA-1 of "blob <size>\0" followed by the content.
inline std::string content_hash(std::string_view data) {
    detail::Sha1 h;
    detail::blob_prefix(h, data.size());
    h.update(data.data(), data.size());
    return h.hex();
}

/// content_hash of a file's bytes, streamed.
inline std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path.string());
    detail::Sha1 h;
    detail::blob_prefix(h, std::filesystem::file_size(path));
    std::vector<char> buf(1 << 20);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& payload) {
    return payload.string() + ".json";
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCategory::runtime, "cannot write " + path.string());
    out << text;
}

inline nlohmann::json read_sidecar(const std::filesystem::path& payload) {
    const auto side = sidecar_path(payload);
    std::ifstream in(side);
    if (!in) throw ValidationError("metadata sidecar " + side.string() + " is missing");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception&) {
        throw ValidationError("metadata sidecar " + side.string() + " is not valid JSON");
    }
    if (!j.is_object()) throw ValidationError("metadata sidecar must be a JSON object");
    if (!j.contains("format_version") || !j["format_version"].is_number_integer() ||
        j["format_version"].get<int>() != kArtifactFormatVersion)
        throw ValidationError("unsupported artifact format version in " + side.string() + " (expected " +
                              std::to_string(kArtifactFormatVersion) + ")");
    return j;
}

template <typename T>
T required(const nlohmann::json& j, const char* key, const std::filesystem::path& where) {
    if (!j.contains(key) || j[key].is_null()) throw ValidationError(where.string() + ": sidecar is missing '" + key + "'");
    try {
        return j[key].get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(where.string() + ": sidecar field '" + key + "' has the wrong type");
    }
}

inline TensorFile open_payload(const std::filesystem::path& path, const nlohmann::json& side) {
    const std::string bytes = read_file_bytes(path);
    if (side.contains("payload_hash") && side["payload_hash"].get<std::string>() != content_hash(bytes))
        throw ValidationError("payload " + path.string() + " does not match the hash recorded in its sidecar");
    return TensorFile::from_bytes(std::vector<char>(bytes.begin(), bytes.end()));
}

inline Vector read_vector(const TensorFile& tf, const std::string& name) {
    const auto& info = tf.info(name);
    if (info.shape.size() != 1) throw ValidationError("tensor '" + name + "' is not a vector");
    const auto v = tf.read_f32(name);
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

/// Writes the payload and its sidecar; returns the payload's content hash.
inline std::string save_vector(const std::filesystem::path& path, const ConceptVector& cv) {
    cv.validate();
    TensorWriter w;
    for (const auto& [k, v] : cv.layers)
        w.add_f32("layer." + std::to_string(k), {static_cast<std::size_t>(v.size())}, std::span<const float>(v.data(), v.size()));
    const auto bytes = w.serialize();
    const std::string payload(bytes.begin(), bytes.end());
    detail::write_text(path, payload);

    nlohmann::json side = cv.extra;
    side["format_version"] = kArtifactFormatVersion;
    side["kind"] = "concept_vector";
    side["concept"] = cv.concept_name;
    side["source_model"] = cv.source_model;
    side["n_pairs"] = cv.n_pairs;
    side["template_id"] = cv.template_id;
    side["created"] = cv.created;
    side["dim"] = cv.dim();
    std::vector<std::size_t> layers;
    for (const auto& [k, _] : cv.layers) layers.push_back(k);
    side["layers"] = layers;
    side["payload_hash"] = content_hash(payload);
    detail::write_text(sidecar_path(path), side.dump(2) + "\n");
    return side["payload_hash"].get<std::string>();
}

inline ConceptVector load_vector(const std::filesystem::path& path) {
    const auto side = detail::read_sidecar(path);
    ConceptVector cv;
    cv.concept_name = detail::required<std::string>(side, "concept", path);
    cv.source_model = detail::required<std::string>(side, "source_model", path);
    cv.n_pairs = detail::required<std::size_t>(side, "n_pairs", path);
    cv.template_id = detail::required<std::string>(side, "template_id", path);
    cv.created = detail::required<std::string>(side, "created", path);
    const auto layers = detail::required<std::vector<std::size_t>>(side, "layers", path);
    for (const auto& [k, v] : side.items())
        if (k != "format_version" && k != "kind" && k != "concept" && k != "source_model" && k != "n_pairs" &&
            k != "template_id" && k != "created" && k != "dim" && k != "layers" && k != "payload_hash")
            cv.extra[k] = v;

    const TensorFile tf = detail::open_payload(path, side);
    for (std::size_t k : layers) cv.layers.emplace(k, detail::read_vector(tf, "layer." + std::to_string(k)));
    if (tf.names().size() != layers.size()) throw ValidationError(path.string() + ": payload and sidecar disagree on layers");
    cv.validate();
    return cv;
}

inline std::string save_maps(const std::filesystem::path& path, const LinearMapSet& maps) {
    maps.validate();
    TensorWriter w;
    for (const auto& [k, F] : maps.maps)
        w.add_f32("map." + std::to_string(k), {static_cast<std::size_t>(F.rows()), static_cast<std::size_t>(F.cols())},
                  std::span<const float>(F.data(), static_cast<std::size_t>(F.size())));
    const auto bytes = w.serialize();
    const std::string payload(bytes.begin(), bytes.end());
    detail::write_text(path, payload);

    nlohmann::json residuals = nlohmann::json::object();
    for (const auto& [k, r] : maps.residuals) residuals[std::to_string(k)] = r;
    nlohmann::json side = maps.extra;
    side.update({
        {"format_version", kArtifactFormatVersion},
        {"kind", "linear_map_set"},
        {"source_model", maps.source_model},
        {"target_model", maps.target_model},
        {"source_dim", maps.source_dim},
        {"target_dim", maps.target_dim},
        {"correspondence", maps.correspondence.to_json()},
        {"residuals", residuals},
        {"cutoff", maps.cutoff},
        {"corpus_id", maps.corpus_id},
        {"n_samples", maps.n_samples},
        {"created", maps.created},
        {"payload_hash", content_hash(payload)},
    });
    detail::write_text(sidecar_path(path), side.dump(2) + "\n");
    return side["payload_hash"].get<std::string>();
}

inline LinearMapSet load_maps(const std::filesystem::path& path) {
    const auto side = detail::read_sidecar(path);
    LinearMapSet m;
    m.source_model = detail::required<std::string>(side, "source_model", path);
    m.target_model = detail::required<std::string>(side, "target_model", path);
    m.source_dim = detail::required<std::size_t>(side, "source_dim", path);
    m.target_dim = detail::required<std::size_t>(side, "target_dim", path);
    m.cutoff = detail::required<double>(side, "cutoff", path);
    m.corpus_id = side.value("corpus_id", "");
    m.n_samples = side.value("n_samples", std::size_t{0});
    m.created = side.value("created", "");
    for (const auto& key : {"config", "input_hashes"})
        if (side.contains(key)) m.extra[key] = side[key];
    m.correspondence = LayerCorrespondence::from_json(detail::required<nlohmann::json>(side, "correspondence", path));
    const auto residuals = detail::required<nlohmann::json>(side, "residuals", path);
    for (const auto& [k, r] : residuals.items())
        m.residuals[std::stoul(k)] = r.get<double>();

    const TensorFile tf = detail::open_payload(path, side);
    for (const auto& [t, s] : m.correspondence.pairs) {
        const std::string name = "map." + std::to_string(t);
        const auto& info = tf.info(name);
        if (info.shape != std::vector<std::size_t>{m.source_dim, m.target_dim})
            throw ValidationError(path.string() + ": tensor '" + name + "' has the wrong shape");
        const auto v = tf.read_f32(name);
        m.maps.emplace(t, Eigen::Map<const RowMatrix>(v.data(), static_cast<Eigen::Index>(m.source_dim),
                                                      static_cast<Eigen::Index>(m.target_dim)));
    }
    m.validate();
    return m;
}

}  // namespace contrans
