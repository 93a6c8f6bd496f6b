// MOMA binary tensor format and checkpoint manifests.
//
// Tensor blob layout (little-endian):
//   magic "MOMA" | format version u16 | rank u16 | dims u64[rank] | data f64[]
//
// A checkpoint is a directory: manifest.json (names, roles, shapes, offsets
// into tensors.bin), tensors.bin (concatenated blobs), config.cfg (copy of the
// experiment config) and the frozen-parameter SHA-256 record.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "moma/sha256.hpp"
#include "moma/tensor.hpp"

namespace moma {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr uint16_t kMomaFormatVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    uint8_t buf[sizeof(T)];
    auto u = static_cast<uint64_t>(v);
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<uint8_t>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    uint8_t buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw IoError("unexpected end of tensor stream");
    uint64_t u = 0;
    for (size_t i = 0; i < sizeof(T); ++i) u |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(u);
}

inline void write_f64_le(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_le<uint64_t>(os, bits);
}

inline double read_f64_le(std::istream& is) {
    uint64_t bits = read_le<uint64_t>(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("MOMA", 4);
    detail::write_le<uint16_t>(os, kMomaFormatVersion);
    detail::write_le<uint16_t>(os, static_cast<uint16_t>(t.rank()));
    for (size_t d : t.shape()) detail::write_le<uint64_t>(os, d);
    for (size_t i = 0; i < t.size(); ++i) detail::write_f64_le(os, t.at(i));
    if (!os) throw IoError("tensor write failed");
}

inline Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MOMA", 4) != 0) throw IoError("bad magic, not a MOMA tensor");
    uint16_t version = detail::read_le<uint16_t>(is);
    if (version != kMomaFormatVersion)
        throw IoError("unsupported MOMA format version " + std::to_string(version));
    uint16_t rank = detail::read_le<uint16_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = detail::read_le<uint64_t>(is);
    Tensor t = Tensor::zeros(shape);
    for (size_t i = 0; i < t.size(); ++i) t.mut()[i] = detail::read_f64_le(is);
    return t;
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
}

inline Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_tensor(is);
}

// ---------------------------------------------------------------------------
// Named tensor collections

struct NamedTensor {
    std::string name;
    std::string role;  // "frozen" | "trainable"
    Tensor tensor;
};

// Hash of a named collection: name, dims and raw f64 bits, all little-endian,
// in the given order. Used for the freeze contract.
inline std::string hash_tensors(const std::vector<NamedTensor>& tensors) {
    Sha256 h;
    for (const auto& nt : tensors) {
        h.update(nt.name);
        for (size_t d : nt.tensor.shape()) {
            uint64_t v = d;
            uint8_t buf[8];
            for (int i = 0; i < 8; ++i) buf[i] = static_cast<uint8_t>(v >> (8 * i));
            h.update(buf, 8);
        }
        for (size_t i = 0; i < nt.tensor.size(); ++i) {
            uint64_t bits;
            double x = nt.tensor.at(i);
            std::memcpy(&bits, &x, 8);
            uint8_t buf[8];
            for (int j = 0; j < 8; ++j) buf[j] = static_cast<uint8_t>(bits >> (8 * j));
            h.update(buf, 8);
        }
    }
    return h.hex_digest();
}

inline void save_manifest(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors,
                          const std::string& frozen_sha256, const std::string& config_text) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "moma-checkpoint";
    manifest["version"] = kMomaFormatVersion;
    manifest["data_file"] = "tensors.bin";
    manifest["frozen_sha256"] = frozen_sha256;
    manifest["tensors"] = nlohmann::json::array();

    std::ofstream bin(dir / "tensors.bin", std::ios::binary);
    if (!bin) throw IoError("cannot open " + (dir / "tensors.bin").string());
    for (const auto& nt : tensors) {
        nlohmann::json entry;
        entry["name"] = nt.name;
        entry["role"] = nt.role;
        entry["shape"] = nt.tensor.shape();
        entry["offset"] = static_cast<uint64_t>(bin.tellp());
        manifest["tensors"].push_back(entry);
        write_tensor(bin, nt.tensor);
    }
    bin.close();

    std::ofstream mf(dir / "manifest.json");
    mf << manifest.dump(2) << "\n";
    std::ofstream cf(dir / "config.cfg");
    cf << config_text;
}

inline std::map<std::string, Tensor> load_manifest(const std::filesystem::path& dir,
                                                   std::string* frozen_sha256 = nullptr) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot open " + (dir / "manifest.json").string());
    nlohmann::json manifest = nlohmann::json::parse(mf);
    if (frozen_sha256) *frozen_sha256 = manifest.value("frozen_sha256", "");
    std::ifstream bin(dir / "tensors.bin", std::ios::binary);
    if (!bin) throw IoError("cannot open " + (dir / "tensors.bin").string());
    std::map<std::string, Tensor> out;
    for (const auto& entry : manifest["tensors"]) {
        bin.seekg(entry["offset"].get<uint64_t>());
        out[entry["name"].get<std::string>()] = read_tensor(bin);
    }
    return out;
}

inline std::string load_checkpoint_config(const std::filesystem::path& dir) {
    std::ifstream cf(dir / "config.cfg");
    if (!cf) throw IoError("cannot open " + (dir / "config.cfg").string());
    std::string text((std::istreambuf_iterator<char>(cf)), std::istreambuf_iterator<char>());
    return text;
}

}  // namespace moma
