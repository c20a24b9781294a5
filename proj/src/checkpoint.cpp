// SPDX-License-Identifier: Apache-2.0

#include "ptum/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

#include "ptum/util.hpp"

namespace ptum {

namespace {

constexpr char kMagic[4] = {'P', 'T', 'U', 'M'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }

    std::string raw(std::size_t n) {
        need(n);
        std::string out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated file");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

ModelCheckpoint ModelCheckpoint::from_registry(const ParameterRegistry& registry,
                                               std::string config_json, DType dtype) {
    ModelCheckpoint ckpt;
    ckpt.config_json = std::move(config_json);
    for (const Parameter* p : registry.all()) {
        NamedTensor t;
        t.name = p->name();
        t.dtype = dtype;
        t.shape = p->tensor().shape();
        t.data = p->tensor().data();
        if (dtype == DType::f32)  // storage narrowing is part of the contract
            for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

void ModelCheckpoint::load_into(ParameterRegistry& registry) const {
    if (tensors.size() != registry.size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (const NamedTensor& t : tensors) {
        Parameter& p = registry.at(t.name);
        if (p.tensor().shape() != t.shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + t.name);
        p.tensor().mutable_data() = t.data;
    }
}

std::string ModelCheckpoint::serialize() const {
    std::string body;  // everything after magic+version, covered by the checksum
    put_u64(body, config_json.size());
    body += config_json;
    put_u32(body, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& t : tensors) {
        put_u32(body, static_cast<std::uint32_t>(t.name.size()));
        body += t.name;
        body.push_back(static_cast<char>(t.dtype));
        put_u32(body, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) put_u64(body, d);
        if (t.dtype == DType::f64) {
            for (double v : t.data) put_f64(body, v);
        } else {
            for (double v : t.data) put_f32(body, static_cast<float>(v));
        }
    }
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    out += body;
    put_u32(out, crc32(body.data(), body.size()));
    return out;
}

ModelCheckpoint ModelCheckpoint::deserialize(const std::string& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    Reader header(bytes);
    header.raw(4);
    const std::uint32_t version = header.u32();
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

    const std::size_t body_start = header.pos();
    const std::string body = bytes.substr(body_start, bytes.size() - body_start - 4);
    Reader tail_reader(bytes);
    tail_reader.raw(bytes.size() - 4);
    const std::uint32_t stored_crc = tail_reader.u32();
    if (crc32(body.data(), body.size()) != stored_crc)
        throw std::runtime_error("checkpoint: checksum mismatch");

    Reader r(body);
    ModelCheckpoint ckpt;
    ckpt.config_json = r.raw(r.u64());
    const std::uint32_t n_tensors = r.u32();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        NamedTensor t;
        t.name = r.raw(r.u32());
        const auto tag = static_cast<std::uint8_t>(r.raw(1)[0]);
        if (tag > 1) throw std::runtime_error("checkpoint: unknown dtype tag");
        t.dtype = static_cast<DType>(tag);
        const std::uint32_t ndim = r.u32();
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            t.shape.push_back(r.u64());
            numel *= t.shape.back();
        }
        t.data.resize(numel);
        for (std::size_t j = 0; j < numel; ++j)
            t.data[j] = t.dtype == DType::f64 ? r.f64() : static_cast<double>(r.f32());
        ckpt.tensors.push_back(std::move(t));
    }
    if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
    return ckpt;
}

void ModelCheckpoint::save(const std::filesystem::path& path) const {
    atomic_write_file(path, serialize());
}

ModelCheckpoint ModelCheckpoint::load(const std::filesystem::path& path) {
    return deserialize(read_file(path));
}

}  // namespace ptum
