#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "pretext/nn.hpp"

namespace pretext::nn {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'P', 'F'};
constexpr uint8_t kVersion = 0x01;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("truncated checkpoint file");
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint8_t>(buf[pos]) |
                     (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const ModuleGraph*>>& graphs,
                     const nlohmann::json& metadata) {
    std::vector<std::pair<std::string, Tensor>> tensors;
    for (const auto& [name, graph] : graphs) {
        auto named = graph->named_tensors(name + ".");
        tensors.insert(tensors.end(), named.begin(), named.end());
    }

    std::string out;
    out.append(kMagic, 4);
    out.push_back(static_cast<char>(kVersion));
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_u16(out, static_cast<uint16_t>(name.size()));
        out.append(name);
        out.push_back(static_cast<char>(t.rank()));
        for (int64_t d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
        for (double v : t.data()) put_f32(out, static_cast<float>(v));
    }
    std::string meta = metadata.dump();
    put_u32(out, static_cast<uint32_t>(meta.size()));
    out.append(meta);

    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("short write on checkpoint " + path);
}

namespace {

struct StoredTensor {
    Shape shape;
    std::vector<double> data;
    bool consumed = false;
};

std::map<std::string, StoredTensor> parse_checkpoint(const std::string& path,
                                                     nlohmann::json* metadata) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};

    if (r.bytes(4) != std::string(kMagic, 4))
        throw std::runtime_error("bad checkpoint header");
    if (r.u8() != kVersion) throw std::runtime_error("unsupported checkpoint version");

    uint32_t count = r.u32();
    std::map<std::string, StoredTensor> stored;
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u16());
        uint8_t rank = r.u8();
        Shape shape;
        int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            shape.push_back(static_cast<int64_t>(r.u32()));
            numel *= shape.back();
        }
        StoredTensor st;
        st.shape = std::move(shape);
        st.data.reserve(static_cast<size_t>(numel));
        for (int64_t e = 0; e < numel; ++e) st.data.push_back(static_cast<double>(r.f32()));
        stored.emplace(std::move(name), std::move(st));
    }
    uint32_t meta_len = r.u32();
    std::string meta = r.bytes(meta_len);
    if (metadata != nullptr) *metadata = nlohmann::json::parse(meta);
    return stored;
}

}  // namespace

nlohmann::json load_checkpoint(const std::string& path,
                               const std::vector<std::pair<std::string, ModuleGraph*>>& graphs) {
    nlohmann::json metadata;
    auto stored = parse_checkpoint(path, &metadata);

    for (const auto& [name, graph] : graphs) {
        auto expected = graph->named_tensors(name + ".");
        for (auto& [tname, tensor] : expected) {
            auto it = stored.find(tname);
            if (it == stored.end())
                throw std::runtime_error("checkpoint missing tensor " + tname);
            if (it->second.shape != tensor.shape())
                throw std::runtime_error("checkpoint shape mismatch for " + tname);
            auto dst = tensor.mutable_data();
            std::copy(it->second.data.begin(), it->second.data.end(), dst.begin());
            it->second.consumed = true;
        }
    }
    for (const auto& [tname, st] : stored)
        if (!st.consumed) throw std::runtime_error("checkpoint has unknown tensor " + tname);
    return metadata;
}

nlohmann::json read_checkpoint_metadata(const std::string& path) {
    nlohmann::json metadata;
    parse_checkpoint(path, &metadata);
    return metadata;
}

}  // namespace pretext::nn
