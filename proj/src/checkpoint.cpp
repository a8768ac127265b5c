#include <cstring>
#include <fstream>
#include <map>

#include "corrhal/net.hpp"

namespace corrhal {

namespace {

constexpr uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void write_tensor(std::ostream& out, const std::string& name, const ad::TensorData<float>& t) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.v.data()),
              static_cast<std::streamsize>(t.v.size() * 4));
}

}  // namespace

void save_checkpoint(const std::string& path, const NetParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot open " + path + " for writing");
    out.write("CHCK", 4);
    write_u32(out, kCheckpointVersion);
    // Config scalars first, then weights in inventory order.
    std::vector<std::pair<std::string, float>> config = {
        {"config/stride", static_cast<float>(params.config.stride)},
        {"config/channels", static_cast<float>(params.config.channels)},
        {"config/heads", static_cast<float>(params.config.heads)},
        {"config/cross_layers", static_cast<float>(params.config.cross_layers)},
        {"config/gamma", static_cast<float>(params.config.gamma)},
    };
    write_u32(out, static_cast<uint32_t>(config.size() + params.tensors.size()));
    for (auto& [name, value] : config) {
        ad::TensorData<float> t(ad::Shape{1});
        t.v[0] = value;
        write_tensor(out, name, t);
    }
    for (const NamedTensor& t : params.tensors) write_tensor(out, t.name, t.data);
    if (!out) raise(ErrorCode::IoError, "write failed: " + path);
}

NetParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CHCK", 4) != 0)
        raise(ErrorCode::BadFormat, "not a checkpoint file: " + path);
    if (read_u32(in) != kCheckpointVersion)
        raise(ErrorCode::BadFormat, "unsupported checkpoint version in " + path);
    uint32_t count = read_u32(in);
    if (!in || count > 4096) raise(ErrorCode::BadFormat, "implausible tensor count in " + path);

    std::map<std::string, ad::TensorData<float>> loaded;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = read_u32(in);
        if (!in || name_len > 256) raise(ErrorCode::BadFormat, "bad tensor name in " + path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        uint32_t rank = read_u32(in);
        if (!in || rank > 8) raise(ErrorCode::BadFormat, "bad tensor rank in " + path);
        ad::Shape shape(rank);
        for (uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<int>(read_u32(in));
        ad::TensorData<float> t(shape);
        in.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * 4));
        if (!in) raise(ErrorCode::BadFormat, "truncated checkpoint " + path);
        loaded.emplace(std::move(name), std::move(t));
    }

    auto take_scalar = [&](const std::string& name) {
        auto it = loaded.find(name);
        if (it == loaded.end() || it->second.numel() != 1)
            raise(ErrorCode::BadFormat, "checkpoint missing " + name);
        float v = it->second.v[0];
        loaded.erase(it);
        return v;
    };

    NetParams params;
    params.config.stride = static_cast<int>(take_scalar("config/stride"));
    params.config.channels = static_cast<int>(take_scalar("config/channels"));
    params.config.heads = static_cast<int>(take_scalar("config/heads"));
    params.config.cross_layers = static_cast<int>(take_scalar("config/cross_layers"));
    params.config.gamma = static_cast<double>(take_scalar("config/gamma"));
    params.config.validate();

    for (auto& [name, shape] : tensor_inventory(params.config)) {
        auto it = loaded.find(name);
        if (it == loaded.end()) raise(ErrorCode::BadFormat, "checkpoint missing tensor " + name);
        if (it->second.shape != shape)
            raise(ErrorCode::BadFormat, "checkpoint tensor " + name + " has wrong shape");
        params.tensors.push_back({name, std::move(it->second)});
        loaded.erase(it);
    }
    if (!loaded.empty())
        raise(ErrorCode::BadFormat, "checkpoint contains unknown tensor " + loaded.begin()->first);
    return params;
}

}  // namespace corrhal
