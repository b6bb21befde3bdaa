#include "oct/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace oct {

namespace {

void put_u16(std::ostream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_tensor(const std::filesystem::path& file, const Tensor& t) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw std::runtime_error("write_tensor: cannot open " + file.string());
    os.write("OCTH", 4);
    put_u16(os, 1);                   // version
    os.put(static_cast<char>(0));     // dtype 0 = f32
    os.put(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u64(os, static_cast<std::uint64_t>(t.dim(i)));
    for (const float v : t.data) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(b), 4);
    }
    if (!os) throw std::runtime_error("write_tensor: write failed for " + file.string());
}

Tensor read_tensor(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw std::runtime_error("read_tensor: cannot open " + file.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "OCTH", 4) != 0)
        throw std::runtime_error("read_tensor: bad magic in " + file.string());
    const std::uint16_t version = get_u16(is);
    if (version != 1) throw std::runtime_error("read_tensor: unsupported version");
    const int dtype = is.get();
    if (dtype != 0) throw std::runtime_error("read_tensor: unsupported dtype");
    const int rank = is.get();
    if (rank < 1 || rank > 4) throw std::runtime_error("read_tensor: bad rank");
    std::vector<int> shape(static_cast<std::size_t>(rank));
    for (int i = 0; i < rank; ++i) shape[static_cast<std::size_t>(i)] = static_cast<int>(get_u64(is));
    Tensor t(shape);
    for (float& v : t.data) {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        std::uint32_t u = 0;
        for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        std::memcpy(&v, &u, 4);
    }
    if (!is) throw std::runtime_error("read_tensor: truncated file " + file.string());
    return t;
}

void write_checkpoint(const std::filesystem::path& dir, const std::vector<Param>& params) {
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    for (std::size_t i = 0; i < params.size(); ++i) {
        char fname[32];
        std::snprintf(fname, sizeof(fname), "param_%04zu.oct", i);
        write_tensor(dir / fname, params[i].value);
        manifest << params[i].name << '\t' << fname << '\n';
    }
    std::ofstream mf(dir / "manifest.txt");
    if (!mf) throw std::runtime_error("write_checkpoint: cannot write manifest in " + dir.string());
    mf << manifest.str();
}

void load_checkpoint(const std::filesystem::path& dir, std::vector<Param>& params) {
    std::ifstream mf(dir / "manifest.txt");
    if (!mf) throw std::runtime_error("load_checkpoint: missing manifest in " + dir.string());
    std::map<std::string, std::string> files;
    std::string line;
    while (std::getline(mf, line)) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos) continue;
        files[line.substr(0, tab)] = line.substr(tab + 1);
    }
    for (Param& p : params) {
        const auto it = files.find(p.name);
        if (it == files.end())
            throw std::runtime_error("load_checkpoint: missing parameter " + p.name);
        Tensor t = read_tensor(dir / it->second);
        if (!same_shape(t.shape, p.value.shape))
            throw std::runtime_error("load_checkpoint: shape mismatch for " + p.name);
        p.value = std::move(t);
    }
}

}  // namespace oct
