#include "celldet/nn/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "celldet/errors.hpp"
#include "celldet/io_util.hpp"

namespace celldet::nn {

namespace {

constexpr char kMagic[8] = {'C', 'E', 'L', 'L', 'D', 'E', 'T', 'K'};

template <class T>
void put(std::string& out, T v) {
    static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string get_bytes(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw ParseError("checkpoint truncated");
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.kind));
    std::string arch;
    for (const auto& [k, v] : ckpt.architecture) arch += k + "=" + v + "\n";
    put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.size()));
    out += arch;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const auto& a : ckpt.arrays) {
        put<std::uint64_t>(out, a.size());
        out.append(reinterpret_cast<const char*>(a.data()), a.size() * sizeof(float));
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader in(bytes);
    if (in.get_bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw ParseError("not a celldet checkpoint (bad magic)");
    }
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const auto kind = in.get<std::uint32_t>();
    if (kind != 1 && kind != 2) throw ParseError("unknown checkpoint model kind");
    ckpt.kind = static_cast<ModelKind>(kind);
    const std::string arch = in.get_bytes(in.get<std::uint32_t>());
    for (const auto& line : split(arch, '\n')) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("malformed checkpoint architecture line");
        ckpt.architecture[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const auto n_arrays = in.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_arrays; ++i) {
        const auto n = in.get<std::uint64_t>();
        if (n > bytes.size()) throw ParseError("checkpoint truncated");
        const std::string raw = in.get_bytes(n * sizeof(float));
        std::vector<float> a(n);
        std::memcpy(a.data(), raw.data(), raw.size());
        ckpt.arrays.push_back(std::move(a));
    }
    if (!in.at_end()) throw ParseError("trailing bytes in checkpoint");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_text_file(path));
}

}  // namespace celldet::nn
