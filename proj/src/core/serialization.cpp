#include "ddimedit/serialization.hpp"

#include <bit>
#include <cstring>

#include "ddimedit/errors.hpp"
#include "ddimedit/image.hpp"

namespace ddimedit {

static_assert(std::endian::native == std::endian::little, "binary records assume a little-endian host");

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}
    template <typename T>
    T get() {
        T v;
        need(sizeof(T));
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string text(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void floats(float* dst, std::size_t n) {
        need(n * sizeof(float));
        std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw InputFormatError(name_, "truncated binary record");
    }
    const std::vector<std::uint8_t>& bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

}  // namespace

void write_binary_record(const std::filesystem::path& path, const std::string& magic, const BinaryRecord& rec) {
    if (magic.size() != 8) throw ContractError("binary record magic must be 8 bytes");
    std::vector<std::uint8_t> out(magic.begin(), magic.end());
    const std::string meta = rec.meta.dump();
    put(out, static_cast<std::uint32_t>(meta.size()));
    out.insert(out.end(), meta.begin(), meta.end());
    put(out, static_cast<std::uint32_t>(rec.tensors.size()));
    for (const auto& t : rec.tensors) {
        put(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put(out, static_cast<std::int64_t>(d));
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
        out.insert(out.end(), p, p + t.size() * sizeof(float));
    }
    write_file(path, out);
}

BinaryRecord read_binary_record(const std::filesystem::path& path, const std::string& magic) {
    const auto bytes = read_file(path);
    Reader r(bytes, path.string());
    if (r.text(8) != magic) throw InputFormatError(path.string(), "not a " + magic + " record");
    BinaryRecord rec;
    const auto meta_len = r.get<std::uint32_t>();
    try {
        rec.meta = nlohmann::json::parse(r.text(meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw InputFormatError(path.string(), std::string("bad metadata: ") + e.what());
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw InputFormatError(path.string(), "implausible tensor rank");
        std::vector<std::int64_t> shape(rank);
        for (auto& d : shape) d = r.get<std::int64_t>();
        Tensor t(shape);
        r.floats(t.data(), t.size());
        rec.tensors.push_back(std::move(t));
    }
    if (!r.done()) throw InputFormatError(path.string(), "trailing bytes after record");
    return rec;
}

}  // namespace ddimedit
